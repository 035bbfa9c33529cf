"""Option learning from Monte-Carlo search results."""

__version__ = "0.1.0"
