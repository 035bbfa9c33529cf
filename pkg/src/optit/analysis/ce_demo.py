"""Single policy versus four-way mixture on a Compass layout with unknown goal edge.

The posterior puts weight 1/4 on each "always go <direction>" policy.  The
best single policy matches the per-state marginal (uniform), while a
mixture of the four directional policies reproduces the posterior exactly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

NUM_DIRECTIONS = 4


@dataclass
class CrossEntropyReport:
    num_states: int
    single_ce: float
    mixture_ce: float
    ratio: float
    grid_width: int | None = None

    def as_dict(self) -> dict:
        return dict(num_states=self.num_states, grid_width=self.grid_width, single_ce=self.single_ce,
                    mixture_ce=self.mixture_ce, ratio=self.ratio)


def _sequence_ce(log_joint: np.ndarray) -> float:
    # posterior over the four all-same-direction sequences is uniform
    return float(-np.mean(log_joint))


def posterior_ce_demo(K: int | None = None, grid_width: int | None = None) -> CrossEntropyReport:
    """Expected joint cross-entropy over ``K`` states (or a grid's interior).

    Both models are scored on the four posterior action sequences, each
    weighted 1/4.
    """
    if K is None:
        if grid_width is None:
            raise ValueError("give K or grid_width")
        K = (grid_width - 2) ** 2
    if K < 1:
        raise ValueError("need at least one state")
    D = NUM_DIRECTIONS
    seqs = np.repeat(np.arange(D), K).reshape(D, K)                       # posterior samples
    single = np.full((K, D), 1.0 / D)                                       # best single policy
    options = np.stack([np.tile(np.eye(D)[n], (K, 1)) for n in range(D)])  # (D, K, A)
    rho = np.full(D, 1.0 / D)
    idx = np.arange(K)
    log_single = np.array([np.log(single[idx, s]).sum() for s in seqs])
    with np.errstate(divide="ignore"):
        log_mix = np.array([
            np.log(sum(rho[n] * np.prod(options[n, idx, s]) for n in range(D))) for s in seqs
        ])
    s_ce, m_ce = _sequence_ce(log_single), _sequence_ce(log_mix)
    return CrossEntropyReport(K, s_ce, m_ce, s_ce / m_ce, grid_width)


def direct_path_ratio(d: int) -> dict:
    """Probability gain of the straight ``d``-step path to the goal edge.

    ``option``: under the matching directional option versus the uniform
    single policy (4^d).  ``mixture``: under the rho-weighted mixture,
    which pays 1/4 once to pick the option (4^(d-1)).
    """
    if d < 1:
        raise ValueError("distance must be positive")
    single = (1.0 / NUM_DIRECTIONS) ** d
    return dict(distance=d, option=1.0 / single, mixture=(1.0 / NUM_DIRECTIONS) / single,
                log_option=d * math.log(NUM_DIRECTIONS))
