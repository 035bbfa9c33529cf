from .bellman import (TabularQ, greedy_visits_wall, solve_random_policy_q, uniform_policy,
                      value_iteration)
from .ce_demo import CrossEntropyReport, direct_path_ratio, posterior_ce_demo
from .diversity import DiversityReport, first_buttons, mutual_information, option_diversity, report_from_counts
from .grids import GridReport, grid_states, grids_svg, render_option_grids

__all__ = [
    "TabularQ", "greedy_visits_wall", "solve_random_policy_q", "uniform_policy", "value_iteration",
    "CrossEntropyReport", "direct_path_ratio", "posterior_ce_demo", "DiversityReport", "first_buttons",
    "mutual_information", "option_diversity", "report_from_counts", "GridReport", "grid_states", "grids_svg",
    "render_option_grids",
]
