"""Correlation-robust policy optimisation for tabular MDPs.

Policies are trained against the worst reward that keeps a prescribed
correlation with an observable proxy under a reference policy's occupancy.
"""

__version__ = "0.1.0"

from .adversary import CorrelationSpec, DualVariables, RobustStats, dual_solution, robust_stats, robust_value, worst_case_reward
from .envs import EnvBundle, TomatoConfig, make_chain, make_env, make_tomato
from .mdp import OccupancyMeasure, SoftmaxPolicy, TabularMdp, exact_occupancy, sample_trajectories
from .policy_opt import TrainConfig, TrainLog, train

__all__ = [
    "__version__",
    "CorrelationSpec",
    "DualVariables",
    "RobustStats",
    "dual_solution",
    "robust_stats",
    "robust_value",
    "worst_case_reward",
    "EnvBundle",
    "TomatoConfig",
    "make_chain",
    "make_env",
    "make_tomato",
    "OccupancyMeasure",
    "SoftmaxPolicy",
    "TabularMdp",
    "exact_occupancy",
    "sample_trajectories",
    "TrainConfig",
    "TrainLog",
    "train",
]
