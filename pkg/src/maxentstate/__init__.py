"""Tabular MDP analytics and policy-gradient agents with state-distribution entropy regularization."""

__version__ = "0.1.0"

from .mdp import (  # noqa: E402
    ConvergenceError,
    OccupancyVector,
    TabularMDP,
    TabularSoftmaxPolicy,
    discounted_weighting,
    entropy,
    marginal_state_distribution,
    normalize_occupancy,
    normalized_occupancy,
    policy_evaluation,
    stationary_distribution,
)
from .exact_pg import ExactPGConfig, RegularizationWeights, exact_gradient, train_exact  # noqa: E402
from .records import TrainRecord  # noqa: E402

__all__ = [
    "ConvergenceError", "OccupancyVector", "TabularMDP", "TabularSoftmaxPolicy",
    "discounted_weighting", "entropy", "marginal_state_distribution", "normalize_occupancy",
    "normalized_occupancy", "policy_evaluation", "stationary_distribution",
    "ExactPGConfig", "RegularizationWeights", "exact_gradient", "train_exact", "TrainRecord",
]
