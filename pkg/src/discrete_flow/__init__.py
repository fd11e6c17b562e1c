"""Discrete flow matching on finite product spaces S^D.

Exact small-instance oracles for mixture-path flow matching: CTMC simulation by
uniformization, Kolmogorov forward integration, Girsanov path weights, tabular
ERM training and the error bounds that control the sampled distribution.
"""

from .core import DenseDistribution, Schedule, State, StateSpace, total_variation
from .exceptions import (AbsoluteContinuityError, ConfigError, DiscreteFlowError, DomainError,
                         RateBoundError, SingularityError)
from .paths import MixturePath, OracleRate, TargetModel
from .train import TabularRateModel

__version__ = "0.1.0"

__all__ = [
    "AbsoluteContinuityError", "ConfigError", "DenseDistribution", "DiscreteFlowError", "DomainError",
    "MixturePath", "OracleRate", "RateBoundError", "Schedule", "SingularityError", "State", "StateSpace",
    "TabularRateModel", "TargetModel", "total_variation",
]
