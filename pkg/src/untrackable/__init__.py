"""Trackability and everlasting-privacy analysis for local-DP report streams."""

from .errors import (
    BudgetExceededError,
    InfeasibleParametersError,
    InsufficientSamplesError,
    UntrackableError,
    ValidationError,
)
from .prob import PercentileEstimate, SeededRng

__all__ = [
    "BudgetExceededError",
    "InfeasibleParametersError",
    "InsufficientSamplesError",
    "PercentileEstimate",
    "SeededRng",
    "UntrackableError",
    "ValidationError",
]
