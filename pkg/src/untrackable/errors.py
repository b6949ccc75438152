"""Exception types shared across the package."""


class UntrackableError(Exception):
    """Base class for errors raised by this package."""


class ValidationError(UntrackableError, ValueError):
    """An argument or document failed validation."""


class BudgetExceededError(UntrackableError):
    """An exact enumeration would exceed its configured work budget."""


class InsufficientSamplesError(UntrackableError, ValueError):
    """Too few samples to reach the requested confidence level."""


class InfeasibleParametersError(ValidationError):
    """The requested privacy/accuracy targets cannot be met together."""
