"""Exception types shared across the package."""


class PromptLabError(Exception):
    """Base class for all package errors."""


class InvalidParameterError(PromptLabError, ValueError):
    """A scalar or configuration parameter is outside its valid range."""


class InvalidInputError(PromptLabError, ValueError):
    """An input array has the wrong shape or contains illegal values."""


class DegenerateVectorError(PromptLabError, ValueError):
    """A vector with (numerically) zero norm was used where a direction is required."""


class FrozenModelError(PromptLabError, RuntimeError):
    """Raised when something tries to update the parameters of a frozen model."""


class TrainingFailedError(PromptLabError, RuntimeError):
    """Raised when a training run cannot reach its target or diverges."""
