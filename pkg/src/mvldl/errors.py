"""Exception types raised across the package."""


class MvldlError(Exception):
    """Base class for all package errors."""


class ParameterError(MvldlError, ValueError):
    """An argument violates a documented precondition."""


class ValidationError(MvldlError, ValueError):
    """Data failed a consistency or format check."""


class ShapeError(ValidationError):
    """Arrays disagree on a dimension that must match."""


class LoadError(MvldlError, OSError):
    """A required file is missing or unreadable."""


class QpProblemError(MvldlError, ValueError):
    """The quadratic program is malformed (e.g. an indefinite Hessian)."""


class FeasibilityError(MvldlError, ValueError):
    """A point lies outside the feasible set."""


class TrainingError(MvldlError, RuntimeError):
    """Training could not proceed or an inner solve failed."""

    def __init__(self, message, **context):
        if context:
            detail = ", ".join(f"{k}={v}" for k, v in context.items())
            message = f"{message} ({detail})"
        super().__init__(message)
        self.context = context
