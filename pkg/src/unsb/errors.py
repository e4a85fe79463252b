"""Exception types shared across the package."""


class UnsbError(Exception):
    """Base class for all package errors."""


class ShapeError(UnsbError, ValueError):
    pass


class ParameterError(UnsbError, ValueError):
    pass


class NotPositiveDefiniteError(UnsbError, ValueError):
    pass


class InsufficientSamplesError(UnsbError, ValueError):
    pass


class DegenerateVectorError(UnsbError, ValueError):
    pass


class ConventionError(UnsbError):
    """Closed-form Gaussian bridge disagrees with the Sinkhorn oracle."""


class NumericalAbort(UnsbError, FloatingPointError):
    """A loss, gradient or parameter became NaN/Inf during training."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class ConfigError(UnsbError, ValueError):
    """Experiment configuration is malformed or has unknown keys."""
