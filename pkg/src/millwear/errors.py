"""Exception types shared across the millwear package."""


class MillwearError(Exception):
    """Base class for all errors raised by this package."""


class ParameterError(MillwearError):
    """A configuration value or argument violates its documented constraints."""


class LengthError(MillwearError):
    """An input sequence is too short (or has an invalid length) for the operation."""


class DataError(MillwearError):
    """Input data violates an invariant, e.g. contains NaN/Inf values."""


class ShapeError(MillwearError):
    """Array shapes are inconsistent with each other or with a trained model."""


class FormatError(MillwearError):
    """A file on disk does not match the expected format or schema."""


class TrainingError(MillwearError):
    """Model training cannot proceed, e.g. only one class present."""


class ConvergenceError(TrainingError):
    """An iterative solver exhausted its iteration budget before converging."""

    def __init__(self, message: str, violation: float | None = None):
        super().__init__(message)
        self.violation = violation
