"""Exception types raised across the package."""


class DCNGANError(Exception):
    """Base class for all package errors."""


class UnsupportedFormatError(DCNGANError, ValueError):
    pass


class MalformedInputError(DCNGANError, ValueError):
    pass


class InvalidQPError(DCNGANError, ValueError):
    pass


class UnsupportedQPError(DCNGANError, ValueError):
    pass


class EmptyInputError(DCNGANError, ValueError):
    pass


class InvalidPatchError(DCNGANError, ValueError):
    pass


class ShapeError(DCNGANError, ValueError):
    pass


class InputTooSmallError(DCNGANError, ValueError):
    pass


class ConfigurationError(DCNGANError):
    pass


class CheckpointError(DCNGANError):
    pass


class TrainingDivergenceError(DCNGANError, FloatingPointError):
    """A loss term became NaN or infinite."""

    def __init__(self, message, step=None, term=None):
        super().__init__(message)
        self.step = step
        self.term = term
