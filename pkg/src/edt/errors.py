"""Error types shared across the package."""


class EdtError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(EdtError, ValueError):
    """Shapes or extents incompatible with the requested operation."""


class NumericError(EdtError, ArithmeticError):
    """A public operation produced NaN or Inf."""


class CapabilityError(EdtError, NotImplementedError):
    """The computation graph contains an op with no gradient rule."""


class ConfigError(EdtError, ValueError):
    """Malformed or unknown configuration content."""


class CheckpointMismatchError(EdtError, RuntimeError):
    """Checkpoint tensors do not match the model; offending names attached."""

    def __init__(self, message, mismatched=()):
        super().__init__(message)
        self.mismatched = tuple(mismatched)
