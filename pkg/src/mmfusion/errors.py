"""Exception types shared across the package."""


class MMFusionError(Exception):
    """Base class for all package errors."""


class DimensionError(MMFusionError, ValueError):
    """Tensor shapes are incompatible for the requested operation."""


class ConfigError(MMFusionError, ValueError):
    """A configuration value is invalid or inconsistent."""


class DataError(MMFusionError, ValueError):
    """Input data is malformed, unreadable, or out of range."""


class UsageError(MMFusionError, ValueError):
    """An API was called in an unsupported way."""


class DivergenceError(MMFusionError, RuntimeError):
    """Training produced a non-finite loss."""
