"""Exception types shared across the package.

The CLI maps these onto exit codes: ConfigError -> 1, DataError and
OSError -> 2, anything else -> 3.
"""


class FungalTimeError(Exception):
    """Base class for all package-specific errors."""


class ConfigError(FungalTimeError, ValueError):
    """Invalid configuration value or malformed config file."""


class DataError(FungalTimeError, RuntimeError):
    """Dataset-level problem: missing files, empty splits, bad manifest."""


class ShapeError(FungalTimeError, ValueError):
    """Tensor or array with an unexpected shape."""


class InputError(FungalTimeError, ValueError):
    """Invalid value passed to an operation (out of range, empty, ...)."""
