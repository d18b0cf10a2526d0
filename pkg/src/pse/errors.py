"""Exception types shared across the package."""


class PseError(Exception):
    """Base class for every error this package raises on purpose."""


class DimensionError(PseError):
    """Array shapes are inconsistent with an operation's contract."""


class ConfigError(PseError):
    """A configuration value is outside its valid range."""


class NumericError(PseError):
    """Non-finite values reached a kernel that requires finite input."""


class WeightValidationError(PseError):
    """A weight tensor fails validation (missing, wrong shape, bad range)."""


class WeightLoadError(PseError):
    """A weight file is malformed or inconsistent with its manifest."""


class UsageError(PseError):
    """The caller violated an API usage contract (CLI exit code 2)."""
