"""Exception types shared across the package."""


class HrlabError(Exception):
    """Base class for all package errors."""


class DimensionError(HrlabError, ValueError):
    """Tensor shapes are inconsistent with the operation's contract."""


class InvalidParameterError(HrlabError, ValueError):
    """A numeric parameter is outside its valid domain (e.g. scale <= 0)."""


class ConfigError(HrlabError, ValueError):
    """A configuration value is unknown or inconsistent."""


class InvalidBatchError(HrlabError, ValueError):
    """A batch does not satisfy an operation's minimum-size requirement."""


class TrainingAborted(HrlabError, RuntimeError):
    """Training stopped because the loss became non-finite."""
