"""Exception types shared across the package."""


class GraftError(Exception):
    """Base class for all package errors."""


class DimensionError(GraftError, ValueError):
    """Array shapes do not conform."""


class InputError(GraftError, ValueError):
    """Input values violate a contract (non-finite scores, negative weights, ...)."""


class ConfigError(GraftError, ValueError):
    """Invalid configuration value."""


class ProtocolError(GraftError, ValueError):
    """Evaluation table is incomplete or inconsistent."""


class TrainingError(GraftError, RuntimeError):
    """Training could not make progress (e.g. every batch of an epoch was skipped)."""


class SchemaError(InputError):
    """An input file does not follow its documented layout."""
