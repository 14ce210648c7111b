"""Exception hierarchy shared by every module."""


class CawmError(Exception):
    """Base class for all package errors."""


class ConfigurationError(CawmError, ValueError):
    """Shapes, channel counts or config values that cannot work together."""


class UsageError(CawmError, ValueError):
    """An API called in a way its contract forbids."""


class DomainError(CawmError, ValueError):
    """A numeric argument outside the domain of the operation."""


class DegenerateInputError(CawmError, ValueError):
    """Input too small for the operation to be meaningful."""


class CorruptCheckpointError(CawmError):
    """Checkpoint bytes that do not decode to a valid parameter set."""


class UnsupportedFormatError(CawmError):
    """Image files outside the supported 8-bit RGB / grayscale PNG subset."""


class CheckpointMismatchError(CorruptCheckpointError):
    """A well-formed checkpoint that does not fit the requested model config."""


class ConfigFileError(CawmError):
    """A run config that is unreadable or has a bad key; ``key`` names it."""

    def __init__(self, message: str, key: str | None = None):
        super().__init__(message)
        self.key = key
