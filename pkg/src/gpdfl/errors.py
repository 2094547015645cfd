"""Exception hierarchy shared by every module of the simulator."""


class GPDError(Exception):
    """Base class for simulator errors."""


class ConfigurationError(GPDError, ValueError):
    """Inconsistent dimensions, invalid enums or out-of-range settings."""

    def __init__(self, message: str, key: str | None = None):
        self.key = key
        if key is not None:
            message = f"{key}: {message}"
        super().__init__(message)


class InputError(GPDError, ValueError):
    """Malformed data handed to an operation (empty batch, missing class, ...)."""


class PartitionError(GPDError, RuntimeError):
    """A partitioner could not produce non-empty shards."""


class ProtocolError(GPDError, RuntimeError):
    """A round-level protocol contract was violated."""


class UnsupportedOperationError(GPDError, TypeError):
    """The requested operation is undefined for the model variant."""
