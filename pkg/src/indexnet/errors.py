"""Exception types raised across the package."""


class IndexNetError(Exception):
    """Base class for all package errors."""


class DimensionError(IndexNetError, ValueError):
    """A tensor has the wrong number of elements along some axis."""


class ContractError(IndexNetError, ValueError):
    """A caller violated an operation's precondition."""


class ConfigError(IndexNetError, ValueError):
    """A configuration is malformed or inconsistent."""


class FormatError(IndexNetError, ValueError):
    """A binary file does not match its expected layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class TrainingError(IndexNetError, RuntimeError):
    """Training diverged."""

    def __init__(self, message: str, epoch: int):
        super().__init__(f"{message} (epoch {epoch})")
        self.epoch = epoch
