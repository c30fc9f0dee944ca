"""Exception types shared across the follower."""


class FollowerError(Exception):
    """Base class for every error raised by this package."""


class ContractError(FollowerError, ValueError):
    """An argument violates a documented precondition."""


class ConfigError(FollowerError, ValueError):
    """Invalid run configuration or hyperparameter file."""


class NumericError(FollowerError, ArithmeticError):
    """A factorization or objective evaluation failed numerically."""


class ResourceError(FollowerError, MemoryError):
    """A requested matrix is too large to allocate."""


class InsufficientDataError(FollowerError, ValueError):
    """Not enough spectral peaks to fit a model."""


class DegenerateInputError(FollowerError, ValueError):
    """Input carries no information for the requested estimate."""


class AudioDeviceError(FollowerError, OSError):
    """No usable audio input or output device."""


class MidiParseError(FollowerError, ValueError):
    """Malformed Standard MIDI File.

    The byte offset at which parsing failed is kept in ``offset``.
    """

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (at byte offset {offset})")
        self.offset = offset


class StageError(FollowerError):
    """Failure inside one pipeline stage; ``stage`` names it."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage
        self.cause = cause
