class EpisodicaError(Exception):
    """Base class for every error raised by episodica."""

    exit_code = 1


class ConfigError(EpisodicaError):
    exit_code = 2


class ArchError(ConfigError):
    pass


class DataError(EpisodicaError):
    exit_code = 3


class FormatError(DataError):
    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class SamplingError(DataError):
    pass


class DatasetError(DataError):
    pass


class NumericError(EpisodicaError):
    exit_code = 4


class DimensionError(NumericError):
    pass


class DomainError(NumericError):
    pass


class DegenerateInputError(NumericError):
    pass


class ContractError(NumericError):
    pass


class EmptyBatchError(NumericError):
    pass


class StateError(NumericError):
    pass


def with_context(exc, context):
    """Return a copy of ``exc`` (same type) whose message is prefixed."""
    if isinstance(exc, FormatError):
        wrapped = FormatError(f"{context}: {exc}")
        wrapped.offset = exc.offset
        return wrapped
    return type(exc)(f"{context}: {exc}")
