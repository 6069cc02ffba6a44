"""Exception hierarchy shared across the package."""


class StslError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(StslError, ValueError):
    pass


class NonFiniteError(StslError, FloatingPointError):
    pass


class ValidationError(StslError, ValueError):
    pass


class ProtocolError(StslError):
    """Client and server disagree about a message, cut shape or cache."""


class BadMagicError(ProtocolError):
    pass


class UnsupportedVersionError(ProtocolError):
    pass


class TruncatedMessageError(ProtocolError):
    def __init__(self, expected: int, actual: int):
        super().__init__(f"truncated message: expected {expected} bytes, got {actual}")
        self.expected = expected
        self.actual = actual


class MalformedMessageError(ProtocolError):
    pass


class EncodingError(ProtocolError):
    pass


class DuplicateArrivalError(StslError):
    pass


class UnknownClientError(StslError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class FormatError(StslError):
    """A data file does not follow its declared binary layout."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ConfigError(StslError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class CheckpointError(StslError):
    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset
