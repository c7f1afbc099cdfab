"""Exception types shared across the package."""


class FogFedError(Exception):
    """Base class for every error raised by fogfed."""


class InvalidArgumentError(FogFedError, ValueError):
    pass


class InvalidValueError(FogFedError, ValueError):
    """A numeric input was NaN or infinite."""


class ShapeError(FogFedError, ValueError):
    pass


class ProtocolError(FogFedError):
    """A wire frame could not be decoded or violates the round protocol."""


class TruncationError(ProtocolError):
    pass


class FramingError(ProtocolError):
    pass


class UnsupportedMessageError(ProtocolError):
    pass


class ExhaustedStreamError(FogFedError):
    """A fog node has no full window left to train on."""


class ConfigError(FogFedError):
    pass


class DataParseError(FogFedError, ValueError):
    """A dataset file is malformed. ``location`` names the line or byte offset."""

    def __init__(self, message: str, location: str | None = None):
        self.location = location
        super().__init__(f"{location}: {message}" if location else message)
