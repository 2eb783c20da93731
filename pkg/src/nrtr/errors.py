"""Exception hierarchy shared by every subsystem."""


class NRTRError(Exception):
    """Base class for all errors raised by this package."""


class ShapeError(NRTRError, ValueError):
    """Operand extents are incompatible."""


class ConfigError(NRTRError, ValueError):
    """A hyperparameter or run configuration value is invalid."""


class MaskError(NRTRError, ValueError):
    """An attention mask blocks every key for some query row."""


class CharsetError(NRTRError, ValueError):
    """Text contains a character outside the recognizer alphabet."""


class ParseError(NRTRError, ValueError):
    """A file could not be parsed; ``offset`` is the byte position."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class IntegrityError(NRTRError):
    """Stored data failed a checksum or manifest consistency check."""
