"""Exception hierarchy shared across the package."""


class DrcnError(Exception):
    """Base class for every error raised by drcn."""


class ShapeError(DrcnError, ValueError):
    pass


class ConfigError(DrcnError, ValueError):
    pass


class ModeError(DrcnError, RuntimeError):
    pass


class DegenerateBatchError(DrcnError, ValueError):
    """Train-mode batch norm needs at least two values per channel."""


class NonFiniteError(DrcnError, FloatingPointError):
    pass


class CheckpointError(DrcnError, IOError):
    pass


class BadMagicError(CheckpointError):
    pass


class VersionMismatchError(CheckpointError):
    pass


class TruncatedFileError(CheckpointError):
    pass


class ChecksumError(CheckpointError):
    pass


class ImageFormatError(DrcnError, IOError):
    """Malformed PGM/PPM file. ``offset`` is the byte position of the problem."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class ImageTruncatedError(ImageFormatError):
    pass
