"""Exception hierarchy.

Every error raised by the package derives from :class:`PixelHopError`; the
CLI maps each subclass to a distinct exit code.
"""


class PixelHopError(Exception):
    """Base class for all package errors."""

    phase = None

    def __init__(self, message, phase=None):
        super().__init__(message)
        if phase is not None:
            self.phase = phase

    def __str__(self):
        msg = super().__str__()
        if self.phase:
            return f"[{self.phase}] {msg}"
        return msg


class ArgumentError(PixelHopError, ValueError):
    """Invalid argument or configuration value."""


class FormatError(PixelHopError, ValueError):
    """A file does not follow the expected binary layout."""


class ConsistencyError(PixelHopError, ValueError):
    """Internally inconsistent data (count or dimension mismatch)."""


class InsufficientDataError(PixelHopError, ValueError):
    """Too few samples to fit a model."""


class NumericError(PixelHopError, ArithmeticError):
    """Non-finite input or a numerically degenerate problem."""


class DataIOError(PixelHopError, OSError):
    """A file is missing, unreadable or truncated."""
