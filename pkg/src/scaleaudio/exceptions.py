"""Exception types shared across the package."""


class ScaleAudioError(Exception):
    """Base class for package errors."""


class AudioFormatError(ScaleAudioError, ValueError):
    """Raised for WAV files with unsupported encodings or malformed headers."""


class ValidationError(ScaleAudioError, ValueError):
    """Raised when inputs violate a documented precondition or invariant."""


class DivergenceError(ScaleAudioError, RuntimeError):
    """Raised when training produces non-finite values."""
