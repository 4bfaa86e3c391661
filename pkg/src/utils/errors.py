"""
Error hierarchy shared by every stage.
ValidationError maps to CLI exit code 1, DependencyError to exit code 2.
"""

from typing import List, Optional


class WhisperVCError(Exception):
    """Base class for all pipeline errors."""

    exit_code = 1


class ValidationError(WhisperVCError):
    """Input, data or configuration failed validation."""

    exit_code = 1


class ArgumentError(ValidationError, ValueError):
    """An argument is outside its accepted range."""


class ShapeError(ValidationError):
    """Channel or time dimensions do not match."""


class DomainError(ValidationError):
    """A value belongs to the wrong frame domain or sample rate."""


class InputTooShortError(ValidationError):
    """Waveform shorter than one analysis window."""


class FormatError(ValidationError):
    """Malformed file (feature container, WAV, checkpoint)."""


class PairingError(ValidationError):
    """Whisper/normal pairing or reference length is inconsistent."""


class DataPolicyError(ValidationError):
    """A stage received data it must never train on."""


class ProvenanceError(ValidationError):
    """Cached features do not carry the required provenance tag."""


class ConfigError(ValidationError):
    """Configuration tree failed validation."""


class ManifestError(ValidationError):
    """Manifest validation failed; carries one message per bad record."""

    def __init__(self, message: str, errors: Optional[List[str]] = None):
        self.errors = list(errors or [])
        if self.errors:
            message = message + "\n  " + "\n  ".join(self.errors)
        super().__init__(message)


class DependencyError(WhisperVCError):
    """A required upstream artifact (checkpoint, provider) is missing."""

    exit_code = 2
