"""Exception types raised across the pipeline."""


class NestError(Exception):
    """Base class for all pipeline errors."""


class UnsupportedFormat(NestError):
    pass


class InvalidSpec(NestError, ValueError):
    pass


class TooShort(NestError, ValueError):
    pass


class InvalidDims(NestError, ValueError):
    pass


class EmptyInput(NestError, ValueError):
    pass


class DimMismatch(NestError, ValueError):
    pass


class LengthMismatch(NestError, ValueError):
    pass


class NoEligibleSpeaker(NestError):
    """Speech augmentation drawn but every batch member shares the primary's speaker."""


class UnresolvableSource(NestError, KeyError):
    pass


class OffsetOutOfRange(NestError, IndexError):
    pass


class ManifestParseError(NestError, ValueError):
    def __init__(self, line_no: int, message: str):
        super().__init__(f"line {line_no}: {message}")
        self.line_no = line_no


class MissingAudio(NestError, FileNotFoundError):
    pass


class NonFiniteLoss(NestError, FloatingPointError):
    pass


class CheckpointError(NestError):
    pass


class VersionMismatch(CheckpointError):
    pass


class ChecksumMismatch(CheckpointError):
    pass


class ConfigValidationError(NestError, ValueError):
    """Carries every violated constraint, not just the first."""

    def __init__(self, violations):
        self.violations = list(violations)
        super().__init__("invalid config:\n  " + "\n  ".join(self.violations))
