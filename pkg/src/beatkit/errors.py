"""Exception types raised across the package.

Every error a caller is expected to handle programmatically gets its own
class; generic misuse (wrong argument types etc.) raises the usual builtins.
"""


class BeatkitError(Exception):
    """Base class for all package-specific errors."""


class ShapeError(BeatkitError):
    """Array dimensions do not match what an operation requires."""


class FeatureFileError(BeatkitError):
    """Base class for feature-container parsing failures."""


class FeatureMagicError(FeatureFileError):
    """File does not start with the expected container magic."""


class FeatureHeaderError(FeatureFileError):
    """Container header is present but malformed or of an unsupported version."""


class FeatureRankError(FeatureFileError):
    """Stored array is not rank 3."""


class FeatureDtypeError(FeatureFileError):
    """Stored array is not little-endian float32."""


class FeatureTruncatedError(FeatureFileError):
    """Payload is shorter than the header-declared shape requires."""


class AnnotationError(BeatkitError):
    """Beat annotation file is unparsable or non-monotone."""


class ManifestError(BeatkitError):
    """Dataset manifest is malformed or references missing files."""


class CheckpointError(BeatkitError):
    """Base class for checkpoint load failures."""


class CheckpointVersionError(CheckpointError):
    """Checkpoint was written by an unknown format version."""


class CheckpointChecksumError(CheckpointError):
    """Checkpoint payload fails its integrity checksum."""


class TrainingError(BeatkitError):
    """Training cannot proceed (empty splits, NaN loss, bad config)."""
