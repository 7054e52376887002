"""Error hierarchy. The CLI maps each group to one exit code."""

# --- Exit codes ---
EXIT_OK: int = 0
EXIT_INTERNAL: int = 1
EXIT_CONFIG: int = 2
EXIT_INPUT: int = 3
EXIT_SEGMENTER: int = 4


class SphereSegError(Exception):
    """Base class for every error raised by the pipeline."""
    exit_code: int = EXIT_INTERNAL


# --- Configuration ---
class ConfigError(SphereSegError):
    exit_code = EXIT_CONFIG


# --- Input / volume errors ---
class InputError(SphereSegError):
    exit_code = EXIT_INPUT


class InvalidVolumeError(InputError):
    pass


class DimensionMismatchError(InputError):
    pass


class DegenerateVolumeError(InputError):
    """Normalization asked for on an all-zero or constant volume."""


class EmptyVolumeError(InputError):
    """An operation needs at least one nonzero voxel."""


class EmptyComponentError(InputError):
    pass


class InterpolationModeError(InputError):
    """Labels may only be resampled with nearest-neighbour interpolation."""


class InvalidLabelError(InputError):
    pass


class NiftiFormatError(InputError):
    pass


class BadMagicError(NiftiFormatError):
    pass


class UnsupportedNiftiFormError(NiftiFormatError):
    """Two-file (.hdr/.img) NIfTI pairs are not read."""


class UnsupportedDatatypeError(NiftiFormatError):
    pass


class TruncatedDataError(NiftiFormatError):
    pass


class SvolFormatError(InputError):
    pass


class SvolMagicError(SvolFormatError):
    pass


class SvolVersionError(SvolFormatError):
    pass


class SvolLengthError(SvolFormatError):
    pass


# --- Segmenter ---
class SegmenterError(SphereSegError):
    exit_code = EXIT_SEGMENTER


class SegmenterProcessError(SegmenterError):
    """The external command exited with a nonzero status."""

    def __init__(self, message: str, returncode: int = 1, stderr: str = "") -> None:
        super().__init__(message)
        self.returncode = returncode
        self.stderr = stderr


class SegmenterTimeoutError(SegmenterError):
    pass


class SegmenterOutputError(SegmenterError):
    """Missing, unreadable or invalid prediction file."""


class SegmenterDimensionError(SegmenterError):
    pass


class PassFailedError(SegmenterError):
    """Every origin of a cascade pass failed."""
