"""Exception hierarchy shared across the toolkit.

Every error raised on purpose by this package derives from GbmsegError so
callers (and the CLI) can distinguish data problems from genuine bugs.
"""


class GbmsegError(Exception):
    """Base class for all toolkit errors."""


# --- NIfTI I/O ---------------------------------------------------------


class NotNifti(GbmsegError):
    """File or byte buffer is not a single-file NIfTI-1 volume."""


class UnsupportedDatatype(GbmsegError):
    """NIfTI datatype code outside the supported set {2, 4, 8, 16, 64}."""


class TruncatedFile(GbmsegError):
    """Data section is shorter than the header dimensions imply."""


class DimensionError(GbmsegError):
    """Volume has more than three non-unit dimensions."""


class DimensionMismatch(GbmsegError):
    """Header dimensions do not match the grid being written."""


class IoFailure(GbmsegError):
    """Underlying read or write failed."""


# --- Volume algebra ----------------------------------------------------


class GeometryMismatch(GbmsegError):
    """Volumes do not share dims, spacing, and affine."""


class RegionMismatch(GbmsegError):
    """Region tags differ where a single region was expected."""


class BadThreshold(GbmsegError):
    """Probability threshold outside [0, 1]."""


class BadLabel(GbmsegError):
    """Label value outside the BraTS set {0, 1, 2, 4}."""


# --- Preprocessing -----------------------------------------------------


class NoBrainVoxels(GbmsegError):
    """Every voxel is zero; there is nothing to crop or normalize."""


class ZeroVariance(GbmsegError):
    """All brain voxels carry the same intensity; z-score is undefined."""


class BadAngle(GbmsegError):
    """Rotation angle outside the supported [0, 30] degree range."""


# --- Fusion ------------------------------------------------------------


class EmptyInput(GbmsegError):
    """An operation that needs at least one input received none."""


class TooFewRaters(GbmsegError):
    """STAPLE-style fusion needs at least two raters."""


class DegenerateInput(GbmsegError):
    """Every rater marks every voxel identically; classes cannot be separated."""


# --- Dataset harness ---------------------------------------------------


class NoMatchedCases(GbmsegError):
    """No prediction/ground-truth pair could be formed."""


class UnreadableVolume(GbmsegError):
    """A case volume could not be read; message carries the case context."""
