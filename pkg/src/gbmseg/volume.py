"""Core voxel-grid value types and the BraTS label/region algebra.

Geometry convention used throughout the toolkit: a volume is a 3D grid of
``dims`` voxels indexed ``[i, j, k]``, with physical ``spacing`` in mm per
axis and a 4x4 ``affine`` mapping homogeneous voxel indices to world
coordinates in mm.  The canonical linear (flattened) voxel order is
Fortran order — the first axis varies fastest — matching the on-disk
NIfTI data layout.

Value types are frozen dataclasses; treat the wrapped arrays as immutable.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .errors import BadLabel, BadThreshold, GeometryMismatch, RegionMismatch

BRATS_LABELS = (0, 1, 2, 4)


class Region(Enum):
    """The three evaluated tumor sub-regions."""

    ET = "ET"  # enhancing tumor: label 4
    TC = "TC"  # tumor core: labels 1 and 4
    WT = "WT"  # whole tumor: labels 1, 2 and 4


REGIONS = (Region.ET, Region.TC, Region.WT)


def _checked_spacing(spacing) -> tuple[float, float, float]:
    s = tuple(float(x) for x in spacing)
    if len(s) != 3 or any(x <= 0 for x in s):
        raise ValueError(f"spacing must be 3 positive reals, got {spacing!r}")
    return s


def _checked_affine(affine, spacing) -> np.ndarray:
    if affine is None:
        out = np.diag(list(spacing) + [1.0])
    else:
        out = np.asarray(affine, dtype=np.float64)
        if out.shape != (4, 4):
            raise ValueError(f"affine must be 4x4, got shape {out.shape}")
    return out


@dataclass(frozen=True, eq=False)
class VoxelGrid:
    """A 3D scalar grid with physical spacing and a voxel-to-world affine."""

    values: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3:
            raise ValueError(f"values must be a 3D array, got ndim={values.ndim}")
        spacing = _checked_spacing(self.spacing)
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", _checked_affine(self.affine, spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.values.shape


@dataclass(frozen=True, eq=False)
class LabelVolume:
    """Per-voxel BraTS labels; only the values 0, 1, 2 and 4 may appear."""

    labels: np.ndarray
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 3:
            raise ValueError(f"labels must be a 3D array, got ndim={labels.ndim}")
        if not np.isin(labels, BRATS_LABELS).all():
            bad = sorted(set(np.unique(labels)) - set(BRATS_LABELS))
            raise BadLabel(f"labels outside {{0,1,2,4}}: {bad}")
        spacing = _checked_spacing(self.spacing)
        object.__setattr__(self, "labels", labels.astype(np.uint8, copy=False))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", _checked_affine(self.affine, spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.labels.shape

    @classmethod
    def from_grid(cls, grid: VoxelGrid) -> "LabelVolume":
        """Reinterpret a scalar grid (e.g. freshly read from disk) as labels."""
        rounded = np.rint(grid.values)
        if not np.array_equal(rounded, grid.values):
            raise BadLabel("grid holds non-integer values; not a label volume")
        return cls(rounded.astype(np.uint8), grid.spacing, grid.affine)

    def to_grid(self) -> VoxelGrid:
        return VoxelGrid(self.labels, self.spacing, self.affine)


@dataclass(frozen=True, eq=False)
class RegionMask:
    """Binary membership for one evaluated region."""

    member: np.ndarray
    region: Region
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None

    def __post_init__(self):
        member = np.asarray(self.member)
        if member.ndim != 3:
            raise ValueError(f"member must be a 3D array, got ndim={member.ndim}")
        spacing = _checked_spacing(self.spacing)
        object.__setattr__(self, "member", member.astype(bool, copy=False))
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", _checked_affine(self.affine, spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.member.shape


@dataclass(frozen=True, eq=False)
class ProbabilityVolume:
    """Per-voxel probability of membership in one evaluated region."""

    prob: np.ndarray
    region: Region
    spacing: tuple[float, float, float] = (1.0, 1.0, 1.0)
    affine: np.ndarray | None = None

    def __post_init__(self):
        prob = np.asarray(self.prob, dtype=np.float64)
        if prob.ndim != 3:
            raise ValueError(f"prob must be a 3D array, got ndim={prob.ndim}")
        if prob.size and (np.nanmin(prob) < 0.0 or np.nanmax(prob) > 1.0 or np.isnan(prob).any()):
            raise ValueError("probabilities must lie in [0, 1]")
        spacing = _checked_spacing(self.spacing)
        object.__setattr__(self, "prob", prob)
        object.__setattr__(self, "spacing", spacing)
        object.__setattr__(self, "affine", _checked_affine(self.affine, spacing))

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.prob.shape


def same_geometry(a, b, *, atol: float = 1e-5) -> bool:
    """True when two volumes share dims, spacing, and affine (within atol)."""
    return (
        a.dims == b.dims
        and np.allclose(a.spacing, b.spacing, atol=atol)
        and np.allclose(a.affine, b.affine, atol=atol)
    )


def require_same_geometry(*volumes) -> None:
    first = volumes[0]
    for other in volumes[1:]:
        if not same_geometry(first, other):
            raise GeometryMismatch(
                f"geometry differs: dims {first.dims} vs {other.dims}"
            )


def compose_regions(labels: LabelVolume) -> tuple[RegionMask, RegionMask, RegionMask]:
    """Build the nested ET/TC/WT masks from a label volume.

    ET is label 4, TC is labels 1 and 4, WT is labels 1, 2 and 4, so the
    returned masks always satisfy ET ⊆ TC ⊆ WT.
    """
    lab = labels.labels
    et = lab == 4
    tc = et | (lab == 1)
    wt = tc | (lab == 2)
    geo = (labels.spacing, labels.affine)
    return (
        RegionMask(et, Region.ET, *geo),
        RegionMask(tc, Region.TC, *geo),
        RegionMask(wt, Region.WT, *geo),
    )


def decompose_regions(et: RegionMask, tc: RegionMask, wt: RegionMask) -> LabelVolume:
    """Map ET/TC/WT masks back to BraTS labels.

    Priority order ET > TC > WT: a voxel inside ET gets label 4, else
    inside TC label 1, else inside WT label 2, else 0.  The priority also
    resolves inconsistent (non-nested) inputs deterministically.
    """
    for mask, expected in zip((et, tc, wt), REGIONS):
        if mask.region is not expected:
            raise RegionMismatch(
                f"expected {expected.value} mask, got {mask.region.value}"
            )
    require_same_geometry(et, tc, wt)
    lab = np.where(
        et.member, 4, np.where(tc.member, 1, np.where(wt.member, 2, 0))
    ).astype(np.uint8)
    return LabelVolume(lab, et.spacing, et.affine)


def binarize(prob: ProbabilityVolume, threshold: float) -> RegionMask:
    """Threshold a probability volume into a hard mask (membership at >=)."""
    if not 0.0 <= threshold <= 1.0:
        raise BadThreshold(f"threshold must lie in [0, 1], got {threshold}")
    return RegionMask(prob.prob >= threshold, prob.region, prob.spacing, prob.affine)


def count_label(labels: LabelVolume, label: int) -> int:
    """Number of voxels carrying the given BraTS label."""
    if label not in BRATS_LABELS:
        raise BadLabel(f"label must be one of {{0,1,2,4}}, got {label}")
    return int(np.count_nonzero(labels.labels == label))
