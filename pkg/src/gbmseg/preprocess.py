"""Cropping, target-size fitting, z-score normalization, and the seeded
augmentation transforms (rotation, 3D flipping, gamma).

All operations are pure: geometry is only changed where documented
(crop_and_fit translates the affine; augmentations leave geometry alone
because they act in augmentation space, not scanner space).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .errors import BadAngle, GeometryMismatch, NoBrainVoxels, ZeroVariance
from .volume import VoxelGrid, require_same_geometry

DEFAULT_TARGET_DIMS = (192, 224, 160)

GAMMA_RANGE = (0.7, 1.5)
ROTATION_RANGE_DEG = (0.0, 30.0)

# rotation about axis k happens in the plane spanned by the other two axes
_ROTATION_PLANES = {0: (1, 2), 1: (0, 2), 2: (0, 1)}


@dataclass(frozen=True)
class BoundingBox:
    """Half-open axis-aligned voxel box: low inclusive, high exclusive."""

    low: tuple[int, int, int]
    high: tuple[int, int, int]

    def __post_init__(self):
        if any(l >= h for l, h in zip(self.low, self.high)):
            raise ValueError(f"empty box: low={self.low} high={self.high}")

    @property
    def size(self) -> tuple[int, int, int]:
        return tuple(h - l for l, h in zip(self.low, self.high))


@dataclass(frozen=True)
class AugmentSpec:
    """One sampled augmentation: rotate, flip, gamma — in that order."""

    rotation_axis: int
    rotation_deg: float
    flip_axes: tuple[int, ...]
    gamma: float
    seed: int

    def __post_init__(self):
        if not ROTATION_RANGE_DEG[0] <= self.rotation_deg <= ROTATION_RANGE_DEG[1]:
            raise BadAngle(f"rotation_deg {self.rotation_deg} outside {ROTATION_RANGE_DEG}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")


def brain_bounding_box(modalities: list[VoxelGrid]) -> BoundingBox:
    """Tightest box containing every voxel nonzero in any modality."""
    if not modalities:
        raise NoBrainVoxels("no modalities given")
    require_same_geometry(*modalities)
    support = np.zeros(modalities[0].dims, dtype=bool)
    for grid in modalities:
        support |= grid.values != 0
    if not support.any():
        raise NoBrainVoxels("every voxel is zero in all modalities")
    low, high = [], []
    for axis in range(3):
        hit = np.any(support, axis=tuple(a for a in range(3) if a != axis))
        idx = np.flatnonzero(hit)
        low.append(int(idx[0]))
        high.append(int(idx[-1]) + 1)
    return BoundingBox(tuple(low), tuple(high))


def crop_and_fit(grid: VoxelGrid, box: BoundingBox, target_dims: tuple[int, int, int]) -> VoxelGrid:
    """Center the box contents inside a grid of exactly ``target_dims``.

    Per axis the box is symmetrically zero-padded when smaller than the
    target and symmetrically center-cropped when larger; an odd remainder
    goes to the high side in both cases.  The affine is translated so
    every retained voxel keeps its world coordinates.
    """
    if any(l < 0 or h > d for l, h, d in zip(box.low, box.high, grid.dims)):
        raise GeometryMismatch(f"box {box} exceeds grid dims {grid.dims}")
    out = np.zeros(tuple(target_dims), dtype=grid.values.dtype)

    src_lo, src_hi, dst_lo, dst_hi, origin = [], [], [], [], []
    for axis, target in enumerate(target_dims):
        lo, hi = box.low[axis], box.high[axis]
        size = hi - lo
        if size <= target:
            pad_low = (target - size) // 2
            src_lo.append(lo)
            src_hi.append(hi)
            dst_lo.append(pad_low)
            dst_hi.append(pad_low + size)
            origin.append(lo - pad_low)
        else:
            trim_low = (size - target) // 2
            src_lo.append(lo + trim_low)
            src_hi.append(lo + trim_low + target)
            dst_lo.append(0)
            dst_hi.append(target)
            origin.append(lo + trim_low)

    out[dst_lo[0] : dst_hi[0], dst_lo[1] : dst_hi[1], dst_lo[2] : dst_hi[2]] = grid.values[
        src_lo[0] : src_hi[0], src_lo[1] : src_hi[1], src_lo[2] : src_hi[2]
    ]
    affine = grid.affine.copy()
    affine[:3, 3] = grid.affine[:3, 3] + grid.affine[:3, :3] @ np.asarray(origin, dtype=np.float64)
    return VoxelGrid(out, grid.spacing, affine)


def zscore_normalize(grid: VoxelGrid) -> VoxelGrid:
    """Standardize brain intensities to zero mean and unit variance.

    Statistics are computed over nonzero voxels only (the brain, in
    skull-stripped data) using the population standard deviation; the zero
    background stays exactly zero.
    """
    values = grid.values.astype(np.float64)
    brain = values != 0
    if not brain.any():
        raise NoBrainVoxels("cannot normalize an all-zero volume")
    mean = values[brain].mean()
    std = values[brain].std()  # population (ddof=0)
    if std == 0.0:
        raise ZeroVariance(f"all brain voxels equal {values[brain][0]}")
    out = np.zeros_like(values)
    out[brain] = (values[brain] - mean) / std
    return VoxelGrid(out, grid.spacing, grid.affine)


def flip3d(grid: VoxelGrid, axes: tuple[int, ...]) -> VoxelGrid:
    """Mirror values along each listed axis; geometry metadata unchanged."""
    axes = tuple(axes)
    if any(a not in (0, 1, 2) for a in axes):
        raise ValueError(f"axes must be drawn from {{0,1,2}}, got {axes}")
    values = np.flip(grid.values, axis=axes) if axes else grid.values
    return VoxelGrid(values.copy(), grid.spacing, grid.affine)


def rotate3d(
    grid: VoxelGrid,
    axis: int,
    degrees: float,
    interpolation: str = "trilinear",
) -> VoxelGrid:
    """Rotate about the grid center around one axis.

    ``trilinear`` is for intensity payloads; ``nearest`` is mandatory for
    label or mask payloads so no new values are invented.  Samples falling
    outside the source grid become 0.
    """
    if not ROTATION_RANGE_DEG[0] <= degrees <= ROTATION_RANGE_DEG[1]:
        raise BadAngle(f"degrees {degrees} outside {ROTATION_RANGE_DEG}")
    if interpolation not in ("trilinear", "nearest"):
        raise ValueError(f"unknown interpolation {interpolation!r}")
    if degrees == 0.0:
        return VoxelGrid(grid.values.copy(), grid.spacing, grid.affine)
    order = 1 if interpolation == "trilinear" else 0
    values = grid.values
    if order == 1 and not np.issubdtype(values.dtype, np.floating):
        values = values.astype(np.float64)
    rotated = ndimage.rotate(
        values,
        angle=degrees,
        axes=_ROTATION_PLANES[axis],
        reshape=False,
        order=order,
        mode="constant",
        cval=0.0,
        prefilter=False,
    )
    return VoxelGrid(rotated, grid.spacing, grid.affine)


def gamma_transform(grid: VoxelGrid, gamma: float) -> VoxelGrid:
    """Power-law intensity transform within the grid's own min/max range.

    Values are min-max normalized to [0, 1], raised to ``gamma``, then
    rescaled to the original range; the endpoints are preserved exactly
    and ordering is monotone.  Constant grids pass through unchanged.
    """
    if gamma <= 0:
        raise ValueError(f"gamma must be positive, got {gamma}")
    values = grid.values.astype(np.float64)
    vmin, vmax = float(values.min()), float(values.max())
    if vmin == vmax:
        return VoxelGrid(grid.values.copy(), grid.spacing, grid.affine)
    norm = (values - vmin) / (vmax - vmin)
    out = norm**gamma * (vmax - vmin) + vmin
    # pin the endpoints: (vmax - vmin) + vmin need not round back to vmax
    out[values == vmin] = vmin
    out[values == vmax] = vmax
    return VoxelGrid(out, grid.spacing, grid.affine)


def sample_augmentation(seed: int) -> AugmentSpec:
    """Deterministically draw one augmentation from a 64-bit seed.

    Draw order is fixed (axis, angle, three flip coin-tosses, gamma):
    rotation angle uniform in [0, 30] degrees, each flip axis included
    independently with probability 1/2, gamma uniform in [0.7, 1.5].
    """
    rng = np.random.default_rng(seed)
    axis = int(rng.integers(3))
    degrees = float(rng.uniform(*ROTATION_RANGE_DEG))
    flips = tuple(a for a in range(3) if rng.random() < 0.5)
    gamma = float(rng.uniform(*GAMMA_RANGE))
    return AugmentSpec(axis, degrees, flips, gamma, seed=int(seed))


def apply_augmentation(grid: VoxelGrid, spec: AugmentSpec, payload: str = "intensity") -> VoxelGrid:
    """Apply a sampled augmentation: rotate, then flip, then gamma.

    ``payload="labels"`` switches to nearest-neighbor rotation and skips
    the gamma transform (label values are not intensities).
    """
    if payload not in ("intensity", "labels"):
        raise ValueError(f"unknown payload {payload!r}")
    interp = "trilinear" if payload == "intensity" else "nearest"
    out = rotate3d(grid, spec.rotation_axis, spec.rotation_deg, interp)
    out = flip3d(out, spec.flip_axes)
    if payload == "intensity":
        out = gamma_transform(out, spec.gamma)
    return out
