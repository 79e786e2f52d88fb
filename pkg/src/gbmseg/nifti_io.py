"""Single-file NIfTI-1 reader and writer for 3D volumes.

Implements the 348-byte NIfTI-1 header directly (no external imaging
dependency) for the five datatypes this toolkit needs.  Files written here
are always little-endian single-file volumes (magic ``n+1``) with the data
section at byte offset 352; gzip compression is applied when the output
path ends in ``.gz`` and detected on read from the 0x1F 0x8B signature.

Field offsets below follow the official nifti1.h layout.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    DimensionError,
    DimensionMismatch,
    IoFailure,
    NotNifti,
    TruncatedFile,
    UnsupportedDatatype,
)
from .volume import VoxelGrid

HEADER_SIZE = 348
DATA_OFFSET = 352  # header + 4-byte extension flag

# datatype code -> numpy dtype character
_DTYPES = {2: "u1", 4: "i2", 8: "i4", 16: "f4", 64: "f8"}
_BITPIX = {2: 8, 4: 16, 8: 32, 16: 32, 64: 64}

DT_UINT8 = 2
DT_INT16 = 4
DT_INT32 = 8
DT_FLOAT32 = 16
DT_FLOAT64 = 64

_MAGIC_SINGLE = b"n+1\x00"
_GZIP_MAGIC = b"\x1f\x8b"


@dataclass(frozen=True, eq=False)
class NiftiHeader:
    """The geometry and encoding fields this toolkit models.

    ``affine`` is the voxel-index -> world-mm map chosen by the
    sform > qform > pixdim precedence rule at parse time.
    """

    dims: tuple[int, int, int]
    datatype_code: int
    spacing: tuple[float, float, float]
    affine: np.ndarray
    scale_slope: float = 1.0
    scale_intercept: float = 0.0
    magic: str = "n+1"

    def __post_init__(self):
        if len(self.dims) != 3 or any(d < 1 for d in self.dims):
            raise ValueError(f"dims must be 3 positive integers, got {self.dims}")
        if self.datatype_code not in _DTYPES:
            raise UnsupportedDatatype(f"datatype code {self.datatype_code}")
        if any(s <= 0 for s in self.spacing):
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        affine = np.asarray(self.affine, dtype=np.float64)
        if affine.shape != (4, 4) or abs(np.linalg.det(affine)) < 1e-12:
            raise ValueError("affine must be an invertible 4x4 matrix")
        if self.magic != "n+1":
            raise NotNifti(f"unsupported magic {self.magic!r}")
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "affine", affine)

    @classmethod
    def for_grid(
        cls,
        grid: VoxelGrid,
        datatype_code: int = DT_FLOAT32,
        scale_slope: float = 1.0,
        scale_intercept: float = 0.0,
    ) -> "NiftiHeader":
        return cls(grid.dims, datatype_code, grid.spacing, grid.affine, scale_slope, scale_intercept)


def _quaternion_rotation(b: float, c: float, d: float) -> np.ndarray:
    a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    return np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )


def _parse_header(raw: bytes) -> tuple[NiftiHeader, str, int]:
    """Parse 348+ header bytes; returns (header, byteorder char, vox_offset)."""
    if len(raw) < HEADER_SIZE:
        raise NotNifti(f"header needs {HEADER_SIZE} bytes, got {len(raw)}")
    # Byte order is detected from sizeof_hdr: it must read 348 in the
    # file's own order.
    if struct.unpack_from("<i", raw, 0)[0] == HEADER_SIZE:
        bo = "<"
    elif struct.unpack_from(">i", raw, 0)[0] == HEADER_SIZE:
        bo = ">"
    else:
        raise NotNifti("sizeof_hdr is not 348 in either byte order")

    magic = raw[344:348]
    if magic != _MAGIC_SINGLE:
        raise NotNifti(f"magic {magic!r} is not a single-file NIfTI-1 tag")

    dim = struct.unpack_from(bo + "8h", raw, 40)
    datatype = struct.unpack_from(bo + "h", raw, 70)[0]
    pixdim = struct.unpack_from(bo + "8f", raw, 76)
    vox_offset, scl_slope, scl_inter = struct.unpack_from(bo + "3f", raw, 108)
    qform_code, sform_code = struct.unpack_from(bo + "2h", raw, 252)
    quatern = struct.unpack_from(bo + "3f", raw, 256)
    qoffset = struct.unpack_from(bo + "3f", raw, 268)
    srow = struct.unpack_from(bo + "12f", raw, 280)

    ndim = dim[0]
    if not 1 <= ndim <= 7:
        raise NotNifti(f"dim[0] = {ndim} outside [1, 7]")
    shape = dim[1 : 1 + ndim]
    if any(n < 1 for n in shape):
        raise NotNifti(f"non-positive dimension in {shape}")
    if any(n != 1 for n in shape[3:]):
        raise DimensionError(f"more than 3 non-unit dimensions: {shape}")
    dims = tuple(shape[:3]) + (1,) * (3 - min(ndim, 3))

    if datatype not in _DTYPES:
        raise UnsupportedDatatype(f"datatype code {datatype}")

    # Tolerate sloppy pixdims (negative or zero) the way mainstream readers
    # do; our own writer always emits positive values.
    spacing = tuple(abs(p) if p != 0.0 else 1.0 for p in pixdim[1:4])

    affine = np.eye(4)
    if sform_code > 0:
        affine[:3, :] = np.asarray(srow, dtype=np.float64).reshape(3, 4)
    elif qform_code > 0:
        qfac = -1.0 if pixdim[0] == -1.0 else 1.0
        rot = _quaternion_rotation(*quatern)
        affine[:3, :3] = rot @ np.diag([spacing[0], spacing[1], spacing[2] * qfac])
        affine[:3, 3] = qoffset
    else:
        affine[:3, :3] = np.diag(spacing)

    try:
        header = NiftiHeader(
            dims=dims,
            datatype_code=datatype,
            spacing=spacing,
            affine=affine,
            scale_slope=float(scl_slope),
            scale_intercept=float(scl_inter),
        )
    except ValueError as err:
        raise NotNifti(f"malformed header: {err}") from err
    offset = int(vox_offset) if vox_offset >= HEADER_SIZE else DATA_OFFSET
    return header, bo, offset


def validate_header(raw: bytes) -> NiftiHeader:
    """Parse a raw NIfTI-1 header, detecting byte order from sizeof_hdr."""
    header, _, _ = _parse_header(raw)
    return header


def _read_bytes(path: Path) -> bytes:
    try:
        with open(path, "rb") as fh:
            head = fh.read(2)
            fh.seek(0)
            if head == _GZIP_MAGIC:
                with gzip.open(fh, "rb") as gz:
                    return gz.read()
            return fh.read()
    except OSError as err:
        raise IoFailure(f"cannot read {path}: {err}") from err


def read_volume(path) -> tuple[NiftiHeader, VoxelGrid]:
    """Read a single-file NIfTI-1 volume, optionally gzip-compressed.

    Data are decoded in the file's byte order, then the slope/intercept
    scaling is applied when ``scl_slope`` is neither 0 (NIfTI-1 "no
    scaling" convention) nor the identity pair (1, 0); the identity pair
    is skipped so unscaled payloads keep their exact on-disk dtype.
    """
    path = Path(path)
    raw = _read_bytes(path)
    header, bo, offset = _parse_header(raw)

    dt = np.dtype(_DTYPES[header.datatype_code]).newbyteorder(bo)
    count = header.dims[0] * header.dims[1] * header.dims[2]
    nbytes = count * dt.itemsize
    if len(raw) < offset + nbytes:
        raise TruncatedFile(
            f"{path}: need {nbytes} data bytes at offset {offset}, have {len(raw) - offset}"
        )
    flat = np.frombuffer(raw, dtype=dt, count=count, offset=offset)
    values = flat.reshape(header.dims, order="F").astype(dt.newbyteorder("="))

    slope, inter = header.scale_slope, header.scale_intercept
    if slope != 0.0 and not (slope == 1.0 and inter == 0.0):
        values = values.astype(np.float64) * slope + inter

    grid = VoxelGrid(values, spacing=header.spacing, affine=header.affine)
    return header, grid


def _pack_header(header: NiftiHeader) -> bytes:
    buf = bytearray(HEADER_SIZE)
    struct.pack_into("<i", buf, 0, HEADER_SIZE)
    struct.pack_into("<c", buf, 38, b"r")  # "regular" flag, kept for convention
    struct.pack_into("<8h", buf, 40, 3, *header.dims, 1, 1, 1, 1)
    struct.pack_into("<2h", buf, 70, header.datatype_code, _BITPIX[header.datatype_code])
    struct.pack_into("<8f", buf, 76, 1.0, *header.spacing, 1.0, 1.0, 1.0, 1.0)
    struct.pack_into("<3f", buf, 108, float(DATA_OFFSET), header.scale_slope, header.scale_intercept)
    struct.pack_into("<B", buf, 123, 2)  # xyzt_units: millimetres
    buf[148 : 148 + 6] = b"gbmseg"
    # Geometry goes out through the sform only; qform_code stays 0.
    struct.pack_into("<2h", buf, 252, 0, 1)
    affine32 = np.asarray(header.affine, dtype=np.float32)
    struct.pack_into("<12f", buf, 280, *affine32[:3, :].ravel())
    buf[344:348] = _MAGIC_SINGLE
    return bytes(buf)


def write_volume(path, header: NiftiHeader, grid: VoxelGrid) -> None:
    """Write a grid as a little-endian single-file NIfTI-1 volume.

    The payload is cast to the header's datatype; float32/float64 payloads
    round-trip bit-exactly through :func:`read_volume`.  A ``.gz`` suffix
    selects gzip output (mtime pinned to 0 so identical inputs produce
    byte-identical files).
    """
    path = Path(path)
    if header.dims != grid.dims:
        raise DimensionMismatch(f"header dims {header.dims} != grid dims {grid.dims}")
    dt = np.dtype(_DTYPES[header.datatype_code]).newbyteorder("<")
    payload = np.asarray(grid.values, dtype=dt).tobytes(order="F")
    blob = _pack_header(header) + b"\x00\x00\x00\x00" + payload
    try:
        if path.name.endswith(".gz"):
            # filename="" and mtime=0 keep the gzip container byte-stable
            with open(path, "wb") as fh:
                with gzip.GzipFile(filename="", fileobj=fh, mode="wb", mtime=0) as gz:
                    gz.write(blob)
        else:
            path.write_bytes(blob)
    except OSError as err:
        raise IoFailure(f"cannot write {path}: {err}") from err
