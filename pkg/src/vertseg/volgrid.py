"""Voxel volume data model, file I/O, calibration, sampling, FOV resampling.

Grid convention used throughout the package: `data` has shape (nz, ny, nx)
with x the fastest-varying axis, and voxel (i, j, k) has its center at
origin + ((i+0.5)*sx, (j+0.5)*sy, (k+0.5)*sz) in mm.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np

from . import _kernels
from .errors import ConfigError, VolumeFormatError

_DTYPE_NAMES = {"i16": np.dtype("<i2"), "u8": np.dtype("u1")}
_NAME_BY_KIND = {("i", 2): "i16", ("u", 1): "u8"}


@dataclass(frozen=True)
class VoxelVolume:
    """Regular 3D scalar grid (HU or derived units) with anisotropic spacing.

    Immutable after construction; operations return new volumes.
    """

    data: np.ndarray                       # (nz, ny, nx)
    spacing: tuple[float, float, float]    # (sx, sy, sz) mm
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self):
        arr = np.ascontiguousarray(self.data)
        if arr is self.data:
            arr = arr.view()
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", tuple(float(s) for s in self.spacing))
        object.__setattr__(self, "origin", tuple(float(o) for o in self.origin))
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ValueError("volume data must be a 3D array with dims >= 1")
        if min(self.spacing) <= 0:
            raise ValueError("voxel spacing must be positive in every axis")

    @property
    def dims(self) -> tuple[int, int, int]:
        """(nx, ny, nz)."""
        nz, ny, nx = self.data.shape
        return (nx, ny, nz)

    @property
    def voxel_volume_mm3(self) -> float:
        sx, sy, sz = self.spacing
        return sx * sy * sz

    @cached_property
    def _data_f64(self) -> np.ndarray:
        if self.data.dtype == np.float64:
            return self.data
        return np.ascontiguousarray(self.data, dtype=np.float64)

    def axis_centers(self, axis: int) -> np.ndarray:
        """Voxel center coordinates (mm) along axis 0=x, 1=y, 2=z."""
        n = self.dims[axis]
        return self.origin[axis] + (np.arange(n) + 0.5) * self.spacing[axis]

    def index_to_world(self, ijk) -> np.ndarray:
        ijk = np.asarray(ijk, dtype=np.float64)
        return np.asarray(self.origin) + (ijk + 0.5) * np.asarray(self.spacing)

    def world_to_index(self, xyz) -> np.ndarray:
        """Continuous (i, j, k) grid coordinates of world points."""
        xyz = np.asarray(xyz, dtype=np.float64)
        return (xyz - np.asarray(self.origin)) / np.asarray(self.spacing) - 0.5

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        """Physical (min, max) corners of the grid in mm."""
        lo = np.asarray(self.origin)
        hi = lo + np.asarray(self.dims) * np.asarray(self.spacing)
        return lo, hi


@dataclass(frozen=True)
class CalibrationParams:
    """Linear HU -> mg/cm^3 map."""

    slope: float = 0.8
    intercept: float = 0.0

    def __post_init__(self):
        if self.slope == 0:
            raise ConfigError("calibration slope must be nonzero")


@dataclass(frozen=True)
class ScanSpec:
    """In-plane reconstruction: pixel size = fov_mm / matrix."""

    fov_mm: float
    matrix: int = 512
    slice_thickness_mm: float = 1.0

    def __post_init__(self):
        if self.fov_mm <= 0 or self.matrix < 1 or self.slice_thickness_mm <= 0:
            raise ConfigError("scan spec requires fov_mm > 0, matrix >= 1, "
                              "slice_thickness_mm > 0")

    @property
    def pixel_mm(self) -> float:
        return self.fov_mm / self.matrix


def _parse_header(path: Path) -> dict:
    fields = {}
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise VolumeFormatError(f"{path}:{lineno}: expected 'key = value'")
        key, value = line.split("=", 1)
        fields[key.strip()] = value.strip()
    return fields


def load_volume(path) -> VoxelVolume:
    """Read a volume from a text header + raw little-endian sample stream."""
    path = Path(path)
    if not path.is_file():
        raise VolumeFormatError(f"volume header not found: {path}")
    fields = _parse_header(path)
    for key in ("dims", "spacing", "origin", "dtype", "raw"):
        if key not in fields:
            raise VolumeFormatError(f"{path}: missing header field '{key}'")
    try:
        nx, ny, nz = (int(t) for t in fields["dims"].split())
        spacing = tuple(float(t) for t in fields["spacing"].split())
        origin = tuple(float(t) for t in fields["origin"].split())
    except ValueError as exc:
        raise VolumeFormatError(f"{path}: malformed header numbers: {exc}") from exc
    if len(spacing) != 3 or len(origin) != 3:
        raise VolumeFormatError(f"{path}: spacing/origin need 3 components")
    if min(nx, ny, nz) < 1:
        raise VolumeFormatError(f"{path}: dims must be >= 1, got {nx} {ny} {nz}")
    if min(spacing) <= 0:
        raise VolumeFormatError(f"{path}: spacing must be positive")
    if fields["dtype"] not in _DTYPE_NAMES:
        raise VolumeFormatError(f"{path}: unsupported dtype '{fields['dtype']}'")
    dtype = _DTYPE_NAMES[fields["dtype"]]

    raw_path = path.parent / fields["raw"]
    if not raw_path.is_file():
        raise VolumeFormatError(f"raw file not found: {raw_path}")
    raw = np.fromfile(raw_path, dtype=dtype)
    if raw.size != nx * ny * nz:
        raise VolumeFormatError(
            f"{raw_path}: has {raw.size} samples, header declares "
            f"{nx}*{ny}*{nz} = {nx * ny * nz}")
    data = raw.reshape(nz, ny, nx)
    return VoxelVolume(data=data, spacing=spacing, origin=origin)


def save_volume(vol: VoxelVolume, path) -> None:
    """Write header + raw pair; `path` names the header file.

    Only i16 and u8 sample types are storable; the raw stream is x-fastest
    little-endian and round-trips bit-exactly through load_volume.
    """
    path = Path(path)
    kind = (vol.data.dtype.kind, vol.data.dtype.itemsize)
    if kind not in _NAME_BY_KIND:
        raise VolumeFormatError(
            f"cannot store dtype {vol.data.dtype}; use i16 or u8")
    name = _NAME_BY_KIND[kind]
    raw_path = path.with_suffix(".raw")
    nx, ny, nz = vol.dims
    lines = [
        f"dims = {nx} {ny} {nz}",
        "spacing = " + " ".join(repr(s) for s in vol.spacing),
        "origin = " + " ".join(repr(o) for o in vol.origin),
        f"dtype = {name}",
        f"raw = {raw_path.name}",
        "",
    ]
    path.write_text("\n".join(lines))
    vol.data.astype(_DTYPE_NAMES[name], copy=False).tofile(raw_path)


def calibrate(vol: VoxelVolume, cal: CalibrationParams) -> VoxelVolume:
    """Apply the linear HU -> mg/cm^3 map; same grid, float64 values."""
    data = cal.slope * vol.data.astype(np.float64) + cal.intercept
    return VoxelVolume(data=data, spacing=vol.spacing, origin=vol.origin)


def sample_trilinear(vol: VoxelVolume, point) -> float:
    """Interpolate at one world point (clamped at the volume border)."""
    pts = np.asarray(point, dtype=np.float64).reshape(1, 3)
    return float(_kernels.trilinear(vol._data_f64, vol.spacing, vol.origin, pts)[0])


def sample_trilinear_many(vol: VoxelVolume, points) -> np.ndarray:
    pts = np.ascontiguousarray(points, dtype=np.float64)
    return _kernels.trilinear(vol._data_f64, vol.spacing, vol.origin, pts)


def resample_fov(vol: VoxelVolume, spec: ScanSpec) -> VoxelVolume:
    """Simulate an in-plane reconstruction at pixel size fov/matrix.

    The slice direction is untouched; the output covers the input's physical
    extent to within one output pixel and is sampled trilinearly.
    """
    s = spec.pixel_mm
    nx, ny, nz = vol.dims
    sx, sy, sz = vol.spacing
    out_nx = int(round(nx * sx / s))
    out_ny = int(round(ny * sy / s))
    if out_nx < 1 or out_ny < 1:
        raise ConfigError(
            f"fov {spec.fov_mm}/matrix {spec.matrix} yields a zero-sized grid")
    xs = vol.origin[0] + (np.arange(out_nx) + 0.5) * s
    ys = vol.origin[1] + (np.arange(out_ny) + 0.5) * s
    zs = vol.axis_centers(2)
    out = np.empty((nz, out_ny, out_nx), dtype=np.float64)
    xx, yy = np.meshgrid(xs, ys, indexing="xy")
    pts = np.empty((out_ny * out_nx, 3), dtype=np.float64)
    pts[:, 0] = xx.ravel()
    pts[:, 1] = yy.ravel()
    for k, z in enumerate(zs):
        pts[:, 2] = z
        out[k] = _kernels.trilinear(vol._data_f64, vol.spacing, vol.origin,
                                    pts).reshape(out_ny, out_nx)
    return VoxelVolume(data=out, spacing=(s, s, sz), origin=vol.origin)


def as_mask_volume(mask: np.ndarray, like: VoxelVolume) -> VoxelVolume:
    """Wrap a boolean mask as a storable u8 volume on `like`'s grid."""
    return VoxelVolume(data=mask.astype(np.uint8), spacing=like.spacing,
                       origin=like.origin)
