"""Synthetic lumbar-column phantoms with analytic ground truth.

Each vertebra is an elliptic-cylinder body (trabecular core wrapped in a
cortical shell) plus a posterior arch: a cortical ring around the spinal
canal, joined to the body by two thin pedicle bars and carrying lateral
process stubs.  Consecutive bodies are separated by disk gaps.  The column
axis can be bent; bending shears the cross-sections in x per slice, which
keeps every per-slice area and therefore the analytic body volume exact.

Anatomical conventions on the grid: +y is posterior (the canal side),
+z is cranial.  Vertebra lists run cranial to caudal (L1 first).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import PhantomGeometryError
from .volgrid import CalibrationParams, VoxelVolume


@dataclass(frozen=True)
class PhantomSpec:
    n_vertebrae: int = 3
    body_a_mm: float = 15.0          # lateral (x) semi-axis
    body_b_mm: float = 10.0          # anteroposterior (y) semi-axis
    body_height_mm: float = 25.0
    disk_gap_mm: float = 5.0
    cortical_mm: float = 1.5         # shell and endplate thickness
    process_radius_mm: float = 5.0
    process_length_mm: float = 12.0
    pedicle_half_mm: float = 1.5     # half-thickness of the pedicle bars
    canal_radius_mm: float = 6.0
    canal_offset_mm: float = 25.0    # canal axis posterior of the body center
    arch_mm: float = 6.0             # arch ring wall thickness
    curvature: float = 0.0           # 1/mm bend of the column axis (in x)
    hu_trabecular: float = 150.0
    hu_cortical: float = 600.0
    hu_soft: float = 30.0
    hu_disk: float = 60.0
    noise_sigma: float = 15.0
    seed: int = 0
    dims: tuple[int, int, int] = (128, 128, 96)
    spacing_mm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        lengths = (self.body_a_mm, self.body_b_mm, self.body_height_mm,
                   self.disk_gap_mm, self.cortical_mm, self.process_radius_mm,
                   self.process_length_mm, self.pedicle_half_mm,
                   self.canal_radius_mm, self.canal_offset_mm, self.arch_mm)
        if min(lengths) <= 0:
            raise ValueError("all phantom lengths must be positive")
        if not (self.hu_cortical > self.hu_trabecular > self.hu_soft):
            raise ValueError("need cortical HU > trabecular HU > soft HU")
        if self.n_vertebrae < 2:
            raise ValueError("need at least 2 vertebrae (the center spline "
                             "requires two points)")
        if self.cortical_mm >= min(self.body_a_mm, self.body_b_mm,
                                   self.body_height_mm / 2):
            raise ValueError("cortical shell swallows the trabecular core")

    @property
    def levels(self) -> list[str]:
        return [f"L{i + 1}" for i in range(self.n_vertebrae)]


@dataclass
class VertebraTruth:
    level: str
    center: np.ndarray          # mm (3,)
    total: np.ndarray           # bool (nz, ny, nx)
    body: np.ndarray
    processes: np.ndarray
    trabecular: np.ndarray


@dataclass
class GroundTruth:
    """Analytic reference for one generated phantom."""

    vertebrae: list[VertebraTruth]      # cranial -> caudal
    canal_axis: np.ndarray              # (M,3) mm polyline, ascending z
    body_volume_mm3: float              # per body, closed form
    trabecular_hu: float

    @property
    def centers(self) -> np.ndarray:
        return np.stack([v.center for v in self.vertebrae])

    def bmd(self, cal: CalibrationParams) -> float:
        return cal.slope * self.trabecular_hu + cal.intercept


def analytic_volume(spec: PhantomSpec) -> float:
    """Closed-form volume of one vertebral body (shell included), mm^3."""
    return math.pi * spec.body_a_mm * spec.body_b_mm * spec.body_height_mm


def analytic_bmd(spec: PhantomSpec, cal: CalibrationParams) -> float:
    """Expected noiseless trabecular VOI mean in mg/cm^3."""
    return cal.slope * spec.hu_trabecular + cal.intercept


@dataclass
class _Layout:
    spec: PhantomSpec
    origin: tuple[float, float, float] = (0.0, 0.0, 0.0)
    column_x: float = field(init=False)
    column_y: float = field(init=False)
    canal_y: float = field(init=False)
    z_mid: float = field(init=False)
    centers_z: np.ndarray = field(init=False)   # cranial -> caudal

    def __post_init__(self):
        s = self.spec
        nx, ny, nz = s.dims
        ex = nx * s.spacing_mm[0]
        ey = ny * s.spacing_mm[1]
        ez = nz * s.spacing_mm[2]
        self.column_x = self.origin[0] + 0.5 * ex
        # shift anterior so the posterior arch fits behind the bodies
        self.column_y = self.origin[1] + 0.5 * ey - 0.5 * s.canal_offset_mm
        self.canal_y = self.column_y + s.canal_offset_mm
        self.z_mid = self.origin[2] + 0.5 * ez
        height = s.n_vertebrae * s.body_height_mm \
            + (s.n_vertebrae - 1) * s.disk_gap_mm
        # snap the column base to a voxel edge: slab boundaries then fall
        # between voxel centers, so voxelized bodies are centered on their
        # nominal centers instead of biased by half a slice
        sz = s.spacing_mm[2]
        z0 = self.origin[2] + round(0.5 * (ez - height) / sz) * sz
        pitch = s.body_height_mm + s.disk_gap_mm
        bottom_up = z0 + s.body_height_mm / 2 + pitch * np.arange(s.n_vertebrae)
        self.centers_z = bottom_up[::-1].copy()

        arch_outer = s.canal_radius_mm + s.arch_mm
        x_reach = max(s.body_a_mm, arch_outer - 1.0 + s.process_length_mm)
        dev = 0.5 * s.curvature * max(abs(z0 - self.z_mid),
                                      abs(z0 + height - self.z_mid)) ** 2
        margin = max(s.spacing_mm)
        checks = [
            ("x", self.column_x - dev - x_reach >= self.origin[0] + margin
             and self.column_x + dev + x_reach <= self.origin[0] + ex - margin),
            ("y", self.column_y - s.body_b_mm >= self.origin[1] + margin
             and self.canal_y + arch_outer <= self.origin[1] + ey - margin),
            ("z", height + 2 * margin <= ez),
        ]
        bad = [axis for axis, ok in checks if not ok]
        if bad:
            raise PhantomGeometryError(
                f"phantom does not fit the grid along axis {', '.join(bad)}")

    def axis_x(self, z):
        return self.column_x + 0.5 * self.spec.curvature * (z - self.z_mid) ** 2


def generate_phantom(spec: PhantomSpec,
                     origin=(0.0, 0.0, 0.0)) -> tuple[VoxelVolume, GroundTruth]:
    """Build the phantom volume (i16 HU) and its ground truth.

    Deterministic for a fixed spec (noise comes from spec.seed).
    """
    lay = _Layout(spec, tuple(float(o) for o in origin))
    nx, ny, nz = spec.dims
    sx, sy, sz = spec.spacing_mm
    x = lay.origin[0] + (np.arange(nx) + 0.5) * sx
    y = lay.origin[1] + (np.arange(ny) + 0.5) * sy
    z = lay.origin[2] + (np.arange(nz) + 0.5) * sz
    X = x[None, None, :]
    Y = y[None, :, None]
    Z = z[:, None, None]
    AX = lay.axis_x(Z)              # column axis x per slice

    canvas = np.full((nz, ny, nx), spec.hu_soft, dtype=np.float64)

    def zslab(zc, height):
        # half-open so a boundary landing exactly on voxel centers is not
        # counted twice (keeps slab thickness exact in slices)
        return (Z >= zc - height / 2) & (Z < zc + height / 2)

    def ellipse(a, b, zc, height):
        return (((X - AX) / a) ** 2 + ((Y - lay.column_y) / b) ** 2 <= 1.0) \
            & zslab(zc, height)

    # disks between consecutive bodies
    h, gap = spec.body_height_mm, spec.disk_gap_mm
    for zc in (lay.centers_z[:-1] + lay.centers_z[1:]) / 2:
        canvas[ellipse(spec.body_a_mm, spec.body_b_mm, zc, gap)] = spec.hu_disk

    rc = spec.canal_radius_mm
    r_out = rc + spec.arch_mm
    ped_x = rc                      # pedicle bars flank the canal
    vertebrae = []
    for level, zc in zip(spec.levels, lay.centers_z):
        slab = zslab(zc, h)
        r2 = (X - AX) ** 2 + (Y - lay.canal_y) ** 2
        ring = slab & (r2 >= rc ** 2) & (r2 <= r_out ** 2)

        y_ped0 = lay.column_y \
            + spec.body_b_mm * math.sqrt(max(0.0, 1 - (ped_x / spec.body_a_mm) ** 2)) - 1.0
        y_ped1 = lay.canal_y - math.sqrt(max(r_out ** 2 - ped_x ** 2, 0.0)) + 1.5
        ph = spec.pedicle_half_mm
        pedicles = zslab(zc, 2 * ph) & (Y >= y_ped0) & (Y <= y_ped1) \
            & (np.minimum(np.abs(X - (AX - ped_x)), np.abs(X - (AX + ped_x))) <= ph)

        stub_r2 = (Y - lay.canal_y) ** 2 + (Z - zc) ** 2
        xoff = np.abs(X - AX)
        stubs = (stub_r2 <= spec.process_radius_mm ** 2) \
            & (xoff >= r_out - 1.0) & (xoff <= r_out - 1.0 + spec.process_length_mm)

        body = ellipse(spec.body_a_mm, spec.body_b_mm, zc, h)
        core = ellipse(spec.body_a_mm - spec.cortical_mm,
                       spec.body_b_mm - spec.cortical_mm, zc,
                       h - 2 * spec.cortical_mm)

        posterior = ring | pedicles | stubs
        canvas[posterior] = spec.hu_cortical
        canvas[body] = spec.hu_cortical
        canvas[core] = spec.hu_trabecular

        vertebrae.append(VertebraTruth(
            level=level,
            center=np.array([lay.axis_x(zc), lay.column_y, zc]),
            total=body | posterior,
            body=body,
            processes=posterior & ~body,
            trabecular=core,
        ))

    if spec.noise_sigma > 0:
        rng = np.random.default_rng(spec.seed)
        canvas = canvas + rng.normal(0.0, spec.noise_sigma, canvas.shape)
    data = np.rint(canvas).astype(np.int16)

    canal = np.column_stack([lay.axis_x(z), np.full(nz, lay.canal_y), z])
    truth = GroundTruth(
        vertebrae=vertebrae,
        canal_axis=canal,
        body_volume_mm3=analytic_volume(spec),
        trabecular_hu=spec.hu_trabecular,
    )
    vol = VoxelVolume(data=data, spacing=spec.spacing_mm, origin=lay.origin)
    return vol, truth
