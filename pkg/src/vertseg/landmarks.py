"""Preprocessing constraints: operator seed points, canal centerline,
disk planes, and the disjoint enclosing cylinder per vertebra.

Anatomical conventions: +y posterior (toward the canal), +z cranial;
marked centers arrive cranial to caudal, i.e. with strictly decreasing z.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import CanalNotFoundError, InputError, LandmarkError
from .volgrid import VoxelVolume


@dataclass(frozen=True)
class RollingBallParams:
    radius_mm: float = 4.0
    step_mm: float = 2.0
    soft_threshold_hu: float = 100.0
    search_window_mm: float = 40.0
    extension_mm: float = 15.0      # march past the marked z-range by this much
    min_inside_fraction: float = 0.98
    recenter_iterations: int = 4


@dataclass(frozen=True)
class DiskPlaneParams:
    slab_mm: float = 3.0
    bone_threshold_hu: float = 200.0
    offset_lo: float = 0.3
    offset_hi: float = 0.7
    lateral_radius_mm: float = 35.0
    resolution_mm: float = 0.25


@dataclass(frozen=True)
class CylinderParams:
    margin_mm: float = 3.0
    r_min_mm: float = 8.0


@dataclass(frozen=True)
class Cylinder:
    """Finite cylinder: base point on the axis, cap offsets t_min <= t_max."""

    base: np.ndarray        # (3,) mm
    axis: np.ndarray        # (3,) unit vector
    radius: float
    t_min: float
    t_max: float

    def __post_init__(self):
        object.__setattr__(self, "base", np.asarray(self.base, dtype=np.float64))
        axis = np.asarray(self.axis, dtype=np.float64)
        norm = np.linalg.norm(axis)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("cylinder axis must be a unit vector")
        object.__setattr__(self, "axis", axis)
        if self.radius <= 0:
            raise ValueError("cylinder radius must be positive")
        if not self.t_min < self.t_max:
            raise ValueError("cylinder caps are inverted")

    @property
    def center(self) -> np.ndarray:
        return self.base + 0.5 * (self.t_min + self.t_max) * self.axis

    @property
    def half_height(self) -> float:
        return 0.5 * (self.t_max - self.t_min)

    def _decompose(self, points):
        rel = np.atleast_2d(points) - self.base
        t = rel @ self.axis
        radial = rel - t[:, None] * self.axis
        return t, radial

    def contains(self, points, tol: float = 1e-9) -> np.ndarray:
        t, radial = self._decompose(points)
        r = np.linalg.norm(radial, axis=1)
        return (t >= self.t_min - tol) & (t <= self.t_max + tol) \
            & (r <= self.radius + tol)

    def clamp(self, points) -> np.ndarray:
        """Project points onto the cylinder (identity for interior points)."""
        t, radial = self._decompose(points)
        t = np.clip(t, self.t_min, self.t_max)
        r = np.linalg.norm(radial, axis=1)
        scale = np.ones_like(r)
        over = r > self.radius
        scale[over] = self.radius / r[over]
        return self.base + t[:, None] * self.axis + radial * scale[:, None]

    def voxel_mask(self, vol: VoxelVolume) -> np.ndarray:
        """Boolean mask of voxel centers inside the cylinder."""
        nz, ny, nx = vol.data.shape
        lo, hi = self.world_bounds()
        ilo = np.maximum(np.floor(vol.world_to_index(lo)).astype(int), 0)
        ihi = np.minimum(np.ceil(vol.world_to_index(hi)).astype(int) + 1,
                         [nx, ny, nz])
        mask = np.zeros((nz, ny, nx), dtype=bool)
        if np.any(ilo >= ihi):
            return mask
        xs = vol.origin[0] + (np.arange(ilo[0], ihi[0]) + 0.5) * vol.spacing[0]
        ys = vol.origin[1] + (np.arange(ilo[1], ihi[1]) + 0.5) * vol.spacing[1]
        zs = vol.origin[2] + (np.arange(ilo[2], ihi[2]) + 0.5) * vol.spacing[2]
        rel = np.stack(np.meshgrid(xs, ys, zs, indexing="ij"), axis=-1) - self.base
        t = rel @ self.axis
        radial2 = (rel ** 2).sum(axis=-1) - t ** 2
        inside = (t >= self.t_min) & (t <= self.t_max) \
            & (radial2 <= self.radius ** 2)
        mask[ilo[2]:ihi[2], ilo[1]:ihi[1], ilo[0]:ihi[0]] = \
            np.transpose(inside, (2, 1, 0))
        return mask

    def world_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        half = self.radius * np.sqrt(np.maximum(1.0 - self.axis ** 2, 0.0))
        ends = np.stack([self.base + self.t_min * self.axis,
                         self.base + self.t_max * self.axis])
        return ends.min(axis=0) - half, ends.max(axis=0) + half


@dataclass(frozen=True)
class LandmarkSet:
    centers: np.ndarray                 # (N,3) cranial -> caudal
    canal: np.ndarray                   # (M,3) ascending z
    disk_planes: list                   # [(point, unit normal)], normals caudal
    cylinders: list


def read_seeds(path) -> np.ndarray:
    """One `x y z` mm triple per line; `#` comments and blank lines allowed."""
    path = Path(path)
    if not path.is_file():
        raise InputError(f"seed file not found: {path}")
    points = []
    for lineno, line in enumerate(path.read_text().splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise InputError(f"{path}:{lineno}: expected 3 coordinates, "
                             f"got {len(parts)}")
        try:
            points.append([float(p) for p in parts])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
    if len(points) < 2:
        raise InputError(f"{path}: need at least 2 seed points, "
                         f"got {len(points)}")
    return np.asarray(points, dtype=np.float64)


def write_seeds(points, path) -> None:
    lines = ["# vertebra centers, one per line: x y z (mm), cranial to caudal"]
    lines += [" ".join(repr(float(c)) for c in p) for p in np.atleast_2d(points)]
    Path(path).write_text("\n".join(lines) + "\n")


def _ball_patch(vol: VoxelVolume, center, radius):
    """Voxel coordinates (K,3 mm) and values within a ball, or empty."""
    lo = np.asarray(center) - radius
    hi = np.asarray(center) + radius
    nx, ny, nz = vol.dims
    ilo = np.maximum(np.floor(vol.world_to_index(lo)).astype(int), 0)
    ihi = np.minimum(np.ceil(vol.world_to_index(hi)).astype(int) + 1, [nx, ny, nz])
    if np.any(ilo >= ihi):
        return np.empty((0, 3)), np.empty((0,))
    xs = vol.origin[0] + (np.arange(ilo[0], ihi[0]) + 0.5) * vol.spacing[0]
    ys = vol.origin[1] + (np.arange(ilo[1], ihi[1]) + 0.5) * vol.spacing[1]
    zs = vol.origin[2] + (np.arange(ilo[2], ihi[2]) + 0.5) * vol.spacing[2]
    Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
    vals = vol.data[ilo[2]:ihi[2], ilo[1]:ihi[1], ilo[0]:ihi[0]]
    d2 = (X - center[0]) ** 2 + (Y - center[1]) ** 2 + (Z - center[2]) ** 2
    keep = d2 <= radius ** 2
    coords = np.column_stack([X[keep], Y[keep], Z[keep]])
    return coords, np.asarray(vals, dtype=np.float64)[keep]


def _recenter(vol, point, params: RollingBallParams):
    """Pull the ball onto the intensity-weighted centroid of soft voxels.

    Only x and y move; z is pinned so the traversal stays monotone.
    """
    p = np.asarray(point, dtype=np.float64).copy()
    for _ in range(params.recenter_iterations):
        coords, vals = _ball_patch(vol, p, params.radius_mm)
        if coords.shape[0] == 0:
            raise CanalNotFoundError(f"rolling ball left the volume at z={p[2]:.1f}")
        w = np.maximum(params.soft_threshold_hu - vals, 0.0)
        total = w.sum()
        if total <= 0.0:
            raise CanalNotFoundError(
                f"no soft-tissue voxels inside the ball at z={p[2]:.1f}")
        p[0] = (coords[:, 0] * w).sum() / total
        p[1] = (coords[:, 1] * w).sum() / total
    return p


def _find_canal_seed(vol, start_center, params: RollingBallParams):
    """First fully-soft ball posterior of the marked center, with walls.

    Scans +y in 1 mm steps; a candidate must have nearly all ball voxels
    below the soft threshold and bone in the surrounding shell (a canal has
    walls; open soft tissue does not).  Returns the middle of the first
    maximal run of fully-soft candidates.
    """
    c = np.asarray(start_center, dtype=np.float64)
    ds = np.arange(params.radius_mm, params.search_window_mm + 1e-9, 1.0)
    run = []
    for d in ds:
        p = c + np.array([0.0, d, 0.0])
        coords, vals = _ball_patch(vol, p, params.radius_mm)
        full = coords.shape[0] > 0 and \
            (vals < params.soft_threshold_hu).mean() >= params.min_inside_fraction
        if full:
            run.append(p)
        elif run:
            break
    if not run:
        raise CanalNotFoundError(
            "no low-intensity channel in the posterior search window")
    seed = run[len(run) // 2]
    shell_coords, shell_vals = _ball_patch(vol, seed, 2 * params.radius_mm)
    d2 = ((shell_coords - seed) ** 2).sum(axis=1)
    annulus = d2 >= params.radius_mm ** 2
    wall = (shell_vals[annulus] >= params.soft_threshold_hu)
    if wall.size == 0 or wall.mean() < 0.02:
        raise CanalNotFoundError(
            "posterior low-intensity region has no walls; no canal here")
    return seed


def detect_canal_centerline(vol: VoxelVolume, centers,
                            params: RollingBallParams = RollingBallParams()
                            ) -> np.ndarray:
    """Trace the spinal canal with a rolling ball; returns (M,3), ascending z.

    The ball starts posterior of the most cranial center and advances in
    axial steps, re-centering on the soft-tissue centroid at each stop.
    Covers the marked z-range plus the configured extension, clamped to the
    volume.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if centers.shape[0] < 2:
        raise LandmarkError("canal detection needs at least 2 marked centers")
    lo, hi = vol.bounds()
    z_lo = max(centers[:, 2].min() - params.extension_mm, lo[2] + vol.spacing[2] / 2)
    z_hi = min(centers[:, 2].max() + params.extension_mm, hi[2] - vol.spacing[2] / 2)

    start_center = centers[np.argmax(centers[:, 2])]
    seed = _recenter(vol, _find_canal_seed(vol, start_center, params), params)

    points = [seed]
    p = seed.copy()
    z = seed[2] - params.step_mm
    while z >= z_lo:
        p = _recenter(vol, [p[0], p[1], z], params)
        points.insert(0, p)
        z -= params.step_mm
    p = seed.copy()
    z = seed[2] + params.step_mm
    while z <= z_hi:
        p = _recenter(vol, [p[0], p[1], z], params)
        points.append(p)
        z += params.step_mm
    return np.asarray(points)


def fit_disk_planes(vol: VoxelVolume, centers,
                    params: DiskPlaneParams = DiskPlaneParams()) -> list:
    """One plane per consecutive center pair, at the bone-intensity minimum.

    The plane is perpendicular to the local spine direction; its offset is
    chosen on a grid of candidate fractions by minimizing the summed
    above-threshold intensity inside a slab.  Plateaus (including the fully
    flat objective) resolve to their middle, so a constant volume yields the
    midpoint plane.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    planes = []
    for c1, c2 in zip(centers[:-1], centers[1:]):
        span = c2 - c1
        length = np.linalg.norm(span)
        if length < 1e-9:
            raise LandmarkError("consecutive centers coincide")
        u = span / length

        lo = np.minimum(c1, c2) - (params.lateral_radius_mm + params.slab_mm)
        hi = np.maximum(c1, c2) + (params.lateral_radius_mm + params.slab_mm)
        nx, ny, nz = vol.dims
        ilo = np.maximum(np.floor(vol.world_to_index(lo)).astype(int), 0)
        ihi = np.minimum(np.ceil(vol.world_to_index(hi)).astype(int) + 1,
                         [nx, ny, nz])
        xs = vol.origin[0] + (np.arange(ilo[0], ihi[0]) + 0.5) * vol.spacing[0]
        ys = vol.origin[1] + (np.arange(ilo[1], ihi[1]) + 0.5) * vol.spacing[1]
        zs = vol.origin[2] + (np.arange(ilo[2], ihi[2]) + 0.5) * vol.spacing[2]
        sub = vol.data[ilo[2]:ihi[2], ilo[1]:ihi[1], ilo[0]:ihi[0]]
        bone = np.asarray(sub, dtype=np.float64)
        hot = bone >= params.bone_threshold_hu

        Z, Y, X = np.meshgrid(zs, ys, xs, indexing="ij")
        rel = np.stack([X - c1[0], Y - c1[1], Z - c1[2]], axis=-1)
        proj = rel @ u
        radial2 = (rel ** 2).sum(axis=-1) - proj ** 2
        near = radial2 <= params.lateral_radius_mm ** 2
        sel = hot & near
        proj_sel = proj[sel]
        w_sel = bone[sel]

        res = params.resolution_mm
        t0, t1 = params.offset_lo * length, params.offset_hi * length
        edges = np.arange(t0 - params.slab_mm, t1 + params.slab_mm + res, res)
        hist, _ = np.histogram(proj_sel, bins=edges, weights=w_sel)
        window = int(round(params.slab_mm / res)) + 1
        kernel = np.ones(window)
        score = np.convolve(hist, kernel, mode="same")
        bin_centers = 0.5 * (edges[:-1] + edges[1:])
        in_range = (bin_centers >= t0) & (bin_centers <= t1)
        ts = bin_centers[in_range]
        s = score[in_range]
        minima = np.flatnonzero(s == s.min())
        t_star = ts[minima[len(minima) // 2]]
        planes.append((c1 + t_star * u, u))
    return planes


def _point_to_polyline_distance(point, polyline) -> float:
    p = np.asarray(point, dtype=np.float64)
    pts = np.asarray(polyline, dtype=np.float64)
    if pts.shape[0] == 1:
        return float(np.linalg.norm(p - pts[0]))
    a, b = pts[:-1], pts[1:]
    ab = b - a
    denom = (ab ** 2).sum(axis=1)
    denom[denom == 0] = 1.0
    t = np.clip(((p - a) * ab).sum(axis=1) / denom, 0.0, 1.0)
    closest = a + t[:, None] * ab
    return float(np.linalg.norm(closest - p, axis=1).min())


def build_cylinders(centers, disk_planes, canal, z_bounds,
                    params: CylinderParams = CylinderParams()) -> list:
    """Disjoint enclosing cylinder per vertebra.

    Axis: local spine direction (central differences), oriented cranially.
    Radius: distance from the center to the canal centerline minus the
    margin; below r_min the landmarks are inconsistent.  Caps: shrunk onto
    the adjacent disk planes (volume z-boundary at the column ends) so the
    full cylinder stays between its planes; that guarantees pairwise
    disjoint cylinders.
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    n = centers.shape[0]
    if len(disk_planes) != n - 1:
        raise LandmarkError(f"expected {n - 1} disk planes, got {len(disk_planes)}")
    z_lo, z_hi = z_bounds

    cylinders = []
    for i in range(n):
        if i == 0:
            raw = centers[0] - centers[1]
        elif i == n - 1:
            raw = centers[-2] - centers[-1]
        else:
            raw = centers[i - 1] - centers[i + 1]
        axis = raw / np.linalg.norm(raw)
        if axis[2] < 0:
            axis = -axis

        radius = _point_to_polyline_distance(centers[i], canal) - params.margin_mm
        if radius < params.r_min_mm:
            raise LandmarkError(
                f"cylinder radius {radius:.1f} mm for vertebra {i} falls below "
                f"the minimum {params.r_min_mm} mm; landmarks inconsistent")

        if i == 0:
            cranial = (np.array([centers[i][0], centers[i][1], z_hi]),
                       np.array([0.0, 0.0, -1.0]))
        else:
            cranial = disk_planes[i - 1]
        if i == n - 1:
            caudal = (np.array([centers[i][0], centers[i][1], z_lo]),
                      np.array([0.0, 0.0, -1.0]))
        else:
            caudal = disk_planes[i]

        c = centers[i]
        q_up, n_up = cranial
        q_dn, n_dn = caudal
        s_up = np.linalg.norm(n_up - n_up.dot(axis) * axis)
        s_dn = np.linalg.norm(n_dn - n_dn.dot(axis) * axis)
        # caudally-pointing normals; the whole disk at the cap must stay on
        # the body side of each plane
        t_max = (radius * s_up - np.dot(c - q_up, n_up)) / np.dot(axis, n_up)
        t_min = (-np.dot(c - q_dn, n_dn) - radius * s_dn) / np.dot(axis, n_dn)
        if not t_min < 0 < t_max:
            raise LandmarkError(
                f"vertebra {i} center is not strictly between its cap planes")
        cylinders.append(Cylinder(base=c, axis=axis, radius=float(radius),
                                  t_min=float(t_min), t_max=float(t_max)))
    return cylinders


def detect_landmarks(vol: VoxelVolume, centers,
                     ball: RollingBallParams = RollingBallParams(),
                     disk: DiskPlaneParams = DiskPlaneParams(),
                     cyl: CylinderParams = CylinderParams()) -> LandmarkSet:
    """Run the full preprocessing chain on marked centers."""
    centers = np.atleast_2d(np.asarray(centers, dtype=np.float64))
    if centers.shape[0] < 2:
        raise LandmarkError("need at least 2 marked centers")
    if not np.all(np.diff(centers[:, 2]) < 0):
        raise LandmarkError("centers must run cranial to caudal "
                            "(strictly decreasing z)")
    canal = detect_canal_centerline(vol, centers, ball)
    planes = fit_disk_planes(vol, centers, disk)
    lo, hi = vol.bounds()
    cylinders = build_cylinders(centers, planes, canal, (lo[2], hi[2]), cyl)
    return LandmarkSet(centers=centers, canal=canal, disk_planes=planes,
                       cylinders=cylinders)
