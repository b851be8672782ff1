"""Voxel-level refinement: morphology, seeded growing, body/process split.

All masks are boolean numpy arrays of shape (nz, ny, nx).  Border
conventions follow the adjoint pair on the grid window: erosion treats
out-of-grid voxels as foreground, dilation as background, which makes
closing exactly idempotent and the erosion/dilation duality hold on the
grid.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from . import _kernels
from .errors import EmptyMaskError, SeedSelectionError, SeparationError
from .volgrid import VoxelVolume

_UNIT = (1.0, 1.0, 1.0)


@dataclass(frozen=True)
class StructuringElement:
    """Neighborhood kinds: n6, n18, n26, or a physical ball(radius mm)."""

    kind: str = "n6"
    radius_mm: float = 0.0

    def __post_init__(self):
        if self.kind not in ("n6", "n18", "n26", "ball"):
            raise ValueError(f"unknown structuring element kind {self.kind!r}")
        if self.kind == "ball" and self.radius_mm <= 0:
            raise ValueError("ball structuring element needs radius_mm > 0")

    @classmethod
    def ball(cls, radius_mm: float) -> "StructuringElement":
        return cls(kind="ball", radius_mm=radius_mm)

    def offsets(self, spacing=_UNIT) -> np.ndarray:
        """(K,3) array of (dz, dy, dx) neighbor offsets, center included."""
        if self.kind == "ball":
            sx, sy, sz = spacing
            rx = int(self.radius_mm / sx)
            ry = int(self.radius_mm / sy)
            rz = int(self.radius_mm / sz)
            dz, dy, dx = np.mgrid[-rz:rz + 1, -ry:ry + 1, -rx:rx + 1]
            keep = ((dx * sx) ** 2 + (dy * sy) ** 2 + (dz * sz) ** 2
                    <= self.radius_mm ** 2)
            return np.column_stack([dz[keep], dy[keep], dx[keep]]).astype(np.int64)
        order = {"n6": 1, "n18": 2, "n26": 3}[self.kind]
        dz, dy, dx = np.mgrid[-1:2, -1:2, -1:2]
        keep = (np.abs(dx) + np.abs(dy) + np.abs(dz)) <= order
        return np.column_stack([dz[keep], dy[keep], dx[keep]]).astype(np.int64)


N6 = StructuringElement("n6")
N18 = StructuringElement("n18")
N26 = StructuringElement("n26")


def _as_u8(mask) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(mask), dtype=np.uint8)


def _hu_data(vol) -> np.ndarray:
    if isinstance(vol, VoxelVolume):
        return vol.data
    return np.asarray(vol)


def erode(mask, se: StructuringElement = N6, spacing=_UNIT) -> np.ndarray:
    return _kernels.erode(_as_u8(mask), se.offsets(spacing)).astype(bool)


def dilate(mask, se: StructuringElement = N6, spacing=_UNIT) -> np.ndarray:
    return _kernels.dilate(_as_u8(mask), se.offsets(spacing)).astype(bool)


def close_mask(mask, se: StructuringElement = N6, spacing=_UNIT) -> np.ndarray:
    """Dilate then erode with the same element."""
    off = se.offsets(spacing)
    return _kernels.erode(_kernels.dilate(_as_u8(mask), off), off).astype(bool)


def fill_holes(mask) -> np.ndarray:
    """Add background 6-components that cannot reach the grid boundary."""
    return _kernels.fill_holes(_as_u8(mask)).astype(bool)


def label_components(mask, connectivity: int = 26) -> tuple[np.ndarray, int]:
    return _kernels.label_components(_as_u8(mask), connectivity)


def select_seeds(vol, surface_mask, hu_threshold: float) -> np.ndarray:
    """Surface voxels bright enough to seed volume growing."""
    seeds = np.asarray(surface_mask, dtype=bool) & (_hu_data(vol) >= hu_threshold)
    if not seeds.any():
        raise SeedSelectionError(
            f"no surface voxel reaches {hu_threshold} HU; balloon surface "
            "and volume do not match")
    return seeds


def volume_grow(vol, seeds, hu_threshold: float, connectivity: int = 26,
                within=None) -> np.ndarray:
    """Connected component of {HU >= threshold} reachable from the seeds."""
    data = np.ascontiguousarray(_hu_data(vol), dtype=np.float64)
    within_u8 = None if within is None else _as_u8(within)
    out = _kernels.flood_threshold(data, _as_u8(seeds), float(hu_threshold),
                                   int(connectivity), within_u8)
    return out.astype(bool)


def _nearest_residual_distances(body_res, proc_res, spacing):
    sampling = (spacing[2], spacing[1], spacing[0])
    d_body = ndimage.distance_transform_edt(~body_res, sampling=sampling)
    d_proc = ndimage.distance_transform_edt(~proc_res, sampling=sampling)
    return d_body, d_proc


def separate_processes(mask, se: StructuringElement = N6, spacing=_UNIT,
                       tie_axis=None) -> tuple[np.ndarray, np.ndarray]:
    """Split one connected bone mask into body and process compartments.

    Erodes until the mask falls apart into >= 2 residuals (the thinnest
    bridge, anatomically the pedicles, breaks first).  The largest residual
    is the body; both residuals then grow back in parallel, one element step
    per round, constrained to the original mask and to unclaimed voxels.
    A voxel reached by both labels in the same round is left open until the
    next round and then joins the label whose residual is nearer (exact
    ties go to the body).

    `tie_axis` ((point, direction) in mm) breaks equal-size residual ties by
    centroid distance to the axis.  Returns (body, processes); the two masks
    partition the input exactly.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMaskError("separation needs a nonempty mask")
    _, n0 = label_components(mask, 26)
    if n0 != 1:
        raise ValueError(f"mask must be one 26-connected component, got {n0}")

    off = se.offsets(spacing)
    residual = _as_u8(mask)
    while True:
        residual = _kernels.erode(residual, off)
        if not residual.any():
            raise SeparationError(
                "mask vanished before splitting; no dissecting surface "
                "thinner than the body exists")
        comp, n = _kernels.label_components(residual, 26)
        if n >= 2:
            break

    sizes = np.bincount(comp.ravel(), minlength=n + 1)[1:]
    order = np.argsort(sizes)[::-1]
    best = order[sizes[order] == sizes[order[0]]]
    if len(best) > 1 and tie_axis is not None:
        point, direction = (np.asarray(a, dtype=np.float64) for a in tie_axis)
        direction = direction / np.linalg.norm(direction)
        dists = []
        for lbl in best:
            idx = np.argwhere(comp == lbl + 1)
            centroid = idx.mean(axis=0)[::-1] * np.asarray(spacing) \
                + np.asarray(spacing) / 2.0
            rel = centroid - point
            dists.append(np.linalg.norm(rel - rel.dot(direction) * direction))
        body_label = int(best[int(np.argmin(dists))]) + 1
    else:
        body_label = int(best[0]) + 1

    body_res = comp == body_label
    proc_res = residual.astype(bool) & ~body_res
    d_body, d_proc = _nearest_residual_distances(body_res, proc_res, spacing)

    lab = np.zeros(mask.shape, dtype=np.uint8)
    lab[body_res] = 1
    lab[proc_res] = 2
    ties = np.zeros(mask.shape, dtype=bool)
    while True:
        if ties.any():
            lab[ties & (d_body <= d_proc)] = 1
            lab[ties & (d_body > d_proc)] = 2
            ties = np.zeros(mask.shape, dtype=bool)
        unclaimed = mask & (lab == 0)
        if not unclaimed.any():
            break
        grow_body = _kernels.dilate(_as_u8(lab == 1), off).astype(bool) & unclaimed
        grow_proc = _kernels.dilate(_as_u8(lab == 2), off).astype(bool) & unclaimed
        both = grow_body & grow_proc
        lab[grow_body & ~both] = 1
        lab[grow_proc & ~both] = 2
        if not (grow_body.any() or grow_proc.any()):
            # leftovers connected more finely than the element can walk
            lab[unclaimed & (d_body <= d_proc)] = 1
            lab[unclaimed & (d_body > d_proc)] = 2
            break
        ties = both
    return lab == 1, lab == 2


def trabecular_compartment(vol, body_mask, cortical_hu: float, peel_mm: float,
                           spacing=_UNIT) -> np.ndarray:
    """Strip bright boundary voxels, then peel off the subcortical rim.

    Phase 1 repeatedly removes boundary voxels at or above `cortical_hu`
    until none qualifies; phase 2 applies ceil(peel_mm / min spacing)
    homogeneous 6-neighborhood erosions.
    """
    data = _hu_data(vol)
    mask = np.asarray(body_mask, dtype=bool)
    if not mask.any():
        raise EmptyMaskError("trabecular extraction needs a nonempty body mask")
    off6 = N6.offsets(spacing)
    current = _as_u8(mask)
    while True:
        interior = _kernels.erode(current, off6).astype(bool)
        boundary = current.astype(bool) & ~interior
        bright = boundary & (data >= cortical_hu)
        if not bright.any():
            break
        current = _as_u8(current.astype(bool) & ~bright)
        if not current.any():
            raise EmptyMaskError("local erosion consumed the whole mask")
    steps = math.ceil(peel_mm / min(spacing)) if peel_mm > 0 else 0
    for _ in range(steps):
        current = _kernels.erode(current, off6)
    if not current.any():
        raise EmptyMaskError(
            f"subcortical peel of {peel_mm} mm emptied the mask")
    return current.astype(bool)


def surface_voxels(mask) -> np.ndarray:
    """Mask voxels with at least one outside 6-neighbor (grid edge counts)."""
    mask = np.asarray(mask, dtype=bool)
    interior = _kernels.erode(_as_u8(mask), N6.offsets()).astype(bool)
    # erosion protects grid-border voxels; surface must include them
    border = np.zeros(mask.shape, dtype=bool)
    border[0], border[-1] = True, True
    border[:, 0], border[:, -1] = True, True
    border[:, :, 0], border[:, :, -1] = True, True
    return mask & (~interior | border)
