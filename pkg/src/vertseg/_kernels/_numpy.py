"""Vectorized numpy/scipy implementations of the hot kernels.

This backend is the import-time fallback when the compiled extension is not
available.  Both backends implement the same contracts and are cross-checked
by tests/test_kernels.py:

- volumes are C-contiguous float64 arrays of shape (nz, ny, nx),
- a voxel (i, j, k) has its center at origin + ((i+0.5)*sx, (j+0.5)*sy,
  (k+0.5)*sz), so continuous grid coordinates u = (x - ox)/sx - 0.5 place
  voxel centers at integers,
- out-of-bounds sampling clamps to the nearest edge voxel,
- binary erosion treats out-of-grid voxels as foreground and dilation treats
  them as background (the adjoint pair on the finite grid window, which makes
  closing idempotent exactly).
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

BACKEND_NAME = "numpy"

# Deterministic sub-voxel ray offsets for parity casting.  Rays pass through
# voxel centers shifted by these fractions of a voxel so that meshes with
# vertices on exact grid coordinates never graze an edge or vertex.
RAY_OFFSET_Y = 1.4142135623730951e-05
RAY_OFFSET_Z = 1.7320508075688772e-05


def _snap(u):
    """Snap coordinates within a few ulps of an integer onto it.

    Division by non-power-of-two spacings can miss a voxel center by 1 ulp;
    samples taken exactly at centers must return the stored value.
    """
    r = np.rint(u)
    near = np.abs(u - r) <= 4e-15 * np.maximum(1.0, np.abs(r))
    return np.where(near, r, u)


def _grid_coords(points, spacing, origin):
    """World mm points (N,3) -> continuous grid coords (u, v, w) per axis."""
    pts = np.asarray(points, dtype=np.float64)
    u = _snap((pts[:, 0] - origin[0]) / spacing[0] - 0.5)
    v = _snap((pts[:, 1] - origin[1]) / spacing[1] - 0.5)
    w = _snap((pts[:, 2] - origin[2]) / spacing[2] - 0.5)
    return u, v, w


def trilinear(data, spacing, origin, points):
    """Sample `data` at world points (N,3); clamped trilinear interpolation."""
    nz, ny, nx = data.shape
    u, v, w = _grid_coords(points, spacing, origin)
    u = np.clip(u, 0.0, nx - 1.0)
    v = np.clip(v, 0.0, ny - 1.0)
    w = np.clip(w, 0.0, nz - 1.0)
    i0 = np.minimum(u.astype(np.int64), max(nx - 2, 0))
    j0 = np.minimum(v.astype(np.int64), max(ny - 2, 0))
    k0 = np.minimum(w.astype(np.int64), max(nz - 2, 0))
    i1 = np.minimum(i0 + 1, nx - 1)
    j1 = np.minimum(j0 + 1, ny - 1)
    k1 = np.minimum(k0 + 1, nz - 1)
    fx = u - i0
    fy = v - j0
    fz = w - k0

    c000 = data[k0, j0, i0]
    c001 = data[k0, j0, i1]
    c010 = data[k0, j1, i0]
    c011 = data[k0, j1, i1]
    c100 = data[k1, j0, i0]
    c101 = data[k1, j0, i1]
    c110 = data[k1, j1, i0]
    c111 = data[k1, j1, i1]

    gx, gy, gz = 1.0 - fx, 1.0 - fy, 1.0 - fz
    c00 = c000 * gx + c001 * fx
    c01 = c010 * gx + c011 * fx
    c10 = c100 * gx + c101 * fx
    c11 = c110 * gx + c111 * fx
    c0 = c00 * gy + c01 * fy
    c1 = c10 * gy + c11 * fy
    return c0 * gz + c1 * fz


def profile_edge(data, spacing, origin, starts, dirs, length_in, length_out,
                 step, grad_min):
    """Strongest qualifying negative directional derivative along profiles.

    For each row of `starts`/`dirs` (unit directions), samples the volume at
    t = -length_in .. +length_out in increments of `step` and differentiates
    between consecutive samples.  Returns (tstar, found): the midpoint t of
    the most negative derivative with magnitude >= grad_min; ties prefer the
    smallest |t|, then the smallest sample index.  found == 0 where no
    derivative qualifies.
    """
    starts = np.asarray(starts, dtype=np.float64)
    dirs = np.asarray(dirs, dtype=np.float64)
    n = starts.shape[0]
    nsteps = int(np.floor((length_in + length_out) / step + 1e-9)) + 1
    ts = -length_in + step * np.arange(nsteps)
    pts = starts[:, None, :] + ts[None, :, None] * dirs[:, None, :]
    vals = trilinear(data, spacing, origin, pts.reshape(-1, 3)).reshape(n, nsteps)
    deriv = (vals[:, 1:] - vals[:, :-1]) / step
    tmid = ts[:-1] + 0.5 * step

    qualifying = deriv <= -grad_min
    dmask = np.where(qualifying, deriv, np.inf)
    dmin = dmask.min(axis=1)
    found = np.isfinite(dmin)
    is_best = dmask == dmin[:, None]
    tie_score = np.where(is_best, np.abs(tmid)[None, :], np.inf)
    jbest = np.argmin(tie_score, axis=1)
    tstar = np.where(found, tmid[jbest], 0.0)
    return tstar, found.astype(np.uint8)


def _structure_from_offsets(offsets):
    off = np.asarray(offsets, dtype=np.int64)
    rz, ry, rx = np.abs(off).max(axis=0)
    struct = np.zeros((2 * rz + 1, 2 * ry + 1, 2 * rx + 1), dtype=bool)
    struct[off[:, 0] + rz, off[:, 1] + ry, off[:, 2] + rx] = True
    return struct


def erode(mask, offsets):
    """Binary erosion by an offset set; out-of-grid counts as foreground."""
    struct = _structure_from_offsets(offsets)
    out = ndimage.binary_erosion(mask.astype(bool), structure=struct,
                                 border_value=1)
    return out.astype(np.uint8)


def dilate(mask, offsets):
    """Binary dilation by an offset set; out-of-grid counts as background."""
    struct = _structure_from_offsets(offsets)
    out = ndimage.binary_dilation(mask.astype(bool), structure=struct,
                                  border_value=0)
    return out.astype(np.uint8)


def _label_structure(connectivity):
    order = {6: 1, 18: 2, 26: 3}[int(connectivity)]
    return ndimage.generate_binary_structure(3, order)


def label_components(mask, connectivity):
    """Connected-component labeling; returns (labels int32, count)."""
    labels, n = ndimage.label(mask.astype(bool),
                              structure=_label_structure(connectivity))
    return labels.astype(np.int32), int(n)


def flood_threshold(data, seed_mask, threshold, connectivity, within=None):
    """Connected component of {data >= threshold} reachable from seeds.

    `within`, when given, restricts the region before connectivity is
    evaluated.  Seeds falling outside the region contribute nothing.
    """
    region = data >= threshold
    if within is not None:
        region &= within.astype(bool)
    labels, n = ndimage.label(region, structure=_label_structure(connectivity))
    if n == 0:
        return np.zeros(data.shape, dtype=np.uint8)
    ids = np.unique(labels[seed_mask.astype(bool) & region])
    ids = ids[ids > 0]
    if ids.size == 0:
        return np.zeros(data.shape, dtype=np.uint8)
    return np.isin(labels, ids).astype(np.uint8)


def fill_holes(mask):
    """Fill cavities: background 6-components not reachable from the border."""
    bg = ~mask.astype(bool)
    labels, n = ndimage.label(bg, structure=_label_structure(6))
    if n == 0:
        return mask.astype(np.uint8)
    border_ids = np.unique(np.concatenate([
        labels[0].ravel(), labels[-1].ravel(),
        labels[:, 0].ravel(), labels[:, -1].ravel(),
        labels[:, :, 0].ravel(), labels[:, :, -1].ravel(),
    ]))
    border_ids = border_ids[border_ids > 0]
    holes = bg & ~np.isin(labels, border_ids)
    return (mask.astype(bool) | holes).astype(np.uint8)


def neighbor_centroids(verts, indptr, indices):
    """Mean position of each vertex's 1-ring (CSR adjacency)."""
    counts = np.diff(indptr).astype(np.float64)
    sums = np.add.reduceat(verts[indices], indptr[:-1], axis=0)
    return sums / counts[:, None]


def mesh_inside(verts, faces, origin, spacing, shape):
    """Voxel centers inside a closed mesh, by +x parity ray casting.

    Rays run along +x through voxel centers offset by a fixed sub-voxel
    fraction in y and z (consistent tie-breaking for geometry aligned with
    the grid).  Returns a uint8 mask of shape (nz, ny, nx).
    """
    nz, ny, nx = shape
    gx = (verts[:, 0] - origin[0]) / spacing[0] - 0.5
    gy = (verts[:, 1] - origin[1]) / spacing[1] - 0.5 - RAY_OFFSET_Y
    gz = (verts[:, 2] - origin[2]) / spacing[2] - 0.5 - RAY_OFFSET_Z

    flips = np.zeros((nz, ny, nx), dtype=np.int32)
    ay, az, axx = gy[faces[:, 0]], gz[faces[:, 0]], gx[faces[:, 0]]
    by, bz, bx = gy[faces[:, 1]], gz[faces[:, 1]], gx[faces[:, 1]]
    cy, cz, cx = gy[faces[:, 2]], gz[faces[:, 2]], gx[faces[:, 2]]

    for t in range(faces.shape[0]):
        y0, y1 = min(ay[t], by[t], cy[t]), max(ay[t], by[t], cy[t])
        z0, z1 = min(az[t], bz[t], cz[t]), max(az[t], bz[t], cz[t])
        jlo, jhi = max(int(np.ceil(y0)), 0), min(int(np.floor(y1)), ny - 1)
        klo, khi = max(int(np.ceil(z0)), 0), min(int(np.floor(z1)), nz - 1)
        if jlo > jhi or klo > khi:
            continue
        jj, kk = np.meshgrid(np.arange(jlo, jhi + 1),
                             np.arange(klo, khi + 1), indexing="xy")
        py = jj.astype(np.float64) - ay[t]
        pz = kk.astype(np.float64) - az[t]
        e1y, e1z = by[t] - ay[t], bz[t] - az[t]
        e2y, e2z = cy[t] - ay[t], cz[t] - az[t]
        denom = e1y * e2z - e2y * e1z
        if denom == 0.0:
            continue
        alpha = (py * e2z - pz * e2y) / denom
        beta = (pz * e1y - py * e1z) / denom
        hit = (alpha >= 0.0) & (beta >= 0.0) & (alpha + beta <= 1.0)
        if not hit.any():
            continue
        xcross = axx[t] + alpha * (bx[t] - axx[t]) + beta * (cx[t] - axx[t])
        i0 = np.floor(xcross).astype(np.int64) + 1
        sel = hit & (i0 < nx)
        i0 = np.maximum(i0, 0)
        np.add.at(flips, (kk[sel], jj[sel], i0[sel]), 1)

    inside = (np.cumsum(flips, axis=2) & 1).astype(np.uint8)
    return inside
