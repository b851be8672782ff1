"""Kernel backend selection.

The hot inner loops (trilinear sampling, profile edge search, binary
morphology, flood fill, hole filling, mesh voxelization) exist twice: a
compiled Cython extension (`_native`) and a numpy/scipy fallback (`_numpy`).
The compiled backend is used when importable; set VERTSEG_KERNELS=numpy or
VERTSEG_KERNELS=native to force one (forcing `native` raises if the extension
was not built).

`benchmarks/bench_kernels.py` compares the two.
"""

from __future__ import annotations

import os

from . import _numpy

_FORCE = os.environ.get("VERTSEG_KERNELS", "").strip().lower()

if _FORCE == "numpy":
    _impl = _numpy
elif _FORCE == "native":
    from . import _native as _impl
else:
    try:
        from . import _native as _impl
    except ImportError:
        _impl = _numpy

BACKEND = _impl.BACKEND_NAME

trilinear = _impl.trilinear
profile_edge = _impl.profile_edge
erode = _impl.erode
dilate = _impl.dilate
label_components = _impl.label_components
flood_threshold = _impl.flood_threshold
fill_holes = _impl.fill_holes
neighbor_centroids = _impl.neighbor_centroids
mesh_inside = _impl.mesh_inside


def available_backends():
    """Names of importable backends ('native' first when present)."""
    names = []
    try:
        from . import _native  # noqa: F401
        names.append("native")
    except ImportError:
        pass
    names.append("numpy")
    return names


def get_backend(name):
    """Return the backend module for `name` ('native' or 'numpy')."""
    if name == "numpy":
        return _numpy
    if name == "native":
        from . import _native
        return _native
    raise ValueError(f"unknown kernel backend: {name!r}")
