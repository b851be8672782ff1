"""vertseg: volumetric QCT spine segmentation toolkit.

Pipeline pieces: synthetic phantoms with analytic ground truth, landmark
constraints (canal centerline, disk planes, enclosing cylinders), a
deformable balloon mesh, morphological refinement, per-vertebra coordinate
frames, and BMD/volume precision statistics.
"""

__version__ = "0.1.0"

from ._kernels import BACKEND as KERNEL_BACKEND  # noqa: F401
