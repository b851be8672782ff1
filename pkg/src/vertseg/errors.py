"""Exception hierarchy shared across the toolkit.

The CLI maps these onto exit codes: ConfigError -> 1, InputError -> 2,
PipelineError -> 3.
"""


class VertsegError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(VertsegError):
    """Bad configuration file or parameter value."""


class InputError(VertsegError):
    """Missing or malformed input file (volume, seeds, ...)."""


class VolumeFormatError(InputError):
    """Volume header/raw pair is inconsistent or unreadable."""


class PipelineError(VertsegError):
    """A processing stage failed on valid inputs."""


class PhantomGeometryError(PipelineError):
    """Requested phantom geometry does not fit the voxel grid."""


class CanalNotFoundError(PipelineError):
    """Rolling ball found no enclosed low-intensity channel."""


class LandmarkError(PipelineError):
    """Inconsistent landmark geometry (e.g. cylinder radius too small)."""


class MeshTopologyError(PipelineError):
    """Mesh is not a closed 2-manifold of sphere topology."""


class BalloonDivergedError(PipelineError):
    """Non-finite forces during balloon integration."""


class SeedSelectionError(PipelineError):
    """No surface voxel qualified as a volume-growing seed."""


class SeparationError(PipelineError):
    """Body/process separation impossible (mask vanished before splitting)."""


class EmptyMaskError(PipelineError):
    """An operation that requires a nonempty mask received an empty one."""
