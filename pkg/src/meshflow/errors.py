"""Exception types shared across the package."""


class MeshFlowError(Exception):
    """Base class for all meshflow errors."""


class ConfigError(MeshFlowError):
    """Invalid configuration, arguments, or input files."""


class TopologyError(MeshFlowError):
    """Mesh connectivity violates an operation's requirements."""


class CorrespondenceError(MeshFlowError):
    """Vertex-wise correspondence between two meshes is broken or absent."""


class SamplingError(MeshFlowError):
    """Surface sampling is impossible (e.g. all faces degenerate)."""


class NumericError(MeshFlowError):
    """A numeric quantity became non-finite or otherwise invalid."""


class StateError(MeshFlowError):
    """Operation called in an invalid state (missing tape, stale shapes)."""
