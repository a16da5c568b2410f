"""meshflow: diffeomorphic mesh deformation by attention-mixed velocity fields.

A template sphere is carried onto target surfaces by integrating a flow
ODE whose velocity is a softmax-weighted mixture of multi-resolution
stationary velocity fields; the weights come from a small network
conditioned on integration time and a scalar subject condition.
"""

from .attention import MODES, AttentionNet, Conditioning, attention_map
from .container import load_checkpoint, load_container, save_checkpoint, save_container
from .errors import (
    ConfigError,
    CorrespondenceError,
    MeshFlowError,
    NumericError,
    SamplingError,
    StateError,
    TopologyError,
)
from .estimator import TemplateDeformer
from .flow import FlowConfig, TrajectoryLog, ctvf_eval, integrate, weighted_velocity
from .losses import (
    LossWeights,
    chamfer,
    laplacian_loss,
    mse_loss,
    normal_consistency_loss,
    total_loss,
)
from .mesh import (
    PointCloud,
    TriangleMesh,
    euler_characteristic,
    face_areas,
    face_normals,
    laplacian_smooth,
    make_icosphere,
    sample_surface,
    surface_area,
)
from .meshio import load_mesh, save_mesh
from .metrics import (
    MetricsReport,
    SelfIntersectionResult,
    assd,
    evaluate_meshes,
    hd90,
    sif_ratio,
)
from .synthetic import ShapeSpec, dilate_radial, make_dataset, make_target
from .train import (
    AdamState,
    FitResult,
    FitSchedule,
    ParameterSet,
    Stage,
    adam_step,
    backward,
    default_schedule,
    evaluate_chamfer,
    fit,
)
from .velocity import VelocityGrid, VelocityPyramid, lerp_sample, sample_pyramid

__version__ = "0.1.0"

__all__ = [
    "MODES",
    "AdamState",
    "AttentionNet",
    "Conditioning",
    "ConfigError",
    "CorrespondenceError",
    "FitResult",
    "FitSchedule",
    "FlowConfig",
    "LossWeights",
    "MeshFlowError",
    "MetricsReport",
    "NumericError",
    "ParameterSet",
    "PointCloud",
    "SamplingError",
    "SelfIntersectionResult",
    "ShapeSpec",
    "Stage",
    "StateError",
    "TemplateDeformer",
    "TopologyError",
    "TrajectoryLog",
    "TriangleMesh",
    "VelocityGrid",
    "VelocityPyramid",
    "adam_step",
    "assd",
    "attention_map",
    "backward",
    "chamfer",
    "ctvf_eval",
    "default_schedule",
    "dilate_radial",
    "euler_characteristic",
    "evaluate_chamfer",
    "evaluate_meshes",
    "face_areas",
    "face_normals",
    "fit",
    "hd90",
    "integrate",
    "laplacian_loss",
    "laplacian_smooth",
    "lerp_sample",
    "load_checkpoint",
    "load_container",
    "load_mesh",
    "make_dataset",
    "make_icosphere",
    "make_target",
    "mse_loss",
    "normal_consistency_loss",
    "sample_pyramid",
    "sample_surface",
    "save_checkpoint",
    "save_container",
    "save_mesh",
    "sif_ratio",
    "surface_area",
    "total_loss",
    "weighted_velocity",
    "__version__",
]
