"""meshtrace: temporal mesh reconstruction and evaluation on synthetic video clips."""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    ConfigurationError, DegenerateError, GenerationError, ManifestError, MeshStructureError,
    MeshTraceError, ObjParseError, SamplingError, TrainingError,
)
from .mesh import Mesh, OccupancyGrid, PointSet, load_obj, sample_points, save_obj, voxelize  # noqa: E402
from .losses import LossWeights, chamfer, edge_regularizer, mesh_loss, normal_distance  # noqa: E402
from .metrics import Detection, EvalConfig, EvalReport, GroundTruthObject, evaluate, f1_at  # noqa: E402
from .tracker import NO_MATCH, solve_assignment, track_clip  # noqa: E402
from .meanshape import mean_shape  # noqa: E402
from .camera import CameraRig  # noqa: E402
from .refine import RefineStageParams, RoiFeature, refine_pipeline, select_reference  # noqa: E402

__all__ = [
    "CameraRig", "ConfigurationError", "DegenerateError", "Detection", "EvalConfig", "EvalReport",
    "GenerationError", "GroundTruthObject", "LossWeights", "ManifestError", "Mesh", "MeshStructureError",
    "MeshTraceError", "NO_MATCH", "ObjParseError", "OccupancyGrid", "PointSet", "RefineStageParams",
    "RoiFeature", "SamplingError", "TrainingError", "chamfer", "edge_regularizer", "evaluate", "f1_at",
    "load_obj", "mean_shape", "mesh_loss", "normal_distance", "refine_pipeline", "sample_points",
    "save_obj", "select_reference", "solve_assignment", "track_clip", "voxelize",
]
