"""Suture tracing, stereo shape reconstruction and grasp planning from binary masks."""
from .errors import (ConfigError, EmptyInputError, FrustumError, InvalidTransformError,
                     MaskFormatError, NoPathError, NonPositiveDisparityError,
                     ParameterRangeError, PreconditionError, ReconstructionFailedError,
                     ReserveExceedsCurveError, SceneSpecError, ShapeMismatchError,
                     SutureGraspError, TipNotFoundError)
from .grasp import GraspPlan, RigidTransform, arc_length_point, plan_grasp, to_robot_frame
from .kernels import BACKEND
from .masks import (Mask, Skeleton, TipSeed, extract_centerline, load_mask, locate_tip,
                    preprocess_mask, save_mask)
from .pipeline import (PipelineConfig, PipelineResult, default_suite, load_config, process,
                       run_benchmark, run_pipeline)
from .sequence import PixelCurve, SearchParams, trace_sequence, tune_parameters
from .shape import GraphParams, ShapeResult, optimize_shape
from .stereo import Polyline3, StereoRig, match_stereo, reconstruct_curve, triangulate
from .synthetic import SceneSpec, compare_masks, generate_scene

__version__ = "0.1.0"

__all__ = [
    "BACKEND", "ConfigError", "EmptyInputError", "FrustumError", "GraphParams", "GraspPlan",
    "InvalidTransformError", "Mask", "MaskFormatError", "NoPathError",
    "NonPositiveDisparityError", "ParameterRangeError", "PipelineConfig", "PipelineResult",
    "PixelCurve", "Polyline3", "PreconditionError", "ReconstructionFailedError",
    "ReserveExceedsCurveError", "RigidTransform", "SceneSpec", "SceneSpecError",
    "SearchParams", "ShapeMismatchError", "ShapeResult", "Skeleton", "StereoRig",
    "SutureGraspError", "TipNotFoundError", "TipSeed", "arc_length_point", "compare_masks",
    "default_suite", "extract_centerline", "generate_scene", "load_config", "load_mask",
    "locate_tip", "match_stereo", "optimize_shape", "plan_grasp", "preprocess_mask",
    "process", "reconstruct_curve", "run_benchmark", "run_pipeline", "save_mask",
    "to_robot_frame", "trace_sequence", "triangulate", "tune_parameters",
]
