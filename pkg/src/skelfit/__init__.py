"""Differentiable skeleton-image rendering and analysis-by-synthesis pose fitting.

Poses are rendered into multi-channel distance-falloff images; the renderer
has an exact (envelope) gradient, so rendering can be inverted by gradient
descent to recover 2D keypoints or 3D joint positions from a target image.
Includes a pinhole camera with 6D-rotation forward kinematics, a procedural
pose generator, flip-aware pixel-error metrics, and a batch CLI.
"""

from .augment import AugmentConfig, CropTransform, random_crop_transform, randomize_limb_lengths
from .camera import (
    PerspectiveCamera,
    axis_angle_to_matrix,
    forward_kinematics,
    matrix_to_rot6d,
    project,
    project_jacobian,
    rot6d_to_matrix,
)
from .datasets import GeneratorConfig, Sample, generate, rest_offsets, write_dataset
from .estimators import Pose2DFitter, Pose3DFitter, SkeletonRenderer
from .exceptions import (
    ConfigError,
    DivergenceError,
    FormatError,
    GenerationError,
    ProjectionError,
    SkelfitError,
    TopologyError,
)
from .fitting import (
    FitProblem,
    FitResult,
    LossWeights,
    bone_length_prior,
    bone_lengths,
    fit,
    supervised_pose_loss,
)
from .metrics import EvalReport, EvalRow, FrameError, aggregate, frame_error, report_csv
from .optim import ADAM_PRESETS, Adam, AdamConfig, clip_global_norm
from .poseio import PoseRecord, read_pose_file, write_pose_file
from .render import (
    RenderParams,
    point_segment_sq_distance,
    render,
    render_backward,
    render_loss_and_grad,
)
from .rng import SplitMix64, mix64, stream_seed
from .skim import read_skim, write_png_channels, write_png_composite, write_skim
from .topology import (
    SkeletonTopology,
    default_human_topology,
    flip_pose,
    load_topology,
    save_topology,
    validate_topology,
)

__version__ = "0.1.0"

__all__ = [
    "ADAM_PRESETS",
    "Adam",
    "AdamConfig",
    "AugmentConfig",
    "ConfigError",
    "CropTransform",
    "DivergenceError",
    "EvalReport",
    "EvalRow",
    "FitProblem",
    "FitResult",
    "FormatError",
    "FrameError",
    "GenerationError",
    "GeneratorConfig",
    "LossWeights",
    "PerspectiveCamera",
    "Pose2DFitter",
    "Pose3DFitter",
    "PoseRecord",
    "ProjectionError",
    "RenderParams",
    "Sample",
    "SkeletonRenderer",
    "SkeletonTopology",
    "SkelfitError",
    "SplitMix64",
    "TopologyError",
    "aggregate",
    "axis_angle_to_matrix",
    "bone_length_prior",
    "bone_lengths",
    "clip_global_norm",
    "default_human_topology",
    "fit",
    "flip_pose",
    "forward_kinematics",
    "frame_error",
    "generate",
    "load_topology",
    "matrix_to_rot6d",
    "mix64",
    "point_segment_sq_distance",
    "project",
    "project_jacobian",
    "random_crop_transform",
    "randomize_limb_lengths",
    "read_pose_file",
    "read_skim",
    "render",
    "render_backward",
    "render_loss_and_grad",
    "report_csv",
    "rest_offsets",
    "rot6d_to_matrix",
    "save_topology",
    "stream_seed",
    "supervised_pose_loss",
    "validate_topology",
    "write_dataset",
    "write_png_channels",
    "write_png_composite",
    "write_pose_file",
    "write_skim",
]
