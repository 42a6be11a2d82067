"""Learned terrain reconstruction from sparse depth measurements.

A 4D sparse convolutional encoder-decoder completes robot-centric voxel maps
from noisy, partial depth-camera point clouds, feeding each estimate back as
input to the next time step.
"""

from .errors import ContractError, FormatError
from .geometry import PointCloud, Pose, compose, inverse, relative_transform, transform_points
from .model import Frame, Model, ModelSpec, build_model, forward, parameter_count, rollout
from .voxelizer import GridConfig, devoxelize, voxelize, voxelize_world

__all__ = [
    "ContractError",
    "FormatError",
    "Frame",
    "GridConfig",
    "Model",
    "ModelSpec",
    "PointCloud",
    "Pose",
    "build_model",
    "compose",
    "devoxelize",
    "forward",
    "inverse",
    "parameter_count",
    "relative_transform",
    "rollout",
    "transform_points",
    "voxelize",
    "voxelize_world",
]
