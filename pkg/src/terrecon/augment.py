"""Training-time measurement corruptions, trajectory mirroring and data removal.

All functions are pure: inputs are never modified and every random draw comes
from a generator seeded by the caller.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import PointCloud, Pose


@dataclass(frozen=True)
class AugmentConfig:
    position_jitter: float = 0.05  # m, per axis, uniform
    tilt_deg: float = 1.0
    patch_height_jitter: float = 0.05  # m
    patch_radius: tuple = (0.1, 0.4)
    patch_count: tuple = (1, 5)
    prune_count: tuple = (1, 5)
    outlier_clusters: tuple = (1, 5)
    outlier_points: tuple = (10, 50)
    outlier_sigma: float = 0.05
    volume_half_extent: float = 1.6  # outliers and patches are placed in this robot-centered cube
    pose_jitter: float = 0.05  # m, translation only
    mirror_prob: float = 0.5
    position: bool = True
    tilt: bool = True
    patch_height: bool = True
    patch_prune: bool = True
    outliers: bool = True
    pose: bool = True

    def __post_init__(self):
        for name in ("position_jitter", "tilt_deg", "patch_height_jitter", "outlier_sigma", "pose_jitter"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")

    @classmethod
    def disabled(cls) -> AugmentConfig:
        return cls(position=False, tilt=False, patch_height=False, patch_prune=False, outliers=False, pose=False)

    @classmethod
    def only(cls, name: str, **kw) -> AugmentConfig:
        flags = dict(position=False, tilt=False, patch_height=False, patch_prune=False, outliers=False, pose=False)
        flags[name] = True
        return cls(**flags, **kw)


@dataclass
class AugmentLog:
    """The draws made by one ``augment_frame`` call, for bound checks."""

    position_offsets: np.ndarray | None = None
    tilt_angle: float = 0.0
    tilt_axis: np.ndarray | None = None
    patch_offsets: np.ndarray | None = None
    patch_centers: np.ndarray | None = None
    patch_radii: np.ndarray | None = None
    prune_centers: np.ndarray | None = None
    prune_radii: np.ndarray | None = None
    outlier_centers: np.ndarray | None = None
    pose_offset: np.ndarray | None = None


def _patches(rng, cfg: AugmentConfig, count_range):
    n = int(rng.integers(count_range[0], count_range[1] + 1))
    e = cfg.volume_half_extent
    centers = rng.uniform(-e, e, size=(n, 2))
    radii = rng.uniform(*cfg.patch_radius, size=n)
    return centers, radii


def _in_patches(xy: np.ndarray, centers: np.ndarray, radii: np.ndarray) -> np.ndarray:
    """Patch membership per point (N, n_patches): vertical cylinders."""
    if len(centers) == 0:
        return np.zeros((len(xy), 0), bool)
    d2 = ((xy[:, None, :] - centers[None, :, :]) ** 2).sum(-1)
    return d2 <= radii[None, :] ** 2


def _axis_angle_matrix(axis: np.ndarray, angle: float) -> np.ndarray:
    """Rodrigues' formula for a unit axis."""
    x, y, z = axis
    k = np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])
    c, s = np.cos(angle), np.sin(angle)
    return c * np.eye(3) + s * k + (1 - c) * np.outer(axis, axis)


def augment_frame(measurement: PointCloud, pose: Pose, cfg: AugmentConfig, seed: int,
                  return_log: bool = False):
    """Apply, in order: position jitter, tilt, patch height, patch prune, outliers, pose jitter.

    ``measurement`` is in the robot frame; tilt rotates about the robot origin.
    """
    rng = np.random.default_rng(seed)
    pts = measurement.points.copy()
    rec = AugmentLog()
    if cfg.position and len(pts):
        off = rng.uniform(-cfg.position_jitter, cfg.position_jitter, size=pts.shape)
        pts = pts + off
        rec.position_offsets = off
    if cfg.tilt:
        phi = rng.uniform(0, 2 * np.pi)
        axis = np.array([np.cos(phi), np.sin(phi), 0.0])
        angle = np.deg2rad(rng.uniform(-cfg.tilt_deg, cfg.tilt_deg))
        pts = pts @ _axis_angle_matrix(axis, angle).T
        rec.tilt_angle, rec.tilt_axis = angle, axis
    if cfg.patch_height:
        centers, radii = _patches(rng, cfg, cfg.patch_count)
        offsets = rng.uniform(-cfg.patch_height_jitter, cfg.patch_height_jitter, size=len(centers))
        member = _in_patches(pts[:, :2], centers, radii)
        if member.shape[1]:
            # a point inside several patches takes the first one's offset
            first = np.where(member.any(1), member.argmax(1), -1)
            dz = np.where(first >= 0, offsets[np.maximum(first, 0)], 0.0)
            pts = pts.copy()
            pts[:, 2] += dz
        rec.patch_offsets, rec.patch_centers, rec.patch_radii = offsets, centers, radii
    if cfg.patch_prune:
        centers, radii = _patches(rng, cfg, cfg.prune_count)
        member = _in_patches(pts[:, :2], centers, radii)
        pts = pts[~member.any(1)] if member.shape[1] else pts
        rec.prune_centers, rec.prune_radii = centers, radii
    if cfg.outliers:
        n = int(rng.integers(cfg.outlier_clusters[0], cfg.outlier_clusters[1] + 1))
        e = cfg.volume_half_extent
        centers = rng.uniform(-e, e, size=(n, 3))
        blobs = []
        for c in centers:
            m = int(rng.integers(cfg.outlier_points[0], cfg.outlier_points[1] + 1))
            blobs.append(np.clip(rng.normal(c, cfg.outlier_sigma, size=(m, 3)), -e, e))
        if blobs:
            pts = np.concatenate([pts] + blobs)
        rec.outlier_centers = centers
    new_pose = pose
    if cfg.pose:
        off = rng.uniform(-cfg.pose_jitter, cfg.pose_jitter, size=3)
        new_pose = Pose(pose.translation + off, pose.rotation)
        rec.pose_offset = off
    out = (PointCloud(pts, measurement.frame), new_pose)
    return out + (rec,) if return_log else out


_MIRROR = {"x": np.array([-1.0, 1.0, 1.0]), "y": np.array([1.0, -1.0, 1.0])}


def mirror_pose(p: Pose, axis: str) -> Pose:
    """Reflect a pose through the plane normal to ``axis``: R -> M R M, t -> M t."""
    m = _MIRROR[axis]
    # the vector part is an axial vector: v -> det(M) M v, and det(M) = -1
    q = p.rotation * np.r_[-m, 1.0]
    return Pose(p.translation * m, q)


def mirror_trajectory(frames, axes=("x",), seed: int | None = None, prob: float = 0.5):
    """Reflect every frame of a trajectory consistently.

    ``frames`` is a list of objects with ``pose``-like and cloud attributes
    (see ``SimFrame``/``Frame``) or ``(pose, cloud)`` tuples. With a ``seed``
    each listed axis is mirrored with probability ``prob``; without one
    every listed axis is mirrored.
    """
    axes = tuple(axes)
    if seed is not None:
        rng = np.random.default_rng(seed)
        axes = tuple(a for a in axes if rng.random() < prob)
    if not axes:
        return list(frames)
    out = []
    for fr in frames:
        for a in axes:
            fr = _mirror_frame(fr, a)
        out.append(fr)
    return out


def _mirror_frame(fr, axis: str):
    m = _MIRROR[axis]
    if isinstance(fr, tuple):
        pose, cloud = fr
        return mirror_pose(pose, axis), PointCloud(cloud.points * m, cloud.frame)
    kw = {}
    for name, val in vars(fr).items():
        if isinstance(val, Pose):
            kw[name] = mirror_pose(val, axis)
        elif isinstance(val, PointCloud):
            kw[name] = PointCloud(val.points * m, val.frame)
        else:
            kw[name] = val
    return type(fr)(**kw)


def remove_fraction(measurement: PointCloud, fraction: float, seed: int) -> PointCloud:
    """Keep a uniformly random subset of exactly floor((1 - fraction) * N) points."""
    if not 0.0 <= fraction <= 1.0:
        raise ValueError(f"fraction must lie in [0, 1], got {fraction}")
    n = len(measurement)
    keep = int(np.floor((1.0 - fraction) * n + 1e-9))
    if keep == n:
        return measurement
    rng = np.random.default_rng(seed)
    idx = np.sort(rng.choice(n, size=keep, replace=False))
    return PointCloud(measurement.points[idx], measurement.frame)
