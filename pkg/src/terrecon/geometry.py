"""Rigid poses and point clouds.

Conventions used across the package: quaternions are stored as (x, y, z, w),
frames are right-handed and z-up, and a robot ``Pose`` always maps robot-frame
coordinates into the world frame (world-from-robot).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError

FRAMES = ("world", "robot", "camera")


def _normalize(q: np.ndarray) -> np.ndarray:
    n = np.linalg.norm(q)
    if not np.isfinite(n) or n == 0.0:
        raise ContractError(f"cannot normalize quaternion {q}")
    q = q / n
    # canonical hemisphere keeps equal rotations bitwise comparable
    if q[3] < 0:
        q = -q
    return q


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ax, ay, az, aw = a
    bx, by, bz, bw = b
    return np.array(
        [
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
            aw * bw - ax * bx - ay * by - az * bz,
        ]
    )


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    x, y, z, w = q
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )


def matrix_to_quat(m: np.ndarray) -> np.ndarray:
    """Shepperd's method; picks the numerically largest pivot."""
    m = np.asarray(m, dtype=np.float64)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [(m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s, 0.25 * s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s, (m[2, 1] - m[1, 2]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s, (m[0, 2] - m[2, 0]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s, (m[1, 0] - m[0, 1]) / s]
    return _normalize(np.array(q))


@dataclass(frozen=True)
class Pose:
    """Rigid transform: translation in meters plus unit quaternion (x, y, z, w)."""

    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    rotation: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 0.0, 1.0]))

    def __post_init__(self):
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        q = np.asarray(self.rotation, dtype=np.float64).reshape(4)
        if not np.all(np.isfinite(t)):
            raise ContractError(f"non-finite translation {t}")
        object.__setattr__(self, "translation", t)
        object.__setattr__(self, "rotation", _normalize(q))

    @classmethod
    def identity(cls) -> Pose:
        return cls()

    @classmethod
    def from_yaw(cls, yaw: float, translation=(0.0, 0.0, 0.0)) -> Pose:
        return cls(translation, [0.0, 0.0, np.sin(yaw / 2), np.cos(yaw / 2)])

    @classmethod
    def from_axis_angle(cls, axis, angle: float, translation=(0.0, 0.0, 0.0)) -> Pose:
        axis = np.asarray(axis, dtype=np.float64)
        axis = axis / np.linalg.norm(axis)
        return cls(translation, np.append(axis * np.sin(angle / 2), np.cos(angle / 2)))

    @classmethod
    def from_matrix(cls, m: np.ndarray) -> Pose:
        m = np.asarray(m, dtype=np.float64)
        return cls(m[:3, 3], matrix_to_quat(m[:3, :3]))

    @classmethod
    def from_array(cls, a) -> Pose:
        """Inverse of ``as_array``: (tx, ty, tz, qx, qy, qz, qw)."""
        a = np.asarray(a, dtype=np.float64)
        return cls(a[:3], a[3:7])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.translation, self.rotation])

    @property
    def matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = quat_to_matrix(self.rotation)
        m[:3, 3] = self.translation
        return m

    @property
    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.rotation)

    @property
    def yaw(self) -> float:
        r = self.rotation_matrix
        return float(np.arctan2(r[1, 0], r[0, 0]))

    def apply(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points @ self.rotation_matrix.T + self.translation

    def __matmul__(self, other: Pose) -> Pose:
        return compose(self, other)

    def allclose(self, other: Pose, atol: float = 1e-6) -> bool:
        dq = min(
            np.abs(self.rotation - other.rotation).max(),
            np.abs(self.rotation + other.rotation).max(),
        )
        return bool(np.abs(self.translation - other.translation).max() <= atol and dq <= atol)


@dataclass(frozen=True)
class PointCloud:
    points: np.ndarray
    frame: str = "world"

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ContractError("point cloud contains non-finite coordinates")
        if self.frame not in FRAMES:
            raise ContractError(f"unknown frame label {self.frame!r}")
        object.__setattr__(self, "points", pts)

    def __len__(self) -> int:
        return len(self.points)

    @classmethod
    def empty(cls, frame: str = "world") -> PointCloud:
        return cls(np.zeros((0, 3)), frame)


def compose(a: Pose, b: Pose) -> Pose:
    """Return ``a ∘ b``: applies ``b`` first, then ``a``."""
    q = quat_multiply(a.rotation, b.rotation)
    t = a.rotation_matrix @ b.translation + a.translation
    return Pose(t, q)


def inverse(p: Pose) -> Pose:
    q = p.rotation * np.array([-1.0, -1.0, -1.0, 1.0])
    t = -(quat_to_matrix(q) @ p.translation)
    return Pose(t, q)


def transform_points(p: Pose, cloud: PointCloud, frame: str | None = None) -> PointCloud:
    return PointCloud(p.apply(cloud.points), frame or cloud.frame)


def relative_transform(prev_pose: Pose, cur_pose: Pose) -> Pose:
    """Map from the previous robot frame into the current robot frame.

    Both poses are world-from-robot.
    """
    return compose(inverse(cur_pose), prev_pose)
