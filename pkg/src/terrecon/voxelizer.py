"""Point cloud <-> sparse sub-voxel tensor conversion.

A voxel stores the centroid of its points as an offset from the voxel's
minimal corner, in cell units, so features lie in [0, 1).
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ContractError
from .geometry import PointCloud, Pose, relative_transform, transform_points
from .sparse import SparseTensor

# largest float32 strictly below 1
_F32_BELOW_ONE = np.nextafter(np.float32(1.0), np.float32(0.0))


@dataclass(frozen=True)
class GridConfig:
    """Cubic voxel grid.

    The grid's minimal corner sits at ``origin_cells * cell_size`` in the
    world frame; keeping it on the cell lattice means re-voxelizing a cloud
    after a grid shift does not smear the sub-voxel features.
    """

    dim: int = 64
    cell_size: float = 0.05
    origin_cells: tuple = field(default=(0, 0, 0))

    def __post_init__(self):
        if int(self.dim) <= 0:
            raise ContractError(f"grid dim must be positive, got {self.dim}")
        if not self.cell_size > 0:
            raise ContractError(f"cell size must be positive, got {self.cell_size}")
        object.__setattr__(self, "origin_cells", tuple(int(c) for c in self.origin_cells))

    @property
    def extent(self) -> float:
        return self.dim * self.cell_size

    @property
    def origin(self) -> np.ndarray:
        return np.asarray(self.origin_cells, dtype=np.float64) * self.cell_size

    def centered_on(self, position) -> GridConfig:
        """Grid of the same shape whose center is the lattice point nearest ``position``."""
        center = np.round(np.asarray(position, dtype=np.float64) / self.cell_size).astype(np.int64)
        return replace(self, origin_cells=tuple(center - self.dim // 2))

    def to_grid(self, points: np.ndarray) -> np.ndarray:
        """World coordinates to grid units (one unit per cell)."""
        points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        return points / self.cell_size - np.asarray(self.origin_cells, dtype=np.float64)

    def from_grid(self, units: np.ndarray) -> np.ndarray:
        units = np.asarray(units, dtype=np.float64).reshape(-1, 3)
        return (units + np.asarray(self.origin_cells, dtype=np.float64)) * self.cell_size

    def cells(self, points: np.ndarray) -> np.ndarray:
        """Integer cell of every world point (no bounds check)."""
        return np.floor(self.to_grid(points)).astype(np.int64)

    def inside(self, cells: np.ndarray) -> np.ndarray:
        return np.all((cells >= 0) & (cells < self.dim), axis=1)


def voxelize(points_grid, cfg: GridConfig, k: int = 0, return_dropped: bool = False):
    """Bucket grid-unit points into voxels at time index ``k``.

    Each non-empty voxel becomes one coordinate ``(x, y, z, k)`` whose
    feature is the centroid of its points modulo 1. Points outside
    ``[0, dim)^3`` are dropped.
    """
    if isinstance(points_grid, PointCloud):
        points_grid = points_grid.points
    pts = np.asarray(points_grid, dtype=np.float64).reshape(-1, 3)
    if not np.all(np.isfinite(pts)):
        raise ContractError("non-finite points passed to voxelize")
    cells = np.floor(pts).astype(np.int64)
    ok = np.all((cells >= 0) & (cells < cfg.dim), axis=1)
    dropped = int(len(pts) - np.count_nonzero(ok))
    pts, cells = pts[ok], cells[ok]
    if len(pts) == 0:
        out = SparseTensor.empty(3)
        return (out, dropped) if return_dropped else out
    d = cfg.dim
    keys = (cells[:, 0] * d + cells[:, 1]) * d + cells[:, 2]
    # sort by key then by position so the f64 sums are independent of input order
    order = np.lexsort((pts[:, 2], pts[:, 1], pts[:, 0], keys))
    keys, pts = keys[order], pts[order]
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    counts = np.diff(np.r_[starts, len(keys)])
    centroid = np.add.reduceat(pts, starts, axis=0) / counts[:, None]
    ukeys = keys[starts]
    coords = np.stack([ukeys // (d * d), (ukeys // d) % d, ukeys % d, np.full_like(ukeys, k)], axis=1)
    # offset from the bucket corner equals centroid mod 1; measuring it from the
    # bucket keeps a centroid that rounds onto the next boundary in its own cell
    feats = (centroid - coords[:, :3]).astype(np.float32)
    feats = np.clip(feats, np.float32(0.0), _F32_BELOW_ONE)
    out = SparseTensor(coords, feats)
    return (out, dropped) if return_dropped else out


def voxelize_world(cloud: PointCloud, cfg: GridConfig, k: int = 0, return_dropped: bool = False):
    return voxelize(cfg.to_grid(cloud.points), cfg, k, return_dropped)


def devoxelize(t: SparseTensor, cfg: GridConfig) -> PointCloud:
    """One world point per coordinate at ``(coord + feature) * cell + origin``."""
    if t.channels != 3:
        raise ContractError(f"devoxelize needs 3 feature channels, got {t.channels}")
    if len(t) == 0:
        return PointCloud.empty("world")
    units = t.coords[:, :3].astype(np.float64) + t.F.astype(np.float64)
    return PointCloud(cfg.from_grid(units), "world")


def temporal_concat(measurement: SparseTensor, previous: SparseTensor | None) -> SparseTensor:
    """Union of the current measurement (k=0) and previous estimate (k=1)."""
    if previous is None:
        previous = SparseTensor.empty(3)
    for name, t, k in (("measurement", measurement, 0), ("previous", previous, 1)):
        if t.stride != (1, 1, 1, 1):
            raise ContractError(f"{name} tensor must have unit stride, got {t.stride}")
        if t.channels != 3:
            raise ContractError(f"{name} tensor must have 3 channels, got {t.channels}")
        if len(t) and np.any(t.coords[:, 3] != k):
            raise ContractError(f"{name} tensor must have every time index equal to {k}")
    coords = np.concatenate([measurement.coords, previous.coords])
    feats = np.concatenate([measurement.F, previous.F.astype(measurement.F.dtype)])
    return SparseTensor(coords, feats)


def reproject_previous(estimate: PointCloud, prev_pose: Pose, cur_pose: Pose, cfg: GridConfig) -> SparseTensor:
    """Previous estimate (robot frame at t-1) as the k=1 input slice at time t.

    ``cfg`` is the current grid. The cloud is moved into the current robot
    frame, placed in the world with ``cur_pose`` and re-voxelized; whatever
    falls outside the grid is cropped.
    """
    if len(estimate) == 0:
        return SparseTensor.empty(3)
    in_cur = transform_points(relative_transform(prev_pose, cur_pose), estimate, "robot")
    world = transform_points(cur_pose, in_cur, "world")
    return voxelize_world(world, cfg, k=1)
