"""Occupancy and height metrics, the sparsity ablation, a per-cell Kalman
elevation-map baseline and point-to-point ICP."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, fields
from typing import NamedTuple

import numpy as np
from scipy.spatial import cKDTree

from .augment import remove_fraction
from .errors import ContractError
from .geometry import PointCloud, Pose, transform_points
from .model import Frame, rollout
from .voxelizer import GridConfig

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MetricsRecord:
    precision: float
    recall: float
    f1: float
    mae_cm: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    empty_pred: bool = False

    @staticmethod
    def harmonic(p: float, r: float) -> float:
        return 2 * p * r / (p + r) if p + r > 0 else 0.0


def occupied_cells(cloud: PointCloud | np.ndarray, cfg: GridConfig) -> np.ndarray:
    """Unique in-grid cells (M, 3) of a world-frame cloud."""
    pts = cloud.points if isinstance(cloud, PointCloud) else np.asarray(cloud, np.float64).reshape(-1, 3)
    cells = cfg.cells(pts)
    cells = cells[cfg.inside(cells)]
    return np.unique(cells, axis=0) if len(cells) else np.zeros((0, 3), np.int64)


def _cell_keys(cells: np.ndarray, dim: int) -> np.ndarray:
    return (cells[:, 0] * dim + cells[:, 1]) * dim + cells[:, 2]


def occupancy_metrics(pred: PointCloud, gt: PointCloud, cfg: GridConfig, with_mae: bool = True) -> MetricsRecord:
    """Precision, recall and F1 of the occupied-cell sets, plus top-surface MAE."""
    g = occupied_cells(gt, cfg)
    if len(g) == 0:
        raise ContractError("ground truth has no occupied cells inside the grid")
    p = occupied_cells(pred, cfg)
    gk, pk = _cell_keys(g, cfg.dim), _cell_keys(p, cfg.dim)
    tp = int(np.isin(pk, gk, assume_unique=True).sum())
    fp, fn = len(pk) - tp, len(gk) - tp
    if len(pk) == 0:
        return MetricsRecord(0.0, 0.0, 0.0, float("nan"), 0, 0, fn, empty_pred=True)
    prec, rec = tp / len(pk), tp / len(gk)
    mae = float("nan")
    if with_mae:
        try:
            mae = height_mae(pred, gt, cfg)
        except ContractError:
            pass
    return MetricsRecord(prec, rec, MetricsRecord.harmonic(prec, rec), mae, tp, fp, fn)


def _column_tops(pts: np.ndarray, cfg: GridConfig):
    cells = cfg.cells(pts)
    ok = cfg.inside(cells)
    pts, cells = pts[ok], cells[ok]
    if len(pts) == 0:
        return np.zeros(0, np.int64), np.zeros(0)
    keys = cells[:, 0] * cfg.dim + cells[:, 1]
    order = np.argsort(keys, kind="stable")
    keys, z = keys[order], pts[order, 2]
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    return keys[starts], np.maximum.reduceat(z, starts)


def height_mae(pred: PointCloud, gt: PointCloud, cfg: GridConfig) -> float:
    """Mean |top(pred) - top(gt)| in cm over xy columns occupied in both clouds."""
    if len(pred) == 0 or len(gt) == 0:
        raise ContractError("height MAE needs two non-empty clouds")
    kp, zp = _column_tops(pred.points, cfg)
    kg, zg = _column_tops(gt.points, cfg)
    common, ip, ig = np.intersect1d(kp, kg, assume_unique=True, return_indices=True)
    if len(common) == 0:
        raise ContractError("prediction and ground truth share no xy column")
    return float(np.mean(np.abs(zp[ip] - zg[ig])) * 100.0)


def mean_metrics(records: list[MetricsRecord]) -> dict:
    """Macro average over frames.

    ``f1`` is the harmonic mean of the averaged precision and recall;
    ``f1_frame_mean`` is the plain average of per-frame F1 values.
    """
    if not records:
        raise ContractError("no metric records to average")
    p = float(np.mean([r.precision for r in records]))
    r = float(np.mean([r.recall for r in records]))
    maes = [x.mae_cm for x in records if np.isfinite(x.mae_cm)]
    return {
        "precision": p,
        "recall": r,
        "f1": MetricsRecord.harmonic(p, r),
        "f1_frame_mean": float(np.mean([x.f1 for x in records])),
        "mae_cm": float(np.mean(maes)) if maes else float("nan"),
        "frames": len(records),
        "empty_frames": sum(x.empty_pred for x in records),
    }


def evaluation_grid(frame: Frame, grid: GridConfig) -> tuple[Pose, GridConfig]:
    """Metrics use the true pose: estimate and ground truth share one robot frame."""
    pose = frame.true_pose if frame.true_pose is not None else frame.pose
    return pose, grid.centered_on(pose.translation)


def frame_metrics(estimate: PointCloud, frame: Frame, grid: GridConfig) -> MetricsRecord:
    pose, cfg = evaluation_grid(frame, grid)
    return occupancy_metrics(transform_points(pose, estimate, "world"), transform_points(pose, frame.gt, "world"), cfg)


def evaluate_rollout(model, frames: list[Frame], alpha=None, grid=None, feedback=True) -> list[MetricsRecord]:
    grid = grid or model.spec.grid
    steps = rollout(model, frames, alpha, grid, feedback)
    return [frame_metrics(s.estimate, fr, grid) for s, fr in zip(steps, frames)]


# -- sparsity ablation -----------------------------------------------------------


@dataclass(frozen=True)
class AblationRow:
    rate: float
    precision: float
    recall: float
    f1: float
    f1_frame_mean: float
    mae_cm: float
    frames: int
    empty_frames: int


def sparsity_ablation(model, dataset: list[list[Frame]], removal_rates, alpha=None, grid=None,
                      seed: int = 0) -> list[AblationRow]:
    """Mean metrics per removal rate, one row per rate in the given order."""
    rows = []
    for rate in removal_rates:
        rate = float(rate)
        records = []
        for ti, traj in enumerate(dataset):
            thinned = [
                Frame(fr.pose, remove_fraction(fr.measurement, rate, seed + 7919 * ti + t), fr.gt, fr.true_pose)
                for t, fr in enumerate(traj)
            ]
            records += evaluate_rollout(model, thinned, alpha, grid)
        m = mean_metrics(records)
        rows.append(AblationRow(rate, m["precision"], m["recall"], m["f1"], m["f1_frame_mean"], m["mae_cm"],
                                m["frames"], m["empty_frames"]))
    return rows


def to_csv(rows: list, path=None) -> str:
    """Dataclass rows as CSV text (header from the field names); optionally written atomically."""
    if not rows:
        raise ContractError("nothing to write")
    names = [f.name for f in fields(rows[0])]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(names)
    for r in rows:
        w.writerow([_fmt(getattr(r, n)) for n in names])
    text = buf.getvalue()
    if path is not None:
        from .io import atomic_write

        atomic_write(path, text.encode())
    return text


def _fmt(v):
    if isinstance(v, (bool, np.bool_)):
        return int(v)
    if isinstance(v, float):
        return f"{v:.6f}"
    return v


# -- Kalman elevation baseline ---------------------------------------------------


@dataclass
class ElevationMap:
    """World-fixed 2.5D map; NaN height and infinite variance mark unseen cells."""

    resolution: float
    origin: np.ndarray  # xy of cell (0, 0)'s minimal corner
    height: np.ndarray
    variance: np.ndarray

    @classmethod
    def create(cls, center_xy, size: float = 10.0, resolution: float = 0.05) -> ElevationMap:
        n = int(round(size / resolution))
        origin = np.asarray(center_xy, np.float64)[:2] - 0.5 * n * resolution
        return cls(resolution, origin, np.full((n, n), np.nan), np.full((n, n), np.inf))

    def cells(self, xy: np.ndarray) -> np.ndarray:
        return np.floor((np.asarray(xy)[:, :2] - self.origin) / self.resolution).astype(np.int64)

    def cell_centers(self) -> np.ndarray:
        n = self.height.shape[0]
        c = (np.arange(n) + 0.5) * self.resolution
        gx, gy = np.meshgrid(c + self.origin[0], c + self.origin[1], indexing="ij")
        return np.stack([gx, gy], -1)

    @property
    def observed(self) -> np.ndarray:
        return np.isfinite(self.variance)


def elevation_baseline_update(emap: ElevationMap, measurement: PointCloud, pose: Pose,
                              sensor_variance: float) -> ElevationMap:
    """Fuse one robot-frame measurement placed in the world with ``pose``.

    Each cell's observation is the highest point falling into it; a cell's
    height and variance then follow the scalar Kalman update. Returns a new map.
    """
    if not sensor_variance > 0:
        raise ContractError(f"sensor variance must be positive, got {sensor_variance}")
    h, v = emap.height.copy(), emap.variance.copy()
    out = ElevationMap(emap.resolution, emap.origin, h, v)
    if len(measurement) == 0:
        return out
    pts = transform_points(pose, measurement, "world").points
    cells = emap.cells(pts)
    n = h.shape[0]
    ok = np.all((cells >= 0) & (cells < n), axis=1)
    cells, z = cells[ok], pts[ok, 2]
    if len(z) == 0:
        return out
    keys = cells[:, 0] * n + cells[:, 1]
    zmax = np.full(n * n, -np.inf)
    np.maximum.at(zmax, keys, z)
    hit = np.flatnonzero(np.isfinite(zmax))
    obs = zmax[hit]
    hf, vf = h.reshape(-1), v.reshape(-1)
    first = ~np.isfinite(vf[hit])
    new, old = hit[first], hit[~first]
    hf[new], vf[new] = obs[first], sensor_variance
    gain = vf[old] / (vf[old] + sensor_variance)
    hf[old] += gain * (obs[~first] - hf[old])
    vf[old] *= 1 - gain
    return out


# -- ICP -------------------------------------------------------------------------


class IcpResult(NamedTuple):
    pose: Pose
    rmse: float
    converged: bool
    iterations: int


def _check_geometry(pts: np.ndarray, name: str):
    if len(pts) < 3:
        raise ContractError(f"{name} needs at least 3 points, got {len(pts)}")
    s = np.linalg.svd(pts - pts.mean(0), compute_uv=False)
    if s[1] <= 1e-9 * max(s[0], 1e-300):
        raise ContractError(f"{name} points are collinear")


def kabsch(src: np.ndarray, dst: np.ndarray) -> Pose:
    """Least-squares rigid transform mapping ``src`` rows onto ``dst`` rows."""
    cs, cd = src.mean(0), dst.mean(0)
    u, _, vt = np.linalg.svd((src - cs).T @ (dst - cd))
    d = np.sign(np.linalg.det(vt.T @ u.T))
    r = vt.T @ np.diag([1.0, 1.0, d]) @ u.T
    return Pose.from_matrix(np.block([[r, (cd - r @ cs)[:, None]], [np.zeros((1, 3)), np.ones((1, 1))]]))


def icp_align(source: PointCloud, target: PointCloud, init: Pose | None = None, max_iter: int = 50,
              tol: float = 1e-10) -> IcpResult:
    """Point-to-point ICP: returns the pose mapping ``source`` onto ``target``.

    An iteration whose RMSE is not lower than the best so far is rejected and
    ends the loop, so the reported RMSE never increases.
    """
    src = source.points if isinstance(source, PointCloud) else np.asarray(source, np.float64)
    dst = target.points if isinstance(target, PointCloud) else np.asarray(target, np.float64)
    _check_geometry(src, "source")
    _check_geometry(dst, "target")
    pose = init or Pose.identity()
    tree = cKDTree(dst)

    def score(p: Pose):
        d, idx = tree.query(p.apply(src))
        return float(np.sqrt(np.mean(d * d))), idx

    rmse, idx = score(pose)
    if max_iter <= 0:
        return IcpResult(pose, rmse, False, 0)
    for it in range(1, max_iter + 1):
        cand = kabsch(src, dst[idx])
        new_rmse, new_idx = score(cand)
        if new_rmse > rmse:
            return IcpResult(pose, rmse, True, it)
        improved = rmse - new_rmse
        pose, rmse, idx = cand, new_rmse, new_idx
        if improved < tol:
            return IcpResult(pose, rmse, True, it)
    log.info("ICP stopped at max_iter=%d with rmse %.3g", max_iter, rmse)
    return IcpResult(pose, rmse, False, max_iter)
