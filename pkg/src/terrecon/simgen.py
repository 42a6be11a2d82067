"""Randomized box-world scenes, kinematic trajectories and depth-camera simulation.

Every primitive is an axis-aligned box, so ray casting is an exact slab test
and dense ground truth is uniform sampling of exposed box faces.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import PointCloud, Pose, compose, inverse

log = logging.getLogger(__name__)

KINDS = ("ground", "stair", "landing", "box", "wall", "pole")


@dataclass(frozen=True)
class SceneParams:
    area: float = 4.0  # half-size of the square workable area, m
    ground: bool = True
    n_stairs: int = 1
    stair_width: tuple = (0.2, 0.5)
    stair_height: tuple = (0.08, 0.25)
    stair_steps: tuple = (3, 7)
    stair_span: tuple = (1.0, 2.5)
    landing_length: tuple = (0.5, 1.5)
    n_boxes: int = 3
    box_size: tuple = (0.2, 2.0)
    box_height: tuple = (0.08, 0.25)
    n_corridors: int = 1
    corridor_width: tuple = (2.0, 6.0)
    wall_height: float = 1.0
    wall_thickness: float = 0.15
    n_poles: int = 2
    pole_size: float = 0.1
    pole_height: float = 1.5

    @classmethod
    def bare(cls) -> SceneParams:
        return cls(n_stairs=0, n_boxes=0, n_corridors=0, n_poles=0)


@dataclass
class Scene:
    """Boxes as rows ``(xmin, ymin, zmin, xmax, ymax, zmax)`` with a kind label each."""

    boxes: np.ndarray = field(default_factory=lambda: np.zeros((0, 6)))
    kinds: list = field(default_factory=list)
    stair_heights: list = field(default_factory=list)
    stair_widths: list = field(default_factory=list)

    def add(self, lo, hi, kind: str):
        self.boxes = np.vstack([self.boxes, np.r_[np.asarray(lo, float), np.asarray(hi, float)]])
        self.kinds.append(kind)

    def __len__(self):
        return len(self.boxes)

    def height_at(self, xy: np.ndarray) -> np.ndarray:
        """Top surface height under each xy point (0 when only the ground is there)."""
        xy = np.asarray(xy, dtype=np.float64).reshape(-1, 2)
        h = np.zeros(len(xy))
        if len(self.boxes) == 0:
            return h
        b = self.boxes
        inside = (
            (xy[:, None, 0] >= b[None, :, 0]) & (xy[:, None, 0] < b[None, :, 3])
            & (xy[:, None, 1] >= b[None, :, 1]) & (xy[:, None, 1] < b[None, :, 4])
        )
        tops = np.where(inside, b[None, :, 5], -np.inf)
        return np.maximum(h, tops.max(axis=1)) if len(b) else h

    def contains(self, points: np.ndarray, margin: float = 0.0) -> np.ndarray:
        """True for points strictly inside any box shrunk by ``margin``."""
        p = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        if len(self.boxes) == 0 or len(p) == 0:
            return np.zeros(len(p), bool)
        lo = self.boxes[None, :, :3] + margin
        hi = self.boxes[None, :, 3:] - margin
        return np.any(np.all((p[:, None, :] > lo) & (p[:, None, :] < hi), axis=2), axis=1)


def generate_scene(params: SceneParams, seed: int) -> Scene:
    rng = np.random.default_rng(seed)
    a = params.area
    scene = Scene()
    if params.ground:
        scene.add((-3 * a, -3 * a, -1.0), (3 * a, 3 * a, 0.0), "ground")
    for _ in range(params.n_stairs):
        w = rng.uniform(*params.stair_width)
        h = rng.uniform(*params.stair_height)
        n = int(rng.integers(params.stair_steps[0], params.stair_steps[1] + 1))
        span = rng.uniform(*params.stair_span)
        landing = rng.uniform(*params.landing_length)
        axis = int(rng.integers(2))
        sign = 1.0 if rng.random() < 0.5 else -1.0
        start = rng.uniform(-0.6 * a, 0.6 * a)
        lateral = rng.uniform(-0.6 * a, 0.6 * a)
        scene.stair_heights.append(h)
        scene.stair_widths.append(w)
        for i in range(n + 1):
            length = w if i < n else landing
            a0 = start + sign * i * w
            a1 = a0 + sign * length
            lo_a, hi_a = min(a0, a1), max(a0, a1)
            lo = [0.0, 0.0, 0.0]
            hi = [0.0, 0.0, (i + 1) * h if i < n else n * h]
            lo[axis], hi[axis] = lo_a, hi_a
            lo[1 - axis], hi[1 - axis] = lateral - span / 2, lateral + span / 2
            scene.add(lo, hi, "stair" if i < n else "landing")
    for _ in range(params.n_boxes):
        sx, sy = rng.uniform(*params.box_size, size=2)
        h = rng.uniform(*params.box_height)
        cx, cy = rng.uniform(-a, a, size=2)
        scene.add((cx - sx / 2, cy - sy / 2, 0.0), (cx + sx / 2, cy + sy / 2, h), "box")
    for _ in range(params.n_corridors):
        width = rng.uniform(*params.corridor_width)
        axis = int(rng.integers(2))
        center = rng.uniform(-0.3 * a, 0.3 * a)
        t = params.wall_thickness
        for side in (-1.0, 1.0):
            c = center + side * (width / 2 + t / 2)
            lo = [0.0, 0.0, 0.0]
            hi = [0.0, 0.0, params.wall_height]
            lo[axis], hi[axis] = -a, a
            lo[1 - axis], hi[1 - axis] = c - t / 2, c + t / 2
            scene.add(lo, hi, "wall")
    for _ in range(params.n_poles):
        cx, cy = rng.uniform(-a, a, size=2)
        s = params.pole_size / 2
        scene.add((cx - s, cy - s, 0.0), (cx + s, cy + s, params.pole_height), "pole")
    return scene


# -- trajectories ----------------------------------------------------------------


@dataclass(frozen=True)
class WalkParams:
    speed: tuple = (0.3, 1.0)
    yaw_offset: float = np.pi / 2  # base orientation relative to the walking direction
    nominal_height: float = 0.5
    max_step_height: float = 0.3
    clearance: float = 0.3
    obstacle_height: float = 0.6
    max_target_tries: int = 20


@dataclass
class Trajectory:
    poses: list
    status: str = "ok"  # "ok" or "truncated"

    def __len__(self):
        return len(self.poses)


def _blocked(scene: Scene, xy_from: np.ndarray, xy_to: np.ndarray, walk: WalkParams) -> bool:
    """A move is blocked by a too-high step or by a tall obstacle within the clearance ring."""
    h_from, h_to = scene.height_at(np.vstack([xy_from, xy_to]))
    if abs(h_to - h_from) > walk.max_step_height:
        return True
    ang = np.linspace(0, 2 * np.pi, 8, endpoint=False)
    ring = xy_to + walk.clearance * np.stack([np.cos(ang), np.sin(ang)], 1)
    return bool(np.any(scene.height_at(ring) - h_to > walk.obstacle_height))


def sample_trajectory(scene: Scene, seed: int, num_steps: int, dt: float = 0.1, walk: WalkParams = WalkParams(),
                      start=None, waypoints=None, area: float = 4.0) -> Trajectory:
    """Kinematic walk that keeps the base at a nominal height above the local ground.

    Targets are drawn uniformly in the area (or taken from ``waypoints``);
    each segment gets a random speed and base yaw. A move that would climb
    more than ``max_step_height`` or enter a tall obstacle is rejected; when no
    reachable target can be found the trajectory is truncated.
    """
    rng = np.random.default_rng(seed)

    def free_spot():
        for _ in range(200):
            p = rng.uniform(-area * 0.8, area * 0.8, 2)
            if not _blocked(scene, p, p, walk):
                return p
        return np.zeros(2)

    pos = free_spot() if start is None else np.asarray(start, dtype=np.float64)[:2]
    queue = None if waypoints is None else [np.asarray(w, dtype=np.float64)[:2] for w in waypoints]
    target, speed, yaw = None, 0.0, float(rng.uniform(-np.pi, np.pi))

    def pose_at(p, yaw_):
        z = scene.height_at(p)[0] + walk.nominal_height
        return Pose.from_yaw(yaw_, (p[0], p[1], z))

    poses = [pose_at(pos, yaw)]
    status = "ok"
    while len(poses) < num_steps:
        if target is None:
            for _ in range(walk.max_target_tries):
                if queue is not None:
                    if not queue:
                        break
                    cand = queue.pop(0)
                else:
                    cand = rng.uniform(-area, area, 2)
                spd = float(rng.uniform(*walk.speed))
                heading = np.arctan2(*(cand - pos)[::-1])
                if spd == 0.0:
                    target, speed = cand, 0.0
                    break
                step = (cand - pos) / max(np.linalg.norm(cand - pos), 1e-12) * spd * dt
                if not _blocked(scene, pos, pos + step, walk):
                    target, speed = cand, spd
                    yaw = float(heading + rng.uniform(-walk.yaw_offset, walk.yaw_offset))
                    break
            if target is None:
                status = "truncated"
                break
        delta = target - pos
        dist = np.linalg.norm(delta)
        if speed == 0.0:
            poses.append(poses[-1])
            continue
        nxt = pos + delta / max(dist, 1e-12) * speed * dt
        if _blocked(scene, pos, nxt, walk):
            target = None
            continue
        pos = nxt
        poses.append(pose_at(pos, yaw))
        if np.linalg.norm(target - pos) <= speed * dt:
            target = None
    if status == "truncated":
        log.info("trajectory truncated at %d of %d steps", len(poses), num_steps)
    return Trajectory(poses, status)


# -- depth cameras ---------------------------------------------------------------


@dataclass(frozen=True)
class CameraModel:
    """Pinhole-style ray fan. The optical axis is the mount frame's +x."""

    h_fov: float = 87.0
    v_fov: float = 58.0
    width: int = 80
    height: int = 60
    min_range: float = 0.3
    max_range: float = 3.0
    mount: Pose = field(default_factory=Pose.identity)

    def ray_directions(self) -> np.ndarray:
        """Unit directions (H*W, 3) in the camera frame."""
        az = np.deg2rad(np.linspace(-self.h_fov / 2, self.h_fov / 2, self.width))
        el = np.deg2rad(np.linspace(-self.v_fov / 2, self.v_fov / 2, self.height))
        tz, ty = np.meshgrid(np.tan(el), np.tan(az), indexing="ij")
        d = np.stack([np.ones_like(ty), ty, tz], axis=-1).reshape(-1, 3)
        return d / np.linalg.norm(d, axis=1, keepdims=True)


def default_cameras(pitch_deg: float = 30.0, forward: float = 0.4, lateral: float = 0.25, height: float = 0.0,
                    **kw) -> list[CameraModel]:
    """Front, back, left and right cameras, each pitched down by ``pitch_deg``."""
    pitch = Pose.from_axis_angle((0, 1, 0), np.deg2rad(pitch_deg))
    mounts = [
        (0.0, (forward, 0.0, height)),
        (np.pi, (-forward, 0.0, height)),
        (np.pi / 2, (0.0, lateral, height)),
        (-np.pi / 2, (0.0, -lateral, height)),
    ]
    return [CameraModel(mount=compose(Pose.from_yaw(yaw, t), pitch), **kw) for yaw, t in mounts]


def cast_rays(scene: Scene, origins: np.ndarray, dirs: np.ndarray, min_range: float = 0.0,
              max_range: float = np.inf) -> np.ndarray:
    """Nearest box hit along each unit ray; NaN rows for misses.

    The hit coordinate on the struck face's axis is set to the face plane, so
    hits lie exactly on the surface.
    """
    origins = np.broadcast_to(np.asarray(origins, dtype=np.float64), np.shape(dirs))
    dirs = np.asarray(dirs, dtype=np.float64)
    out = np.full(dirs.shape, np.nan)
    if len(scene) == 0 or len(dirs) == 0:
        return out
    b = scene.boxes
    d = np.where(dirs == 0.0, 1e-300, dirs)
    inv = 1.0 / d
    t1 = (b[None, :, :3] - origins[:, None, :]) * inv[:, None, :]
    t2 = (b[None, :, 3:] - origins[:, None, :]) * inv[:, None, :]
    tnear = np.minimum(t1, t2)
    tfar = np.maximum(t1, t2)
    t_enter = tnear.max(axis=2)
    t_exit = tfar.min(axis=2)
    valid = (t_enter <= t_exit) & (t_enter >= 0.0)
    t_enter = np.where(valid, t_enter, np.inf)
    best = t_enter.argmin(axis=1)
    rows = np.arange(len(dirs))
    t = t_enter[rows, best]
    hit = np.isfinite(t) & (t >= min_range) & (t <= max_range)
    if not np.any(hit):
        return out
    r = rows[hit]
    bi = best[hit]
    face_axis = tnear[r, bi].argmax(axis=1)
    pts = origins[r] + dirs[r] * t[hit][:, None]
    plane = np.where(dirs[r, face_axis] > 0, b[bi, face_axis], b[bi, face_axis + 3])
    pts[np.arange(len(r)), face_axis] = plane
    out[r] = pts
    return out


def raycast_depth(scene: Scene, cam_pose: Pose, cam: CameraModel) -> PointCloud:
    """World-frame hits of one camera at world pose ``cam_pose``."""
    dirs = cam.ray_directions() @ cam_pose.rotation_matrix.T
    hits = cast_rays(scene, cam_pose.translation, dirs, cam.min_range, cam.max_range)
    return PointCloud(hits[~np.isnan(hits[:, 0])], "world")


def render_measurement(scene: Scene, robot_pose: Pose, cams: list[CameraModel]) -> PointCloud:
    clouds = [raycast_depth(scene, compose(robot_pose, c.mount), c).points for c in cams]
    return PointCloud(np.concatenate(clouds) if clouds else np.zeros((0, 3)), "world")


def _faces(box: np.ndarray, top_only: bool):
    lo, hi = box[:3], box[3:]
    for axis in ((2,) if top_only else (0, 1, 2)):
        for side in ((1,) if top_only else (0, 1)):
            value = hi[axis] if side else lo[axis]
            normal = np.zeros(3)
            normal[axis] = 1.0 if side else -1.0
            yield axis, value, normal


def sample_ground_truth(scene: Scene, robot_pose: Pose, density: float, seed: int = 0,
                        extent: float = 3.2) -> PointCloud:
    """Uniform samples on exposed box faces inside the robot-centered cube.

    The cube is axis-aligned with the world and centered on the robot.
    ``density`` is in points per square meter.
    """
    if density <= 0:
        raise ValueError(f"density must be positive, got {density}")
    rng = np.random.default_rng(seed)
    c = robot_pose.translation
    cube_lo, cube_hi = c - extent / 2, c + extent / 2
    chunks = []
    for box, kind in zip(scene.boxes, scene.kinds):
        for axis, value, normal in _faces(box, kind == "ground"):
            if not cube_lo[axis] <= value <= cube_hi[axis]:
                continue
            others = [i for i in range(3) if i != axis]
            lo = np.maximum(box[others], cube_lo[others])
            hi = np.minimum(box[[o + 3 for o in others]], cube_hi[others])
            if np.any(hi <= lo):
                continue
            area = float(np.prod(hi - lo))
            n = int(round(area * density))
            if n == 0:
                continue
            pts = np.empty((n, 3))
            pts[:, others] = rng.uniform(lo, hi, size=(n, 2))
            pts[:, axis] = value
            # a face pressed against another box (or the ground) is not a surface
            buried = scene.contains(pts + normal * 1e-6)
            chunks.append(pts[~buried])
    pts = np.concatenate(chunks) if chunks else np.zeros((0, 3))
    return PointCloud(pts, "world")


def visibility_fraction(measurement: PointCloud, gt: PointCloud, cell_size: float) -> float:
    """Share of ground-truth voxels that contain at least one measurement point."""
    if len(gt) == 0:
        return 0.0
    g = {tuple(c) for c in np.floor(gt.points / cell_size).astype(np.int64)}
    m = {tuple(c) for c in np.floor(measurement.points / cell_size).astype(np.int64)}
    return len(g & m) / len(g)


# -- odometry drift --------------------------------------------------------------


@dataclass(frozen=True)
class DriftSpec:
    """Per-step translation bias plus step-change events ``(step, offset)``."""

    bias_per_step: tuple = (0.0, 0.0, 0.0)
    events: tuple = ()
    noise_std: float = 0.0


def inject_drift(poses: list, drift: DriftSpec, seed: int = 0) -> list:
    """Corrupted odometry; the input (ground-truth) poses are left untouched.

    The drift at step ``t`` is ``t * bias`` plus every event offset with
    event step <= t, plus an optional Gaussian random walk.
    """
    rng = np.random.default_rng(seed)
    bias = np.asarray(drift.bias_per_step, dtype=np.float64)
    walk = np.zeros(3)
    out = []
    for t, p in enumerate(poses):
        offset = t * bias
        for step, delta in drift.events:
            if t >= step:
                offset = offset + np.asarray(delta, dtype=np.float64)
        if drift.noise_std > 0 and t > 0:
            walk = walk + rng.normal(0.0, drift.noise_std, 3)
        offset = offset + walk
        if not np.any(offset):
            out.append(p)
        else:
            out.append(Pose(p.translation + offset, p.rotation))
    return out


@dataclass
class SimFrame:
    true_pose: Pose
    odom_pose: Pose
    measurement: PointCloud  # robot frame
    gt: PointCloud  # robot frame
    visibility: float = 0.0


def simulate_frames(scene: Scene, poses: list, cams: list[CameraModel], density: float, seed: int = 0,
                    extent: float = 3.2, odometry: list | None = None, cell_size: float = 0.05) -> list[SimFrame]:
    """Measurements and ground truth for every pose, expressed in the robot frame."""
    frames = []
    odometry = poses if odometry is None else odometry
    for t, (p, o) in enumerate(zip(poses, odometry)):
        meas = render_measurement(scene, p, cams)
        gt = sample_ground_truth(scene, p, density, seed * 100003 + t, extent)
        vis = visibility_fraction(meas, gt, cell_size)
        inv = inverse(p)
        frames.append(SimFrame(p, o, PointCloud(inv.apply(meas.points), "robot"),
                               PointCloud(inv.apply(gt.points), "robot"), vis))
    return frames


def simulate_trajectory(seed: int, num_steps: int, cell_size: float = 0.05, grid_dim: int = 64,
                        params: SceneParams = SceneParams(), cams: list | None = None,
                        drift: DriftSpec | None = None, points_per_cell: float = 4.0):
    """Scene, walk and rendered frames for one seed. Returns ``(scene, frames)``."""
    scene = generate_scene(params, seed)
    traj = sample_trajectory(scene, seed + 1, num_steps, area=params.area)
    cams = default_cameras() if cams is None else cams
    odom = inject_drift(traj.poses, drift, seed + 2) if drift is not None else None
    frames = simulate_frames(scene, traj.poses, cams, points_per_cell / cell_size**2, seed + 3,
                             grid_dim * cell_size, odom, cell_size)
    return scene, frames
