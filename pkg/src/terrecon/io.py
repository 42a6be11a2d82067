"""Binary trajectory and checkpoint files, key=value configs, atomic writes.

Trajectory file (little-endian)::

    b"TREC" u32 version=1
    f32 cell_size, u32 grid_dim, u32 num_frames, u32 num_cameras
    num_cameras x 7 f32 camera mount poses (tx ty tz qx qy qz qw)
    per frame: 7 f32 true pose, 7 f32 odometry pose,
               u32 n_meas, n_meas x 3 f32, u32 n_gt, n_gt x 3 f32

Clouds are stored in the robot frame of the true pose.

Checkpoint file (little-endian)::

    b"TCKP" u32 version=1 u32 n_tensors
    per tensor: u16 name_len, name (UTF-8), u8 dtype (0 = f32), u8 ndim,
                ndim x u32 dims, row-major payload
    u64 hash: first 8 bytes of SHA-256 over everything before it
"""

from __future__ import annotations

import hashlib
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import FormatError
from .geometry import PointCloud, Pose
from .model import Frame

TREC_MAGIC = b"TREC"
TCKP_MAGIC = b"TCKP"
VERSION = 1
DTYPE_F32 = 0


def atomic_write(path, data: bytes) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def file_hash(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


class _Reader:
    def __init__(self, path, data: bytes):
        self.path, self.data, self.pos = path, data, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise FormatError(self.path, self.pos, f"truncated while reading {what} ({n} bytes needed, "
                                                   f"{len(self.data) - self.pos} left)")
        out = self.data[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack("<" + fmt, self.take(struct.calcsize("<" + fmt), what))

    def f32(self, count: int, what: str) -> np.ndarray:
        return np.frombuffer(self.take(4 * count, what), dtype="<f4").astype(np.float32)

    def expect_magic(self, magic: bytes):
        got = self.take(4, "magic")
        if got != magic:
            raise FormatError(self.path, 0, f"bad magic {got!r}, expected {magic!r}")
        (version,) = self.unpack("I", "version")
        if version != VERSION:
            raise FormatError(self.path, 4, f"unsupported version {version}")


# -- trajectories ----------------------------------------------------------------


@dataclass
class TrajectoryFile:
    """Contents of one trajectory file; poses are kept as the stored f32 rows."""

    cell_size: float
    grid_dim: int
    mounts: np.ndarray  # (C, 7)
    true_poses: np.ndarray  # (N, 7)
    odom_poses: np.ndarray  # (N, 7)
    measurements: list = field(default_factory=list)  # (n_i, 3) f32, robot frame
    gts: list = field(default_factory=list)

    def __len__(self):
        return len(self.true_poses)

    @classmethod
    def from_sim(cls, sim_frames, cell_size: float, grid_dim: int, cams=()) -> TrajectoryFile:
        f32 = np.float32
        return cls(
            float(cell_size),
            int(grid_dim),
            np.array([c.mount.as_array() for c in cams], f32).reshape(-1, 7),
            np.array([f.true_pose.as_array() for f in sim_frames], f32).reshape(-1, 7),
            np.array([f.odom_pose.as_array() for f in sim_frames], f32).reshape(-1, 7),
            [np.asarray(f.measurement.points, f32) for f in sim_frames],
            [np.asarray(f.gt.points, f32) for f in sim_frames],
        )

    def frames(self) -> list[Frame]:
        """Pipeline frames: the odometry pose drives the model, the true pose evaluation."""
        out = []
        for tp, op, m, g in zip(self.true_poses, self.odom_poses, self.measurements, self.gts):
            out.append(Frame(Pose.from_array(op.astype(np.float64)),
                             PointCloud(m.astype(np.float64), "robot"),
                             PointCloud(g.astype(np.float64), "robot"),
                             Pose.from_array(tp.astype(np.float64))))
        return out

    def to_bytes(self) -> bytes:
        parts = [TREC_MAGIC, struct.pack("<IfIII", VERSION, self.cell_size, self.grid_dim, len(self),
                                         len(self.mounts))]
        parts.append(np.asarray(self.mounts, "<f4").tobytes())
        for tp, op, m, g in zip(self.true_poses, self.odom_poses, self.measurements, self.gts):
            parts += [np.asarray(tp, "<f4").tobytes(), np.asarray(op, "<f4").tobytes()]
            for cloud in (m, g):
                cloud = np.asarray(cloud, "<f4").reshape(-1, 3)
                parts += [struct.pack("<I", len(cloud)), cloud.tobytes()]
        return b"".join(parts)


def write_trajectory(path, traj: TrajectoryFile) -> None:
    atomic_write(path, traj.to_bytes())


def read_trajectory(path) -> TrajectoryFile:
    path = Path(path)
    r = _Reader(path, path.read_bytes())
    r.expect_magic(TREC_MAGIC)
    cell_size, grid_dim, n_frames, n_cams = r.unpack("fIII", "header")
    if not cell_size > 0:
        raise FormatError(path, 8, f"cell size must be positive, got {cell_size}")
    mounts = r.f32(7 * n_cams, "camera mounts").reshape(-1, 7)
    tps, ops, meas, gts = [], [], [], []
    for i in range(n_frames):
        tps.append(r.f32(7, f"frame {i} true pose"))
        ops.append(r.f32(7, f"frame {i} odometry pose"))
        for name, dest in (("measurement", meas), ("ground truth", gts)):
            at = r.pos
            (n,) = r.unpack("I", f"frame {i} {name} count")
            pts = r.f32(3 * n, f"frame {i} {name} points").reshape(-1, 3)
            if not np.all(np.isfinite(pts)):
                raise FormatError(path, at, f"frame {i} {name} has non-finite points")
            dest.append(pts)
    if r.pos != len(r.data):
        raise FormatError(path, r.pos, f"{len(r.data) - r.pos} trailing bytes")
    return TrajectoryFile(float(cell_size), int(grid_dim), mounts,
                          np.array(tps, np.float32).reshape(-1, 7), np.array(ops, np.float32).reshape(-1, 7),
                          meas, gts)


# -- checkpoints -----------------------------------------------------------------


def checkpoint_bytes(tensors: dict[str, np.ndarray]) -> bytes:
    parts = [TCKP_MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, "<f4")  # tobytes() writes C order; keeps 0-d shapes
        raw = name.encode("utf-8")
        if len(raw) > 0xFFFF:
            raise ValueError(f"tensor name too long: {name[:40]}...")
        parts.append(struct.pack("<H", len(raw)) + raw + struct.pack("<BB", DTYPE_F32, arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        parts.append(arr.tobytes())
    body = b"".join(parts)
    return body + hashlib.sha256(body).digest()[:8]


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> None:
    atomic_write(path, checkpoint_bytes(tensors))


def load_checkpoint(path) -> dict[str, np.ndarray]:
    path = Path(path)
    data = path.read_bytes()
    if len(data) < 20:
        raise FormatError(path, len(data), "file too short for a checkpoint")
    body, stored = data[:-8], data[-8:]
    r = _Reader(path, body)
    r.expect_magic(TCKP_MAGIC)
    if hashlib.sha256(body).digest()[:8] != stored:
        raise FormatError(path, len(body), "content hash mismatch")
    (n,) = r.unpack("I", "tensor count")
    out = {}
    for i in range(n):
        (ln,) = r.unpack("H", f"tensor {i} name length")
        at = r.pos
        try:
            name = r.take(ln, f"tensor {i} name").decode("utf-8")
        except UnicodeDecodeError as e:
            raise FormatError(path, at, f"tensor {i} name is not UTF-8") from e
        at = r.pos
        dtype, ndim = r.unpack("BB", f"tensor {name} dtype")
        if dtype != DTYPE_F32:
            raise FormatError(path, at, f"tensor {name} has unknown dtype code {dtype}")
        dims = r.unpack(f"{ndim}I", f"tensor {name} dims")
        count = int(np.prod(dims)) if ndim else 1
        out[name] = r.f32(count, f"tensor {name} payload").reshape(dims)
    if r.pos != len(body):
        raise FormatError(path, r.pos, f"{len(body) - r.pos} unexpected bytes before the hash")
    return out


def encode_text(s: str) -> np.ndarray:
    """UTF-8 bytes as an f32 vector (every byte value is exact in f32)."""
    return np.frombuffer(s.encode("utf-8"), np.uint8).astype(np.float32)


def decode_text(a: np.ndarray) -> str:
    return np.asarray(a).astype(np.uint8).tobytes().decode("utf-8")


# -- key=value config --------------------------------------------------------------


def read_config(path) -> dict[str, str]:
    """Flat ``key = value`` lines; ``#`` starts a comment; later keys win."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected key=value, got {line!r}")
        k, v = line.split("=", 1)
        out[k.strip().replace("-", "_")] = v.strip()
    return out


def write_config(path, values: dict) -> None:
    text = "".join(f"{k} = {v}\n" for k, v in values.items())
    atomic_write(path, text.encode())
