"""4D sparse encoder-decoder with generative up-sampling and pruning."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ContractError
from .geometry import PointCloud, Pose, inverse, transform_points
from .nn import BatchNormState, batch_norm, occupancy_bce_loss, offset_loss
from .sparse import (
    CoordIndex,
    SparseTensor,
    Var,
    concat_cols,
    elu,
    prune,
    sigmoid,
    sparse_conv,
    take_rows,
    transposed_generative_conv,
)
from .sparse.kernel_map import downsample_coords
from .voxelizer import GridConfig, devoxelize, reproject_previous, temporal_concat, voxelize_world


@dataclass(frozen=True)
class ModelSpec:
    widths: tuple = (8, 16, 32, 64, 128)
    enc_kernel: tuple = (3, 3, 3, 2)
    enc_down_kernel: tuple = (2, 2, 2, 2)
    dec_kernel: tuple = (3, 3, 3, 1)
    dec_up_kernel: tuple = (2, 2, 2, 1)
    head_kernel: tuple = (1, 1, 1, 1)
    down_stride: tuple = (2, 2, 2, 1)
    in_channels: int = 3
    out_channels: int = 3
    alpha: float = 0.5
    grid_dim: int = 64
    cell_size: float = 0.05
    eval_norm: str = "input"  # batch-norm statistics at inference: "input" (per forward pass) or "running"

    @classmethod
    def paper(cls) -> ModelSpec:
        return cls()

    @classmethod
    def desk(cls) -> ModelSpec:
        """Reduced widths on a 32^3 grid with the same 3.2 m extent."""
        return cls(widths=(4, 8, 16, 32, 64), grid_dim=32, cell_size=0.1)

    @property
    def num_levels(self) -> int:
        return len(self.widths) - 1

    @property
    def grid(self) -> GridConfig:
        return GridConfig(self.grid_dim, self.cell_size)

    def validate(self):
        if len(self.widths) < 2 or any(int(w) <= 0 for w in self.widths):
            raise ContractError(f"widths must be at least two positive ints, got {self.widths}")
        for name in ("enc_kernel", "enc_down_kernel", "dec_kernel", "dec_up_kernel", "head_kernel", "down_stride"):
            v = getattr(self, name)
            if len(v) != 4 or any(int(s) <= 0 for s in v):
                raise ContractError(f"{name} must be four positive ints, got {v}")
        if tuple(self.dec_up_kernel) != tuple(self.down_stride[:3]) + (self.dec_up_kernel[3],):
            raise ContractError("decoder up-sampling kernel must match the spatial down-sampling stride")
        if self.dec_kernel[3] != 1 or self.dec_up_kernel[3] != 1 or self.head_kernel[3] != 1:
            raise ContractError("decoder kernels must have temporal size 1")
        if self.down_stride[3] != 1:
            raise ContractError("down-sampling must preserve the temporal dimension")
        if self.grid_dim % (self.down_stride[0] ** self.num_levels):
            raise ContractError(f"grid dim {self.grid_dim} not divisible by the total down-sampling factor")
        if self.eval_norm not in ("input", "running"):
            raise ContractError(f"eval_norm must be 'input' or 'running', got {self.eval_norm!r}")
        if not 0.0 <= self.alpha <= 1.0:
            raise ContractError(f"alpha must lie in [0, 1], got {self.alpha}")

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    @classmethod
    def from_json(cls, s: str) -> ModelSpec:
        d = json.loads(s)
        return cls(**{k: tuple(v) if isinstance(v, list) else v for k, v in d.items()})

    def digest(self) -> bytes:
        return hashlib.sha256(self.to_json().encode()).digest()[:8]


def _volume(kernel) -> int:
    return int(np.prod(kernel))


def parameter_count(spec: ModelSpec) -> int:
    return sum(v.data.size for v in build_model(spec, 0).parameters().values())


class Model:
    """Parameters are ``Var`` leaves in ``params``; batch-norm layers in ``bn``."""

    def __init__(self, spec: ModelSpec):
        spec.validate()
        self.spec = spec
        self.params: dict[str, Var] = {}
        self.bn: dict[str, BatchNormState] = {}
        self.training = True

    # -- parameter bookkeeping -------------------------------------------------
    def _conv(self, name, kernel, c_in, c_out, rng, bias=False):
        k = _volume(kernel)
        std = np.sqrt(2.0 / (k * c_in))
        self.params[f"{name}.weight"] = Var(rng.normal(0.0, std, (k, c_in, c_out)).astype(np.float32), True,
                                            name=f"{name}.weight")
        if bias:
            self.params[f"{name}.bias"] = Var(np.zeros(c_out, np.float32), True, name=f"{name}.bias")

    def _bn(self, name, c):
        self.bn[name] = BatchNormState.create(c, eval_stats=self.spec.eval_norm)

    def parameters(self) -> dict[str, Var]:
        out = dict(self.params)
        for name, st in self.bn.items():
            out[f"{name}.gamma"] = st.gamma
            out[f"{name}.beta"] = st.beta
        return out

    def state_dict(self) -> dict[str, np.ndarray]:
        out = {k: v.data for k, v in self.parameters().items()}
        for name, st in self.bn.items():
            out[f"{name}.running_mean"] = st.running_mean
            out[f"{name}.running_var"] = st.running_var
        return out

    def load_state_dict(self, state: dict[str, np.ndarray]):
        own = self.state_dict()
        missing = set(own) - set(state)
        if missing:
            raise ContractError(f"state is missing tensors: {sorted(missing)[:5]}")
        for k, v in self.parameters().items():
            if state[k].shape != v.data.shape:
                raise ContractError(f"shape mismatch for {k}: {state[k].shape} vs {v.data.shape}")
            v.data = np.array(state[k], dtype=np.float32)
        for name, st in self.bn.items():
            st.running_mean = np.array(state[f"{name}.running_mean"], dtype=np.float32)
            st.running_var = np.array(state[f"{name}.running_var"], dtype=np.float32)

    def train(self, mode: bool = True) -> Model:
        self.training = mode
        for st in self.bn.values():
            st.training = mode
        return self

    def eval(self) -> Model:
        return self.train(False)

    def zero_grad(self):
        for v in self.parameters().values():
            v.grad = None


def build_model(spec: ModelSpec, seed: int = 0) -> Model:
    """Stem conv to the first width, then four (normal + strided) encoder blocks.

    The decoder mirrors the encoder: generative up-sampling, concatenation
    with the matching encoder features, a normal conv, and a one-channel
    likelihood head whose output drives pruning.
    """
    m = Model(spec)
    rng = np.random.default_rng(seed)
    w = [int(v) for v in spec.widths]
    m._conv("stem", spec.enc_kernel, spec.in_channels, w[0], rng)
    m._bn("stem.bn", w[0])
    for i in range(1, len(w)):
        m._conv(f"enc{i}.conv", spec.enc_kernel, w[i - 1], w[i - 1], rng)
        m._bn(f"enc{i}.conv.bn", w[i - 1])
        m._conv(f"enc{i}.down", spec.enc_down_kernel, w[i - 1], w[i], rng)
        m._bn(f"enc{i}.down.bn", w[i])
    for j in range(len(w) - 1, 0, -1):
        m._conv(f"dec{j}.up", spec.dec_up_kernel, w[j], w[j - 1], rng)
        m._bn(f"dec{j}.up.bn", w[j - 1])
        m._conv(f"dec{j}.conv", spec.dec_kernel, 2 * w[j - 1], w[j - 1], rng)
        m._bn(f"dec{j}.conv.bn", w[j - 1])
        m._conv(f"dec{j}.cls", spec.head_kernel, w[j - 1], 1, rng, bias=True)
    m._conv("out", spec.head_kernel, w[0], spec.out_channels, rng, bias=True)
    return m


def target_pyramid(gt: SparseTensor | np.ndarray, levels: int) -> list[np.ndarray]:
    """Occupied coordinates at strides 1, 2, 4, ... (OR-pooling of the target)."""
    coords = gt.coords if isinstance(gt, SparseTensor) else np.asarray(gt, np.int64).reshape(-1, 4)
    out = []
    for level in range(levels + 1):
        s = 2**level
        out.append(downsample_coords(coords, (s, s, s, 1)) if len(coords) else np.zeros((0, 4), np.int64))
    return out


def occupancy_labels(coords: np.ndarray, occupied: np.ndarray, stride) -> np.ndarray:
    if len(occupied) == 0 or len(coords) == 0:
        return np.zeros(len(coords), bool)
    return CoordIndex(occupied, stride).lookup(coords) >= 0


@dataclass
class ForwardResult:
    estimate: SparseTensor
    likelihoods: list = field(default_factory=list)
    labels: list = field(default_factory=list)
    output: SparseTensor | None = None
    latent: SparseTensor | None = None


def _block(model, x, name, kernel, cache, stride=(1, 1, 1, 1)):
    y = sparse_conv(x, model.params[f"{name}.weight"], None, kernel, stride, cache)
    return y.with_feats(elu(batch_norm(y.feats, model.bn[f"{name}.bn"])))


def encode(model: Model, x: SparseTensor, cache: dict | None = None):
    """Encoder half: returns the latent tensor and the per-level skip features."""
    spec = model.spec
    cache = {} if cache is None else cache
    x = SparseTensor(x.coords, Var(x.F.astype(np.float32)), x.stride)
    h = _block(model, x, "stem", spec.enc_kernel, cache)
    skips = []
    for i in range(1, spec.num_levels + 1):
        h = _block(model, h, f"enc{i}.conv", spec.enc_kernel, cache)
        skips.append(h)
        h = _block(model, h, f"enc{i}.down", spec.enc_down_kernel, cache, spec.down_stride)
    return h, skips


def forward(model: Model, x: SparseTensor, alpha: float | None = None, targets: list | None = None,
            keep_targets: bool = False) -> ForwardResult:
    """Run the network on a stride-1, 3-channel input.

    ``targets`` (from ``target_pyramid``) adds per-level occupancy labels to
    the result. With ``keep_targets`` the target coordinates also survive
    pruning so the decoder sees them while training; the returned
    ``estimate`` is still cut at ``alpha``.
    """
    spec = model.spec
    alpha = spec.alpha if alpha is None else float(alpha)
    if x.stride != (1, 1, 1, 1) or x.channels != spec.in_channels:
        raise ContractError(f"input must be stride-1 with {spec.in_channels} channels, got {x}")
    empty = SparseTensor.empty(spec.out_channels)
    if len(x) == 0:
        return ForwardResult(empty, output=empty)
    if keep_targets and targets is None:
        raise ContractError("keep_targets needs targets")
    cache: dict = {}
    levels = spec.num_levels
    h, skips = encode(model, x, cache)
    result = ForwardResult(empty, latent=h)
    up_stride = spec.down_stride
    final_p = None
    for j in range(levels, 0, -1):
        up = transposed_generative_conv(h, model.params[f"dec{j}.up.weight"], None, spec.dec_up_kernel,
                                        up_stride, cache)
        h = up.with_feats(elu(batch_norm(up.feats, model.bn[f"dec{j}.up.bn"])))
        skip = skips[j - 1]
        rows = skip.index.lookup(h.coords)
        h = h.with_feats(concat_cols(h.feats, take_rows(skip.feats, rows)))
        h = _block(model, h, f"dec{j}.conv", spec.dec_kernel, cache)
        logits = sparse_conv(h, model.params[f"dec{j}.cls.weight"], model.params[f"dec{j}.cls.bias"],
                             spec.head_kernel, cache=cache)
        p = logits.with_feats(sigmoid(logits.feats))
        result.likelihoods.append(p)
        extra = None
        if targets is not None:
            lab = occupancy_labels(h.coords, targets[j - 1], h.stride)
            result.labels.append(lab)
            extra = lab if keep_targets else None
        keep_alpha = p.F[:, 0] >= alpha
        h = prune(h, p, alpha, extra)
        final_p = keep_alpha[keep_alpha if extra is None else keep_alpha | extra]
        if len(h) == 0:
            return result
    now = np.flatnonzero(h.coords[:, 3] == 0)
    h0 = SparseTensor(h.coords[now], take_rows(h.feats, now, unique=True), h.stride)
    final_p = final_p[now]
    if len(h0) == 0:
        return result
    out = sparse_conv(h0, model.params["out.weight"], model.params["out.bias"], spec.head_kernel, cache=cache)
    out = out.with_feats(sigmoid(out.feats))
    result.output = out
    if final_p.all():
        result.estimate = out
    else:
        sel = np.flatnonzero(final_p)
        result.estimate = SparseTensor(out.coords[sel], Var(out.F[sel]), out.stride)
    return result


# -- mini-batches ------------------------------------------------------------------


def batch_gap(spec: ModelSpec) -> int:
    """x-shift between batched samples: a multiple of the total stride, far beyond any kernel's reach."""
    f = int(spec.down_stride[0]) ** spec.num_levels
    return -(-2 * spec.grid_dim // f) * f


def stack_batch(tensors: list[SparseTensor], gap: int) -> SparseTensor:
    """Place sample ``b`` at x + b * gap so one forward pass handles the whole batch.

    Convolutions never reach across the gap, so samples do not interact
    except through batch-norm statistics.
    """
    if not tensors:
        raise ContractError("empty batch")
    coords, feats = [], []
    for b, t in enumerate(tensors):
        c = t.coords.copy()
        c[:, 0] += b * gap
        coords.append(c)
        feats.append(t.F)
    return SparseTensor(np.concatenate(coords), np.concatenate(feats), tensors[0].stride)


def split_batch(t: SparseTensor, gap: int, n: int) -> list[SparseTensor]:
    """Inverse of ``stack_batch`` on (detached) features."""
    b = t.coords[:, 0] // gap if len(t) else np.zeros(0, np.int64)
    out = []
    for i in range(n):
        rows = np.flatnonzero(b == i)
        c = t.coords[rows].copy()
        c[:, 0] -= i * gap
        out.append(SparseTensor(c, t.F[rows], t.stride))
    return out


@dataclass
class LossTerms:
    bce: Var
    offset: Var

    @property
    def total(self) -> Var:
        return self.bce + self.offset


def compute_loss(res: ForwardResult, gt: SparseTensor) -> LossTerms:
    """Sum of per-level mean BCE plus the output offset loss."""
    bce = Var(np.zeros((), np.float32))
    for p, lab in zip(res.likelihoods, res.labels):
        bce = bce + occupancy_bce_loss(p, lab).value
    if res.output is not None and len(res.output):
        off = offset_loss(res.output, gt).value
    else:
        off = Var(np.zeros((), np.float32))
    return LossTerms(bce, off)


# -- auto-regressive rollout ---------------------------------------------------


@dataclass
class Frame:
    """One time step. ``pose`` is the pose the pipeline sees (odometry);
    clouds are in the robot frame of the true pose."""

    pose: Pose
    measurement: PointCloud
    gt: PointCloud | None = None
    true_pose: Pose | None = None


@dataclass
class StepResult:
    estimate: PointCloud
    grid: GridConfig
    input: SparseTensor
    estimate_tensor: SparseTensor
    losses: LossTerms | None = None


def frame_input(frame: Frame, grid: GridConfig, prev_estimate: PointCloud | None, prev_pose: Pose | None):
    """Network input for one step: measurement at k=0, re-projected estimate at k=1."""
    cfg = grid.centered_on(frame.pose.translation)
    meas = voxelize_world(transform_points(frame.pose, frame.measurement, "world"), cfg, 0)
    prev = None
    if prev_estimate is not None and prev_pose is not None:
        prev = reproject_previous(prev_estimate, prev_pose, frame.pose, cfg)
    return temporal_concat(meas, prev), cfg


def frame_target(frame: Frame, cfg: GridConfig) -> SparseTensor:
    if frame.gt is None:
        raise ContractError("frame has no ground truth")
    return voxelize_world(transform_points(frame.pose, frame.gt, "world"), cfg, 0)


def estimate_to_robot(est: SparseTensor, cfg: GridConfig, pose: Pose) -> PointCloud:
    if len(est) == 0:
        return PointCloud.empty("robot")
    return transform_points(inverse(pose), devoxelize(est, cfg), "robot")


def rollout(model: Model, frames, alpha: float | None = None, grid: GridConfig | None = None,
            feedback: bool = True, with_loss: bool = False) -> list[StepResult]:
    """Run the model over a trajectory, feeding each estimate into the next step.

    The fed-back estimate is a constant: no gradient crosses time steps.
    """
    frames = list(frames)
    grid = grid or model.spec.grid
    out = []
    prev_est, prev_pose = None, None
    for fr in frames:
        if not isinstance(fr, Frame):
            raise ContractError("rollout expects Frame items (pose + measurement)")
        x, cfg = frame_input(fr, grid, prev_est if feedback else None, prev_pose)
        losses = None
        if with_loss:
            gt = frame_target(fr, cfg)
            res = forward(model, x, alpha, target_pyramid(gt, model.spec.num_levels))
            losses = compute_loss(res, gt)
        else:
            res = forward(model, x, alpha)
        est = res.estimate.detach()
        cloud = estimate_to_robot(est, cfg, fr.pose)
        out.append(StepResult(cloud, cfg, x, est, losses))
        prev_est, prev_pose = cloud, fr.pose
    return out
