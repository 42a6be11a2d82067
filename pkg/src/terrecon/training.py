"""Rollout training loop, checkpoint packing and resume."""

from __future__ import annotations

import csv
import io as _io
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .augment import AugmentConfig, augment_frame, mirror_trajectory
from .errors import ContractError
from .io import atomic_write, decode_text, encode_text, load_checkpoint, save_checkpoint
from .model import (
    Frame,
    Model,
    ModelSpec,
    batch_gap,
    build_model,
    compute_loss,
    estimate_to_robot,
    forward,
    frame_input,
    frame_target,
    split_batch,
    stack_batch,
    target_pyramid,
)
from .nn import AdamState, NonFiniteGradient, adam_step, lr_schedule

log = logging.getLogger(__name__)

LOSS_LOG_HEADER = ("epoch", "step", "bce", "offset", "total", "lr")


@dataclass
class TrainConfig:
    epochs: int = 40
    batch: int = 32
    rollout: int = 12
    lr_start: float = 0.01
    lr_end: float = 1e-4
    alpha: float = 0.5
    seed: int = 0
    keep_targets: bool = True
    augment: AugmentConfig | None = field(default_factory=AugmentConfig)
    mirror_axes: tuple = ("x", "y")
    recalibrate: int = 10  # running-stats models: refresh batch-norm statistics every N epochs and at the end

    def __post_init__(self):
        if self.epochs < 1 or self.batch < 1 or self.rollout < 1:
            raise ContractError("epochs, batch and rollout must be positive")
        if self.recalibrate < 0:
            raise ContractError("recalibrate must be >= 0")


@dataclass
class TrainState:
    model: Model
    adam: AdamState
    epoch: int = 0  # next epoch to run
    loss_rows: list = field(default_factory=list)


def split_sequences(trajectories: list[list[Frame]], length: int) -> list[list[Frame]]:
    """Consecutive non-overlapping windows of ``length`` frames; shorter tails are dropped."""
    out = []
    for traj in trajectories:
        for s in range(0, len(traj) - length + 1, length):
            out.append(list(traj[s:s + length]))
    return out


def _augmented(seq: list[Frame], cfg: TrainConfig, seed: int) -> list[Frame]:
    if cfg.augment is None:
        return seq
    seq = mirror_trajectory(seq, cfg.mirror_axes, seed=seed, prob=cfg.augment.mirror_prob)
    out = []
    for t, fr in enumerate(seq):
        meas, pose = augment_frame(fr.measurement, fr.pose, cfg.augment, seed * 1009 + t)
        out.append(Frame(pose, meas, fr.gt, fr.true_pose))
    return out


def train_epoch(state: TrainState, sequences: list[list[Frame]], cfg: TrainConfig) -> list[tuple]:
    """One pass over ``sequences`` in mini-batches of whole rollouts.

    At every time step the frames of all sequences in the batch go through
    one batched forward pass and one optimizer step is taken; each sequence
    feeds its own previous estimate forward without gradient.
    """
    model, epoch = state.model, state.epoch
    model.train()
    spec = model.spec
    grid = spec.grid
    gap = batch_gap(spec)
    lr = lr_schedule(epoch, cfg.epochs, cfg.lr_start, cfg.lr_end)
    rng = np.random.default_rng([cfg.seed, epoch])
    order = rng.permutation(len(sequences))
    params = model.parameters()
    rows = []
    for b0 in range(0, len(order), cfg.batch):
        batch = [_augmented(sequences[i], cfg, int(rng.integers(2**31))) for i in order[b0:b0 + cfg.batch]]
        prev = [(None, None)] * len(batch)
        for t in range(min(len(s) for s in batch)):
            model.zero_grad()
            xs, gts, cfgs = [], [], []
            for bi, seq in enumerate(batch):
                x, g = frame_input(seq[t], grid, *prev[bi])
                xs.append(x)
                gts.append(frame_target(seq[t], g))
                cfgs.append(g)
            x, gt = stack_batch(xs, gap), stack_batch(gts, gap)
            if len(x) == 0:
                prev = [(None, None)] * len(batch)
                continue
            res = forward(model, x, cfg.alpha, target_pyramid(gt, spec.num_levels), cfg.keep_targets)
            terms = compute_loss(res, gt)
            terms.total.backward()
            bce, off = float(terms.bce.data), float(terms.offset.data)
            ests = split_batch(res.estimate.detach(), gap, len(batch))
            prev = [(estimate_to_robot(e, g, seq[t].pose), seq[t].pose) for e, g, seq in zip(ests, cfgs, batch)]
            grads = {n: v.grad for n, v in params.items()}
            try:
                adam_step({n: v.data for n, v in params.items()}, grads, state.adam, lr)
            except NonFiniteGradient as e:
                log.warning("epoch %d step %d: %s", epoch, t, e)
                continue
            rows.append((epoch, state.adam.step, bce, off, bce + off, lr))
    state.loss_rows += rows
    state.epoch += 1
    return rows


def loss_log_csv(rows) -> str:
    buf = _io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(LOSS_LOG_HEADER)
    for e, s, b, o, tot, lr in rows:
        w.writerow([e, s, f"{b:.8g}", f"{o:.8g}", f"{tot:.8g}", f"{lr:.8g}"])
    return buf.getvalue()


def read_loss_log(path) -> list[tuple]:
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r)
        if tuple(header) != LOSS_LOG_HEADER:
            raise ContractError(f"{path}: unexpected loss log header {header}")
        return [(int(a), int(b), float(c), float(d), float(e), float(g)) for a, b, c, d, e, g in r]


def recalibrate_batch_norm(model: Model, sequences: list[list[Frame]], alpha: float,
                           keep_targets: bool = True) -> int:
    """Replace the batch-norm running statistics by an exact average over rollouts.

    Running averages collected during training trail the weights while the
    learning rate is high; one gradient-free pass with the final weights over
    the training rollouts removes that lag. The pass sees the same coordinate
    sets as training (targets kept when ``keep_targets``), so every decoder
    level contributes even where the pruned set would be empty. Returns the
    number of frames used.
    """
    spec = model.spec
    saved = {n: st.momentum for n, st in model.bn.items()}
    for st in model.bn.values():
        st.running_mean[:] = 0
        st.running_var[:] = 1
    model.train()
    count = 0
    try:
        for seq in sequences:
            prev = (None, None)
            for fr in seq:
                x, g = frame_input(fr, spec.grid, *prev)
                if len(x) == 0:
                    prev = (None, None)
                    continue
                targets = None
                if keep_targets and fr.gt is not None:
                    targets = target_pyramid(frame_target(fr, g), spec.num_levels)
                for st in model.bn.values():
                    st.momentum = 1.0 / (count + 1)
                res = forward(model, x, alpha, targets, targets is not None)
                count += 1
                prev = (estimate_to_robot(res.estimate.detach(), g, fr.pose), fr.pose)
    finally:
        for n, st in model.bn.items():
            st.momentum = saved[n]
        model.eval()
    return count


# -- checkpoint packing ------------------------------------------------------------


def _f64_bits(a):
    return np.ascontiguousarray(a, np.float64).reshape(-1).view(np.float32)


def pack_state(state: TrainState) -> dict[str, np.ndarray]:
    spec = state.model.spec
    tensors = dict(state.model.state_dict())
    tensors["meta/spec"] = encode_text(spec.to_json())
    tensors["meta/spec_digest"] = np.frombuffer(spec.digest(), np.uint8).astype(np.float32)
    tensors["meta/epoch"] = np.array([state.epoch], np.float32)
    tensors["adam/step"] = np.array([state.adam.step], np.float32)
    # f64 moments travel as their raw bits, two f32 words per value, so resume is exact
    for name in sorted(state.adam.m):
        tensors[f"adam/m/{name}"] = _f64_bits(state.adam.m[name])
        tensors[f"adam/v/{name}"] = _f64_bits(state.adam.v[name])
    return tensors


def unpack_state(tensors: dict[str, np.ndarray]) -> TrainState:
    try:
        spec = ModelSpec.from_json(decode_text(tensors["meta/spec"]))
    except KeyError as e:
        raise ContractError("checkpoint carries no model spec") from e
    digest = tensors["meta/spec_digest"].astype(np.uint8).tobytes()
    if digest != spec.digest():
        raise ContractError("checkpoint spec digest does not match its spec")
    model = build_model(spec, 0)
    model.load_state_dict(tensors)
    adam = AdamState(step=int(tensors.get("adam/step", np.zeros(1))[0]))
    shapes = {n: p.shape for n, p in model.state_dict().items()}
    for k, v in tensors.items():
        if k.startswith(("adam/m/", "adam/v/")):
            name = k[7:]
            if name not in shapes or v.size != 2 * int(np.prod(shapes[name])):
                raise ContractError(f"optimizer tensor {k} does not match the model")
            moments = adam.m if k[5] == "m" else adam.v
            moments[name] = np.ascontiguousarray(v, np.float32).view(np.float64).reshape(shapes[name])
    return TrainState(model, adam, int(tensors.get("meta/epoch", np.zeros(1))[0]))


def save_state(path, state: TrainState) -> None:
    save_checkpoint(path, pack_state(state))


def load_model(path) -> Model:
    model = unpack_state(load_checkpoint(path)).model
    return model.eval()


def train(trajectories: list[list[Frame]], spec: ModelSpec, cfg: TrainConfig, out_dir=None,
          resume=None, epochs: int | None = None, progress=None) -> TrainState:
    """Train from scratch (or from ``resume``) on rollout windows of the trajectories.

    With ``out_dir`` a checkpoint is written after every epoch
    (``epoch_XXXX.tckp`` and ``last.tckp``) together with ``loss_log.csv``.
    ``epochs`` caps how many epochs this call runs; the schedule still spans
    ``cfg.epochs``.
    """
    sequences = split_sequences(trajectories, cfg.rollout)
    if not sequences:
        raise ContractError(f"no trajectory has {cfg.rollout} frames")
    if resume is not None:
        state = unpack_state(load_checkpoint(resume))
        if state.model.spec != spec:
            raise ContractError("resume checkpoint was trained with a different model spec")
        if out_dir is not None and (Path(out_dir) / "loss_log.csv").exists():
            state.loss_rows = read_loss_log(Path(out_dir) / "loss_log.csv")
    else:
        state = TrainState(build_model(spec, cfg.seed), AdamState())
    stop = cfg.epochs if epochs is None else min(cfg.epochs, state.epoch + epochs)
    while state.epoch < stop:
        rows = train_epoch(state, sequences, cfg)
        due = state.epoch == stop or state.epoch % max(cfg.recalibrate, 1) == 0
        if cfg.recalibrate and spec.eval_norm == "running" and due:
            recalibrate_batch_norm(state.model, sequences, cfg.alpha, cfg.keep_targets)
        if progress is not None:
            progress(state, rows)
        if out_dir is not None:
            out = Path(out_dir)
            tensors = pack_state(state)
            save_checkpoint(out / f"epoch_{state.epoch:04d}.tckp", tensors)
            save_checkpoint(out / "last.tckp", tensors)
            atomic_write(out / "loss_log.csv", loss_log_csv(state.loss_rows).encode())
    state.model.eval()
    return state
