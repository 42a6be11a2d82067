"""Layer primitives, loss terms, Adam and the learning-rate schedule."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .sparse import SparseTensor, Var
from .sparse.autograd import elu as _elu
from .sparse.autograd import sigmoid as _sigmoid

log = logging.getLogger(__name__)

PROB_CLAMP = 1e-7


@dataclass
class BatchNormState:
    gamma: Var
    beta: Var
    running_mean: np.ndarray
    running_var: np.ndarray
    momentum: float = 0.1
    eps: float = 1e-5
    training: bool = True
    eval_stats: str = "running"  # "running", or "input": normalize with the input's own statistics in eval mode too

    def __post_init__(self):
        if self.eval_stats not in ("running", "input"):
            raise ContractError(f"eval_stats must be 'running' or 'input', got {self.eval_stats!r}")

    @classmethod
    def create(cls, channels: int, dtype=np.float32, **kw) -> BatchNormState:
        return cls(
            Var(np.ones(channels, dtype), True, name="gamma"),
            Var(np.zeros(channels, dtype), True, name="beta"),
            np.zeros(channels, dtype),
            np.ones(channels, dtype),
            **kw,
        )

    @property
    def channels(self) -> int:
        return self.gamma.data.shape[0]


def batch_norm(x: Var, state: BatchNormState) -> Var:
    """Per-channel normalization over all active rows.

    Training mode normalizes with the statistics of ``x`` and updates the
    running averages. Eval mode uses the running averages, unless the state's
    ``eval_stats`` is "input", in which case it normalizes with the
    statistics of ``x`` and leaves the state untouched.
    """
    d = x.data
    if d.ndim != 2 or d.shape[1] != state.channels:
        raise ContractError(f"batch norm over {state.channels} channels got features {d.shape}")
    g, b = state.gamma, state.beta
    if not state.training and state.eval_stats == "running":
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        scale = (g.data * inv).astype(d.dtype)
        shift = (b.data - state.running_mean * g.data * inv).astype(d.dtype)
        out = d * scale + shift
        xhat = (d - state.running_mean) * inv

        def backward_eval(gr):
            return gr * scale, (gr * xhat).sum(0).astype(g.data.dtype), gr.sum(0).astype(b.data.dtype)

        return Var(out, x.requires_grad or g.requires_grad or b.requires_grad, (x, g, b), backward_eval)

    n = d.shape[0]
    if n == 0:
        raise ContractError("batch norm with input statistics needs at least one active coordinate")
    mean = d.mean(0)
    var = d.var(0)
    inv = 1.0 / np.sqrt(var + state.eps)
    xhat = (d - mean) * inv
    out = (xhat * g.data + b.data).astype(d.dtype)
    if state.training:
        m = state.momentum
        unbiased = var * n / (n - 1) if n > 1 else var
        state.running_mean = ((1 - m) * state.running_mean + m * mean).astype(state.running_mean.dtype)
        state.running_var = ((1 - m) * state.running_var + m * unbiased).astype(state.running_var.dtype)

    def backward(gr):
        dg = (gr * xhat).sum(0)
        db = gr.sum(0)
        dxhat = gr * g.data
        dx = inv / n * (n * dxhat - dxhat.sum(0) - xhat * (dxhat * xhat).sum(0))
        return dx.astype(d.dtype), dg.astype(g.data.dtype), db.astype(b.data.dtype)

    return Var(out, x.requires_grad or g.requires_grad or b.requires_grad, (x, g, b), backward)


def elu(x):
    """``x`` if positive else ``exp(x) - 1``. Accepts a Var or an array."""
    if isinstance(x, Var):
        return _elu(x)
    return _elu(Var(np.asarray(x, dtype=np.float64))).data


def sigmoid(x):
    if isinstance(x, Var):
        return _sigmoid(x)
    return _sigmoid(Var(np.asarray(x, dtype=np.float64))).data


@dataclass
class LossValue:
    value: Var
    empty: bool = False

    def item(self) -> float:
        return float(self.value.data)


def occupancy_bce_loss(likelihood: SparseTensor, target: np.ndarray | set) -> LossValue:
    """Mean binary cross-entropy of one layer's likelihoods.

    ``target`` is either a boolean label per likelihood row or a set of
    occupied coordinates at that layer's resolution.
    """
    p = likelihood.feats
    n = p.data.shape[0]
    if n == 0:
        log.warning("occupancy loss on an empty likelihood tensor; contributing 0")
        return LossValue(Var(np.zeros((), p.data.dtype)), empty=True)
    if isinstance(target, (set, frozenset)):
        y = np.array([tuple(int(v) for v in c) in target for c in likelihood.coords], dtype=bool)
    else:
        y = np.asarray(target, dtype=bool).reshape(n)
    pd = p.data[:, 0].astype(np.float64)
    pc = np.clip(pd, PROB_CLAMP, 1 - PROB_CLAMP)
    yf = y.astype(np.float64)
    loss = -np.mean(yf * np.log(pc) + (1 - yf) * np.log1p(-pc))
    inside = (pd > PROB_CLAMP) & (pd < 1 - PROB_CLAMP)

    def backward(g):
        grad = np.where(inside, (pc - yf) / (pc * (1 - pc)), 0.0) / n
        return ((g * grad)[:, None].astype(p.data.dtype),)

    return LossValue(Var(np.asarray(loss, dtype=p.data.dtype), p.requires_grad, (p,), backward))


def offset_loss(pred: SparseTensor, target: SparseTensor) -> LossValue:
    """Mean Euclidean distance between features on shared coordinates."""
    rows = target.index.lookup(pred.coords) if len(pred) else np.zeros(0, np.int64)
    matched = np.flatnonzero(rows >= 0)
    f = pred.feats
    if len(matched) == 0:
        log.warning("offset loss with no matched coordinates; contributing 0")
        return LossValue(Var(np.zeros((), f.data.dtype)), empty=True)
    diff = f.data[matched].astype(np.float64) - target.F[rows[matched]].astype(np.float64)
    dist = np.linalg.norm(diff, axis=1)
    m = len(matched)

    def backward(g):
        grad = np.zeros(f.data.shape, np.float64)
        safe = np.where(dist > 0, dist, 1.0)
        grad[matched] = np.where(dist[:, None] > 0, diff / safe[:, None], 0.0) / m
        return ((g * grad).astype(f.data.dtype),)

    return LossValue(Var(np.asarray(dist.mean(), dtype=f.data.dtype), f.requires_grad, (f,), backward))


class NonFiniteGradient(FloatingPointError):
    pass


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState, lr: float) -> None:
    """One bias-corrected Adam update, in place on ``params`` (name -> array).

    A non-finite gradient anywhere skips the whole step and raises.
    """
    for name, g in grads.items():
        if g is not None and not np.all(np.isfinite(g)):
            raise NonFiniteGradient(f"non-finite gradient for {name}; step skipped")
    state.step += 1
    t = state.step
    b1, b2 = state.beta1, state.beta2
    c1 = 1 - b1**t
    c2 = 1 - b2**t
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if p.shape != g.shape:
            raise ContractError(f"gradient shape {g.shape} does not match parameter {name} {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros(p.shape)
            v = np.zeros(p.shape)
        g64 = g.astype(np.float64)
        m = b1 * m + (1 - b1) * g64
        v = b2 * v + (1 - b2) * g64 * g64
        state.m[name], state.v[name] = m, v
        update = lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p -= update.astype(p.dtype)


def lr_schedule(epoch: int, num_epochs: int = 40, lr_start: float = 0.01, lr_end: float = 1e-4) -> float:
    """Exponential per-epoch decay from ``lr_start`` to ``lr_end`` at the last epoch."""
    if not 0 <= epoch < num_epochs:
        raise ContractError(f"epoch {epoch} outside [0, {num_epochs})")
    if num_epochs == 1:
        return lr_start
    gamma = (lr_end / lr_start) ** (1.0 / (num_epochs - 1))
    return lr_start * gamma**epoch
