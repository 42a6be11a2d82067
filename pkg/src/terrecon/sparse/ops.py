"""Sparse convolutions, generative up-sampling and pruning.

All convolutions reduce to one gather-GEMM over a ``KernelMap``: the input
rows selected by the map are laid out as an (N_out, K * C_in) matrix and
multiplied by the reshaped weights. Every output row is owned by exactly one
matrix row, so results do not depend on chunking.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError
from .autograd import Var, take_rows
from .kernel_map import (
    KernelMap,
    build_kernel_map,
    build_transposed_kernel_map,
    downsample_coords,
    generate_children,
)
from .tensor import CoordIndex, SparseTensor

# elements per gathered block; bounds peak memory of the im2col buffer
CHUNK_ELEMENTS = 1 << 23


@dataclass
class ConvRecord:
    """What a convolution's backward pass needs from its forward pass."""

    kmap: KernelMap
    inputs: np.ndarray
    weight: np.ndarray
    has_bias: bool
    columns: np.ndarray | None = None  # the gathered input matrix, kept when it fits in one chunk


def _padded(x: np.ndarray) -> np.ndarray:
    return np.concatenate([x, np.zeros((1, x.shape[1]), x.dtype)])


def _chunks(n_rows: int, row_elems: int):
    step = max(1, CHUNK_ELEMENTS // max(1, row_elems))
    for s in range(0, n_rows, step):
        yield s, min(n_rows, s + step)


def gather_matmul(x: np.ndarray, safe: np.ndarray, w2: np.ndarray, keep: bool = False):
    """``im2col(x, safe) @ w2`` where ``safe`` indexes rows of ``x`` padded with one zero row.

    With ``keep`` the im2col matrix is returned as well when it fits in one chunk.
    """
    n_out, k = safe.shape
    c_in = x.shape[1]
    dtype = np.result_type(x, w2)
    out = np.zeros((n_out, w2.shape[1]), dtype)
    cols = None
    if n_out == 0 or x.shape[0] == 0:
        return (out, cols) if keep else out
    xp = _padded(x.astype(dtype, copy=False))
    w2 = w2.astype(dtype, copy=False)
    if keep and n_out * k * c_in <= CHUNK_ELEMENTS:
        cols = xp[safe].reshape(n_out, k * c_in)
        out = cols @ w2
        return out, cols
    for s, e in _chunks(n_out, k * c_in):
        out[s:e] = xp[safe[s:e]].reshape(e - s, k * c_in) @ w2
    return (out, cols) if keep else out


def conv_forward(record: ConvRecord, bias: np.ndarray | None = None) -> np.ndarray:
    k, c_in, c_out = record.weight.shape
    if record.inputs.shape[1] != c_in:
        raise ContractError(f"input has {record.inputs.shape[1]} channels, weights expect {c_in}")
    if k != record.kmap.num_offsets:
        raise ContractError(f"weights have {k} offsets, kernel map has {record.kmap.num_offsets}")
    out, record.columns = gather_matmul(record.inputs, record.kmap.safe_table, record.weight.reshape(k * c_in, c_out),
                                        keep=True)
    if bias is not None:
        out += bias.astype(out.dtype, copy=False)
    return out


def conv_backward(record: ConvRecord | None, grad_out: np.ndarray):
    """Gradients of a recorded convolution.

    Returns ``(grad_inputs, grad_weight, grad_bias)``; ``grad_bias`` is None
    when the forward pass had no bias.
    """
    if record is None:
        raise ContractError("backward called without a recorded forward pass")
    kmap, x, w = record.kmap, record.inputs, record.weight
    k, c_in, c_out = w.shape
    g = np.asarray(grad_out)
    if g.shape != (kmap.num_outputs, c_out):
        raise ContractError(f"upstream gradient {g.shape} does not match output ({kmap.num_outputs}, {c_out})")
    dtype = np.result_type(x, w, g)
    wt = w.transpose(0, 2, 1).reshape(k * c_out, c_in)
    grad_x = gather_matmul(g, kmap.safe_transposed, wt).astype(dtype, copy=False)
    grad_w = np.zeros((k * c_in, c_out), dtype)
    if record.columns is not None:
        grad_w = (record.columns.T @ g).astype(dtype, copy=False)
    elif kmap.num_outputs and x.shape[0]:
        xp = _padded(x.astype(dtype, copy=False))
        safe = kmap.safe_table
        for s, e in _chunks(kmap.num_outputs, k * c_in):
            grad_w += xp[safe[s:e]].reshape(e - s, k * c_in).T @ g[s:e]
    grad_b = g.sum(0) if record.has_bias else None
    return grad_x, grad_w.reshape(k, c_in, c_out), grad_b


def _apply(x: SparseTensor, kmap: KernelMap, weight: Var, bias: Var | None, coords, stride, index=None) -> SparseTensor:
    record = ConvRecord(kmap, x.F, weight.data, bias is not None)
    out = conv_forward(record, None if bias is None else bias.data)
    parents = (x.feats, weight) + ((bias,) if bias is not None else ())

    def backward(g):
        gx, gw, gb = conv_backward(record, g)
        return (gx, gw) + ((gb,) if bias is not None else ())

    needs = any(p.requires_grad for p in parents)
    return SparseTensor(coords, Var(out, needs, parents, backward), stride, index)


def _cached(cache, key, build, *keepalive):
    # keys hold object ids; the cache keeps those objects alive so ids stay unique
    if cache is None:
        return build()
    if key not in cache:
        cache[key] = (build(), keepalive)
    return cache[key][0]


def sparse_conv(x: SparseTensor, weight: Var, bias: Var | None = None, kernel_size=(3, 3, 3, 1),
                stride=(1, 1, 1, 1), cache: dict | None = None) -> SparseTensor:
    """Sparse convolution; ``weight`` has shape (K, C_in, C_out).

    With unit stride the output coordinates are the input coordinates.
    Otherwise they are the input coordinates floored to the coarser lattice.
    """
    weight = weight if isinstance(weight, Var) else Var(weight)
    if bias is not None and not isinstance(bias, Var):
        bias = Var(bias)
    if x.channels != weight.data.shape[1]:
        raise ContractError(f"input has {x.channels} channels, weights expect {weight.data.shape[1]}")
    stride = tuple(int(s) for s in stride)
    kernel_size = tuple(int(s) for s in kernel_size)
    if all(s == 1 for s in stride):
        out_stride, out_coords, out_index = x.stride, x.coords, x.index
    else:
        out_stride = tuple(a * b for a, b in zip(x.stride, stride))
        out_index = _cached(cache, ("down", id(x.index), out_stride),
                            lambda: CoordIndex(downsample_coords(x.coords, out_stride), out_stride), x.index)
        out_coords = out_index.coords
    kmap = _cached(cache, ("conv", id(x.index), id(out_index), kernel_size),
                   lambda: build_kernel_map(x.index, out_coords, kernel_size, x.stride, stride),
                   x.index, out_index)
    return _apply(x, kmap, weight, bias, out_coords, out_stride, out_index)


def transposed_generative_conv(x: SparseTensor, weight: Var, bias: Var | None = None,
                               kernel_size=(2, 2, 2, 1), stride=(2, 2, 2, 1),
                               cache: dict | None = None) -> SparseTensor:
    """Up-sampling convolution that creates every child in the kernel footprint."""
    weight = weight if isinstance(weight, Var) else Var(weight)
    if bias is not None and not isinstance(bias, Var):
        bias = Var(bias)
    if x.channels != weight.data.shape[1]:
        raise ContractError(f"input has {x.channels} channels, weights expect {weight.data.shape[1]}")
    stride = tuple(int(s) for s in stride)
    if any(ts % s for ts, s in zip(x.stride, stride)):
        raise ContractError(f"tensor stride {x.stride} is not divisible by stride {stride}")
    out_stride = tuple(ts // s for ts, s in zip(x.stride, stride))
    out_index = _cached(cache, ("gen", id(x.index), tuple(kernel_size)),
                        lambda: CoordIndex(generate_children(x.coords, kernel_size, out_stride), out_stride),
                        x.index)
    kmap = _cached(cache, ("tconv", id(x.index), id(out_index), tuple(kernel_size)),
                   lambda: build_transposed_kernel_map(x.index, out_index.coords, kernel_size, out_stride, stride),
                   x.index, out_index)
    return _apply(x, kmap, weight, bias, out_index.coords, out_stride, out_index)


def prune(features: SparseTensor, likelihood: SparseTensor, alpha: float,
          keep_extra: np.ndarray | None = None) -> SparseTensor:
    """Keep the coordinates whose likelihood is at least ``alpha``.

    ``keep_extra`` (boolean per row) forces additional rows to survive; it is
    only used during training to keep target coordinates alive.
    """
    if likelihood.channels != 1:
        raise ContractError("likelihood tensor must have exactly one channel")
    same = likelihood.coords is features.coords or (
        likelihood.coords.shape == features.coords.shape and np.array_equal(likelihood.coords, features.coords)
    )
    if not same:
        raise ContractError("likelihood and feature tensors have different coordinate sets")
    keep = likelihood.F[:, 0] >= alpha
    if keep_extra is not None:
        keep = keep | keep_extra
    idx = np.flatnonzero(keep)
    return SparseTensor(features.coords[idx], take_rows(features.feats, idx, unique=True), features.stride)
