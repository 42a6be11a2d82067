"""Kernel offsets and input/output index maps for sparse convolution."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import ContractError
from .tensor import CoordIndex


def axis_offsets(kernel_size) -> list[np.ndarray]:
    """Per-axis offsets: odd sizes are centered on zero, even sizes run forward over [0, size)."""
    axes = []
    for s in kernel_size:
        s = int(s)
        if s <= 0:
            raise ContractError(f"kernel size must be positive, got {kernel_size}")
        axes.append(np.arange(-(s // 2), s // 2 + 1) if s % 2 else np.arange(s))
    return axes


def kernel_offsets(kernel_size) -> np.ndarray:
    """Integer offsets (K, 4): the Cartesian product of ``axis_offsets`` in ij order."""
    grid = np.meshgrid(*axis_offsets(kernel_size), indexing="ij")
    return np.stack([g.ravel() for g in grid], axis=1).astype(np.int64)


@dataclass
class KernelMap:
    """Gather table for a sparse convolution.

    ``table[o, d]`` is the input row feeding output row ``o`` through kernel
    offset ``d``, or -1. The relation is ``in_coord = out_coord + deltas[d]``.
    """

    table: np.ndarray
    deltas: np.ndarray
    kernel_size: tuple
    stride: tuple
    num_inputs: int

    @property
    def num_offsets(self) -> int:
        return self.table.shape[1]

    @property
    def num_outputs(self) -> int:
        return self.table.shape[0]

    @cached_property
    def transposed(self) -> np.ndarray:
        """``t[i, d]``: the unique output row that input ``i`` feeds through ``d``."""
        t = np.full((self.num_inputs, self.num_offsets), -1, np.int64)
        o, d = np.nonzero(self.table >= 0)
        t[self.table[o, d], d] = o
        return t

    @cached_property
    def safe_table(self) -> np.ndarray:
        """``table`` with -1 replaced by ``num_inputs`` (a zero padding row)."""
        return np.where(self.table < 0, self.num_inputs, self.table)

    @cached_property
    def safe_transposed(self) -> np.ndarray:
        return np.where(self.transposed < 0, self.num_outputs, self.transposed)

    def pairs(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        """(input indices, output indices) for offset ``d``."""
        o = np.flatnonzero(self.table[:, d] >= 0)
        return self.table[o, d], o

    def all_pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return [self.pairs(d) for d in range(self.num_offsets)]

    @property
    def num_pairs(self) -> int:
        return int(np.count_nonzero(self.table >= 0))


def _build(in_index: CoordIndex, out_coords: np.ndarray, scale, kernel_size, stride) -> KernelMap:
    """Deltas are ``kernel_offsets(kernel_size) * scale``."""
    out_coords = np.asarray(out_coords, dtype=np.int64).reshape(-1, 4)
    scale = np.asarray(scale, np.int64)
    per_axis = [o * s for o, s in zip(axis_offsets(kernel_size), scale)]
    table = in_index.lookup_product(out_coords, per_axis)
    deltas = kernel_offsets(kernel_size) * scale
    return KernelMap(table, deltas, tuple(kernel_size), tuple(stride), len(in_index))


def build_kernel_map(in_coords, out_coords, kernel_size, tensor_stride=(1, 1, 1, 1), stride=(1, 1, 1, 1)) -> KernelMap:
    """Kernel map for a (possibly strided) convolution.

    ``tensor_stride`` is the lattice spacing of the input coordinates. Output
    row ``o`` receives input ``i`` through offset ``d`` iff
    ``coord(i) = coord(o) + d * tensor_stride``.
    """
    idx = in_coords if isinstance(in_coords, CoordIndex) else CoordIndex(in_coords, tensor_stride)
    return _build(idx, out_coords, np.asarray(tensor_stride, np.int64), kernel_size, stride)


def build_transposed_kernel_map(in_coords, out_coords, kernel_size, out_stride, stride) -> KernelMap:
    """Kernel map for a transposed convolution onto the finer ``out_stride`` lattice.

    Input ``i`` feeds output ``o`` through offset ``d`` iff
    ``coord(o) = coord(i) + d * out_stride``.
    """
    in_stride = np.asarray(out_stride, np.int64) * np.asarray(stride, np.int64)
    idx = in_coords if isinstance(in_coords, CoordIndex) else CoordIndex(in_coords, in_stride)
    return _build(idx, out_coords, -np.asarray(out_stride, np.int64), kernel_size, stride)


def unique_rows(coords: np.ndarray) -> np.ndarray:
    """Distinct rows in first-occurrence order."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 4)
    if len(coords) == 0:
        return coords
    lo = coords.min(0)
    span = coords.max(0) - lo + 1
    rel = coords - lo
    keys = ((rel[:, 0] * span[1] + rel[:, 1]) * span[2] + rel[:, 2]) * span[3] + rel[:, 3]
    _, first = np.unique(keys, return_index=True)
    return coords[np.sort(first)]


def downsample_coords(coords: np.ndarray, new_stride) -> np.ndarray:
    """Floor every coordinate to a multiple of ``new_stride``; deduplicate."""
    s = np.asarray(new_stride, np.int64)
    return unique_rows(np.floor_divide(coords, s) * s)


def generate_children(coords: np.ndarray, kernel_size, out_stride) -> np.ndarray:
    """All coordinates reached by the kernel footprint at the finer stride."""
    coords = np.asarray(coords, dtype=np.int64).reshape(-1, 4)
    offs = kernel_offsets(kernel_size) * np.asarray(out_stride, np.int64)
    return unique_rows((coords[:, None, :] + offs[None, :, :]).reshape(-1, 4))
