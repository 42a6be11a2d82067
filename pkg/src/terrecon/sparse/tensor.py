"""Sparse tensors keyed by 4D integer coordinates (x, y, z, k)."""

from __future__ import annotations

import numpy as np

from ..errors import ContractError
from .autograd import Var

# a dense lookup volume is used while the coordinate bounding box stays small
DENSE_LOOKUP_LIMIT = 1 << 22


class CoordIndex:
    """Maps 4D coordinates to row indices.

    Rows keep insertion order. Coordinates are divided by the tensor stride
    before hashing, so queries that are not on the stride lattice miss.
    """

    def __init__(self, coords: np.ndarray, stride):
        self.coords = np.ascontiguousarray(coords, dtype=np.int64).reshape(-1, 4)
        self.stride = np.asarray(stride, dtype=np.int64).reshape(4)
        n = len(self.coords)
        if n == 0:
            self._lo = np.zeros(4, np.int64)
            self._shape = np.zeros(4, np.int64)
            self._dense = None
            self._keys = np.zeros(0, np.int64)
            self._order = np.zeros(0, np.int64)
            return
        if np.any(self.coords % self.stride):
            raise ContractError("coordinates are not multiples of the tensor stride")
        lattice = self.coords // self.stride
        self._lo = lattice.min(0)
        self._shape = lattice.max(0) - self._lo + 1
        keys = self._linear(lattice - self._lo)
        volume = int(np.prod(self._shape))
        if volume <= DENSE_LOOKUP_LIMIT:
            dense = np.full(volume, -1, np.int64)
            dense[keys[::-1]] = np.arange(n - 1, -1, -1)
            if np.count_nonzero(dense >= 0) != n:
                raise ContractError("duplicate coordinates in sparse tensor")
            self._dense = dense
        else:
            self._dense = None
            order = np.argsort(keys, kind="stable")
            sk = keys[order]
            if np.any(sk[1:] == sk[:-1]):
                raise ContractError("duplicate coordinates in sparse tensor")
            self._keys, self._order = sk, order

    def _linear(self, rel: np.ndarray) -> np.ndarray:
        s = self._shape
        return ((rel[..., 0] * s[1] + rel[..., 1]) * s[2] + rel[..., 2]) * s[3] + rel[..., 3]

    def __len__(self) -> int:
        return len(self.coords)

    def lookup_product(self, base: np.ndarray, axis_deltas) -> np.ndarray:
        """``lookup(base[:, None] + offsets)`` where the offsets are the Cartesian
        product of ``axis_deltas`` (ij order), without forming the queries."""
        base = np.asarray(base, dtype=np.int64).reshape(-1, 4)
        sizes = [len(a) for a in axis_deltas]
        k = int(np.prod(sizes))
        if self._dense is None or len(self.coords) == 0 or len(base) == 0:
            grid = np.meshgrid(*axis_deltas, indexing="ij")
            offs = np.stack([g.ravel() for g in grid], 1).astype(np.int64)
            return self.lookup(base[:, None, :] + offs[None, :, :]) if k else np.zeros((len(base), 0), np.int64)
        mult = np.ones(4, np.int64)
        for a in (2, 1, 0):
            mult[a] = mult[a + 1] * self._shape[a + 1]
        key = np.zeros((len(base),) + (1,) * 4, np.int64)
        ok = np.ones_like(key, dtype=bool)
        for a in range(4):
            v = base[:, a, None] + np.asarray(axis_deltas[a], np.int64)[None, :]
            s = self.stride[a]
            rel = v // s - self._lo[a]
            good = (v % s == 0) & (rel >= 0) & (rel < self._shape[a])
            shape = [len(base), 1, 1, 1, 1]
            shape[a + 1] = sizes[a]
            key = key + (np.where(good, rel, 0) * mult[a]).reshape(shape)
            ok = ok & good.reshape(shape)
        key, ok = key.reshape(len(base), k), ok.reshape(len(base), k)
        return np.where(ok, self._dense[key], -1)

    def lookup(self, query: np.ndarray) -> np.ndarray:
        """Row index of every query coordinate, -1 where absent."""
        query = np.asarray(query, dtype=np.int64)
        shape = query.shape[:-1]
        out = np.full(shape, -1, np.int64)
        if len(self.coords) == 0 or out.size == 0:
            return out
        on_lattice = np.all(query % self.stride == 0, axis=-1)
        rel = query // self.stride - self._lo
        inside = on_lattice & np.all((rel >= 0) & (rel < self._shape), axis=-1)
        keys = self._linear(rel[inside])
        if self._dense is not None:
            out[inside] = self._dense[keys]
        else:
            pos = np.searchsorted(self._keys, keys)
            pos = np.minimum(pos, len(self._keys) - 1)
            hit = self._keys[pos] == keys
            found = np.where(hit, self._order[pos], -1)
            out[inside] = found
        return out


class SparseTensor:
    """Coordinates (N, 4), features (N, C) and a per-axis tensor stride.

    ``feats`` is an autograd ``Var``; ``F`` is its raw array.
    """

    def __init__(self, coords, feats, stride=(1, 1, 1, 1), index: CoordIndex | None = None):
        coords = np.asarray(coords, dtype=np.int64).reshape(-1, 4)
        feats = feats if isinstance(feats, Var) else Var(np.asarray(feats))
        if feats.data.ndim != 2 or feats.data.shape[0] != len(coords):
            raise ContractError(
                f"feature array {feats.data.shape} does not match {len(coords)} coordinates"
            )
        self.coords = coords
        self.feats = feats
        self.stride = tuple(int(s) for s in stride)
        if any(s <= 0 for s in self.stride):
            raise ContractError(f"tensor stride must be positive, got {self.stride}")
        self._index = index

    @classmethod
    def empty(cls, channels: int, stride=(1, 1, 1, 1), dtype=np.float32) -> SparseTensor:
        return cls(np.zeros((0, 4), np.int64), np.zeros((0, channels), dtype), stride)

    @property
    def F(self) -> np.ndarray:
        return self.feats.data

    @property
    def C(self) -> np.ndarray:
        return self.coords

    @property
    def channels(self) -> int:
        return self.F.shape[1]

    @property
    def index(self) -> CoordIndex:
        if self._index is None:
            self._index = CoordIndex(self.coords, self.stride)
        return self._index

    def __len__(self) -> int:
        return len(self.coords)

    def __repr__(self):
        return f"SparseTensor(n={len(self)}, C={self.channels}, stride={self.stride})"

    def with_feats(self, feats) -> SparseTensor:
        """Same coordinate set (and cached index) with new features."""
        return SparseTensor(self.coords, feats, self.stride, self._index)

    def detach(self) -> SparseTensor:
        return SparseTensor(self.coords, Var(self.F.copy()), self.stride, self._index)

    def slice_time(self, k: int) -> SparseTensor:
        keep = np.flatnonzero(self.coords[:, 3] == k)
        return SparseTensor(self.coords[keep], Var(self.F[keep]), self.stride)

    def as_dict(self) -> dict:
        return {tuple(int(v) for v in c): f for c, f in zip(self.coords, self.F)}
