"""Minimal reverse-mode autodiff over numpy arrays.

Each op creates a ``Var`` whose ``_backward`` closure maps the upstream
gradient to one gradient per parent. ``Var.backward`` walks the graph in
reverse topological order; gradients accumulate in ``.grad`` of every node
that requires them.
"""

from __future__ import annotations

import numpy as np


class Var:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward=None, name: str = ""):
        self.data = np.asarray(data)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = tuple(parents)
        self._backward = backward
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def __repr__(self):
        return f"Var({self.name or 'anon'}, shape={self.data.shape}, requires_grad={self.requires_grad})"

    def zero_grad(self):
        self.grad = None

    def item(self) -> float:
        return float(self.data)

    def backward(self, grad=None):
        if grad is None:
            if self.data.size != 1:
                raise ValueError("backward() without a gradient needs a scalar output")
            grad = np.ones_like(self.data)
        order = _topo(self)
        grads = {id(self): np.asarray(grad, dtype=self.data.dtype)}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if g is None:
                continue
            if node._backward is None:
                node.grad = g if node.grad is None else node.grad + g
                continue
            for parent, pg in zip(node._parents, node._backward(g)):
                if pg is None or not parent.requires_grad:
                    continue
                key = id(parent)
                grads[key] = pg if key not in grads else grads[key] + pg

    # scalar arithmetic for loss assembly
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __mul__(self, other):
        return scale(self, float(other))

    __rmul__ = __mul__


def _topo(root: Var) -> list[Var]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, done = stack.pop()
        if done:
            order.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _needs(*vs) -> bool:
    return any(v.requires_grad for v in vs)


def as_var(x) -> Var:
    return x if isinstance(x, Var) else Var(x)


def add(a, b) -> Var:
    a, b = as_var(a), as_var(b)
    return Var(a.data + b.data, _needs(a, b), (a, b), lambda g: (g, g))


def scale(a: Var, s: float) -> Var:
    return Var(a.data * s, a.requires_grad, (a,), lambda g: (g * s,))


def elu(x: Var) -> Var:
    d = x.data
    neg = np.expm1(np.minimum(d, 0))
    out = np.where(d > 0, d, neg)

    def backward(g):
        return (g * np.where(d > 0, 1.0, neg + 1.0).astype(d.dtype),)

    return Var(out, x.requires_grad, (x,), backward)


def sigmoid(x: Var) -> Var:
    d = x.data
    # split branches avoid overflow in exp for large |x|
    e = np.exp(-np.abs(d))
    out = np.where(d >= 0, 1.0 / (1.0 + e), e / (1.0 + e)).astype(d.dtype)
    # keep outputs strictly inside (0, 1) even where the dtype would round to 0 or 1
    fi = np.finfo(out.dtype)
    out = np.clip(out, fi.tiny, 1.0 - fi.epsneg)

    def backward(g):
        return (g * out * (1.0 - out),)

    return Var(out, x.requires_grad, (x,), backward)


def take_rows(x: Var, idx: np.ndarray, unique: bool = False) -> Var:
    """Gather rows; an index of -1 yields a zero row.

    ``unique=True`` promises that non-negative indices never repeat, which
    lets the backward pass assign instead of accumulate.
    """
    idx = np.asarray(idx, dtype=np.int64)
    n = x.data.shape[0]
    padded = np.concatenate([x.data, np.zeros((1,) + x.data.shape[1:], x.data.dtype)])
    safe = np.where(idx < 0, n, idx)
    out = padded[safe]

    def backward(g):
        gx = np.zeros((n + 1,) + x.data.shape[1:], g.dtype)
        if unique:
            gx[safe] = g
            gx[n] = 0
        else:
            np.add.at(gx, safe, g)
        return (gx[:n],)

    return Var(out, x.requires_grad, (x,), backward)


def concat_cols(a: Var, b: Var) -> Var:
    ca = a.data.shape[1]
    out = np.concatenate([a.data, b.data], axis=1)
    return Var(out, _needs(a, b), (a, b), lambda g: (g[:, :ca], g[:, ca:]))
