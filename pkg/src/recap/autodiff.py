"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

The graph is recorded implicitly: every tensor produced by an op keeps
references to its parents, a backward closure, and a monotonically
increasing creation index. ``backward()`` replays the closures in reverse
creation order, which is a valid topological order because ops only consume
tensors that already exist. One graph is confined to one thread; distinct
graphs may run in parallel.

Gradients accumulate additively into ``.grad``; callers zero them between
steps. All arithmetic is float64 and deterministic.
"""

from __future__ import annotations

import itertools
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "ShapeError",
    "Tensor",
    "Parameter",
    "no_grad",
    "constant",
    "matmul",
    "add",
    "add_colvec",
    "add_n",
    "sub",
    "hadamard",
    "scale",
    "sigmoid",
    "tanh",
    "softmax",
    "log_softmax",
    "mean_pool",
    "sq_euclidean",
    "concat",
    "narrow",
    "pick",
    "row",
    "stack_rows",
    "transpose2d",
    "uniform_init",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for a primitive."""


_seq_counter = itertools.count()
_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation-only passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """Dense real tensor that can participate in a differentiation graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_bw", "_seq")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._bw: Callable[[np.ndarray], None] | None = None
        self._seq = next(_seq_counter)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def backward(self) -> None:
        """Propagate adjoints from this scalar to every reachable tensor.

        Non-scalar roots are rejected. Tensors with ``requires_grad`` that
        are not reachable from this loss keep ``grad is None``.
        """
        if self.data.size != 1:
            raise ShapeError(
                f"backward() requires a scalar loss, got shape {self.shape}"
            )
        nodes: list[Tensor] = []
        seen: set[int] = set()
        stack: list[Tensor] = [self]
        while stack:
            t = stack.pop()
            if id(t) in seen:
                continue
            seen.add(id(t))
            nodes.append(t)
            stack.extend(t._parents)
        nodes.sort(key=lambda t: t._seq, reverse=True)
        self._accumulate(np.ones_like(self.data))
        for t in nodes:
            if t._bw is not None and t.grad is not None:
                t._bw(t.grad)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


class Parameter(Tensor):
    """Named trainable leaf tensor; shape is fixed after construction."""

    __slots__ = ("name",)

    def __init__(self, name: str, data):
        super().__init__(data, requires_grad=True)
        self.name = name

    def __repr__(self) -> str:
        return f"Parameter({self.name!r}, shape={self.shape})"


def constant(data) -> Tensor:
    return Tensor(data, requires_grad=False)


def uniform_init(shape: Sequence[int], fan_in: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform draw in [-1/sqrt(fan_in), +1/sqrt(fan_in)]."""
    bound = 1.0 / np.sqrt(float(fan_in))
    return rng.uniform(-bound, bound, size=tuple(shape))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], bw) -> Tensor:
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._bw = bw
    return out


def _check_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        raise ShapeError(f"{op}: operand shapes differ, {a.shape} vs {b.shape}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix/vector product: (m,k)@(k,n), (m,k)@(k,), or (k,)@(k,n)."""
    ad, bd = a.data, b.data
    if ad.ndim == 2 and bd.ndim == 2:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: inner extents differ, {ad.shape} vs {bd.shape}")

        def bw(g):
            if a.requires_grad:
                a._accumulate(g @ bd.T)
            if b.requires_grad:
                b._accumulate(ad.T @ g)

    elif ad.ndim == 2 and bd.ndim == 1:
        if ad.shape[1] != bd.shape[0]:
            raise ShapeError(f"matmul: inner extents differ, {ad.shape} vs {bd.shape}")

        def bw(g):
            if a.requires_grad:
                a._accumulate(np.outer(g, bd))
            if b.requires_grad:
                b._accumulate(ad.T @ g)

    elif ad.ndim == 1 and bd.ndim == 2:
        if ad.shape[0] != bd.shape[0]:
            raise ShapeError(f"matmul: inner extents differ, {ad.shape} vs {bd.shape}")

        def bw(g):
            if a.requires_grad:
                a._accumulate(bd @ g)
            if b.requires_grad:
                b._accumulate(np.outer(ad, g))

    else:
        raise ShapeError(f"matmul: unsupported ranks, {ad.shape} vs {bd.shape}")
    return _make(ad @ bd, (a, b), bw)


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("add", a, b)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    return _make(a.data + b.data, (a, b), bw)


def add_colvec(m: Tensor, v: Tensor) -> Tensor:
    """Add a length-k vector to every column of a (k, n) matrix."""
    if m.data.ndim != 2 or v.data.ndim != 1 or m.shape[0] != v.shape[0]:
        raise ShapeError(f"add_colvec: incompatible shapes {m.shape} and {v.shape}")

    def bw(g):
        if m.requires_grad:
            m._accumulate(g)
        if v.requires_grad:
            v._accumulate(g.sum(axis=1))

    return _make(m.data + v.data[:, None], (m, v), bw)


def add_n(xs: Sequence[Tensor]) -> Tensor:
    """Elementwise sum of one or more same-shape tensors."""
    xs = list(xs)
    if not xs:
        raise ShapeError("add_n: empty operand list")
    for x in xs[1:]:
        _check_same_shape("add_n", xs[0], x)

    def bw(g):
        for x in xs:
            if x.requires_grad:
                x._accumulate(g)

    total = xs[0].data.copy()
    for x in xs[1:]:
        total += x.data
    return _make(total, tuple(xs), bw)


def scale(a: Tensor, c: float) -> Tensor:
    c = float(c)

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * c)

    return _make(a.data * c, (a,), bw)


def sub(a: Tensor, b: Tensor) -> Tensor:
    return add(a, scale(b, -1.0))


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _check_same_shape("hadamard", a, b)
    ad, bd = a.data, b.data

    def bw(g):
        if a.requires_grad:
            a._accumulate(g * bd)
        if b.requires_grad:
            b._accumulate(g * ad)

    return _make(ad * bd, (a, b), bw)


def sigmoid(x: Tensor) -> Tensor:
    xd = x.data
    out = np.empty_like(xd)
    pos = xd >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-xd[pos]))
    ex = np.exp(xd[~pos])
    out[~pos] = ex / (1.0 + ex)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g * out * (1.0 - out))

    return _make(out, (x,), bw)


def tanh(x: Tensor) -> Tensor:
    out = np.tanh(x.data)

    def bw(g):
        if x.requires_grad:
            x._accumulate(g * (1.0 - out * out))

    return _make(out, (x,), bw)


def softmax(x: Tensor) -> Tensor:
    """Stable softmax of a 1-D tensor (max subtraction before exp)."""
    if x.data.ndim != 1 or x.data.size == 0:
        raise ShapeError(f"softmax: need a nonempty vector, got shape {x.shape}")
    z = x.data - x.data.max()
    e = np.exp(z)
    out = e / e.sum()

    def bw(g):
        if x.requires_grad:
            x._accumulate(out * (g - np.dot(g, out)))

    return _make(out, (x,), bw)


def log_softmax(x: Tensor) -> Tensor:
    if x.data.ndim != 1 or x.data.size == 0:
        raise ShapeError(f"log_softmax: need a nonempty vector, got shape {x.shape}")
    z = x.data - x.data.max()
    lse = np.log(np.exp(z).sum())
    out = z - lse

    def bw(g):
        if x.requires_grad:
            x._accumulate(g - np.exp(out) * g.sum())

    return _make(out, (x,), bw)


def mean_pool(xs: Sequence[Tensor]) -> Tensor:
    """Arithmetic mean of a nonempty sequence of same-shape tensors."""
    xs = list(xs)
    if not xs:
        raise ShapeError("mean_pool: empty sequence")
    for x in xs[1:]:
        _check_same_shape("mean_pool", xs[0], x)
    n = len(xs)

    def bw(g):
        share = g / n
        for x in xs:
            if x.requires_grad:
                x._accumulate(share)

    total = xs[0].data.copy()
    for x in xs[1:]:
        total += x.data
    return _make(total / n, tuple(xs), bw)


def sq_euclidean(a: Tensor, b: Tensor) -> Tensor:
    """Dimension-averaged squared Euclidean distance, sum_k (a_k-b_k)^2 / d.

    The squared form is used instead of the norm so the distance stays
    differentiable at zero (perfect reconstruction).
    """
    if a.data.ndim != 1 or b.data.ndim != 1 or a.shape != b.shape:
        raise ShapeError(f"sq_euclidean: operand shapes differ, {a.shape} vs {b.shape}")
    d = a.data.size
    diff = a.data - b.data

    def bw(g):
        coeff = (2.0 / d) * float(g)
        if a.requires_grad:
            a._accumulate(coeff * diff)
        if b.requires_grad:
            b._accumulate(-coeff * diff)

    return _make(np.asarray(np.dot(diff, diff) / d), (a, b), bw)


def concat(xs: Sequence[Tensor]) -> Tensor:
    """Concatenate 1-D tensors into one vector."""
    xs = list(xs)
    if not xs:
        raise ShapeError("concat: empty operand list")
    for x in xs:
        if x.data.ndim != 1:
            raise ShapeError(f"concat: need vectors, got shape {x.shape}")
    offsets = np.cumsum([0] + [x.data.size for x in xs])

    def bw(g):
        for x, lo, hi in zip(xs, offsets[:-1], offsets[1:]):
            if x.requires_grad:
                x._accumulate(g[lo:hi])

    return _make(np.concatenate([x.data for x in xs]), tuple(xs), bw)


def narrow(x: Tensor, start: int, length: int) -> Tensor:
    """Contiguous slice x[start : start+length] of a vector."""
    if x.data.ndim != 1 or start < 0 or start + length > x.data.size:
        raise ShapeError(
            f"narrow: range [{start}, {start + length}) out of shape {x.shape}"
        )

    def bw(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[start : start + length] = g
            x._accumulate(full)

    return _make(x.data[start : start + length].copy(), (x,), bw)


def pick(x: Tensor, index: int) -> Tensor:
    """Scalar element x[index] of a vector."""
    if x.data.ndim != 1 or not (0 <= index < x.data.size):
        raise ShapeError(f"pick: index {index} out of shape {x.shape}")

    def bw(g):
        if x.requires_grad:
            full = np.zeros_like(x.data)
            full[index] = float(g)
            x._accumulate(full)

    return _make(np.asarray(x.data[index]), (x,), bw)


def row(m: Tensor, index: int) -> Tensor:
    """Row m[index, :] of a matrix (embedding lookup)."""
    if m.data.ndim != 2 or not (0 <= index < m.shape[0]):
        raise ShapeError(f"row: index {index} out of shape {m.shape}")

    def bw(g):
        if m.requires_grad:
            full = np.zeros_like(m.data)
            full[index, :] = g
            m._accumulate(full)

    return _make(m.data[index, :].copy(), (m,), bw)


def stack_rows(xs: Sequence[Tensor]) -> Tensor:
    """Stack n same-length vectors into an (n, d) matrix."""
    xs = list(xs)
    if not xs:
        raise ShapeError("stack_rows: empty sequence")
    for x in xs:
        if x.data.ndim != 1 or x.shape != xs[0].shape:
            raise ShapeError(
                f"stack_rows: inconsistent shapes {xs[0].shape} vs {x.shape}"
            )

    def bw(g):
        for i, x in enumerate(xs):
            if x.requires_grad:
                x._accumulate(g[i])

    return _make(np.stack([x.data for x in xs]), tuple(xs), bw)


def transpose2d(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose2d: need a matrix, got shape {x.shape}")

    def bw(g):
        if x.requires_grad:
            x._accumulate(g.T)

    return _make(x.data.T.copy(), (x,), bw)
