"""Minimal reverse-mode automatic differentiation over numpy arrays."""

from __future__ import annotations

import contextlib
from typing import Callable, Sequence

import numpy as np

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    prev, _GRAD_ENABLED = _GRAD_ENABLED, False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    __slots__ = ("value", "grad", "parents", "backward_fn", "requires_grad")

    def __init__(self, value, parents: Sequence["Tensor"] = (), backward_fn: Callable | None = None,
                 requires_grad: bool = False):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        if _GRAD_ENABLED and self.requires_grad:
            self.parents = tuple(parents)
            self.backward_fn = backward_fn
        else:
            self.parents = ()
            self.backward_fn = None

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.array(g, dtype=np.float64, copy=True)
        else:
            self.grad += g

    def backward(self, grad: np.ndarray | None = None) -> None:
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node.parents:
                if id(p) not in seen:
                    stack.append((p, False))
        self._accumulate(np.ones_like(self.value) if grad is None else grad)
        for node in reversed(order):
            if node.backward_fn is not None and node.grad is not None:
                node.backward_fn(node.grad)

    # arithmetic -------------------------------------------------------------

    def __add__(self, other) -> "Tensor":
        other = as_tensor(other)
        out_val = self.value + other.value

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g, other.shape))

        return Tensor(out_val, (self, other), bw)

    __radd__ = __add__

    def __neg__(self) -> "Tensor":
        return self * -1.0

    def __sub__(self, other) -> "Tensor":
        return self + (-as_tensor(other))

    def __rsub__(self, other) -> "Tensor":
        return as_tensor(other) + (-self)

    def __mul__(self, other) -> "Tensor":
        other = as_tensor(other)

        def bw(g):
            if self.requires_grad:
                self._accumulate(_unbroadcast(g * other.value, self.shape))
            if other.requires_grad:
                other._accumulate(_unbroadcast(g * self.value, other.shape))

        return Tensor(self.value * other.value, (self, other), bw)

    __rmul__ = __mul__

    def __matmul__(self, other) -> "Tensor":
        other = as_tensor(other)

        def bw(g):
            if self.requires_grad:
                self._accumulate(g @ other.value.T)
            if other.requires_grad:
                other._accumulate(self.value.T @ g)

        return Tensor(self.value @ other.value, (self, other), bw)

    def __getitem__(self, idx) -> "Tensor":
        def bw(g):
            full = np.zeros_like(self.value)
            full[idx] += g
            self._accumulate(full)

        return Tensor(self.value[idx], (self,), bw)

    def sum(self, axis=None) -> "Tensor":
        def bw(g):
            if axis is None:
                self._accumulate(np.broadcast_to(g, self.shape))
            else:
                self._accumulate(np.broadcast_to(np.expand_dims(g, axis), self.shape))

        return Tensor(self.value.sum(axis=axis), (self,), bw)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def parameter(value: np.ndarray) -> Tensor:
    return Tensor(value, requires_grad=True)


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return Tensor(y, (x,), lambda g: x._accumulate(g * (1 - y * y)))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1 + np.tanh(0.5 * x.value))
    return Tensor(y, (x,), lambda g: x._accumulate(g * y * (1 - y)))


def log(x: Tensor) -> Tensor:
    return Tensor(np.log(x.value), (x,), lambda g: x._accumulate(g / x.value))


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    bounds = np.cumsum([0] + sizes)

    def bw(g):
        for x, lo, hi in zip(xs, bounds[:-1], bounds[1:]):
            if x.requires_grad:
                sl = [slice(None)] * g.ndim
                sl[axis] = slice(lo, hi)
                x._accumulate(g[tuple(sl)])

    return Tensor(np.concatenate([x.value for x in xs], axis=axis), xs, bw)


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]

    def bw(g):
        for i, x in enumerate(xs):
            if x.requires_grad:
                x._accumulate(np.take(g, i, axis=axis))

    return Tensor(np.stack([x.value for x in xs], axis=axis), xs, bw)


def embed(table: Tensor, ids: np.ndarray) -> Tensor:
    """Row lookup ``table[ids]``."""
    ids = np.asarray(ids)

    def bw(g):
        full = np.zeros_like(table.value)
        np.add.at(full, ids, g)
        table._accumulate(full)

    return Tensor(table.value[ids], (table,), bw)


def einsum(spec: str, a: Tensor, b: Tensor) -> Tensor:
    """Two-operand einsum; every input index must appear in the other operand or the output."""
    a, b = as_tensor(a), as_tensor(b)
    ins, out = spec.split("->")
    sa, sb = ins.split(",")

    def bw(g):
        if a.requires_grad:
            a._accumulate(np.einsum(f"{out},{sb}->{sa}", g, b.value))
        if b.requires_grad:
            b._accumulate(np.einsum(f"{out},{sa}->{sb}", g, a.value))

    return Tensor(np.einsum(spec, a.value, b.value), (a, b), bw)


def _masked(x: np.ndarray, mask: np.ndarray | None) -> np.ndarray:
    return x if mask is None else np.where(mask, x, -np.inf)


def softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Softmax over the last axis; masked-out entries get probability 0."""
    z = _masked(x.value, mask)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        x._accumulate(y * (g - (g * y).sum(axis=-1, keepdims=True)))

    return Tensor(y, (x,), bw)


def log_softmax(x: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """Log-softmax over the last axis; masked-out entries are -inf and get no gradient."""
    z = _masked(x.value, mask)
    z = z - z.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse
    p = np.exp(y)

    def bw(g):
        g = np.where(np.isfinite(y), g, 0.0)
        x._accumulate(g - p * g.sum(axis=-1, keepdims=True))

    return Tensor(y, (x,), bw)


def gather(x: Tensor, idx: np.ndarray) -> Tensor:
    """``x[b, idx[b]]`` for a 2-D ``x``."""
    rows = np.arange(x.shape[0])
    idx = np.asarray(idx)

    def bw(g):
        full = np.zeros_like(x.value)
        full[rows, idx] = g
        x._accumulate(full)

    return Tensor(x.value[rows, idx], (x,), bw)


def lstm_cell(x: Tensor, hc: Tensor, W: Tensor, b: Tensor, mask: np.ndarray | None = None) -> Tensor:
    """One LSTM step as a single node.

    ``hc`` packs ``[h : c]`` along the last axis and so does the result.  Gate
    blocks in ``W``/``b`` are ordered input, forget, output, candidate.  Rows
    where ``mask`` (shape (B, 1)) is 0 carry the previous state through.
    """
    H = hc.shape[-1] // 2
    h, c = hc.value[:, :H], hc.value[:, H:]
    xh = np.concatenate([x.value, h], axis=-1)
    a = xh @ W.value + b.value
    sig = 0.5 * (1 + np.tanh(0.5 * a[:, :3 * H]))
    i, f, o = sig[:, :H], sig[:, H:2 * H], sig[:, 2 * H:]
    g = np.tanh(a[:, 3 * H:])
    c_new = f * c + i * g
    tc = np.tanh(c_new)
    h_new = o * tc
    out = np.concatenate([h_new, c_new], axis=-1)
    if mask is not None:
        out = mask * out + (1 - mask) * hc.value

    def bw(grad):
        dh, dc = grad[:, :H], grad[:, H:]
        if mask is not None:
            keep = 1 - mask
            dh, dc = dh * mask, dc * mask
        dct = dc + dh * o * (1 - tc * tc)
        da = np.concatenate([
            dct * g * i * (1 - i),
            dct * c * f * (1 - f),
            dh * tc * o * (1 - o),
            dct * i * (1 - g * g),
        ], axis=-1)
        if W.requires_grad:
            W._accumulate(xh.T @ da)
        if b.requires_grad:
            b._accumulate(da.sum(axis=0, keepdims=True))
        dxh = da @ W.value.T
        if x.requires_grad:
            x._accumulate(dxh[:, :x.shape[-1]])
        if hc.requires_grad:
            dprev = np.concatenate([dxh[:, x.shape[-1]:], dct * f], axis=-1)
            if mask is not None:
                dprev += keep * grad
            hc._accumulate(dprev)

    return Tensor(out, (x, hc, W, b), bw)
