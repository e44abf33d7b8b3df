"""Minimal tape-based reverse-mode differentiation over NCHW arrays.

Only the operators the VQ saliency networks need are provided. Every op
builds a :class:`Tensor` whose ``_backward`` maps the output gradient to one
gradient per parent; :func:`backward` walks the graph in reverse topological
order and accumulates ``grad`` on every tensor that requires it.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np


class Tensor:
    __slots__ = ("value", "grad", "requires_grad", "_parents", "_backward", "name")

    def __init__(self, value, requires_grad: bool = False, name: str | None = None):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self):
        return self.value.shape

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, name={self.name!r}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(as_tensor(other), self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return mul(self, -1.0)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(value, parents: Sequence[Tensor], backward) -> Tensor:
    out = Tensor(value)
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward
    return out


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (undoing numpy broadcasting)."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(t) into ``t.grad`` for every upstream tensor."""
    if loss.value.size != 1:
        raise ValueError("backward() needs a scalar loss")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    grads = {id(loss): np.ones_like(loss.value)}
    for node in reversed(order):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            node.grad = g if node.grad is None else node.grad + g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            grads[key] = pg if key not in grads else grads[key] + pg


# -- elementwise ---------------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value + b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value - b.value,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _node(
        a.value * b.value,
        (a, b),
        lambda g: (_unbroadcast(g * b.value, a.shape), _unbroadcast(g * a.value, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.value / b.value
    return _node(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.value, a.shape),
            _unbroadcast(-g * out / b.value, b.shape),
        ),
    )


def square(a: Tensor) -> Tensor:
    return _node(a.value**2, (a,), lambda g: (2.0 * a.value * g,))


def sqrt(a: Tensor) -> Tensor:
    out = np.sqrt(a.value)
    return _node(out, (a,), lambda g: (g / (2.0 * out),))


def log(a: Tensor) -> Tensor:
    return _node(np.log(a.value), (a,), lambda g: (g / a.value,))


def tanh(a: Tensor) -> Tensor:
    out = np.tanh(a.value)
    return _node(out, (a,), lambda g: (g * (1.0 - out**2),))


def sigmoid(a: Tensor) -> Tensor:
    out = 0.5 * (1.0 + np.tanh(0.5 * a.value))
    return _node(out, (a,), lambda g: (g * out * (1.0 - out),))


def softplus(a: Tensor) -> Tensor:
    x = a.value
    out = np.logaddexp(0.0, x)
    sig = 0.5 * (1.0 + np.tanh(0.5 * x))
    return _node(out, (a,), lambda g: (g * sig,))


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    inside = (a.value >= lo) & (a.value <= hi)
    return _node(np.clip(a.value, lo, hi), (a,), lambda g: (g * inside,))


# -- reductions and shape ops ---------------------------------------------------


def sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, (a,), bw)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = a.value.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a: Tensor, shape) -> Tensor:
    return _node(a.value.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    inv = np.argsort(axes)
    return _node(np.transpose(a.value, axes), (a,), lambda g: (np.transpose(g, inv),))


def concat(tensors: Sequence[Tensor], axis: int) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _node(
        np.concatenate([t.value for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.value)
        full[:, start:stop] = g
        return (full,)

    return _node(a.value[:, start:stop], (a,), bw)


def pad_edge(a: Tensor, p: int) -> Tensor:
    """Replicate the border of an NCHW tensor by ``p`` pixels."""
    H, W = a.shape[2], a.shape[3]
    rows = np.clip(np.arange(-p, H + p), 0, H - 1)
    cols = np.clip(np.arange(-p, W + p), 0, W - 1)

    def bw(g):
        gr = np.zeros(g.shape[:2] + (H, g.shape[3]))
        np.add.at(gr, (slice(None), slice(None), rows), g)
        gc = np.zeros(a.shape)
        np.add.at(gc, (slice(None), slice(None), slice(None), cols), gr)
        return (gc,)

    return _node(a.value[:, :, rows][:, :, :, cols], (a,), bw)


def crop(a: Tensor, rows: slice, cols: slice) -> Tensor:
    def bw(g):
        full = np.zeros_like(a.value)
        full[:, :, rows, cols] = g
        return (full,)

    return _node(a.value[:, :, rows, cols], (a,), bw)


def upsample_nearest(a: Tensor, factor: int = 2) -> Tensor:
    out = a.value.repeat(factor, axis=2).repeat(factor, axis=3)

    def bw(g):
        n, c, h, w = a.shape
        return (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)

    return _node(out, (a,), bw)


# -- convolution ----------------------------------------------------------------


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, padding: int = 0) -> Tensor:
    """2-D cross-correlation, NCHW input and OIkk weights, zero padding."""
    x, w = as_tensor(x), as_tensor(w)
    n, c, H, W = x.shape
    o, c_w, kh, kw = w.shape
    if c != c_w:
        raise ValueError(f"conv2d channel mismatch: input {c}, weight {c_w}")
    xp = np.pad(x.value, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    if Ho <= 0 or Wo <= 0:
        raise ValueError(f"conv2d input {H}x{W} too small for kernel {kh}x{kw}")

    def window(arr, i, j):
        return arr[:, :, i : i + stride * (Ho - 1) + 1 : stride, j : j + stride * (Wo - 1) + 1 : stride]

    out = np.zeros((n, o, Ho, Wo))
    for i in range(kh):
        for j in range(kw):
            out += np.einsum("nchw,oc->nohw", window(xp, i, j), w.value[:, :, i, j], optimize=True)
    parents = [x, w]
    if b is not None:
        out += b.value.reshape(1, o, 1, 1)
        parents.append(b)

    def bw(g):
        gx = np.zeros_like(xp) if x.requires_grad else None
        gw = np.zeros_like(w.value) if w.requires_grad else None
        for i in range(kh):
            for j in range(kw):
                if gw is not None:
                    gw[:, :, i, j] = np.einsum("nohw,nchw->oc", g, window(xp, i, j), optimize=True)
                if gx is not None:
                    window(gx, i, j)[...] += np.einsum("nohw,oc->nchw", g, w.value[:, :, i, j], optimize=True)
        if gx is not None and padding:
            gx = gx[:, :, padding : padding + H, padding : padding + W]
        grads = [gx, gw]
        if b is not None:
            grads.append(g.sum(axis=(0, 2, 3)))
        return tuple(grads)

    return _node(out, parents, bw)


# -- quantization helpers ---------------------------------------------------------


def gather_rows(table: Tensor, indices: np.ndarray) -> Tensor:
    """``table[indices]`` with gradients scattered back onto the rows."""
    indices = np.asarray(indices, dtype=np.int64)

    def bw(g):
        gt = np.zeros_like(table.value)
        np.add.at(gt, indices.reshape(-1), g.reshape(-1, table.shape[1]))
        return (gt,)

    return _node(table.value[indices], (table,), bw)


def constant(value) -> Tensor:
    """A gradient-free copy of ``value``."""
    if isinstance(value, Tensor):
        value = value.value
    return Tensor(np.array(value, dtype=np.float64, copy=True))
