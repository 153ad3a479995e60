"""Tape-based reverse-mode automatic differentiation over numpy arrays.

Every op produces a new :class:`Tensor` whose node id is strictly larger than
the ids of its inputs, so a reverse sweep in descending id order is a valid
topological order of the recorded graph.
"""
from __future__ import annotations

import itertools
import threading
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

_node_ids = itertools.count()
_state = threading.local()


class ShapeError(ValueError):
    """Raised when op inputs have incompatible shapes."""


class UnknownOpError(ValueError):
    pass


class BackwardError(RuntimeError):
    pass


def grad_enabled() -> bool:
    return getattr(_state, "enabled", True)


@contextmanager
def no_grad():
    """Disable tape recording in the current thread."""
    prev = grad_enabled()
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "node_id", "op", "_parents", "_fn", "_consumed")

    def __init__(self, data, requires_grad: bool = False, op: str = "leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.node_id = next(_node_ids)
        self.op = op
        self._parents: tuple[Tensor, ...] = ()
        self._fn: Callable | None = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return slice_(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: np.ndarray, parents: Sequence[Tensor], fn: Callable, op: str) -> Tensor:
    out = Tensor(data, op=op)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._fn = fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(f"{op}: cannot broadcast shapes {a.shape} and {b.shape}") from None


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("add", a, b)
    return _make(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("sub", a, b)
    return _make(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("mul", a, b)
    return _make(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
                 "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_broadcast("div", a, b)
    out = a.data / b.data
    return _make(out, (a, b),
                 lambda g: (_unbroadcast(g / b.data, a.shape),
                            _unbroadcast(-g * out / b.data, b.shape)), "div")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _make(x.data * mask, (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _make(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(v: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * v))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _make(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def softplus(x: Tensor) -> Tensor:
    y = np.logaddexp(0.0, x.data)
    return _make(y, (x,), lambda g: (g * _sigmoid(x.data),), "softplus")


def exp(x: Tensor) -> Tensor:
    y = np.exp(x.data)
    return _make(y, (x,), lambda g: (g * y,), "exp")


def log(x: Tensor) -> Tensor:
    return _make(np.log(x.data), (x,), lambda g: (g / x.data,), "log")


def log1p(x: Tensor) -> Tensor:
    return _make(np.log1p(x.data), (x,), lambda g: (g / (1.0 + x.data),), "log1p")


def square(x: Tensor) -> Tensor:
    return _make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,), "square")


# ---------------------------------------------------------------- reductions

def softmax(x: Tensor) -> Tensor:
    """Softmax over the last axis."""
    z = x.data - x.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def fn(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, (x,), fn, "softmax")


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    y = z - lse

    def fn(g):
        return (g - np.exp(y) * g.sum(axis=-1, keepdims=True),)

    return _make(y, (x,), fn, "log_softmax")


def sum_(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    y = x.data.sum(axis=axis, keepdims=keepdims)

    def fn(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return _make(y, (x,), fn, "sum")


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        n = x.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([x.shape[a] for a in axes]))
    return mul(sum_(x, axis, keepdims), 1.0 / n)


def max_(x: Tensor, axis: int) -> Tensor:
    """Max along one axis; the gradient goes to the first maximal entry."""
    axis = axis % x.ndim
    idx = np.expand_dims(x.data.argmax(axis=axis), axis)
    y = np.take_along_axis(x.data, idx, axis=axis).squeeze(axis)

    def fn(g):
        gx = np.zeros_like(x.data)
        np.put_along_axis(gx, idx, np.expand_dims(g, axis), axis=axis)
        return (gx,)

    return _make(y, (x,), fn, "max")


# ---------------------------------------------------------------- linear algebra

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product with batch broadcasting; a 1-D operand is treated as a row/column vector."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ShapeError(f"matmul: scalar operand, got {a.shape} and {b.shape}")
    if a.ndim == 1:
        out = matmul(reshape(a, (1, -1)), b)
        return reshape(out, out.shape[:-2] + out.shape[-1:])
    if b.ndim == 1:
        return reshape(matmul(a, reshape(b, (-1, 1))), a.shape[:-1])
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: inner dims differ, {a.shape} @ {b.shape} "
                         f"({a.shape[-1]} != {b.shape[-2]})")
    try:
        y = a.data @ b.data
    except ValueError:
        raise ShapeError(f"matmul: batch dims of {a.shape} and {b.shape} do not broadcast") from None

    def fn(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape) if a.requires_grad else None
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape) if b.requires_grad else None
        return ga, gb

    return _make(y, (a, b), fn, "matmul")


_CONV_CHUNK = 2048  # rows per matmul block; keeps each block cache-resident


def _flat_padded(x: np.ndarray, kh: int, kw: int) -> np.ndarray:
    """Zero-pad each image and lay the batch out as one long (pixels, C) row.

    Every kernel tap then becomes a fixed row offset. Trailing rows keep the
    last taps' reads in bounds.
    """
    n, h, wd, c = x.shape
    ph, pw = kh // 2, kw // 2
    hp, wp = h + 2 * ph, wd + 2 * pw
    xp = np.zeros((n * hp + kh, wp, c))
    xp[:n * hp].reshape(n, hp, wp, c)[:, ph:ph + h, pw:pw + wd] = x
    return xp.reshape(-1, c)


def _chunks(span: int):
    for s in range(0, span, _CONV_CHUNK):
        yield s, min(s + _CONV_CHUNK, span)


def _im2col_blocks(xf: np.ndarray, offs: list[int], span: int):
    """Yield (start, stop, block) with block rows = flattened receptive fields.

    Blocks are rebuilt on demand instead of stored: a cache-sized buffer is
    cheaper to refill than a full im2col matrix is to stream from memory.
    """
    c = xf.shape[1]
    buf = np.empty((_CONV_CHUNK, len(offs), c))
    for s, e in _chunks(span):
        m = e - s
        for t, off in enumerate(offs):
            buf[:m, t] = xf[s + off:e + off]
        yield s, e, buf[:m].reshape(m, -1)


def conv2d(x: Tensor, w: Tensor) -> Tensor:
    """Stride-1 'same' convolution in channel-last layout.

    x: (N, H, W, C), w: (kh, kw, C, O) with odd kernel sizes. Output positions
    that land in the padding are computed along with the rest and dropped.
    """
    if x.ndim != 4 or w.ndim != 4:
        raise ShapeError(f"conv2d: expected 4-D input and kernel, got {x.shape} and {w.shape}")
    n, h, wd, c = x.shape
    kh, kw, cw, o = w.shape
    if c != cw:
        raise ShapeError(f"conv2d: input channels {c} != kernel channels {cw}")
    if kh % 2 == 0 or kw % 2 == 0:
        raise ShapeError(f"conv2d: kernel must be odd-sized, got {kh}x{kw}")
    hp, wp = h + kh - 1, wd + kw - 1
    span = n * hp * wp
    offs = [i * wp + j for i in range(kh) for j in range(kw)]
    xf = _flat_padded(x.data, kh, kw)
    w2 = w.data.reshape(-1, o)
    yf = np.empty((span, o))
    for s, e, blk in _im2col_blocks(xf, offs, span):
        np.matmul(blk, w2, out=yf[s:e])
    y = yf.reshape(n, hp, wp, o)[:, :h, :wd]

    def fn(g):
        gf = np.zeros((n, hp, wp, o))
        gf[:, :h, :wd] = g
        gf = gf.reshape(span, o)
        gw = gx = None
        if w.requires_grad:
            gw2 = np.zeros_like(w2)
            for s, e, blk in _im2col_blocks(xf, offs, span):
                gw2 += blk.T @ gf[s:e]
            gw = gw2.reshape(w.shape)
        if x.requires_grad:
            gxf = np.zeros_like(xf)
            for s, e in _chunks(span):
                gc = (gf[s:e] @ w2.T).reshape(e - s, len(offs), c)
                for t, off in enumerate(offs):
                    gxf[s + off:e + off] += gc[:, t]
            gx = gxf[:span].reshape(n, hp, wp, c)[:, kh // 2:kh // 2 + h, kw // 2:kw // 2 + wd]
        return gx, gw

    return _make(y, (x, w), fn, "conv2d")


def maxpool2d(x: Tensor, k: int = 2) -> Tensor:
    """k x k max pooling over (N, H, W, C); ties route the gradient to the first entry."""
    if x.ndim != 4 or x.shape[1] % k or x.shape[2] % k:
        raise ShapeError(f"max_pool2d: spatial dims of {x.shape} not divisible by {k}")
    views = [x.data[:, i::k, j::k] for i in range(k) for j in range(k)]
    y = views[0].copy()
    for v in views[1:]:
        np.maximum(y, v, out=y)

    def fn(g):
        gx = np.zeros_like(x.data)
        taken = np.zeros(y.shape, dtype=bool)
        for t, v in enumerate(views):
            hit = (v == y) & ~taken
            taken |= hit
            i, j = divmod(t, k)
            gx[:, i::k, j::k] = np.where(hit, g, 0.0)
        return (gx,)

    return _make(y, (x,), fn, "max_pool2d")


# ---------------------------------------------------------------- shape ops

def reshape(x: Tensor, shape) -> Tensor:
    try:
        y = x.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot reshape {x.shape} into {tuple(shape)}") from None
    return _make(y, (x,), lambda g: (g.reshape(x.shape),), "reshape")


def transpose(x: Tensor, axes: Sequence[int]) -> Tensor:
    inv = np.argsort(axes)
    return _make(x.data.transpose(axes), (x,), lambda g: (g.transpose(inv),), "transpose")


def concat(xs: Sequence[Tensor], axis: int = -1) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    try:
        y = np.concatenate([t.data for t in xs], axis=axis)
    except ValueError:
        raise ShapeError(f"concat: incompatible shapes {[t.shape for t in xs]} on axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in xs])[:-1]

    def fn(g):
        return tuple(np.split(g, bounds, axis=axis))

    return _make(y, xs, fn, "concat")


def stack(xs: Sequence[Tensor], axis: int = 0) -> Tensor:
    xs = [as_tensor(t) for t in xs]
    if len({t.shape for t in xs}) > 1:
        raise ShapeError(f"stack: shapes differ {[t.shape for t in xs]}")
    y = np.stack([t.data for t in xs], axis=axis)

    def fn(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(y, xs, fn, "stack")


def slice_(x: Tensor, index) -> Tensor:
    try:
        y = x.data[index]
    except IndexError as err:
        raise ShapeError(f"slice: {err} for shape {x.shape}") from None

    def fn(g):
        gx = np.zeros_like(x.data)
        np.add.at(gx, index, g)
        return (gx,)

    return _make(np.array(y, copy=True), (x,), fn, "slice")


def gather_rows(table: Tensor, idx: np.ndarray) -> Tensor:
    """Embedding lookup: ``table[idx]`` with scatter-add backward."""
    idx = np.asarray(idx, dtype=np.int64)
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise ShapeError(f"gather_rows: index out of range for table of {table.shape[0]} rows")
    y = table.data[idx]

    def fn(g):
        gt = np.zeros_like(table.data)
        np.add.at(gt, idx.reshape(-1), g.reshape(-1, *table.shape[1:]))
        return (gt,)

    return _make(y, (table,), fn, "gather_rows")


# ---------------------------------------------------------------- dispatch

OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "conv2d": conv2d,
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "concat": lambda *xs, axis=-1: concat(xs, axis),
    "stack": lambda *xs, axis=0: stack(xs, axis),
    "slice": slice_,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
    "softplus": softplus,
    "exp": exp,
    "log": log,
    "log1p": log1p,
    "softmax": softmax,
    "log_softmax": log_softmax,
    "sum": sum_,
    "mean": mean,
    "max": max_,
    "max_pool2d": maxpool2d,
    "reshape": reshape,
    "transpose": transpose,
}


def apply_op(kind: str, inputs: Sequence[Tensor], **kwargs) -> Tensor:
    """Apply the named op to ``inputs``; extra op arguments go in ``kwargs``."""
    try:
        op = OPS[kind]
    except KeyError:
        raise UnknownOpError(f"unknown op kind {kind!r}; known: {sorted(OPS)}") from None
    return op(*inputs, **kwargs)


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """Populate ``.grad`` on every requires-grad ancestor of a scalar ``loss``.

    Returns a map from node id to gradient for the leaf tensors reached.
    The graph is released afterwards, so a second call on the same loss fails.
    """
    if loss.size != 1:
        raise BackwardError(f"backward: loss must be scalar, got shape {loss.shape}")
    if loss._consumed:
        raise BackwardError("backward: graph already consumed; run a new forward pass first")
    if not loss.requires_grad:
        raise BackwardError("backward: loss does not depend on any requires-grad tensor")

    nodes: list[Tensor] = []
    seen: set[int] = set()
    stack_ = [loss]
    while stack_:
        node = stack_.pop()
        if node.node_id in seen:
            continue
        if node._consumed:
            raise BackwardError("backward: graph already consumed; run a new forward pass first")
        seen.add(node.node_id)
        nodes.append(node)
        stack_.extend(p for p in node._parents if p.requires_grad and p.node_id not in seen)
    nodes.sort(key=lambda t: t.node_id, reverse=True)

    pending = {loss.node_id: np.ones_like(loss.data)}
    leaves: dict[int, np.ndarray] = {}
    for node in nodes:
        g = pending.pop(node.node_id, None)
        if g is None:
            continue
        if node._fn is None:
            node.grad = g if node.grad is None else node.grad + g
            leaves[node.node_id] = node.grad
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = pending.get(parent.node_id)
            pending[parent.node_id] = pg if prev is None else prev + pg
        node._fn = None
        node._parents = ()
        node._consumed = True
    return leaves
