"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every primitive records its parents and a closure that maps the output
adjoint to input adjoints. ``backward`` orders the recorded graph
topologically and replays the closures in reverse.

Broadcasting is limited to leading-dimension expansion: two operands are
compatible when one shape is a suffix of the other. Anything else needs an
explicit ``reshape`` / ``broadcast_to``.
"""
from __future__ import annotations

import threading
from contextlib import contextmanager
from typing import Callable, Iterable, Sequence

import numpy as np

_state = threading.local()


class ShapeError(ValueError):
    pass


def is_grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


@contextmanager
def no_grad():
    prev = is_grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")
    __array_priority__ = 100

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.array(data, dtype=np.float64, copy=True) if not isinstance(data, np.ndarray) \
            or data.dtype != np.float64 else data
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    # -- basic introspection -------------------------------------------------
    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ShapeError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def __array__(self, dtype=None, copy=None) -> np.ndarray:
        return self.data if dtype is None else self.data.astype(dtype)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    # -- operators -------------------------------------------------------------
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

    def __rtruediv__(self, other):
        return div(as_tensor(other), self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, idx):
        return getitem(self, idx)

    # method forms used throughout the model code
    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def exp(self):
        return exp(self)

    def log(self):
        return log(self)

    def sigmoid(self):
        return sigmoid(self)

    def backward(self) -> None:
        backward(self)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(data)
    if is_grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _check_suffix(op: str, a: tuple, b: tuple) -> None:
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)
    if tuple(long_[len(long_) - len(short):]) != tuple(short):
        raise ShapeError(f"{op}: incompatible shapes {a} and {b} (only leading-dimension expansion is allowed)")


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    return g


# -- elementwise binary ----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix("add", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data + b.data, (a, b), lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix("sub", a.shape, b.shape)
    sa, sb = a.shape, b.shape
    return _make(a.data - b.data, (a, b), lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix("mul", a.shape, b.shape)
    ad, bd = a.data, b.data
    return _make(ad * bd, (a, b),
                 lambda g: (_unbroadcast(g * bd, ad.shape), _unbroadcast(g * ad, bd.shape)))


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix("div", a.shape, b.shape)
    ad, bd = a.data, b.data
    out = ad / bd

    def bw(g):
        return _unbroadcast(g / bd, ad.shape), _unbroadcast(-g * out / bd, bd.shape)
    return _make(out, (a, b), bw)


def maximum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix("maximum", a.shape, b.shape)
    pick_a = a.data >= b.data
    return _make(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def minimum(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _check_suffix("minimum", a.shape, b.shape)
    pick_a = a.data <= b.data
    return _make(np.where(pick_a, a.data, b.data), (a, b),
                 lambda g: (_unbroadcast(g * pick_a, a.shape), _unbroadcast(g * ~pick_a, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul needs operands of rank >= 2, got {a.shape} and {b.shape}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: contraction mismatch between {a.shape} and {b.shape}")
    _check_suffix("matmul", a.shape[:-2], b.shape[:-2])
    ad, bd = a.data, b.data

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2)
        gb = np.swapaxes(ad, -1, -2) @ g
        return _unbroadcast(ga, ad.shape), _unbroadcast(gb, bd.shape)
    return _make(ad @ bd, (a, b), bw)


# -- elementwise unary -------------------------------------------------------------

def exp(x) -> Tensor:
    x = as_tensor(x)
    out = np.exp(x.data)
    return _make(out, (x,), lambda g: (g * out,))


def log(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _make(np.log(xd), (x,), lambda g: (g / xd,))


def sin(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _make(np.sin(xd), (x,), lambda g: (g * np.cos(xd),))


def cos(x) -> Tensor:
    x = as_tensor(x)
    xd = x.data
    return _make(np.cos(xd), (x,), lambda g: (-g * np.sin(xd),))


def sigmoid(x) -> Tensor:
    x = as_tensor(x)
    out = _np_sigmoid(x.data)
    return _make(out, (x,), lambda g: (g * out * (1.0 - out),))


def log_sigmoid(x) -> Tensor:
    """log(sigmoid(x)) without overflow for large |x|."""
    x = as_tensor(x)
    xd = x.data
    out = -np.logaddexp(0.0, -xd)
    return _make(out, (x,), lambda g: (g * _np_sigmoid(-xd),))


def power(x, p: float) -> Tensor:
    x = as_tensor(x)
    p = float(p)
    xd = x.data
    return _make(xd ** p, (x,), lambda g: (g * p * xd ** (p - 1.0),))


def sqrt(x) -> Tensor:
    x = as_tensor(x)
    out = np.sqrt(x.data)
    return _make(out, (x,), lambda g: (g * 0.5 / out,))


def tabs(x) -> Tensor:
    x = as_tensor(x)
    sign = np.sign(x.data)
    return _make(np.abs(x.data), (x,), lambda g: (g * sign,))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(x) -> Tensor:
    # tanh approximation; smooth everywhere, which keeps finite-difference checks clean
    x = as_tensor(x)
    xd = x.data
    inner = _GELU_C * (xd + 0.044715 * xd ** 3)
    t = np.tanh(inner)
    out = 0.5 * xd * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * xd ** 2)
        return (g * (0.5 * (1.0 + t) + 0.5 * xd * (1.0 - t * t) * dinner),)
    return _make(out, (x,), bw)


def _np_sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


# -- reductions and normalisations ------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(a % ndim for a in axis)


def tsum(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    shape = x.shape

    def bw(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape).copy(),)
    return _make(x.data.sum(axis=axes, keepdims=keepdims), (x,), bw)


def mean(x, axis=None, keepdims: bool = False) -> Tensor:
    x = as_tensor(x)
    axes = _norm_axis(axis, x.ndim)
    count = int(np.prod([x.shape[a] for a in axes])) if axes else 1
    return tsum(x, axis, keepdims) * (1.0 / max(count, 1))


def softmax(x, axis: int = -1) -> Tensor:
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return _make(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def layer_norm(x, eps: float = 1e-5) -> Tensor:
    """Normalise over the last axis; affine parameters are applied by the caller."""
    x = as_tensor(x)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def bw(g):
        gm = g.mean(axis=-1, keepdims=True)
        gx = (g * xhat).mean(axis=-1, keepdims=True)
        return (inv * (g - gm - xhat * gx),)
    return _make(xhat, (x,), bw)


def l2_normalize(x, axis: int = -1, eps: float = 1e-12) -> Tensor:
    x = as_tensor(x)
    norm = np.sqrt((x.data * x.data).sum(axis=axis, keepdims=True))
    norm = np.maximum(norm, eps)
    out = x.data / norm
    return _make(out, (x,), lambda g: ((g - out * (g * out).sum(axis=axis, keepdims=True)) / norm,))


# -- shape manipulation ----------------------------------------------------------------

def reshape(x, shape) -> Tensor:
    x = as_tensor(x)
    src = x.shape
    try:
        out = x.data.reshape(shape)
    except ValueError as exc:
        raise ShapeError(f"reshape: cannot view {src} as {tuple(shape)}") from exc
    return _make(out, (x,), lambda g: (g.reshape(src),))


def transpose(x, axes=None) -> Tensor:
    x = as_tensor(x)
    if axes is None:
        axes = tuple(reversed(range(x.ndim)))
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def broadcast_to(x, shape) -> Tensor:
    x = as_tensor(x)
    shape = tuple(shape)
    src = x.shape
    try:
        out = np.broadcast_to(x.data, shape).copy()
    except ValueError as exc:
        raise ShapeError(f"broadcast_to: {src} -> {shape}") from exc

    def bw(g):
        lead = len(shape) - len(src)
        g = g.sum(axis=tuple(range(lead))) if lead else g
        axes = tuple(i for i, n in enumerate(src) if n == 1 and g.shape[i] != 1)
        return (g.sum(axis=axes, keepdims=True) if axes else g,)
    return _make(out, (x,), bw)


def concat(xs: Iterable, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    if not xs:
        raise ShapeError("concat of an empty list")
    ref = xs[0].shape
    ax = axis % len(ref)
    for x in xs[1:]:
        if len(x.shape) != len(ref) or any(x.shape[i] != ref[i] for i in range(len(ref)) if i != ax):
            raise ShapeError(f"concat: shapes {ref} and {x.shape} disagree off axis {axis}")
    sizes = [x.shape[ax] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return _make(np.concatenate([x.data for x in xs], axis=ax), tuple(xs),
                 lambda g: tuple(np.split(g, cuts, axis=ax)))


def getitem(x, idx) -> Tensor:
    x = as_tensor(x)
    shape = x.shape

    def bw(g):
        out = np.zeros(shape)
        np.add.at(out, idx, g)
        return (out,)
    return _make(x.data[idx], (x,), bw)


def take(x, indices, axis: int = 0) -> Tensor:
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.int64)
    shape = x.shape
    ax = axis % x.ndim

    def bw(g):
        out = np.zeros(shape)
        gm = np.moveaxis(g, ax, 0)
        om = np.moveaxis(out, ax, 0)
        np.add.at(om, indices, gm)
        return (out,)
    return _make(np.take(x.data, indices, axis=ax), (x,), bw)


# -- differentiation -------------------------------------------------------------------

def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor) -> None:
    """Populate ``.grad`` on every requires-grad tensor reachable from ``loss``.

    Leaf gradients accumulate across calls; intermediate gradients are
    overwritten.
    """
    if loss.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got shape {loss.shape}")
    if not loss.requires_grad:
        return
    order = _topo_order(loss)
    adj: dict[int, np.ndarray] = {id(loss): np.ones(loss.shape)}
    for node in reversed(order):
        g = adj.pop(id(node), None)
        if g is None:
            g = np.zeros(node.shape)
        if node._backward is None:
            node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        node.grad = g
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            adj[key] = adj[key] + pg if key in adj else pg
