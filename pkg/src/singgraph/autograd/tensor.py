"""Dense float64 tensors with define-by-run reverse-mode differentiation.

Every differentiable op builds its output with ``_make(data, parents, backward)``
where ``backward(g)`` returns one gradient (or ``None``) per parent.
"""
from __future__ import annotations

import contextlib
import contextvars
from typing import Callable, Optional, Sequence

import numpy as np

from ..errors import NumericError, ShapeError, TapeConsumedError

_grad_enabled = contextvars.ContextVar("grad_enabled", default=True)
_debug = contextvars.ContextVar("debug_numerics", default=False)
_monitor = contextvars.ContextVar("kink_monitor", default=None)
_dtype = contextvars.ContextVar("compute_dtype", default=np.float64)


@contextlib.contextmanager
def no_grad():
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


@contextlib.contextmanager
def compute_precision(dtype):
    """Evaluate ops in another float type (used by the finite-difference oracle)."""
    token = _dtype.set(dtype)
    try:
        yield
    finally:
        _dtype.reset(token)


@contextlib.contextmanager
def debug_numerics(enabled: bool = True):
    """Raise NumericError as soon as any op produces NaN/Inf."""
    token = _debug.set(enabled)
    try:
        yield
    finally:
        _debug.reset(token)


class KinkMonitor:
    """Collects near-ties at non-differentiable points (max, relu kinks, top-k)."""

    def __init__(self, tol: float):
        self.tol = tol
        self.hits = []

    def report(self, op: str, gap: float):
        if gap < self.tol:
            self.hits.append((op, gap))


@contextlib.contextmanager
def watch_kinks(tol: float):
    mon = KinkMonitor(tol)
    token = _monitor.set(mon)
    try:
        yield mon
    finally:
        _monitor.reset(token)


def _report_kink(op: str, gap) -> None:
    mon = _monitor.get()
    if mon is not None:
        gap = float(np.min(gap)) if np.size(gap) else np.inf
        mon.report(op, gap)


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for i, s in enumerate(shape):
        if s == 1 and g.shape[i] != 1:
            g = g.sum(axis=i, keepdims=True)
    return g


def _shape_err(op, *arrays):
    shapes = " and ".join(str(tuple(a.shape)) for a in arrays)
    return ShapeError(f"{op}: incompatible shapes {shapes}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_op", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.array(data, dtype=_dtype.get())
        self.grad: Optional[np.ndarray] = None
        self.requires_grad = requires_grad
        self._parents: tuple = ()
        self._backward: Optional[Callable] = None
        self._op = "leaf"
        self._consumed = False

    # -- basic protocol
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def T(self):
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self._op}, requires_grad={self.requires_grad})"

    # -- operators
    def __add__(self, o): return add(self, o)
    def __radd__(self, o): return add(o, self)
    def __sub__(self, o): return sub(self, o)
    def __rsub__(self, o): return sub(o, self)
    def __mul__(self, o): return mul(self, o)
    def __rmul__(self, o): return mul(o, self)
    def __truediv__(self, o): return div(self, o)
    def __rtruediv__(self, o): return div(o, self)
    def __neg__(self): return mul(self, -1.0)
    def __matmul__(self, o): return matmul(self, o)
    def __pow__(self, p): return power(self, p)
    def __getitem__(self, key): return getitem(self, key)

    def sum(self, axis=None, keepdims=False): return sum_(self, axis, keepdims)
    def mean(self, axis=None, keepdims=False): return mean(self, axis, keepdims)
    def max(self, axis=None, keepdims=False): return max_(self, axis, keepdims)
    def reshape(self, *shape): return reshape(self, shape[0] if len(shape) == 1 else shape)
    def transpose(self, *axes): return transpose(self, axes or None)
    def exp(self): return exp(self)
    def log(self): return log(self)

    # -- backprop
    def backward(self, grad: Optional[np.ndarray] = None) -> None:
        if self._consumed:
            raise TapeConsumedError("backward() already ran through this graph; rebuild it with a new forward pass")
        if grad is None:
            if self.data.size != 1:
                raise ShapeError(f"backward: loss must be scalar, got shape {self.shape}")
            grad = np.ones_like(self.data)
        order = []
        seen = set()
        stack = [(self, False)]
        while stack:
            node, done = stack.pop()
            if done:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if p is not None and id(p) not in seen:
                    stack.append((p, False))
        grads = {id(self): grad}
        for node in reversed(order):
            g = grads.pop(id(node), None)
            if node._consumed:
                raise TapeConsumedError("backward() reached an already consumed node")
            if node._backward is None:
                if node.requires_grad and g is not None:
                    node.grad = g.copy() if node.grad is None else node.grad + g
                continue
            if g is not None:
                for p, pg in zip(node._parents, node._backward(g)):
                    if p is None or pg is None:
                        continue
                    if id(p) in grads:
                        grads[id(p)] = grads[id(p)] + pg
                    else:
                        grads[id(p)] = pg
            node._consumed = True
            node._backward = None
            node._parents = ()


def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _needs_grad(parents) -> bool:
    if not _grad_enabled.get():
        return False
    if any(p is not None and p._consumed for p in parents):
        raise TapeConsumedError("an input of this op belongs to a graph that backward() already consumed")
    return any(
        p is not None and (p.requires_grad or p._backward is not None) for p in parents)


def _make(data: np.ndarray, parents: Sequence[Tensor], backward: Callable, op: str) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = np.asarray(data, dtype=_dtype.get())
    out.grad = None
    out.requires_grad = False
    out._consumed = False
    out._op = op
    if _debug.get() and not np.all(np.isfinite(data)):
        raise NumericError(f"{op}: produced non-finite values")
    if _needs_grad(parents):
        out._parents = tuple(parents)
        out._backward = backward
    else:
        out._parents = ()
        out._backward = None
    return out


# ------------------------------------------------------------ elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise _shape_err("add", a, b) from None
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)), "add")


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data - b.data
    except ValueError:
        raise _shape_err("sub", a, b) from None
    return _make(data, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)), "sub")


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise _shape_err("mul", a, b) from None
    return _make(data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)), "mul")


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data / b.data
    except ValueError:
        raise _shape_err("div", a, b) from None
    return _make(data, (a, b), lambda g: (
        _unbroadcast(g / b.data, a.shape),
        _unbroadcast(-g * a.data / (b.data * b.data), b.shape)), "div")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data ** p, (a,), lambda g: (g * p * a.data ** (p - 1),), "pow")


def maximum(a, b) -> Tensor:
    """Elementwise max; on ties the whole gradient goes to ``a``."""
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = np.maximum(a.data, b.data)
    except ValueError:
        raise _shape_err("maximum", a, b) from None
    _report_kink("maximum", np.abs(a.data - b.data))
    first = a.data >= b.data
    return _make(data, (a, b), lambda g: (
        _unbroadcast(np.where(first, g, 0.0), a.shape),
        _unbroadcast(np.where(first, 0.0, g), b.shape)), "maximum")


def exp(a) -> Tensor:
    a = as_tensor(a)
    y = np.exp(a.data)
    return _make(y, (a,), lambda g: (g * y,), "exp")


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    y = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(y, (a,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _make(y, (a,), lambda g: (g * (1.0 - y * y),), "tanh")


def leaky_relu(a, slope: float = 0.01) -> Tensor:
    a = as_tensor(a)
    _report_kink("leaky_relu", np.abs(a.data))
    pos = a.data > 0
    return _make(np.where(pos, a.data, slope * a.data), (a,),
                 lambda g: (np.where(pos, g, slope * g),), "leaky_relu")


_SELU_ALPHA = 1.6732632423543772848170429916717
_SELU_SCALE = 1.0507009873554804934193349852946


def selu(a) -> Tensor:
    a = as_tensor(a)
    _report_kink("selu", np.abs(a.data))
    pos = a.data > 0
    ex = _SELU_ALPHA * np.exp(np.minimum(a.data, 0.0))
    y = _SELU_SCALE * np.where(pos, a.data, ex - _SELU_ALPHA)
    return _make(y, (a,), lambda g: (g * _SELU_SCALE * np.where(pos, 1.0, ex),), "selu")


# ------------------------------------------------------------ linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError(f"matmul: operands must be at least 2-D, got {a.shape} and {b.shape}")
    try:
        data = a.data @ b.data
    except ValueError:
        raise _shape_err("matmul", a, b) from None

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)
    return _make(data, (a, b), back, "matmul")


# ------------------------------------------------------------ reductions


def _norm_axis(axis, ndim):
    if axis is None:
        return None
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def _expand(g, shape, axis, keepdims):
    if axis is None:
        return np.broadcast_to(np.reshape(g, (1,) * len(shape)), shape)
    if not keepdims:
        g = np.expand_dims(g, axis)
    return np.broadcast_to(g, shape)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    return _make(a.data.sum(axis=ax, keepdims=keepdims), (a,),
                 lambda g: (np.array(_expand(g, a.shape, ax, keepdims)),), "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    ax = _norm_axis(axis, a.ndim)
    n = a.data.size if ax is None else int(np.prod([a.shape[i] for i in ax]))
    return _make(a.data.mean(axis=ax, keepdims=keepdims), (a,),
                 lambda g: (np.array(_expand(g, a.shape, ax, keepdims)) / n,), "mean")


def max_(a, axis=None, keepdims=False) -> Tensor:
    """Max reduction; records the first argmax so ties send gradient to the lowest index."""
    a = as_tensor(a)
    if axis is None:
        flat = a.data.reshape(-1)
        idx = int(np.argmax(flat))
        if flat.size > 1:
            _report_kink("max", flat[idx] - np.partition(flat, -2)[-2])

        def back(g):
            out = np.zeros(flat.size)
            out[idx] = float(np.sum(g))
            return (out.reshape(a.shape),)
        y = flat[idx]
        return _make(np.array(y if not keepdims else np.full((1,) * a.ndim, y)), (a,), back, "max")
    ax = axis % a.ndim
    idx = np.argmax(a.data, axis=ax)
    idx_k = np.expand_dims(idx, ax)
    y = np.take_along_axis(a.data, idx_k, axis=ax)
    if a.shape[ax] > 1:
        top2 = -np.partition(-a.data, 1, axis=ax)
        _report_kink("max", np.take(top2, 0, axis=ax) - np.take(top2, 1, axis=ax))

    def back(g):
        out = np.zeros_like(a.data)
        gk = g if keepdims else np.expand_dims(g, ax)
        np.put_along_axis(out, idx_k, gk, axis=ax)
        return (out,)
    return _make(y if keepdims else np.squeeze(y, ax), (a,), back, "max")


def softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)
    return _make(y, (a,), lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),), "softmax")


def log_softmax(a, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data - a.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return _make(y, (a,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),), "log_softmax")


# ------------------------------------------------------------ shape ops


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        data = a.data.reshape(shape)
    except ValueError:
        raise ShapeError(f"reshape: cannot view {a.shape} as {tuple(shape)}") from None
    return _make(data, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes=None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim))[::-1]
    inv = np.argsort(axes)
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def getitem(a, key) -> Tensor:
    a = as_tensor(a)
    data = a.data[key]

    def back(g):
        out = np.zeros_like(a.data)
        np.add.at(out, key, g)
        return (out,)
    return _make(np.array(data), (a,), back, "slice")


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        raise _shape_err("concat", *ts) from None
    bounds = np.cumsum([t.shape[axis] for t in ts])[:-1]
    return _make(data, ts, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


def take_along(a, idx: np.ndarray, axis: int) -> Tensor:
    """Gather ``a`` along ``axis`` with integer indices broadcast like np.take_along_axis."""
    a = as_tensor(a)
    data = np.take_along_axis(a.data, idx, axis=axis)

    def back(g):
        out = np.zeros_like(a.data)
        grid = list(np.indices(g.shape, sparse=True))
        grid[axis % a.ndim] = np.broadcast_to(idx, g.shape)
        np.add.at(out, tuple(grid), g)
        return (out,)
    return _make(data, (a,), back, "take_along")


# ------------------------------------------------------------ conv / norm


def conv1d(x, w, bias=None, stride: int = 1, padding: int = 0) -> Tensor:
    """x: (N, Cin, L), w: (Cout, Cin, K) -> (N, Cout, Lout)."""
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[1] != w.shape[1]:
        raise _shape_err("conv1d", x, w)
    n, cin, length = x.shape
    cout, _, k = w.shape
    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding))) if padding else x.data
    lp = xp.shape[2]
    if lp < k:
        raise ShapeError(f"conv1d: input length {length} (+pad) shorter than kernel {k}")
    lout = (lp - k) // stride + 1
    cols = np.lib.stride_tricks.sliding_window_view(xp, k, axis=2)[:, :, : (lout - 1) * stride + 1: stride]
    # cols: (N, Cin, Lout, K)
    y = np.einsum("nclk,ock->nol", cols, w.data, optimize=True)
    parents = [x, w]
    if bias is not None:
        bias = as_tensor(bias)
        y = y + bias.data[None, :, None]
        parents.append(bias)

    def back(g):
        gw = np.einsum("nol,nclk->ock", g, cols, optimize=True)
        gcols = np.einsum("nol,ock->nclk", g, w.data, optimize=True)
        gxp = np.zeros_like(xp)
        for j in range(k):
            gxp[:, :, j: j + (lout - 1) * stride + 1: stride] += gcols[:, :, :, j]
        gx = gxp[:, :, padding: padding + length] if padding else gxp
        out = [gx, gw]
        if bias is not None:
            out.append(g.sum(axis=(0, 2)))
        return tuple(out)
    return _make(y, parents, back, "conv1d")


def batchnorm1d(x, gamma, beta, running_mean: np.ndarray, running_var: np.ndarray,
                training: bool, momentum: float = 0.1, eps: float = 1e-5) -> Tensor:
    """Normalise over every axis except 1 (channels). Input (N, C) or (N, C, L).

    In training mode the running statistics arrays are updated in place.
    """
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    axes = (0,) + tuple(range(2, x.ndim))
    bshape = (1, -1) + (1,) * (x.ndim - 2)
    if x.shape[1] != gamma.shape[0]:
        raise _shape_err("batchnorm1d", x, gamma)
    gm = gamma.data.reshape(bshape)
    if not training:
        scale = gm / np.sqrt(running_var.reshape(bshape) + eps)
        y = (x.data - running_mean.reshape(bshape)) * scale + beta.data.reshape(bshape)
        xhat = (x.data - running_mean.reshape(bshape)) / np.sqrt(running_var.reshape(bshape) + eps)

        def back_eval(g):
            return (g * scale, (g * xhat).sum(axis=axes), g.sum(axis=axes))
        return _make(y, (x, gamma, beta), back_eval, "batchnorm1d")
    m = x.data.size // x.shape[1]
    mu = x.data.mean(axis=axes, keepdims=True)
    var = x.data.var(axis=axes, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu) * inv
    y = xhat * gm + beta.data.reshape(bshape)
    running_mean *= 1.0 - momentum
    running_mean += momentum * mu.reshape(-1)
    running_var *= 1.0 - momentum
    running_var += momentum * var.reshape(-1) * (m / max(m - 1, 1))

    def back(g):
        gx_hat = g * gm
        gx = inv * (gx_hat - gx_hat.mean(axis=axes, keepdims=True)
                    - xhat * (gx_hat * xhat).mean(axis=axes, keepdims=True))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)
    return _make(y, (x, gamma, beta), back, "batchnorm1d")
