"""Dense tensors with reverse-mode automatic differentiation.

The op set is closed: add, subtract, multiply (with numpy broadcasting),
square, relu, matmul, conv2d, maxpool2, global_avg_pool, mean, sum and a
numerically stable log-sum-exp reduction.  Every forward result is checked
for NaN/Inf and backward walks the recorded nodes in exact reverse
insertion order.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, NonFiniteError, ShapeError

_seq_counter = itertools.count()


def _check_finite(data: np.ndarray, op: str) -> np.ndarray:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"non-finite value produced by op '{op}'")
    return data


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    """Reduce a broadcasted gradient back to the original operand shape."""
    if grad.shape == shape:
        return grad
    # sum away prepended axes
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    # sum over axes that were broadcast from size 1
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


class Tensor:
    """A dense float64 array that may participate in a backward graph."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_seq", "_op")

    def __init__(self, data, requires_grad=False, _parents=(), _backward=None, _op="leaf"):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = np.zeros_like(self.data) if self.requires_grad else None
        self._parents = _parents
        self._backward = _backward
        self._seq = next(_seq_counter)
        self._op = _op

    # -- basic introspection ------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def size(self):
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ContractError(f"item() on tensor of shape {self.data.shape}")
        return float(self.data.reshape(()))

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, op={self._op})"

    def zero_grad(self):
        if self.grad is not None:
            self.grad[...] = 0.0

    def _tracked(self) -> bool:
        return self.requires_grad or self._backward is not None

    # -- operator sugar -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return subtract(self, other)

    def __rsub__(self, other):
        return subtract(other, self)

    def __mul__(self, other):
        return multiply(self, other)

    def __rmul__(self, other):
        return multiply(other, self)

    def __neg__(self):
        return multiply(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def sum(self, axis=None, keepdims=False):
        return tensor_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tensor_mean(self, axis=axis, keepdims=keepdims)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(data, op, parents, backward):
    """Build an op output; drop the tape when no parent is being tracked."""
    _check_finite(data, op)
    tracked = tuple(p for p in parents if p._tracked())
    if not tracked:
        return Tensor(data, _op=op)
    return Tensor(data, _parents=parents, _backward=backward, _op=op)


# -- elementwise ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data + b.data

    def backward(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(g, b.data.shape))

    return _make(out, "add", (a, b), backward)


def subtract(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data - b.data

    def backward(g, acc):
        acc(a, _unbroadcast(g, a.data.shape))
        acc(b, _unbroadcast(-g, b.data.shape))

    return _make(out, "subtract", (a, b), backward)


def multiply(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data * b.data

    def backward(g, acc):
        acc(a, _unbroadcast(g * b.data, a.data.shape))
        acc(b, _unbroadcast(g * a.data, b.data.shape))

    return _make(out, "multiply", (a, b), backward)


def square(a) -> Tensor:
    a = as_tensor(a)
    out = a.data * a.data

    def backward(g, acc):
        acc(a, 2.0 * a.data * g)

    return _make(out, "square", (a,), backward)


def relu(a) -> Tensor:
    a = as_tensor(a)
    out = np.maximum(a.data, 0.0)

    def backward(g, acc):
        acc(a, g * (a.data > 0.0))

    return _make(out, "relu", (a,), backward)


# -- shape ------------------------------------------------------------------

def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    out = a.data.reshape(shape)

    def backward(g, acc):
        acc(a, g.reshape(a.data.shape))

    return _make(out, "reshape", (a,), backward)


# -- reductions -------------------------------------------------------------

def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def tensor_sum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.data.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def backward(g, acc):
        if not keepdims:
            g = np.expand_dims(g, axes)
        acc(a, np.broadcast_to(g, a.data.shape).copy())

    return _make(out, "sum", (a,), backward)


def tensor_mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.data.ndim)
    count = int(np.prod([a.data.shape[ax] for ax in axes])) if a.data.ndim else 1
    out = a.data.mean(axis=axes, keepdims=keepdims)

    def backward(g, acc):
        if not keepdims:
            g = np.expand_dims(g, axes)
        acc(a, np.broadcast_to(g / count, a.data.shape).copy())

    return _make(out, "mean", (a,), backward)


def logsumexp(a, axis=-1, keepdims=False) -> Tensor:
    """Stable log(sum(exp(a))) along one axis."""
    a = as_tensor(a)
    ax = axis % a.data.ndim
    m = a.data.max(axis=ax, keepdims=True)
    shifted = np.exp(a.data - m)
    total = shifted.sum(axis=ax, keepdims=True)
    out = m + np.log(total)
    soft = shifted / total
    if not keepdims:
        out = out.squeeze(axis=ax)

    def backward(g, acc):
        if not keepdims:
            g = np.expand_dims(g, ax)
        acc(a, g * soft)

    return _make(out, "logsumexp", (a,), backward)


# -- linear algebra ---------------------------------------------------------

def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}")
    out = a.data @ b.data

    def backward(g, acc):
        acc(a, g @ b.data.T)
        acc(b, a.data.T @ g)

    return _make(out, "matmul", (a, b), backward)


# -- convolution / pooling --------------------------------------------------

def _conv_out_size(size, k, stride, pad, what):
    span = size + 2 * pad - k
    if span < 0 or span % stride != 0:
        from .errors import ConfigError

        raise ConfigError(
            f"conv2d {what} size {size} with kernel {k}, stride {stride}, pad {pad} "
            "does not produce an integer output size"
        )
    return span // stride + 1


def _im2col(xp, kh, kw, stride, ho, wo):
    b, c, _, _ = xp.shape
    cols = np.empty((b, c, kh, kw, ho, wo), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride]
    return cols.reshape(b, c * kh * kw, ho * wo)


def _col2im(cols, x_shape, kh, kw, stride, pad, ho, wo):
    b, c, h, w = x_shape
    xp = np.zeros((b, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    cols = cols.reshape(b, c, kh, kw, ho, wo)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += cols[:, :, i, j]
    if pad:
        return xp[:, :, pad : pad + h, pad : pad + w]
    return xp


def conv2d(x, kernel, stride=1, padding=0) -> Tensor:
    """Cross-correlation of an B×Cin×H×W batch with a Cout×Cin×kh×kw kernel."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.data.ndim != 4 or kernel.data.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d operands, got {x.data.shape} and {kernel.data.shape}")
    b, cin, h, w = x.data.shape
    cout, kcin, kh, kw = kernel.data.shape
    if cin != kcin:
        raise ShapeError(f"conv2d channel mismatch: input {x.data.shape}, kernel {kernel.data.shape}")
    ho = _conv_out_size(h, kh, stride, padding, "height")
    wo = _conv_out_size(w, kw, stride, padding, "width")

    xp = np.pad(x.data, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x.data
    cols = _im2col(xp, kh, kw, stride, ho, wo)  # B x (Cin*kh*kw) x (Ho*Wo)
    wmat = kernel.data.reshape(cout, -1)
    out = np.matmul(wmat, cols).reshape(b, cout, ho, wo)

    def backward(g, acc):
        gmat = g.reshape(b, cout, ho * wo)
        acc(kernel, np.matmul(gmat, cols.transpose(0, 2, 1)).sum(axis=0).reshape(kernel.data.shape))
        dcols = np.matmul(wmat.T, gmat)
        acc(x, _col2im(dcols, x.data.shape, kh, kw, stride, padding, ho, wo))

    return _make(out, "conv2d", (x, kernel), backward)


def maxpool2(x) -> Tensor:
    """2x2 max pooling with stride 2; spatial dims must be even."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"maxpool2 expects a 4-d tensor, got {x.data.shape}")
    b, c, h, w = x.data.shape
    if h % 2 or w % 2:
        raise ShapeError(f"maxpool2 needs even spatial dims, got {h}x{w}")
    windows = x.data.reshape(b, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h // 2, w // 2, 4)
    idx = windows.argmax(axis=-1)  # first max wins on ties
    out = np.take_along_axis(windows, idx[..., None], axis=-1).squeeze(-1)

    def backward(g, acc):
        dwin = np.zeros_like(windows)
        np.put_along_axis(dwin, idx[..., None], g[..., None], axis=-1)
        dx = dwin.reshape(b, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(b, c, h, w)
        acc(x, dx)

    return _make(out, "maxpool2", (x,), backward)


def global_avg_pool(x) -> Tensor:
    """B×C×H×W -> B×C spatial mean."""
    x = as_tensor(x)
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool expects a 4-d tensor, got {x.data.shape}")
    return tensor_mean(x, axis=(2, 3))


# -- backward pass ----------------------------------------------------------

def backward(loss: Tensor) -> None:
    """Populate .grad of every requires-grad tensor reachable from a scalar loss."""
    if loss.data.size != 1:
        raise ContractError(f"backward needs a scalar loss, got shape {loss.data.shape}")

    # collect the reachable subgraph
    nodes = {}
    stack = [loss]
    while stack:
        t = stack.pop()
        if id(t) in nodes:
            continue
        nodes[id(t)] = t
        stack.extend(t._parents)

    grads = {id(loss): np.ones_like(loss.data)}

    def acc(t, g):
        key = id(t)
        if key in grads:
            grads[key] = grads[key] + g
        else:
            grads[key] = np.asarray(g, dtype=np.float64)

    # exact reverse insertion order
    for t in sorted(nodes.values(), key=lambda n: n._seq, reverse=True):
        g = grads.get(id(t))
        if g is None:
            continue
        if t.requires_grad:
            t.grad += g
        if t._backward is not None:
            t._backward(g, acc)


# -- gradient checking ------------------------------------------------------

@dataclass
class GradCheckResult:
    max_rel_error: float
    skipped: list = field(default_factory=list)  # (input index, flat coordinate)


def gradient_check(fn, inputs, eps=1e-5) -> GradCheckResult:
    """Compare analytic gradients of a scalar function against central differences.

    Relative error per coordinate is |analytic - numeric| / max(1e-12,
    |analytic| + |numeric|).  Coordinates where the left and right one-sided
    differences disagree (kinks, e.g. relu at 0) are flagged and skipped.
    """
    if eps <= 0:
        raise ContractError("eps must be positive")
    inputs = list(inputs)
    for t in inputs:
        t.zero_grad()
    out = fn(*inputs)
    if not isinstance(out, Tensor) or out.data.size != 1:
        raise ContractError("gradient_check needs a scalar-valued tensor function")
    backward(out)
    analytic = [t.grad.copy() for t in inputs]
    f0 = out.item()

    def value_at():
        return fn(*inputs).item()

    result = GradCheckResult(0.0)
    for i, t in enumerate(inputs):
        flat = t.data.reshape(-1)
        an = analytic[i].reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + eps
            fp = value_at()
            flat[j] = orig - eps
            fm = value_at()
            flat[j] = orig
            left = (f0 - fm) / eps
            right = (fp - f0) / eps
            if abs(left - right) > max(1e-3, 1e-2 * (abs(left) + abs(right))):
                result.skipped.append((i, j))
                continue
            numeric = (fp - fm) / (2.0 * eps)
            rel = abs(an[j] - numeric) / max(1e-12, abs(an[j]) + abs(numeric))
            result.max_rel_error = max(result.max_rel_error, rel)
    return result
