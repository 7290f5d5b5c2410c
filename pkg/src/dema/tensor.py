"""Dense-tensor substrate: numpy storage, reverse-mode autodiff, real FFT.

Values live in numpy arrays (float64 by default). Every differentiable op
records a closure that maps the output gradient to parent gradients; the
graph is only built while gradient tracking is enabled and at least one
operand requires a gradient, so inference runs at plain-numpy cost.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DimensionError, NumericError

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False, dtype=np.float64):
        self.data = np.asarray(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # -- operator sugar -------------------------------------------------
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

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, p):
        return power(self, p)

    def __getitem__(self, key):
        return getitem(self, key)

    def reshape(self, *shape):
        return reshape(self, shape if len(shape) > 1 else shape[0])

    def transpose(self, axes):
        return transpose(self, axes)

    def swapaxes(self, a, b):
        return swapaxes(self, a, b)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis=axis, keepdims=keepdims)

    def backward(self):
        backward(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, backward_fn) -> Tensor:
    """Create an op output; record the graph only when it can matter."""
    req = _grad_enabled and any(p.requires_grad for p in parents)
    out = Tensor(data)
    if req:
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad, shape):
    """Reduce a broadcast gradient back to the operand's shape."""
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


# ----------------------------------------------------------------------
# arithmetic
# ----------------------------------------------------------------------

def add(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _make(data, (a, b), bwd)


def sub(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _make(data, (a, b), bwd)


def neg(a):
    a = _wrap(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def mul(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _make(data, (a, b), bwd)


def div(a, b):
    a, b = _wrap(a), _wrap(b)
    data = a.data / b.data

    def bwd(g):
        ga = _unbroadcast(g / b.data, a.shape)
        gb = _unbroadcast(-g * a.data / (b.data * b.data), b.shape)
        return ga, gb

    return _make(data, (a, b), bwd)


def power(a, p):
    a = _wrap(a)
    p = float(p)
    data = a.data ** p

    def bwd(g):
        return (g * p * a.data ** (p - 1.0),)

    return _make(data, (a,), bwd)


def matmul(a, b):
    """Batched matrix product over the last two axes."""
    a, b = _wrap(a), _wrap(b)
    if a.ndim < 2 or b.ndim < 2:
        raise DimensionError("matmul operands must be at least 2-D")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(
            f"matmul inner extents differ: {a.shape} @ {b.shape}"
        )
    data = a.data @ b.data

    def bwd(g):
        ga = _unbroadcast(g @ np.swapaxes(b.data, -1, -2), a.shape)
        gb = _unbroadcast(np.swapaxes(a.data, -1, -2) @ g, b.shape)
        return ga, gb

    return _make(data, (a, b), bwd)


# ----------------------------------------------------------------------
# elementwise nonlinearities
# ----------------------------------------------------------------------

def texp(a):
    a = _wrap(a)
    data = np.exp(a.data)
    return _make(data, (a,), lambda g: (g * data,))


def tlog(a):
    a = _wrap(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def tsqrt(a):
    a = _wrap(a)
    data = np.sqrt(a.data)
    return _make(data, (a,), lambda g: (g * 0.5 / data,))


def relu(a):
    a = _wrap(a)
    mask = a.data > 0

    def bwd(g):
        return (g * mask,)

    return _make(np.where(mask, a.data, 0.0), (a,), bwd)


def sigmoid(a):
    a = _wrap(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericError("sigmoid: non-finite input")
    data = 1.0 / (1.0 + np.exp(-np.abs(a.data)))
    data = np.where(a.data >= 0, data, 1.0 - data)

    def bwd(g):
        return (g * data * (1.0 - data),)

    return _make(data, (a,), bwd)


def softplus(a):
    a = _wrap(a)
    if not np.all(np.isfinite(a.data)):
        raise NumericError("softplus: non-finite input")
    data = np.logaddexp(0.0, a.data)

    def bwd(g):
        return (g / (1.0 + np.exp(-a.data)),)

    return _make(data, (a,), bwd)


def tanh(a):
    a = _wrap(a)
    data = np.tanh(a.data)
    return _make(data, (a,), lambda g: (g * (1.0 - data * data),))


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a):
    """tanh-approximate GELU with its exact derivative."""
    a = _wrap(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    data = 0.5 * x * (1.0 + t)

    def bwd(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x ** 2)
        d = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
        return (g * d,)

    return _make(data, (a,), bwd)


def maximum(a, b):
    a, b = _wrap(a), _wrap(b)
    data = np.maximum(a.data, b.data)
    mask = a.data >= b.data

    def bwd(g):
        ga = _unbroadcast(g * mask, a.shape)
        gb = _unbroadcast(g * (~mask), b.shape)
        return ga, gb

    return _make(data, (a, b), bwd)


# ----------------------------------------------------------------------
# reductions and structure
# ----------------------------------------------------------------------

def tsum(a, axis=None, keepdims=False):
    a = _wrap(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        if not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(data, (a,), bwd)


def tmean(a, axis=None, keepdims=False):
    a = _wrap(a)
    n = a.data.size if axis is None else a.shape[axis]
    return mul(tsum(a, axis=axis, keepdims=keepdims), 1.0 / n)


def reshape(a, shape):
    a = _wrap(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def transpose(a, axes):
    a = _wrap(a)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),))


def swapaxes(a, ax1, ax2):
    a = _wrap(a)
    return _make(
        np.swapaxes(a.data, ax1, ax2), (a,), lambda g: (np.swapaxes(g, ax1, ax2),)
    )


def getitem(a, key):
    a = _wrap(a)

    def bwd(g):
        buf = np.zeros(a.shape)
        buf[key] += g
        return (buf,)

    return _make(a.data[key], (a,), bwd)


def concat(tensors, axis=0):
    tensors = [_wrap(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    data = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _make(data, tensors, bwd)


def cumsum(a, axis):
    a = _wrap(a)
    data = np.cumsum(a.data, axis=axis)

    def bwd(g):
        return (np.flip(np.cumsum(np.flip(g, axis), axis=axis), axis),)

    return _make(data, (a,), bwd)


def zeros(shape):
    return Tensor(np.zeros(shape))


def pad_last2(a, axis, amount):
    """Zero-pad `amount` trailing entries along `axis` (negative index)."""
    if amount == 0:
        return _wrap(a)
    a = _wrap(a)
    shape = list(a.shape)
    shape[axis] = amount
    return concat([a, zeros(shape)], axis=axis)


# ----------------------------------------------------------------------
# composite ops named by the module contract
# ----------------------------------------------------------------------

def layer_norm(x, gamma=None, beta=None, eps=1e-5):
    """Normalize over the last axis; optional affine parameters."""
    if eps <= 0:
        raise ContractError("layer_norm eps must be positive")
    x = _wrap(x)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("layer_norm: non-finite input")
    mu = tmean(x, axis=-1, keepdims=True)
    xc = sub(x, mu)
    var = tmean(mul(xc, xc), axis=-1, keepdims=True)
    y = div(xc, tsqrt(add(var, eps)))
    if gamma is not None:
        y = mul(y, gamma)
    if beta is not None:
        y = add(y, beta)
    return y


def conv1d(x, kernel, padding="same"):
    """Depthwise 1-D convolution along the second-to-last axis.

    x: [..., L, C]; kernel: [K, C]. "same" keeps the token count with
    symmetric zero padding, "causal" pads on the left only so position l
    never sees positions > l.
    """
    x = _wrap(x)
    kernel = _wrap(kernel)
    if not np.all(np.isfinite(x.data)):
        raise NumericError("conv1d: non-finite input")
    K = kernel.shape[0]
    L = x.shape[-2]
    if padding == "causal":
        lpad, rpad = K - 1, 0
    elif padding == "same":
        lpad = (K - 1) // 2
        rpad = K - 1 - lpad
    else:
        raise ContractError(f"unknown conv1d padding: {padding!r}")
    shape_l = list(x.shape)
    shape_l[-2] = lpad
    shape_r = list(x.shape)
    shape_r[-2] = rpad
    parts = []
    if lpad:
        parts.append(zeros(shape_l))
    parts.append(x)
    if rpad:
        parts.append(zeros(shape_r))
    xp = concat(parts, axis=-2) if len(parts) > 1 else x
    out = None
    for k in range(K):
        term = mul(getitem(xp, (Ellipsis, slice(k, k + L), slice(None))),
                   getitem(kernel, k))
        out = term if out is None else add(out, term)
    return out


def softmax(x, axis=-1):
    x = _wrap(x)
    shifted = sub(x, x.data.max(axis=axis, keepdims=True))
    e = texp(shifted)
    return div(e, tsum(e, axis=axis, keepdims=True))


def norm_last(x, keepdims=True):
    """Euclidean norm over the last axis."""
    return tsqrt(tsum(mul(x, x), axis=-1, keepdims=keepdims))


# ----------------------------------------------------------------------
# reverse-mode driver
# ----------------------------------------------------------------------

def backward(loss: Tensor):
    """Accumulate gradients of a scalar loss into every reachable tensor."""
    if not isinstance(loss, Tensor):
        raise ContractError("backward expects a Tensor")
    if loss.data.size != 1:
        raise ContractError("backward expects a scalar loss")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is None or node.grad is None:
            continue
        grads = node._backward(node.grad)
        for p, g in zip(node._parents, grads):
            if not p.requires_grad or g is None:
                continue
            p.grad = g.copy() if p.grad is None else p.grad + g


# ----------------------------------------------------------------------
# real FFT
# ----------------------------------------------------------------------

@dataclass
class ComplexSpectrum:
    """Half spectrum of a real series: indices 0..floor(T/2)."""

    length: int
    coeffs: np.ndarray  # complex128, shape [..., floor(T/2)+1]

    @property
    def n_bins(self) -> int:
        return self.length // 2 + 1


def rfft(x) -> ComplexSpectrum:
    """Unnormalized forward real FFT along the last axis."""
    x = np.asarray(x, dtype=np.float64)
    T = x.shape[-1]
    if T == 0:
        raise DimensionError("rfft: empty input")
    if T < 2:
        raise ContractError("rfft requires length >= 2")
    return ComplexSpectrum(length=T, coeffs=np.fft.rfft(x, axis=-1))


def irfft(spectrum: ComplexSpectrum, T: int | None = None) -> np.ndarray:
    """Inverse of :func:`rfft`, scaled by 1/T."""
    T = spectrum.length if T is None else T
    if T == 0:
        raise DimensionError("irfft: empty output length")
    return np.fft.irfft(spectrum.coeffs, n=T, axis=-1)
