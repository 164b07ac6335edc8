"""Differentiable primitives.

Each op computes its forward value with numpy (or a fused kernel) and hands
:meth:`Tensor._from_op` a closure mapping the output gradient to one gradient
per parent. Broadcasting is undone centrally in ``Tensor.backward``.
"""

from __future__ import annotations

import math

import numpy as np

from .. import kernels
from .tensor import ShapeError, Tensor, as_tensor

_SQRT_2_OVER_PI = math.sqrt(2.0 / math.pi)


def _pair(a, b):
    a = as_tensor(a)
    b = as_tensor(b, dtype=a.dtype)
    return a, b


# -- elementwise --------------------------------------------------------------

def add(a, b):
    a, b = _pair(a, b)
    return Tensor._from_op(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a, b):
    a, b = _pair(a, b)
    return Tensor._from_op(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a, b):
    a, b = _pair(a, b)
    return Tensor._from_op(a.data * b.data, (a, b), lambda g: (g * b.data, g * a.data), "mul")


def div(a, b):
    a, b = _pair(a, b)
    out = a.data / b.data
    return Tensor._from_op(out, (a, b), lambda g: (g / b.data, -g * out / b.data), "div")


def neg(a):
    return Tensor._from_op(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, exponent: float):
    if isinstance(exponent, Tensor):
        raise TypeError("power supports scalar exponents only")
    x = a.data
    out = x ** exponent
    return Tensor._from_op(out, (a,), lambda g: (g * exponent * x ** (exponent - 1),), "pow")


def exp(a):
    out = np.exp(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    x = a.data
    return Tensor._from_op(np.log(x), (a,), lambda g: (g / x,), "log")


def sqrt(a):
    out = np.sqrt(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * 0.5 / out,), "sqrt")


def sin(a):
    x = a.data
    return Tensor._from_op(np.sin(x), (a,), lambda g: (g * np.cos(x),), "sin")


def tanh(a):
    out = np.tanh(a.data)
    return Tensor._from_op(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def sigmoid(a):
    x = a.data
    z = np.exp(-np.abs(x))
    out = np.where(x >= 0, 1.0 / (1.0 + z), z / (1.0 + z)).astype(x.dtype)
    return Tensor._from_op(out, (a,), lambda g: (g * out * (1.0 - out),), "sigmoid")


def relu(a):
    x = a.data
    mask = x > 0
    return Tensor._from_op(x * mask, (a,), lambda g: (g * mask,), "relu")


def gelu(a):
    """GELU, tanh approximation."""
    x = a.data
    inner = _SQRT_2_OVER_PI * (x + 0.044715 * x ** 3)
    t = np.tanh(inner)
    out = 0.5 * x * (1.0 + t)

    def backward(g):
        dinner = _SQRT_2_OVER_PI * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return Tensor._from_op(out, (a,), backward, "gelu")


def swish(a):
    return a * sigmoid(a)


def swiglu(gate, up):
    """Fused ``swish(gate) * up``."""
    if gate.shape != up.shape:
        raise ShapeError(f"swiglu operands differ: {gate.shape} vs {up.shape}")
    shape = gate.shape
    g2 = gate.data.reshape(-1, shape[-1])
    u2 = up.data.reshape(-1, shape[-1])
    out = kernels.swiglu_fwd(g2, u2).reshape(shape)

    def backward(g):
        dg, du = kernels.swiglu_bwd(g2, u2, np.ascontiguousarray(g).reshape(-1, shape[-1]))
        return dg.reshape(shape), du.reshape(shape)

    return Tensor._from_op(out, (gate, up), backward, "swiglu")


# -- linear algebra -----------------------------------------------------------

def matmul(a, b):
    a, b = _pair(a, b)
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    out = a.data @ b.data

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return ga, gb

    return Tensor._from_op(out, (a, b), backward, "matmul")


# -- reductions ---------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    out = np.sum(a.data, axis=axes, keepdims=keepdims)
    shape = a.shape

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return Tensor._from_op(np.asarray(out), (a,), backward, "sum")


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    n = 1
    for ax in axes:
        n *= a.shape[ax]
    return sum(a, axis=axes, keepdims=keepdims) * (1.0 / n)


def max(a, axis=None, keepdims=False):
    """Max reduction; the gradient goes to the first maximal element."""
    axes = _norm_axes(axis, a.ndim)
    x = a.data
    out = np.max(x, axis=axes, keepdims=True)
    # one-hot on the first occurrence along the flattened reduced axes
    moved = np.moveaxis(x, axes, tuple(range(x.ndim - len(axes), x.ndim)))
    flat = moved.reshape(moved.shape[: x.ndim - len(axes)] + (-1,))
    first = np.argmax(flat, axis=-1)
    onehot = np.zeros_like(flat)
    np.put_along_axis(onehot, first[..., None], 1.0, axis=-1)
    onehot = np.moveaxis(onehot.reshape(moved.shape), tuple(range(x.ndim - len(axes), x.ndim)), axes)
    result = out if keepdims else np.squeeze(out, axis=axes)

    def backward(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (onehot * g,)

    return Tensor._from_op(np.asarray(result), (a,), backward, "max")


# -- shape ----------------------------------------------------------------------

def reshape(a, shape):
    old = a.shape
    return Tensor._from_op(a.data.reshape(shape), (a,), lambda g: (g.reshape(old),), "reshape")


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return Tensor._from_op(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inv),), "transpose")


def swapaxes(a, i, j):
    axes = list(range(a.ndim))
    axes[i], axes[j] = axes[j], axes[i]
    return transpose(a, tuple(axes))


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    axis = axis % tensors[0].ndim
    sizes = [t.shape[axis] for t in tensors]
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum(sizes)[:-1]

    def backward(g):
        return tuple(np.split(g, splits, axis=axis))

    return Tensor._from_op(out, tensors, backward, "concat")


def broadcast_to(a, shape):
    return Tensor._from_op(np.broadcast_to(a.data, shape).copy(), (a,), lambda g: (g,), "broadcast")


def index(a, idx):
    """Basic or advanced indexing (slicing); scatter-adds on backward."""
    out = a.data[idx]
    shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, idx, g)
        return (full,)

    return Tensor._from_op(np.array(out), (a,), backward, "index")


def gather(a, idx, axis):
    """``take_along_axis`` with an integer index array broadcast against ``a``."""
    idx = np.asarray(idx)
    out = np.take_along_axis(a.data, idx, axis=axis)
    shape, dtype = a.shape, a.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        ax = axis % len(shape)
        grids = np.indices(idx.shape, sparse=True)
        full_idx = tuple(idx if d == ax else grids[d] for d in range(len(shape)))
        np.add.at(full, full_idx, g)
        return (full,)

    return Tensor._from_op(out, (a,), backward, "gather")


def embedding(table, ids):
    """Row lookup ``table[ids]``."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"token id out of range for table with {table.shape[0]} rows")
    out = table.data[ids]
    shape, dtype = table.shape, table.dtype

    def backward(g):
        full = np.zeros(shape, dtype=dtype)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, shape[-1]))
        return (full,)

    return Tensor._from_op(out, (table,), backward, "embedding")


# -- normalisation & attention helpers -----------------------------------------

def softmax(a, axis=-1, mask=None):
    """Softmax along ``axis``; entries where ``mask`` is False get probability 0."""
    x = np.moveaxis(a.data, axis, -1)
    moved_shape = x.shape
    x2 = np.ascontiguousarray(x).reshape(-1, moved_shape[-1])
    m2 = None
    if mask is not None:
        m = np.moveaxis(np.broadcast_to(np.asarray(mask, dtype=bool), a.shape), axis, -1)
        m2 = np.ascontiguousarray(m).reshape(-1, moved_shape[-1])
    y2 = kernels.softmax_fwd(x2, m2)
    out = np.moveaxis(y2.reshape(moved_shape), -1, axis)

    def backward(g):
        g2 = np.ascontiguousarray(np.moveaxis(g, axis, -1)).reshape(-1, moved_shape[-1])
        dx = kernels.softmax_bwd(y2, g2)
        return (np.moveaxis(dx.reshape(moved_shape), -1, axis),)

    return Tensor._from_op(out, (a,), backward, "softmax")


def log_softmax(a, axis=-1):
    x = a.data
    m = np.max(x, axis=axis, keepdims=True)
    shifted = x - m
    lse = np.log(np.sum(np.exp(shifted), axis=axis, keepdims=True))
    out = shifted - lse
    probs = np.exp(out)

    def backward(g):
        return (g - probs * np.sum(g, axis=axis, keepdims=True),)

    return Tensor._from_op(out, (a,), backward, "log_softmax")


def rmsnorm(x, scale, eps=1e-6):
    d = x.shape[-1]
    if scale.shape != (d,):
        raise ShapeError(f"rmsnorm scale {scale.shape} does not match feature dim {d}")
    shape = x.shape
    x2 = x.data.reshape(-1, d)
    y2, inv = kernels.rmsnorm_fwd(x2, scale.data, eps)

    def backward(g):
        dx, ds = kernels.rmsnorm_bwd(x2, scale.data, inv, np.ascontiguousarray(g).reshape(-1, d))
        return dx.reshape(shape), ds

    return Tensor._from_op(y2.reshape(shape), (x, scale), backward, "rmsnorm")


# -- convolutional pieces -----------------------------------------------------

def conv2d(x, w, b):
    """Stride-1 'same' 2-D convolution on NCHW input."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    out = kernels.conv2d_fwd(x.data, w.data, b.data)

    def backward(g):
        return kernels.conv2d_bwd(x.data, w.data, np.ascontiguousarray(g))

    return Tensor._from_op(out, (x, w, b), backward, "conv2d")


def upsample_bilinear(x, factor=2):
    out = kernels.upsample_fwd(x.data, factor)
    return Tensor._from_op(out, (x,), lambda g: (kernels.upsample_bwd(np.ascontiguousarray(g), factor),),
                           "upsample")


# -- losses -------------------------------------------------------------------

def mse(pred, target):
    diff = pred - target
    return mean(diff * diff)


def cross_entropy(logits, targets, weights=None):
    """Mean negative log-likelihood of integer ``targets`` under ``logits`` (last axis)."""
    logp = log_softmax(logits, axis=-1)
    picked = gather(logp, np.asarray(targets)[..., None], axis=-1)[..., 0]
    if weights is None:
        return -mean(picked)
    weights = np.asarray(weights, dtype=logits.dtype)
    return -sum(picked * weights) / float(weights.sum())


def huber(pred, target, delta=1.0):
    diff = pred - target
    d = diff.data
    absd = np.abs(d)
    quad = absd <= delta
    out = np.where(quad, 0.5 * d * d, delta * (absd - 0.5 * delta))

    def backward(g):
        return (g * np.where(quad, d, delta * np.sign(d)),)

    return mean(Tensor._from_op(out, (diff,), backward, "huber"))
