"""Transformer pieces: RMSNorm, SwishGLU MLP, LayerScale, masked multi-head attention."""

from __future__ import annotations

import functools
import math
from typing import Optional

import numpy as np

from .autodiff import Linear, Module, Tensor, parameter
from .autodiff import functional as F
from .errors import ConfigError, ContractError

RMS_EPS = 1e-6
LAYERSCALE_INIT = 0.1


# -- position encodings -----------------------------------------------------------

@functools.lru_cache(maxsize=64)
def _sinusoid_1d(n: int, d: int) -> np.ndarray:
    pos = np.arange(n, dtype=np.float64)[:, None]
    freq = 1.0 / 10000.0 ** (np.arange(0, d, 2, dtype=np.float64) / d)
    out = np.zeros((n, d))
    out[:, 0::2] = np.sin(pos * freq)
    out[:, 1::2] = np.cos(pos * freq)
    out.flags.writeable = False
    return out


def sinusoid_1d(length: int, d: int) -> np.ndarray:
    """(length, d) table; even columns sin, odd columns cos, geometric frequencies."""
    if d % 2:
        raise ConfigError(f"1-D sinusoid needs an even width, got {d}")
    return _sinusoid_1d(length, d)


@functools.lru_cache(maxsize=64)
def _sinusoid_2d(gh: int, gw: int, d: int) -> np.ndarray:
    rows = np.repeat(np.arange(gh), gw)
    cols = np.tile(np.arange(gw), gh)
    half = d // 2
    table_r = _sinusoid_1d(gh, half)
    table_c = _sinusoid_1d(gw, half)
    out = np.concatenate([table_r[rows], table_c[cols]], axis=1)
    out.flags.writeable = False
    return out


def sinusoid_2d(grid_h: int, grid_w: int, d: int) -> np.ndarray:
    """(grid_h * grid_w, d): row-index encoding in the first half, column-index in the second."""
    if d % 4:
        raise ConfigError(f"2-D sinusoid needs a width divisible by 4, got {d}")
    return _sinusoid_2d(grid_h, grid_w, d)


# -- layers -------------------------------------------------------------------------

def rmsnorm(x: Tensor, scale: Tensor, eps: float = RMS_EPS) -> Tensor:
    return F.rmsnorm(x, scale, eps)


class RMSNorm(Module):
    def __init__(self, d: int):
        if d < 1:
            raise ConfigError("RMSNorm width must be >= 1")
        self.scale = parameter(np.ones(d))

    def __call__(self, x: Tensor) -> Tensor:
        return F.rmsnorm(x, self.scale, RMS_EPS)


class SwishGLU(Module):
    """``W_out(swish(W_gate x) * (W_up x))``."""

    def __init__(self, rng: np.random.Generator, d: int, hidden: Optional[int] = None):
        hidden = hidden or 4 * d
        self.gate = Linear(rng, d, hidden)
        self.up = Linear(rng, d, hidden)
        self.out = Linear(rng, hidden, d)

    def __call__(self, x: Tensor) -> Tensor:
        return self.out(F.swiglu(self.gate(x), self.up(x)))


def layerscale(branch: Tensor, lam: Tensor) -> Tensor:
    return branch * lam


class LayerScale(Module):
    def __init__(self, d: int, init: float = LAYERSCALE_INIT):
        self.lam = parameter(np.full(d, init))

    def __call__(self, x: Tensor) -> Tensor:
        return x * self.lam


def check_mask(mask: np.ndarray) -> np.ndarray:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ContractError("attention mask has a query row with no permitted keys")
    return mask


class MultiHeadAttention(Module):
    """Bias-free multi-head attention; ``mask[..., q, k]`` True means q may attend to k."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int):
        if d % heads:
            raise ConfigError(f"width {d} is not divisible by {heads} heads")
        self.heads = heads
        self.query = Linear(rng, d, d, bias=False)
        self.key = Linear(rng, d, d, bias=False)
        self.value = Linear(rng, d, d, bias=False)
        self.proj = Linear(rng, d, d, bias=False)

    def _split(self, x: Tensor) -> Tensor:
        b, s, d = x.shape
        return F.transpose(F.reshape(x, (b, s, self.heads, d // self.heads)), (0, 2, 1, 3))

    def weights(self, x: Tensor, context: Optional[Tensor] = None, mask=None) -> Tensor:
        """Attention probabilities, shape (B, heads, S_q, S_kv)."""
        context = x if context is None else context
        q, k = self._split(self.query(x)), self._split(self.key(context))
        scores = F.matmul(q, F.swapaxes(k, -1, -2)) * (1.0 / math.sqrt(q.shape[-1]))
        m = None
        if mask is not None:
            m = check_mask(mask)
            if m.ndim == 3:
                m = m[:, None]
        return F.softmax(scores, axis=-1, mask=m)

    def __call__(self, x: Tensor, context: Optional[Tensor] = None, mask=None) -> Tensor:
        context = x if context is None else context
        attn = self.weights(x, context, mask)
        v = self._split(self.value(context))
        out = F.matmul(attn, v)
        b, h, s, dh = out.shape
        out = F.reshape(F.transpose(out, (0, 2, 1, 3)), (b, s, h * dh))
        return self.proj(out)


class Block(Module):
    """Pre-norm block: ``x + ls1*attn(norm1(x))``, then ``+ ls2*mlp(norm2(.))``."""

    def __init__(self, rng: np.random.Generator, d: int, heads: int, mlp_ratio: int = 4):
        self.norm1 = RMSNorm(d)
        self.attn = MultiHeadAttention(rng, d, heads)
        self.ls1 = LayerScale(d)
        self.norm2 = RMSNorm(d)
        self.mlp = SwishGLU(rng, d, mlp_ratio * d)
        self.ls2 = LayerScale(d)

    def __call__(self, x: Tensor, mask=None) -> Tensor:
        x = x + self.ls1(self.attn(self.norm1(x), mask=mask))
        return x + self.ls2(self.mlp(self.norm2(x)))
