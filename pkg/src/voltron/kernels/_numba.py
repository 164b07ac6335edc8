"""numba-compiled kernels mirroring ``_numpy`` one-for-one.

Compiled without fastmath or parallel so results are reproducible run to run.
"""

import math

import numba
import numpy as np

from . import _numpy

_jit = numba.njit(cache=True, nogil=True)


@_jit
def _softmax_rows(x, mask, use_mask):
    n, d = x.shape
    out = np.empty_like(x)
    for r in range(n):
        m = -np.inf
        for c in range(d):
            if (not use_mask or mask[r, c]) and x[r, c] > m:
                m = x[r, c]
        s = 0.0
        for c in range(d):
            if not use_mask or mask[r, c]:
                e = math.exp(x[r, c] - m)
                out[r, c] = e
                s += e
            else:
                out[r, c] = 0.0
        for c in range(d):
            out[r, c] = out[r, c] / s
    return out


def softmax_fwd(x, mask=None):
    if mask is None:
        return _softmax_rows(x, np.ones((1, 1), dtype=np.bool_), False)
    return _softmax_rows(x, np.ascontiguousarray(mask), True)


@_jit
def softmax_bwd(y, g):
    n, d = y.shape
    out = np.empty_like(y)
    for r in range(n):
        dot = 0.0
        for c in range(d):
            dot += g[r, c] * y[r, c]
        for c in range(d):
            out[r, c] = y[r, c] * (g[r, c] - dot)
    return out


@_jit
def rmsnorm_fwd(x, scale, eps):
    n, d = x.shape
    out = np.empty_like(x)
    inv = np.empty(n, dtype=x.dtype)
    for r in range(n):
        ss = 0.0
        for c in range(d):
            ss += x[r, c] * x[r, c]
        ir = 1.0 / math.sqrt(ss / d + eps)
        inv[r] = ir
        for c in range(d):
            out[r, c] = x[r, c] * ir * scale[c]
    return out, inv


@_jit
def rmsnorm_bwd(x, scale, inv, g):
    n, d = x.shape
    dx = np.empty_like(x)
    dscale = np.zeros(d, dtype=x.dtype)
    for r in range(n):
        ir = inv[r]
        dot = 0.0
        for c in range(d):
            dot += g[r, c] * scale[c] * x[r, c]
        k = ir * ir * ir * dot / d
        for c in range(d):
            dx[r, c] = ir * g[r, c] * scale[c] - x[r, c] * k
            dscale[c] += g[r, c] * x[r, c] * ir
    return dx, dscale


@_jit
def _sig(t):
    if t >= 0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


@_jit
def swiglu_fwd(gate, up):
    n, d = gate.shape
    out = np.empty_like(gate)
    for r in range(n):
        for c in range(d):
            t = gate[r, c]
            out[r, c] = t * _sig(t) * up[r, c]
    return out


@_jit
def swiglu_bwd(gate, up, g):
    n, d = gate.shape
    dgate = np.empty_like(gate)
    dup = np.empty_like(gate)
    for r in range(n):
        for c in range(d):
            t = gate[r, c]
            s = _sig(t)
            dgate[r, c] = g[r, c] * up[r, c] * (s * (1.0 + t * (1.0 - s)))
            dup[r, c] = g[r, c] * t * s
    return dgate, dup


@_jit
def _im2col(x, kh, kw):
    # rows (n, i, j), columns (c, di, dj); zero 'same' padding
    n, cin, h, wd = x.shape
    ph = kh // 2
    pw = kw // 2
    cols = np.zeros((n * h * wd, cin * kh * kw), dtype=x.dtype)
    for b_ in range(n):
        for i in range(h):
            for j in range(wd):
                r = (b_ * h + i) * wd + j
                for c in range(cin):
                    for di in range(kh):
                        ii = i + di - ph
                        if ii < 0 or ii >= h:
                            continue
                        for dj in range(kw):
                            jj = j + dj - pw
                            if jj < 0 or jj >= wd:
                                continue
                            cols[r, (c * kh + di) * kw + dj] = x[b_, c, ii, jj]
    return cols


@_jit
def _col2im(cols, n, cin, h, wd, kh, kw):
    ph = kh // 2
    pw = kw // 2
    dx = np.zeros((n, cin, h, wd), dtype=cols.dtype)
    for b_ in range(n):
        for i in range(h):
            for j in range(wd):
                r = (b_ * h + i) * wd + j
                for c in range(cin):
                    for di in range(kh):
                        ii = i + di - ph
                        if ii < 0 or ii >= h:
                            continue
                        for dj in range(kw):
                            jj = j + dj - pw
                            if jj < 0 or jj >= wd:
                                continue
                            dx[b_, c, ii, jj] += cols[r, (c * kh + di) * kw + dj]
    return dx


def conv2d_fwd(x, w, b):
    # the gather runs in numba; the contraction goes to BLAS
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    cols = _im2col(np.ascontiguousarray(x), kh, kw)
    out = cols @ w.reshape(cout, -1).T + b[None, :]
    return np.ascontiguousarray(out.reshape(n, h, wd, cout).transpose(0, 3, 1, 2))


def conv2d_bwd(x, w, g):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    cols = _im2col(np.ascontiguousarray(x), kh, kw)
    g2 = np.ascontiguousarray(g.transpose(0, 2, 3, 1)).reshape(-1, cout)
    dw = (g2.T @ cols).reshape(w.shape)
    db = g2.sum(axis=0)
    dx = _col2im(np.ascontiguousarray(g2 @ w.reshape(cout, -1)), n, cin, h, wd, kh, kw)
    return dx, dw, db


# Bilinear upsampling is a pair of small dense contractions; BLAS via einsum
# beats a compiled loop here (see benchmarks/bench_kernels.py), so reuse it.
upsample_fwd = _numpy.upsample_fwd
upsample_bwd = _numpy.upsample_bwd
