"""Pure-numpy reference kernels.

Every kernel takes and returns plain ndarrays. Row-wise kernels expect 2-D
``(rows, features)`` inputs; callers reshape before dispatching.
"""

import numpy as np


def softmax_fwd(x, mask=None):
    if mask is not None:
        x = np.where(mask, x, -np.inf)
    m = np.max(x, axis=-1, keepdims=True)
    e = np.exp(x - m)
    return e / np.sum(e, axis=-1, keepdims=True)


def softmax_bwd(y, g):
    return y * (g - np.sum(g * y, axis=-1, keepdims=True))


def rmsnorm_fwd(x, scale, eps):
    inv = 1.0 / np.sqrt(np.mean(x * x, axis=-1, keepdims=True) + eps)
    return x * inv * scale, inv[:, 0]


def rmsnorm_bwd(x, scale, inv, g):
    inv = inv[:, None]
    gs = g * scale
    d = x.shape[-1]
    dx = inv * gs - x * (inv ** 3) * np.sum(gs * x, axis=-1, keepdims=True) / d
    dscale = np.sum(g * x * inv, axis=0)
    return dx, dscale


def _sigmoid(t):
    # split by sign so exp never overflows
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out


def swiglu_fwd(gate, up):
    return gate * _sigmoid(gate) * up


def swiglu_bwd(gate, up, g):
    s = _sigmoid(gate)
    swish = gate * s
    dgate = g * up * (s * (1.0 + gate * (1.0 - s)))
    dup = g * swish
    return dgate, dup


def _pad(x, ph, pw):
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))


def conv2d_fwd(x, w, b):
    """Stride-1 'same' convolution. x: (N, Cin, H, W); w: (Cout, Cin, kh, kw)."""
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    xp = _pad(x, kh // 2, kw // 2)
    cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    # cols: (N, Cin, H, W, kh, kw)
    out = np.einsum("nchwij,ocij->nohw", cols, w, optimize=True)
    return out + b[None, :, None, None]


def conv2d_bwd(x, w, g):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    ph, pw = kh // 2, kw // 2
    xp = _pad(x, ph, pw)
    cols = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    dw = np.einsum("nchwij,nohw->ocij", cols, g, optimize=True)
    db = g.sum(axis=(0, 2, 3))
    dxp = np.zeros_like(xp)
    for i in range(kh):
        for j in range(kw):
            dxp[:, :, i:i + h, j:j + wd] += np.einsum("nohw,oc->nchw", g, w[:, :, i, j], optimize=True)
    return dxp[:, :, ph:ph + h, pw:pw + wd], dw, db


def interp_matrix(n_in, n_out, dtype=np.float64):
    """Bilinear (half-pixel centres) interpolation weights, shape (n_out, n_in)."""
    a = np.zeros((n_out, n_in), dtype=dtype)
    scale = n_in / n_out
    for o in range(n_out):
        src = max((o + 0.5) * scale - 0.5, 0.0)
        i0 = min(int(np.floor(src)), n_in - 1)
        i1 = min(i0 + 1, n_in - 1)
        lam = src - i0
        a[o, i0] += 1.0 - lam
        a[o, i1] += lam
    return a


def upsample_fwd(x, factor):
    n, c, h, w = x.shape
    ah = interp_matrix(h, h * factor, x.dtype)
    aw = interp_matrix(w, w * factor, x.dtype)
    return np.einsum("oh,nchw,pw->ncop", ah, x, aw, optimize=True)


def upsample_bwd(g, factor):
    n, c, ho, wo = g.shape
    ah = interp_matrix(ho // factor, ho, g.dtype)
    aw = interp_matrix(wo // factor, wo, g.dtype)
    return np.einsum("oh,ncop,pw->nchw", ah, g, aw, optimize=True)
