"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The backend is chosen once at import from ``VOLTRON_KERNELS`` (``numba`` or
``numpy``). When unset, numba is used if it imports cleanly. Both backends
are deterministic; they agree to rounding, not bit-for-bit, so a run is only
reproducible under a fixed backend.
"""

import os

from . import _numpy

_requested = os.environ.get("VOLTRON_KERNELS", "").strip().lower()
if _requested not in ("", "numba", "numpy"):
    raise ImportError(f"VOLTRON_KERNELS must be 'numba' or 'numpy', got {_requested!r}")

if _requested == "numpy":
    _impl = _numpy
    BACKEND = "numpy"
else:
    try:
        from . import _numba as _impl
        BACKEND = "numba"
    except ImportError:
        if _requested == "numba":
            raise
        _impl = _numpy
        BACKEND = "numpy"

softmax_fwd = _impl.softmax_fwd
softmax_bwd = _impl.softmax_bwd
rmsnorm_fwd = _impl.rmsnorm_fwd
rmsnorm_bwd = _impl.rmsnorm_bwd
swiglu_fwd = _impl.swiglu_fwd
swiglu_bwd = _impl.swiglu_bwd
conv2d_fwd = _impl.conv2d_fwd
conv2d_bwd = _impl.conv2d_bwd
upsample_fwd = _impl.upsample_fwd
upsample_bwd = _impl.upsample_bwd

__all__ = [
    "BACKEND",
    "softmax_fwd", "softmax_bwd",
    "rmsnorm_fwd", "rmsnorm_bwd",
    "swiglu_fwd", "swiglu_bwd",
    "conv2d_fwd", "conv2d_bwd",
    "upsample_fwd", "upsample_bwd",
]
