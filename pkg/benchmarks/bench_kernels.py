"""Time the numba kernels against the pure-numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20]

Shapes are the ones the toy configuration actually runs: attention scores
for B=8 and 2 heads over ~12 rows, (rows, 64) norms and gated MLPs, and the
PUP head's convolutions. Both backends are checked for agreement first.
"""

import argparse
import time

import numpy as np

from voltron.kernels import _numba, _numpy


def cases(rng):
    # row-wise kernels take (rows, features); attention scores are flattened to rows
    x = rng.standard_normal((8 * 2 * 12, 12)).astype(np.float32)
    s = _numpy.softmax_fwd(x)
    rows = rng.standard_normal((8 * 12, 256)).astype(np.float32)
    scale = rng.standard_normal(256).astype(np.float32)
    gate, up = rng.standard_normal((2, 8 * 12, 256)).astype(np.float32)
    img = rng.standard_normal((16, 32, 8, 8)).astype(np.float32)
    w = rng.standard_normal((16, 32, 3, 3)).astype(np.float32)
    b = np.zeros(16, dtype=np.float32)
    g = rng.standard_normal((16, 16, 8, 8)).astype(np.float32)
    small = rng.standard_normal((16, 32, 8, 8)).astype(np.float32)
    return {
        "softmax_fwd": ((x,), {}),
        "softmax_bwd": ((s, x), {}),
        "rmsnorm_fwd": ((rows, scale, 1e-6), {}),
        "swiglu_fwd": ((gate, up), {}),
        "swiglu_bwd": ((gate, up, rows), {}),
        "conv2d_fwd": ((img, w, b), {}),
        "conv2d_bwd": ((img, w, g), {}),
        "upsample_fwd": ((small, 2), {}),
    }


def timeit(fn, args, repeat):
    fn(*args)  # compile / warm caches
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<14} {'numpy (ms)':>11} {'numba (ms)':>11} {'speedup':>8}  max |diff|")
    for name, (a, _) in cases(rng).items():
        ref = getattr(_numpy, name)(*a)
        got = getattr(_numba, name)(*a)
        ref = ref if isinstance(ref, tuple) else (ref,)
        got = got if isinstance(got, tuple) else (got,)
        diff = max(float(np.max(np.abs(np.asarray(r, np.float64) - np.asarray(q, np.float64))))
                   for r, q in zip(ref, got))
        t_np = timeit(getattr(_numpy, name), a, args.repeat)
        t_nb = timeit(getattr(_numba, name), a, args.repeat)
        print(f"{name:<14} {t_np * 1e3:11.3f} {t_nb * 1e3:11.3f} {t_np / t_nb:7.2f}x  {diff:.2e}")


if __name__ == "__main__":
    main()
