"""Time the compiled kernels against the NumPy fallback.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]

Sizes match the synthetic scenes used in the tests: a 64x102x20 panoramic
volume with a realistic observation mask, 64x64 frames warped onto a
64x102 canvas, and NCC matching of 100 corners with an 11x11 patch.
"""

import argparse
import timeit

import numpy as np

from panorpca import _fallback
from panorpca.core import TVWeights

try:
    from panorpca import _ckernels
except ImportError:  # extension not built
    _ckernels = None


def cases(rng):
    m, n, p = 64, 102, 20
    mask = np.zeros((m, n, p), bool)
    for k in range(p):
        mask[:, 2 * k:2 * k + 64, k] = True
    w = TVWeights.from_mask(mask)
    vol = np.asfortranarray(rng.standard_normal((m, n, p)))
    dx, dy, dz = _fallback.weighted_diff(vol, w.wx, w.wy, w.wz)
    src = rng.random((64, 64))
    T = np.eye(3)
    T[0, 2] = 0.37
    img = rng.random((64, 64))
    pts = rng.integers(20, 44, size=(100, 2))
    return {
        "weighted_diff": ("weighted_diff", (vol, w.wx, w.wy, w.wz)),
        "weighted_diff_adjoint": ("weighted_diff_adjoint", (dx, dy, dz, w.wx, w.wy, w.wz)),
        "normal_apply": ("normal_apply", (vol, w.wx, w.wy, w.wz, 1.0)),
        "warp_bilinear": ("warp_bilinear", (src, T, 64, 102, -20.0, 0.0)),
        "ncc_scores": ("ncc_scores", (img, np.roll(img, 2, axis=1), pts, 5, 12)),
    }


def best_time(fn, args, repeat):
    timer = timeit.Timer(lambda: fn(*args))
    number, _ = timer.autorange()
    return min(timer.repeat(repeat, number)) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(0)
    if _ckernels is None:
        print("compiled extension not available; only the fallback is timed")
    print(f"{'kernel':24s} {'numpy [ms]':>11s} {'cython [ms]':>12s} {'speedup':>8s}")
    for name, (attr, fargs) in cases(rng).items():
        t_py = best_time(getattr(_fallback, attr), fargs, args.repeat)
        if _ckernels is None:
            print(f"{name:24s} {1e3 * t_py:11.3f} {'-':>12s} {'-':>8s}")
            continue
        t_c = best_time(getattr(_ckernels, attr), fargs, args.repeat)
        print(f"{name:24s} {1e3 * t_py:11.3f} {1e3 * t_c:12.3f} {t_py / t_c:7.1f}x")


if __name__ == "__main__":
    main()
