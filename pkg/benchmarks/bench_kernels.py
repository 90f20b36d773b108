"""Time the compiled pair-sum kernel against its numpy twin.

    python benchmarks/bench_kernels.py [--sizes 257 1025 2049] [--cols 1 8] [--repeat 5]

Prints one row per (m, ncol) with best-of-repeat wall times and the max
relative disagreement between the two backends.
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from chrflow import _kernels


def best_of(fn, repeat: int) -> float:
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[257, 1025, 2049])
    ap.add_argument("--cols", type=int, nargs="+", default=[1, 8])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--s", type=float, default=0.5)
    args = ap.parse_args(argv)

    if not _kernels.HAVE_NUMBA:
        print("numba is not importable; only the numpy kernel can run")
        return 1
    rng = np.random.default_rng(0)
    # compile outside the timed region
    _kernels.nb_pair_sum(np.zeros((4, 1)), np.ones(4), 1.0, args.s)

    print(f"{'m':>6} {'ncol':>5} {'numpy [s]':>11} {'numba [s]':>11} {'speedup':>8} {'rel diff':>9}")
    for m in args.sizes:
        h = 1.0 / (m - 1)
        w = np.full(m, h)
        w[[0, -1]] *= 0.5
        for ncol in args.cols:
            v = np.cumsum(rng.normal(size=(m, ncol)), axis=0) * np.sqrt(h)
            a = _kernels.np_pair_sum(v, w, h, args.s)
            b = _kernels.nb_pair_sum(v, w, h, args.s)
            diff = float(np.max(np.abs(a - b) / np.abs(a)))
            t_np = best_of(lambda: _kernels.np_pair_sum(v, w, h, args.s), args.repeat)
            t_nb = best_of(lambda: _kernels.nb_pair_sum(v, w, h, args.s), args.repeat)
            print(f"{m:>6} {ncol:>5} {t_np:>11.4f} {t_nb:>11.4f} {t_np / t_nb:>8.2f} {diff:>9.1e}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
