"""Benchmark the pooling penalty kernels: numba jit vs pure numpy.

Both backends are timed directly through optnode._kernels.IMPLEMENTATIONS,
so this runs regardless of which one the package selected at import.  The
end-to-end robust_pool timing at the bottom uses the active backend; rerun
with OPTNODE_DISABLE_NUMBA=1 to see the solver on the numpy path.

Usage:  python3 benchmarks/bench_kernels.py [--sizes 1000,10000,100000]
"""

import argparse
import time

import numpy as np

from optnode import _kernels
from optnode.pooling import PenaltySpec, robust_pool

PENALTIES = [
    ("pseudo_huber", _kernels.PSEUDO_HUBER),
    ("welsch", _kernels.WELSCH),
    ("truncated_quadratic", _kernels.TRUNCATED_QUADRATIC),
]


def _time(fn, repeats):
    # one warm-up call first: triggers jit compilation on the numba path
    fn()
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_kernels(sizes, repeats, rng):
    print(f"{'kernel':<22} {'penalty':<20} {'n':>8} "
          f"{'numpy':>12} {'numba':>12} {'speedup':>8}")
    for n in sizes:
        x = rng.normal(size=n)
        for pname, code in PENALTIES:
            for kname, idx in (("penalty_sums", 0), ("penalty_weights", 1)):
                row = {}
                for backend in ("numpy", "numba"):
                    fn = _kernels.IMPLEMENTATIONS[backend][idx]
                    if fn is None:
                        row[backend] = float("nan")
                        continue
                    row[backend] = _time(lambda: fn(code, 1.0, 0.3, x), repeats)
                speed = row["numpy"] / row["numba"]
                print(f"{kname:<22} {pname:<20} {n:>8} "
                      f"{row['numpy'] * 1e6:>10.1f}us {row['numba'] * 1e6:>10.1f}us "
                      f"{speed:>7.1f}x")


def bench_solver(sizes, repeats, rng):
    print(f"\nrobust_pool end to end (backend: {_kernels.backend_name()})")
    for n in sizes:
        x = rng.normal(size=n)
        x[: n // 10] += 8.0          # an outlier clump so descent works for it
        for pname in ("pseudo_huber", "welsch"):
            spec = PenaltySpec(pname, alpha=1.0)
            dt = _time(lambda: robust_pool(x, spec), repeats)
            print(f"  {pname:<20} n={n:<8} {dt * 1e3:8.2f} ms")


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="1000,10000,100000",
                    help="comma-separated point counts")
    ap.add_argument("--repeats", type=int, default=7)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    sizes = [int(s) for s in args.sizes.split(",") if s]
    rng = np.random.default_rng(args.seed)
    if not _kernels.HAS_NUMBA:
        print("numba not importable; numba columns will be nan")
    bench_kernels(sizes, args.repeats, rng)
    bench_solver(sizes, args.repeats, rng)


if __name__ == "__main__":
    main()
