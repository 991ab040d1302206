"""Benchmark the numba kernels against the pure-numpy fallbacks.

Usage: python benchmarks/bench_backends.py [--repeats N]

Times the four hot kernels (conv forward/backward, pool forward/backward)
on training-shaped inputs for both backend families and prints the
speedups. The first numba call compiles; a warm-up call keeps that out of
the timings.
"""

import argparse
import time

import numpy as np

from mrnn import kernels_numba, kernels_numpy

CASES = [
    # (h, c_in, c_out, win) roughly matching desk-scale and larger blocks
    (16, 32, 32, 3),
    (64, 64, 64, 3),
    (128, 256, 128, 3),
]


def timeit(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_case(h, c_in, c_out, win, repeats):
    rng = np.random.default_rng(0)
    x = rng.normal(size=(h, c_in))
    k = rng.normal(size=(c_out, win, c_in))
    b = rng.normal(size=c_out)
    g = rng.normal(size=(h, c_out))
    xp = rng.normal(size=(h, c_out))
    _, idx = kernels_numpy.pool_max_fwd(xp, 3)

    jobs = {
        "conv_fwd": (
            lambda: kernels_numba.conv1d_fwd(x, k, b),
            lambda: kernels_numpy.conv1d_fwd(x, k, b),
        ),
        "conv_bwd": (
            lambda: kernels_numba.conv1d_bwd(x, k, g),
            lambda: kernels_numpy.conv1d_bwd(x, k, g),
        ),
        "pool_fwd": (
            lambda: kernels_numba.pool_max_fwd(xp, 3),
            lambda: kernels_numpy.pool_max_fwd(xp, 3),
        ),
        "pool_bwd": (
            lambda: kernels_numba.pool_max_bwd(g, idx, h),
            lambda: kernels_numpy.pool_max_bwd(g, idx, h),
        ),
    }
    print(f"\ninput h={h} c_in={c_in} c_out={c_out} win={win}")
    print(f"  {'kernel':10s} {'numba':>12s} {'numpy':>12s} {'speedup':>9s}")
    for name, (fn_nb, fn_np) in jobs.items():
        fn_nb()  # warm up / compile
        t_nb = timeit(fn_nb, repeats)
        t_np = timeit(fn_np, repeats)
        print(f"  {name:10s} {t_nb * 1e6:10.1f}us {t_np * 1e6:10.1f}us {t_np / t_nb:8.2f}x")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()
    print(f"numba vs numpy kernel timings (best of {args.repeats})")
    for case in CASES:
        bench_case(*case, repeats=args.repeats)


if __name__ == "__main__":
    main()
