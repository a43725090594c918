#!/usr/bin/env python3
"""Benchmark the numba kernels against the pure-numpy fallbacks.

Runs each hot kernel on representative sizes and prints a timing table.
The active backend follows MIMO_RECAL_NO_NUMBA; when numba is active the
numpy fallback is timed in the same process for a direct comparison.

    python benchmarks/bench_kernels.py [--repeat 5]
"""

import argparse
import time

import numpy as np

from mimo_recal import _kernels


def timeit(fn, *args, repeat=5):
    fn(*args)  # warm-up (includes jit compilation)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeat", type=int, default=5)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    x = np.abs(rng.normal(2.0, 5.0, 2_000_000))
    y = x + 1e-3
    a_sat = np.abs(rng.normal(3.0, 2.0, 2_000_000)) + 0.1
    sigma = np.abs(rng.normal(1.0, 0.5, 2_000_000)) + 0.1

    b, k, m = 256, 8, 64
    h = (rng.standard_normal((b, k, m)) + 1j * rng.standard_normal((b, k, m)))
    r = rng.standard_normal(m) + 1j * rng.standard_normal(m)
    bb = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    u = rng.standard_normal(k) + 1j * rng.standard_normal(k)
    g = rng.standard_normal(m) + 1j * rng.standard_normal(m)

    cases = [
        ("erfcx (2e6)", _kernels.erfcx_arr, _kernels._erfcx_np, (x,)),
        ("e1_scaled (2e6)", _kernels.e1_scaled_arr, _kernels._e1_scaled_np, (y,)),
        ("bussgang mu (2e6)", _kernels.mu_arr, _kernels._mu_np, (x,)),
        ("bussgang lambda (2e6)", _kernels.lam_arr, _kernels._lam_np, (a_sat, sigma)),
        ("ZF effective channels (256x8x64)", _kernels.effective_channels,
         _kernels._effective_channels_np, (h, r, bb, u, g, 0.7)),
    ]

    print(f"active backend: {_kernels.backend_name()}")
    header = f"{'kernel':36s} {'active [ms]':>12s} {'numpy [ms]':>12s} {'speedup':>9s}"
    print(header)
    print("-" * len(header))
    for name, fast, slow, fargs in cases:
        t_fast = timeit(fast, *fargs, repeat=args.repeat) * 1e3
        t_slow = timeit(slow, *fargs, repeat=args.repeat) * 1e3
        print(f"{name:36s} {t_fast:12.2f} {t_slow:12.2f} {t_slow / t_fast:8.1f}x")


if __name__ == "__main__":
    main()
