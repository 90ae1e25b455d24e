"""Benchmark the numba kernels against their pure-numpy twins.

Run:
    python benchmarks/bench_kernels.py

The numba side respects PBTLAB_NUMBA; running with PBTLAB_NUMBA=0 makes both
columns numpy (useful to sanity-check the dispatch itself).
"""

import time

import numpy as np

from pbtlab import kernels


def timeit(fn, *args, repeats=5):
    fn(*args)  # warm any jit path
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def bench_quadratic(num_updates):
    theta = np.array([0.9, 0.9])
    h = np.array([0.7, 0.7])
    fast = timeit(kernels.quadratic_descent, theta, h, 0.01, num_updates)
    slow = timeit(kernels.quadratic_descent_numpy, theta, h, 0.01, num_updates)
    return fast, slow


def bench_regression(num_updates, n=18, d=12):
    rng = np.random.default_rng(0)
    w = np.zeros(d)
    x = rng.standard_normal((n, d))
    y = rng.standard_normal(n)
    noise = rng.standard_normal((num_updates, n, d))
    fast = timeit(kernels.regression_sgd, w, x, y, noise, 0.3, 0.05)
    slow = timeit(kernels.regression_sgd_numpy, w, x, y, noise, 0.3, 0.05)
    return fast, slow


def bench_logistic(batch=4, d=5120, reps=500):
    rng = np.random.default_rng(0)
    w = np.zeros(d + 1)
    xb = rng.standard_normal((batch, d))
    yb = (rng.random(batch) > 0.5).astype(float)

    def many(fn):
        out = w
        for _ in range(reps):
            out = fn(out, xb, yb, 0.1)
        return out

    fast = timeit(many, kernels.logistic_sgd, repeats=3)
    slow = timeit(many, kernels.logistic_sgd_numpy, repeats=3)
    return fast, slow


def main():
    print(f"active backend: {kernels.BACKEND}")
    print(f"{'kernel':<28}{'backend':>12}{'numpy':>12}{'speedup':>10}")
    rows = [
        ("quadratic_descent x2200", bench_quadratic(2200)),
        ("quadratic_descent x50000", bench_quadratic(50_000)),
        ("regression_sgd x2200", bench_regression(2200)),
        ("logistic_sgd x500", bench_logistic()),
    ]
    for name, (fast, slow) in rows:
        print(f"{name:<28}{fast * 1e3:>10.2f}ms{slow * 1e3:>10.2f}ms{slow / fast:>9.1f}x")


if __name__ == "__main__":
    main()
