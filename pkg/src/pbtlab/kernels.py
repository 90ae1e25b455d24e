"""Hot per-update training loops, JIT-compiled with numba when available.

The surrogate tasks run thousands of tiny sequential updates per training
step; a Python-level loop dominates their runtime, so the loops live here as
numba ``@njit`` kernels with pure-numpy twins. Set ``PBTLAB_NUMBA=0`` to
force the numpy path (the default is numba whenever it imports). Both
backends implement the same recurrence; ``benchmarks/bench_kernels.py``
compares them.
"""

from __future__ import annotations

import os

import numpy as np


def _numba_enabled() -> bool:
    return os.environ.get("PBTLAB_NUMBA", "1").lower() not in ("0", "false", "no")


def quadratic_descent_numpy(theta: np.ndarray, h: np.ndarray, lr: float, num_updates: int) -> np.ndarray:
    """Apply ``num_updates`` surrogate ascent steps theta_i *= 1 - 2*lr*h_i."""
    out = theta.astype(np.float64).copy()
    factor = 1.0 - 2.0 * lr * h.astype(np.float64)
    for _ in range(num_updates):
        out *= factor
    return out


def regression_sgd_numpy(
    w: np.ndarray,
    x: np.ndarray,
    y: np.ndarray,
    noise: np.ndarray,
    sigma: float,
    lr: float,
) -> np.ndarray:
    """Full-batch least-squares steps on inputs perturbed by sigma * noise[k].

    ``noise`` has shape (num_updates, n, d); one fresh perturbation per update.
    """
    out = w.astype(np.float64).copy()
    n = x.shape[0]
    for k in range(noise.shape[0]):
        xp = x + sigma * noise[k]
        resid = xp @ out - y
        out -= lr * (2.0 / n) * (xp.T @ resid)
    return out


def logistic_sgd_numpy(
    w: np.ndarray,
    batch: np.ndarray,
    labels: np.ndarray,
    lr: float,
) -> np.ndarray:
    """One minibatch logistic-loss gradient step; batch rows are flat features."""
    out = w.astype(np.float64).copy()
    m = batch.shape[0]
    z = batch @ out[:-1] + out[-1]
    p = 1.0 / (1.0 + np.exp(-z))
    err = p - labels
    out[:-1] -= lr * (batch.T @ err) / m
    out[-1] -= lr * err.mean()
    return out


_HAVE_NUMBA = False
if _numba_enabled():
    try:
        from numba import njit

        _HAVE_NUMBA = True

        @njit(cache=True)
        def _quadratic_descent_nb(theta, h, lr, num_updates):
            out = theta.copy()
            for _ in range(num_updates):
                for i in range(out.shape[0]):
                    out[i] = out[i] * (1.0 - 2.0 * lr * h[i])
            return out

        @njit(cache=True)
        def _regression_sgd_nb(w, x, y, noise, sigma, lr):
            out = w.copy()
            n, d = x.shape
            xp = np.empty((n, d))
            for k in range(noise.shape[0]):
                for i in range(n):
                    for j in range(d):
                        xp[i, j] = x[i, j] + sigma * noise[k, i, j]
                resid = xp @ out - y
                out -= lr * (2.0 / n) * (xp.T @ resid)
            return out

        @njit(cache=True)
        def _logistic_sgd_nb(w, batch, labels, lr):
            out = w.copy()
            m = batch.shape[0]
            z = batch @ out[:-1] + out[-1]
            err = np.empty(m)
            for i in range(m):
                err[i] = 1.0 / (1.0 + np.exp(-z[i])) - labels[i]
            out[:-1] -= lr * (batch.T @ err) / m
            out[-1] -= lr * err.mean()
            return out

    except ImportError:
        _HAVE_NUMBA = False

if _HAVE_NUMBA:
    BACKEND = "numba"

    def quadratic_descent(theta, h, lr, num_updates):
        return _quadratic_descent_nb(
            np.ascontiguousarray(theta, dtype=np.float64),
            np.ascontiguousarray(h, dtype=np.float64),
            float(lr),
            int(num_updates),
        )

    def regression_sgd(w, x, y, noise, sigma, lr):
        return _regression_sgd_nb(
            np.ascontiguousarray(w, dtype=np.float64),
            np.ascontiguousarray(x, dtype=np.float64),
            np.ascontiguousarray(y, dtype=np.float64),
            np.ascontiguousarray(noise, dtype=np.float64),
            float(sigma),
            float(lr),
        )

    def logistic_sgd(w, batch, labels, lr):
        return _logistic_sgd_nb(
            np.ascontiguousarray(w, dtype=np.float64),
            np.ascontiguousarray(batch, dtype=np.float64),
            np.ascontiguousarray(labels, dtype=np.float64),
            float(lr),
        )

else:
    BACKEND = "numpy"
    quadratic_descent = quadratic_descent_numpy
    regression_sgd = regression_sgd_numpy
    logistic_sgd = logistic_sgd_numpy


def warmup() -> None:
    """Trigger JIT compilation of all kernels (no-op on the numpy backend)."""
    quadratic_descent(np.ones(2), np.ones(2), 0.01, 1)
    regression_sgd(np.ones(3), np.ones((2, 3)), np.ones(2), np.zeros((1, 2, 3)), 0.1, 0.01)
    logistic_sgd(np.zeros(4), np.ones((2, 3)), np.array([0.0, 1.0]), 0.1)
