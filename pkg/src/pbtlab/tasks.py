"""Trainable-task contract and desk-scale surrogate tasks.

A task owns an opaque model state (here always a float64 array) and exposes
``train``/``evaluate`` parameterized by a hyperparameter vector. ``train``
never mutates its input state, ``evaluate`` is deterministic given a state,
and losses are lower-is-better everywhere.
"""

from __future__ import annotations

import io

import numpy as np

from . import defaults, kernels
from .hparam import HyperparamSpec, HyperparamVector, SearchSpace
from .specaugment import policy_from_vector, specaugment

DATASET_STREAM = 2  # rng tag for dataset synthesis, keyed off the run seed
GRID_STREAM = 4  # rng tag for grid-baseline training streams


class Task:
    """Base trainable contract; states are float64 numpy arrays."""

    name = "task"

    def search_space(self) -> SearchSpace:
        raise NotImplementedError

    def init_state(self, rng: np.random.Generator) -> np.ndarray:
        raise NotImplementedError

    def train(
        self,
        state: np.ndarray,
        h: HyperparamVector,
        num_updates: int,
        rng: np.random.Generator,
    ) -> np.ndarray:
        raise NotImplementedError

    def evaluate(self, state: np.ndarray) -> float:
        raise NotImplementedError

    def report_metrics(self, state: np.ndarray) -> dict[str, float]:
        """Extra named metrics logged per checkpoint (never used for selection)."""
        return {}

    def serialize(self, state: np.ndarray) -> bytes:
        buf = io.BytesIO()
        np.save(buf, np.asarray(state, dtype=np.float64))
        return buf.getvalue()

    def deserialize(self, blob: bytes) -> np.ndarray:
        return np.load(io.BytesIO(blob))

    def save_dataset(self, path) -> None:
        """Persist the synthetic dataset next to the run; no-op by default."""


class QuadraticTask(Task):
    """Classic two-parameter toy: ascend a mis-specified surrogate objective.

    The surrogate reward is 1.2 - h1*t1^2 - h2*t2^2 while the true reward is
    1.2 - t1^2 - t2^2, so the loss (negated true reward) improves fastest when
    both h values are pushed high. The optimum is loss = -1.2 at the origin.
    """

    name = "quadratic"

    def __init__(self, lr: float | None = None, theta0=None):
        self.lr = defaults.QUADRATIC["lr"] if lr is None else float(lr)
        self.theta0 = np.asarray(
            defaults.QUADRATIC["theta0"] if theta0 is None else theta0, dtype=np.float64
        )

    def search_space(self) -> SearchSpace:
        return (
            HyperparamSpec("h1", 0.5, 0.0, 1.0, (0.05, 0.1)),
            HyperparamSpec("h2", 0.5, 0.0, 1.0, (0.05, 0.1)),
        )

    def init_state(self, rng: np.random.Generator) -> np.ndarray:
        return self.theta0.copy()

    def train(self, state, h, num_updates, rng):
        hv = np.array([h["h1"], h["h2"]], dtype=np.float64)
        return kernels.quadratic_descent(state, hv, self.lr, num_updates)

    def evaluate(self, state) -> float:
        return float(np.sum(state**2) - 1.2)


class RegressionTask(Task):
    """Linear regression where the tuned knob is train-time input noise.

    The train split is small and label-noisy, so plain least squares overfits;
    perturbing inputs with sigma * N(0,1) acts like a ridge penalty of
    strength sigma^2. Held-out MSE is U-shaped in sigma, which gives the
    population something real to tune. Fitness is MSE on a selection split;
    a disjoint reporting split is logged as the ``report_mse`` metric.
    """

    name = "regression"

    def __init__(self, seed: int = 0, **overrides):
        cfg = dict(defaults.REGRESSION)
        unknown = set(overrides) - set(cfg)
        if unknown:
            raise ValueError(f"unknown regression options: {sorted(unknown)}")
        cfg.update(overrides)
        self.cfg = cfg
        self.lr = float(cfg["lr"])
        rng = np.random.default_rng([seed, DATASET_STREAM])
        dim = int(cfg["dim"])
        self.w_star = rng.standard_normal(dim) / np.sqrt(dim)

        def split(n):
            x = rng.standard_normal((n, dim))
            y = x @ self.w_star + cfg["label_noise"] * rng.standard_normal(n)
            return x, y

        self.x_train, self.y_train = split(int(cfg["n_train"]))
        self.x_select, self.y_select = split(int(cfg["n_select"]))
        self.x_report, self.y_report = split(int(cfg["n_report"]))

    def search_space(self) -> SearchSpace:
        return (
            HyperparamSpec(
                "sigma",
                self.cfg["sigma_init"],
                0.0,
                self.cfg["sigma_max"],
                (0.05, 0.1),
            ),
        )

    def init_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.x_train.shape[1])

    def train(self, state, h, num_updates, rng):
        noise = rng.standard_normal((num_updates,) + self.x_train.shape)
        return kernels.regression_sgd(
            state, self.x_train, self.y_train, noise, h["sigma"], self.lr
        )

    def evaluate(self, state) -> float:
        return float(np.mean((self.x_select @ state - self.y_select) ** 2))

    def report_metrics(self, state) -> dict[str, float]:
        return {"report_mse": float(np.mean((self.x_report @ state - self.y_report) ** 2))}

    def save_dataset(self, path) -> None:
        np.savez(
            path,
            w_star=self.w_star,
            x_train=self.x_train,
            y_train=self.y_train,
            x_select=self.x_select,
            y_select=self.y_select,
            x_report=self.x_report,
            y_report=self.y_report,
        )


class SpecToyTask(Task):
    """Binary tone-pattern classification over time x frequency arrays.

    Each class plants tones on its own set of frequency bands under heavy
    background noise; a linear logistic classifier is trained on masked
    examples, which exercises the full masking search space end to end.
    Masking happens only at train time.
    """

    name = "spectoy"

    def __init__(self, seed: int = 0, **overrides):
        cfg = dict(defaults.SPECTOY)
        unknown = set(overrides) - set(cfg)
        if unknown:
            raise ValueError(f"unknown spectoy options: {sorted(unknown)}")
        cfg.update(overrides)
        self.cfg = cfg
        self.lr = float(cfg["lr"])
        self.batch = int(cfg["batch"])
        t, f = int(cfg["frames"]), int(cfg["bands"])
        self.shape = (t, f)
        rng = np.random.default_rng([seed, DATASET_STREAM])
        band_sets = [
            rng.choice(f, size=int(cfg["tone_bands"]), replace=False) for _ in range(2)
        ]
        phase = rng.uniform(0, 2 * np.pi, size=2)

        def make_split(n):
            xs = np.empty((n, t, f))
            ys = rng.integers(0, 2, size=n).astype(np.float64)
            frames = np.arange(t)[:, None]
            for i in range(n):
                label = int(ys[i])
                ex = cfg["bg_noise"] * rng.standard_normal((t, f))
                tone = cfg["tone_gain"] * (
                    1.0 + 0.5 * np.sin(2 * np.pi * frames / 20.0 + phase[label])
                )
                ex[:, band_sets[label]] += tone
                xs[i] = ex
            return xs, ys

        self.x_train, self.y_train = make_split(int(cfg["n_train"]))
        self.x_select, self.y_select = make_split(int(cfg["n_select"]))
        self.x_report, self.y_report = make_split(int(cfg["n_report"]))

    def search_space(self) -> SearchSpace:
        return (
            HyperparamSpec("fmask_f", 7.0, 7.0, 120.0, (2.5, 5.0)),
            HyperparamSpec("fmask_n", 1.0, 1.0, 8.0, (0.5,), fractional_count=True),
            HyperparamSpec("tmask_t", 20.0, 20.0, 150.0, (2.0, 5.0)),
            HyperparamSpec("tmask_p", 0.2, 0.2, 1.0, (0.05, 0.1)),
            HyperparamSpec("tmask_n", 1.0, 1.0, 8.0, (0.5, 1.0), fractional_count=True),
        )

    def init_state(self, rng: np.random.Generator) -> np.ndarray:
        return np.zeros(self.shape[0] * self.shape[1] + 1)

    def train(self, state, h, num_updates, rng):
        policy = policy_from_vector(h)
        out = state
        n = self.x_train.shape[0]
        buf = np.empty((self.batch,) + self.shape)
        for _ in range(num_updates):
            idx = rng.integers(0, n, size=self.batch)
            np.take(self.x_train, idx, axis=0, out=buf)
            for row in buf:
                specaugment(row, policy, rng, out=row)
            out = kernels.logistic_sgd(
                out, buf.reshape(self.batch, -1), self.y_train[idx], self.lr
            )
        return out

    def _log_loss(self, state, xs, ys) -> float:
        z = xs.reshape(len(xs), -1) @ state[:-1] + state[-1]
        # log(1 + exp(-|z|)) + max(0, -yz) form keeps this overflow-safe
        margin = np.where(ys > 0.5, z, -z)
        return float(np.mean(np.log1p(np.exp(-np.abs(margin))) + np.maximum(-margin, 0.0)))

    def evaluate(self, state) -> float:
        return self._log_loss(state, self.x_select, self.y_select)

    def report_metrics(self, state) -> dict[str, float]:
        return {"report_loss": self._log_loss(state, self.x_report, self.y_report)}

    def save_dataset(self, path) -> None:
        np.savez(
            path,
            x_train=self.x_train,
            y_train=self.y_train,
            x_select=self.x_select,
            y_select=self.y_select,
            x_report=self.x_report,
            y_report=self.y_report,
        )


TASKS = {
    QuadraticTask.name: QuadraticTask,
    RegressionTask.name: RegressionTask,
    SpecToyTask.name: SpecToyTask,
}


def make_task(name: str, options: dict | None = None, seed: int = 0) -> Task:
    """Instantiate a registered task; dataset-backed tasks derive their data
    from ``seed``."""
    if name not in TASKS:
        raise ValueError(f"unknown task {name!r}; available: {sorted(TASKS)}")
    options = dict(options or {})
    if name == QuadraticTask.name:
        return QuadraticTask(**options)
    return TASKS[name](seed=seed, **options)


def grid_baseline(task, grid, config):
    """Train each grid vector with mutation disabled for the same per-lineage
    budget as one population run; returns [(vector, final_loss), ...]."""
    results = []
    for i, h in enumerate(grid):
        rng = np.random.default_rng([config.seed, GRID_STREAM, i])
        state = task.init_state(rng)
        for _ in range(config.max_generations):
            state = task.train(state, h, config.updates_per_step, rng)
        results.append((dict(h), task.evaluate(state)))
    return results
