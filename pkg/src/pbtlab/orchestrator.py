"""Worker loop and run lifecycle: seed, train, select, stop, resume.

Two execution modes share one worker-step implementation:

* ``async``   -- one thread per worker; threads synchronize only through the
                 population log and the state blob store.
* ``deterministic`` -- a single-threaded virtual scheduler advances workers
                 in a seeded round-robin, one claim or one finish per tick,
                 so equal seeds produce byte-identical population logs.

Per-step randomness comes from generators derived as
``default_rng([seed, STEP_STREAM, worker, step])``; each child record stores
its (worker, step) pair, which is enough to re-derive the exact stream that
produced its mutation and training noise.
"""

from __future__ import annotations

import json
import logging
import math
import threading
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from filelock import FileLock, Timeout

from .analysis import best_checkpoint
from .config import ConfigError, RunConfig, load_config, save_config
from .hparam import init_vector, mutate, validate_vector
from .population import CheckpointRecord, PopulationLog
from .tasks import Task, make_task

logger = logging.getLogger(__name__)

SEED_STREAM = 0  # rng tag: generation-0 state initialization
CLAIM_STREAM = 1  # rng tag: per-worker parent-selection draws
SCHEDULER_STREAM = 3  # rng tag: deterministic round-robin order
STEP_STREAM = 5  # rng tag: per (worker, step) mutation + training draws

CONFIG_FILE = "config"
LOG_FILE = "population.log"
SUMMARY_FILE = "summary"
STATES_DIR = "states"
LOCK_FILE = ".lock"

# An idle scheduler round (no claim granted, nothing in flight) cannot
# unstick itself in deterministic mode, so a handful of repeats means the
# population is extinct; fail loudly instead of spinning.
_IDLE_ROUNDS_LIMIT = 10


class TrainingDiverged(Exception):
    """Raised by tasks (or by loss checks) when a training step blows up."""


@dataclass
class RunSummary:
    total_checkpoints: int
    generations_completed: int
    best_checkpoint_id: dict[str, str]
    wall_time: float

    def to_dict(self) -> dict:
        return {
            "total_checkpoints": self.total_checkpoints,
            "generations_completed": self.generations_completed,
            "best_checkpoint_id": dict(self.best_checkpoint_id),
            "wall_time": self.wall_time,
        }


class _RunContext:
    """Everything a worker step needs, bundled once per run."""

    def __init__(self, config: RunConfig, task: Task, space, log: PopulationLog, out_dir: Path):
        self.config = config
        self.task = task
        self.space = space
        self.log = log
        self.out_dir = out_dir
        self.stop = threading.Event()
        self.started = time.monotonic()

    def load_state(self, rec: CheckpointRecord) -> np.ndarray:
        if rec.state_ref is None:
            raise RuntimeError(f"{rec.id} has no stored state")
        return self.task.deserialize((self.out_dir / rec.state_ref).read_bytes())

    def store_state(self, rec_id: str, state: np.ndarray) -> str:
        ref = f"{STATES_DIR}/{rec_id}.bin"
        (self.out_dir / ref).write_bytes(self.task.serialize(state))
        return ref

    def check_budget(self) -> None:
        last = self.log.last_completed_generation()
        if last is not None and last >= self.config.max_generations:
            self.stop.set()
        elif (
            self.config.max_wall_time is not None
            and time.monotonic() - self.started > self.config.max_wall_time
        ):
            self.stop.set()


def _step_rng(config: RunConfig, worker: int, step: int) -> np.random.Generator:
    return np.random.default_rng([config.seed, STEP_STREAM, worker, step])


def _mutated_hparams(ctx: _RunContext, parent: CheckpointRecord, rng) -> dict:
    cfg = ctx.config
    if cfg.fixed_hparams is not None:
        return dict(cfg.fixed_hparams)
    return mutate(ctx.space, parent.hparams, rng, cfg.mutation_probability)


def _train_and_report(ctx: _RunContext, parent, child, hparams, rng) -> None:
    """Run one training step for an already-registered pending child.

    Divergence is reported as +inf so selection culls the lineage while the
    worker survives. A step whose training produced a state (but evaluated
    non-finite) keeps its blob and stays selectable at the worst rank; a step
    that blew up inside train leaves no state and can never be a parent.
    """
    state = None
    loss = math.inf
    metrics: dict[str, float] = {}
    try:
        state = ctx.task.train(ctx.load_state(parent), hparams, ctx.config.updates_per_step, rng)
        loss = float(ctx.task.evaluate(state))
        if math.isfinite(loss):
            metrics = ctx.task.report_metrics(state)
        else:
            logger.warning("non-finite loss %s on %s; reporting +inf", loss, child.id)
            loss = math.inf
    except (TrainingDiverged, FloatingPointError, OverflowError, ZeroDivisionError) as exc:
        logger.warning("worker step failed on %s: %s", child.id, exc)
        loss = math.inf
    ref = ctx.store_state(child.id, state) if state is not None else None
    ctx.log.report_result(child.id, loss, ref, metrics)
    ctx.check_budget()


def _worker_loop(ctx: _RunContext, worker: int, first_step: int = 0) -> None:
    """Async worker: claim a parent, mutate, train, evaluate, report, repeat.

    A claim made before the stop signal is always carried to completion, so
    every claimed parent yields exactly one child record.
    """
    cfg = ctx.config
    claim_rng = np.random.default_rng([cfg.seed, CLAIM_STREAM, worker])
    step = first_step
    while not ctx.stop.is_set():
        parent = ctx.log.wait_for_parent(
            claim_rng, ctx.stop, cfg.handicap, cfg.initiator_window, cfg.opponent_window
        )
        if parent is None:
            break
        rng = _step_rng(cfg, worker, step)
        hparams = _mutated_hparams(ctx, parent, rng)
        child = ctx.log.add_child(parent, hparams, worker=worker, step=step)
        _train_and_report(ctx, parent, child, hparams, rng)
        step += 1


def worker_loop(
    task: Task,
    log: PopulationLog,
    config: RunConfig,
    worker_index: int = 0,
    stop: threading.Event | None = None,
    first_step: int = 0,
) -> None:
    """Drive one worker against an existing population log until the
    generation budget completes (or ``stop`` is set externally).

    run() and resume() orchestrate this same loop for all workers; calling it
    directly is useful for embedding a single worker in another process.
    """
    config.validate()
    if config.output_dir is None:
        raise ConfigError("output_dir is required")
    space = _resolve_space(config, task)
    ctx = _RunContext(config, task, space, log, Path(config.output_dir))
    if stop is not None:
        ctx.stop = stop
    _worker_loop(ctx, worker_index, first_step)


def _run_async(ctx: _RunContext, first_steps: dict[int, int]) -> None:
    threads = [
        threading.Thread(
            target=_worker_loop,
            args=(ctx, w, first_steps.get(w, 0)),
            name=f"pbt-worker-{w}",
            daemon=True,
        )
        for w in range(ctx.config.workers)
    ]
    for t in threads:
        t.start()
    for t in threads:
        t.join()


class _VirtualWorker:
    __slots__ = ("index", "claim_rng", "step", "parent", "child", "hparams", "rng")

    def __init__(self, index, claim_rng, step):
        self.index = index
        self.claim_rng = claim_rng
        self.step = step
        self.parent = None
        self.child = None
        self.hparams = None
        self.rng = None


def _run_deterministic(ctx: _RunContext, first_steps: dict[int, int]) -> None:
    """Single-threaded virtual scheduler: each tick either claims a parent or
    finishes an in-flight step; worker order is reshuffled each round from the
    scheduler stream."""
    cfg = ctx.config
    sched_rng = np.random.default_rng([cfg.seed, SCHEDULER_STREAM])
    workers = [
        _VirtualWorker(
            w, np.random.default_rng([cfg.seed, CLAIM_STREAM, w]), first_steps.get(w, 0)
        )
        for w in range(cfg.workers)
    ]
    idle_rounds = 0
    while not ctx.stop.is_set():
        progressed = False
        for wi in sched_rng.permutation(cfg.workers):
            w = workers[wi]
            if ctx.stop.is_set():
                break
            if w.child is None:
                parent = ctx.log.find_parent_to_train(
                    w.claim_rng, cfg.handicap, cfg.initiator_window, cfg.opponent_window
                )
                if parent is None:
                    continue
                w.parent = parent
                w.rng = _step_rng(cfg, w.index, w.step)
                w.hparams = _mutated_hparams(ctx, parent, w.rng)
                w.child = ctx.log.add_child(parent, w.hparams, worker=w.index, step=w.step)
            else:
                _train_and_report(ctx, w.parent, w.child, w.hparams, w.rng)
                w.child = None
                w.step += 1
            progressed = True
        idle_rounds = 0 if progressed else idle_rounds + 1
        if idle_rounds > _IDLE_ROUNDS_LIMIT:
            raise RuntimeError("population stalled: no claimable parent and no work in flight")
    # Claims are never abandoned: finish whatever is still in flight.
    for w in workers:
        if w.child is not None:
            _train_and_report(ctx, w.parent, w.child, w.hparams, w.rng)
            w.child = None
            w.step += 1


def _build_summary(ctx: _RunContext) -> RunSummary:
    log = ctx.log
    best: dict[str, str] = {}
    metrics = {"loss"}
    for rec in log.records():
        metrics.update(rec.metrics)
    for metric in sorted(metrics):
        try:
            best[metric] = best_checkpoint(log, metric).id
        except ValueError:
            pass
    last = log.last_completed_generation()
    summary = RunSummary(
        total_checkpoints=len(log),
        generations_completed=0 if last is None else last,
        best_checkpoint_id=best,
        wall_time=time.monotonic() - ctx.started,
    )
    (ctx.out_dir / SUMMARY_FILE).write_text(
        json.dumps(summary.to_dict(), indent=2) + "\n", encoding="utf-8"
    )
    return summary


def _resolve_space(config: RunConfig, task: Task):
    space = config.search_space if config.search_space is not None else task.search_space()
    if config.fixed_hparams is not None:
        try:
            validate_vector(space, config.fixed_hparams)
        except ValueError as exc:
            raise ConfigError(
                f"fixed_hparams invalid: {exc} (values must already lie inside the "
                "search-space bounds; clamp them first)"
            ) from exc
    return space


def _execute(ctx: _RunContext, first_steps: dict[int, int] | None = None) -> RunSummary:
    first_steps = first_steps or {}
    ctx.check_budget()
    if not ctx.stop.is_set():
        if ctx.config.mode == "deterministic":
            _run_deterministic(ctx, first_steps)
        else:
            _run_async(ctx, first_steps)
    summary = _build_summary(ctx)
    ctx.log.close()
    return summary


def run(config: RunConfig, task: Task | None = None) -> RunSummary:
    """Create a run directory, seed the population, and train to the budget."""
    config.validate()
    if config.output_dir is None:
        raise ConfigError("output_dir is required")
    out_dir = Path(config.output_dir)
    if (out_dir / LOG_FILE).exists():
        raise ConfigError(f"{out_dir} already holds a run; use resume")
    out_dir.mkdir(parents=True, exist_ok=True)
    if task is None:
        task = make_task(config.task, config.task_options, config.seed)
    space = _resolve_space(config, task)
    resolved = RunConfig(**{**config.__dict__, "search_space": space})

    lock = FileLock(out_dir / LOCK_FILE)
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise RuntimeError(f"run directory {out_dir} is locked by another process")
    try:
        save_config(resolved, out_dir / CONFIG_FILE)
        (out_dir / STATES_DIR).mkdir(exist_ok=True)
        task.save_dataset(out_dir / "dataset.npz")
        log = PopulationLog(out_dir / LOG_FILE)
        ctx = _RunContext(resolved, task, space, log, out_dir)
        seed_hparams = init_vector(space)
        for i in range(config.population_size):
            rng = np.random.default_rng([config.seed, SEED_STREAM, i])
            state = task.init_state(rng)
            rec = log.add_seed(seed_hparams)
            log.set_state_ref(rec.id, ctx.store_state(rec.id, state))
        return _execute(ctx)
    finally:
        lock.release()


def resume(run_dir: str | Path, max_generations: int | None = None, workers: int | None = None) -> RunSummary:
    """Reload a run directory's log (tolerating a truncated tail) and continue
    to the generation budget."""
    run_dir = Path(run_dir)
    config_path = run_dir / CONFIG_FILE
    log_path = run_dir / LOG_FILE
    if not config_path.exists() or not log_path.exists():
        raise ConfigError(f"{run_dir} is not a run directory (missing config or log)")
    config = load_config(config_path)
    if max_generations is not None:
        config.max_generations = max_generations
    if workers is not None:
        config.workers = workers
    config.validate()
    config.output_dir = str(run_dir)
    task = make_task(config.task, config.task_options, config.seed)
    space = _resolve_space(config, task)

    lock = FileLock(run_dir / LOCK_FILE)
    try:
        lock.acquire(timeout=0)
    except Timeout:
        raise RuntimeError(f"run directory {run_dir} is locked by another process")
    try:
        log = PopulationLog.load(log_path)
        ctx = _RunContext(config, task, space, log, run_dir)
        # Repair seeds whose blob write was torn off by a crash; generation-0
        # states are exactly reproducible from (run seed, creation index).
        for rec in log.records():
            if rec.generation == 0 and rec.state_ref is None:
                rng = np.random.default_rng([config.seed, SEED_STREAM, rec.seq])
                log.set_state_ref(rec.id, ctx.store_state(rec.id, task.init_state(rng)))
        # Continue per-worker step counters so rng streams are never reused.
        max_step: dict[int, int] = {}
        for rec in log.records():
            if rec.worker is not None and rec.step is not None:
                max_step[rec.worker] = max(max_step.get(rec.worker, -1), rec.step)
        first_steps = {w: s + 1 for w, s in max_step.items()}
        return _execute(ctx, first_steps)
    finally:
        lock.release()
