"""Offline extraction of schedules, population trends, and exports.

Everything here reads immutable log snapshots after (or independently of) a
run; nothing writes back into the population log.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .hparam import SearchSpace, clamp
from .population import CheckpointRecord, PopulationLog


@dataclass(frozen=True)
class ScheduleEntry:
    generation: int
    checkpoint_id: str
    hparams: dict[str, float]


@dataclass(frozen=True)
class Schedule:
    """Hyperparameter values along one ancestor chain, root first."""

    entries: tuple[ScheduleEntry, ...]

    def __len__(self):
        return len(self.entries)

    def __iter__(self):
        return iter(self.entries)


@dataclass(frozen=True)
class SeriesPoint:
    generation: int
    value: float
    checkpoint_id: str
    parameter: str


def _metric_value(rec: CheckpointRecord, metric: str) -> float | None:
    if metric == "loss":
        return rec.loss
    return rec.metrics.get(metric)


def best_checkpoint(
    log: PopulationLog, metric: str = "loss", generation_window=None
) -> CheckpointRecord:
    """Evaluated record with the lowest metric value; ties go to the lower id.

    The default window is the last completed generation; if no generation has
    completed yet, all evaluated records are considered. Pass an iterable of
    generations (or "all") to override.
    """
    records = [r for r in log.records() if r.evaluated]
    if not records:
        raise ValueError("log has no evaluated records")
    if generation_window is None:
        last = log.last_completed_generation()
        gens = None if last is None else {last}
    elif generation_window == "all":
        gens = None
    else:
        gens = set(generation_window)
    pool = [
        r
        for r in records
        if (gens is None or r.generation in gens) and _metric_value(r, metric) is not None
    ]
    if not pool:
        raise ValueError(f"no evaluated records carry metric {metric!r} in the window")
    return min(pool, key=lambda r: (_metric_value(r, metric), r.id))


def lineage(log: PopulationLog, ckpt: CheckpointRecord) -> list[CheckpointRecord]:
    """Ancestor chain from the generation-0 root down to ``ckpt``."""
    chain = [ckpt]
    cur = ckpt
    while cur.parent_id is not None:
        try:
            parent = log.get(cur.parent_id)
        except KeyError as exc:
            raise ValueError(f"broken parent link {cur.id} -> {cur.parent_id}") from exc
        if parent.generation != cur.generation - 1:
            raise ValueError(f"generation mismatch along lineage at {cur.id}")
        chain.append(parent)
        cur = parent
    if cur.generation != 0:
        raise ValueError(f"lineage root {cur.id} is not at generation 0")
    chain.reverse()
    return chain


def extract_schedule(log: PopulationLog, ckpt: CheckpointRecord) -> Schedule:
    """The hyperparameter schedule discovered along ``ckpt``'s ancestry."""
    entries = tuple(
        ScheduleEntry(r.generation, r.id, dict(r.hparams)) for r in lineage(log, ckpt)
    )
    return Schedule(entries)


def tail_average(schedule: Schedule, k: int) -> dict[str, float]:
    """Per-parameter mean over the last ``k`` schedule entries."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(schedule) == 0:
        raise ValueError("schedule is empty")
    tail = schedule.entries[-k:]
    names = tail[0].hparams.keys()
    return {name: sum(e.hparams[name] for e in tail) / len(tail) for name in names}


def population_series(log: PopulationLog, param: str) -> list[SeriesPoint]:
    """One point per evaluated checkpoint for a single parameter."""
    records = [r for r in log.records() if r.evaluated]
    if records and param not in records[0].hparams:
        raise ValueError(
            f"unknown parameter {param!r}; valid: {sorted(records[0].hparams)}"
        )
    return [SeriesPoint(r.generation, r.hparams[param], r.id, param) for r in records]


def lowess(points, frac: float = 0.3):
    """Locally weighted linear smoothing with tricube weights, single pass.

    For each x, a weighted least-squares line is fitted over the
    ceil(frac * n) nearest neighbors and evaluated at x. Neighborhoods whose
    x spread degenerates fall back to the weighted mean.
    """
    pts = [(float(x), float(y)) for x, y in points]
    n = len(pts)
    if n < 2:
        raise ValueError("lowess needs at least 2 points")
    if not 0.0 < frac <= 1.0:
        raise ValueError("frac must be in (0, 1]")
    k = max(1, math.ceil(frac * n))
    xs = np.array([p[0] for p in pts])
    ys = np.array([p[1] for p in pts])
    out = []
    for xi in xs:
        d = np.abs(xs - xi)
        nhood = np.argsort(d, kind="stable")[:k]
        dn = d[nhood]
        dmax = dn.max()
        if dmax == 0.0:
            w = np.ones_like(dn)
        else:
            w = (1.0 - (dn / dmax) ** 3) ** 3
        xn, yn = xs[nhood], ys[nhood]
        sw = w.sum()
        xbar = (w * xn).sum() / sw
        ybar = (w * yn).sum() / sw
        sxx = (w * (xn - xbar) ** 2).sum()
        if dmax == 0.0 or sxx <= 1e-12 * sw * dmax * dmax:
            out.append((float(xi), float(ybar)))
            continue
        beta = (w * (xn - xbar) * (yn - ybar)).sum() / sxx
        out.append((float(xi), float(ybar + beta * (xi - xbar))))
    return out


def metric_correlation(log: PopulationLog, metric_a: str, metric_b: str) -> float:
    """Pearson correlation over checkpoints carrying both metrics."""
    pairs = []
    for rec in log.records():
        a, b = _metric_value(rec, metric_a), _metric_value(rec, metric_b)
        if a is not None and b is not None:
            pairs.append((a, b))
    if len(pairs) < 2:
        raise ValueError("need at least 2 checkpoints carrying both metrics")
    a = np.array([p[0] for p in pairs])
    b = np.array([p[1] for p in pairs])
    if a.std() == 0.0 or b.std() == 0.0:
        raise ValueError("zero variance in metric values")
    return float(np.corrcoef(a, b)[0, 1])


def validate_schedule(space: SearchSpace, schedule: Schedule) -> None:
    """Check schedule invariants: consecutive generations, and per-parameter
    steps explainable by one (possibly clamped) mutation move or a skipped
    mutation."""
    for i, entry in enumerate(schedule):
        if entry.generation != i:
            raise ValueError(f"generations not consecutive at index {i}")
    for prev, cur in zip(schedule.entries, schedule.entries[1:]):
        for spec in space:
            a, b = prev.hparams[spec.name], cur.hparams[spec.name]
            moves = {a} | {clamp(spec, a + s * d) for d in spec.deltas for s in (1.0, -1.0)}
            if not any(math.isclose(b, m, rel_tol=0, abs_tol=1e-12) for m in moves):
                raise ValueError(
                    f"{spec.name}: step {a} -> {b} at generation {cur.generation} "
                    "is not a single mutation move"
                )


# -- tabular export ------------------------------------------------------------

_COLUMNS = ("generation", "checkpoint_id", "parameter", "value")


def _rows_for(obj) -> list[dict]:
    if isinstance(obj, Schedule):
        return [
            {"generation": e.generation, "checkpoint_id": e.checkpoint_id, "parameter": p, "value": v}
            for e in obj
            for p, v in e.hparams.items()
        ]
    if isinstance(obj, PopulationLog):
        rows = []
        for r in obj.records():
            if not r.evaluated:
                continue
            values = dict(r.hparams)
            values["loss"] = r.loss
            values.update(r.metrics)
            rows.extend(
                {"generation": r.generation, "checkpoint_id": r.id, "parameter": p, "value": v}
                for p, v in values.items()
            )
        return rows
    return [
        {
            "generation": p.generation,
            "checkpoint_id": p.checkpoint_id,
            "parameter": p.parameter,
            "value": p.value,
        }
        for p in obj
    ]


def export(obj, path: str | Path, format: str = "csv") -> None:
    """Write a log, schedule, or series as stable-column tabular data."""
    rows = _rows_for(obj)
    path = Path(path)
    if format == "csv":
        with open(path, "w", newline="", encoding="utf-8") as f:
            writer = csv.DictWriter(f, fieldnames=_COLUMNS)
            writer.writeheader()
            writer.writerows(rows)
    elif format == "json":
        path.write_text(
            json.dumps([{c: r[c] for c in _COLUMNS} for r in rows], indent=2) + "\n",
            encoding="utf-8",
        )
    else:
        raise ValueError(f"unknown export format {format!r}")


def read_table(path: str | Path) -> list[dict]:
    """Read back an exported table (csv or json) with typed columns."""
    path = Path(path)
    if path.suffix == ".json" or path.read_text(encoding="utf-8").lstrip()[:1] == "[":
        rows = json.loads(path.read_text(encoding="utf-8"))
    else:
        with open(path, newline="", encoding="utf-8") as f:
            rows = list(csv.DictReader(f))
    return [
        {
            "generation": int(r["generation"]),
            "checkpoint_id": r["checkpoint_id"],
            "parameter": r["parameter"],
            "value": float(r["value"]),
        }
        for r in rows
    ]
