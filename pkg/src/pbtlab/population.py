"""Append-only checkpoint registry and initiator-based parent selection.

The log is the single synchronization point between workers: claiming a
parent (which marks an initiator) and reporting a result are atomic
read-modify-write operations under one internal lock, and the lock is never
held while a model trains. Every state change is also appended to a JSON-lines
file (one full record snapshot per line, last write wins on replay), so a run
directory can be resumed after a crash with flags and pending losses intact.
"""

from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .hparam import HyperparamVector

logger = logging.getLogger(__name__)

DEFAULT_HANDICAP = 0.25
INITIATOR_WINDOW = 3  # initiator generation window {G-2 .. G}
OPPONENT_WINDOW = 2  # opponent generation window {G-1 .. G}


class LogCorruptError(Exception):
    """A persisted population log has a broken record before its final line."""


@dataclass
class CheckpointRecord:
    """One trained-and-evaluated (or still pending) model checkpoint."""

    id: str
    generation: int
    parent_id: str | None
    hparams: HyperparamVector
    seq: int
    loss: float | None = None
    state_ref: str | None = None
    initiated: bool = False
    metrics: dict[str, float] = field(default_factory=dict)
    worker: int | None = None
    step: int | None = None

    @property
    def evaluated(self) -> bool:
        return self.loss is not None


def initiator_wins(pct_init: float, pct_opp: float, handicap: float = DEFAULT_HANDICAP) -> bool:
    """The matchup rule: the initiator wins unless the opponent's rank
    percentile beats its own by more than the handicap."""
    return pct_init - handicap < pct_opp


class PopulationLog:
    """Thread-safe append-only registry of checkpoint records."""

    def __init__(self, path: str | Path | None = None):
        self._lock = threading.RLock()
        self._changed = threading.Condition(self._lock)
        self._records: list[CheckpointRecord] = []
        self._by_id: dict[str, CheckpointRecord] = {}
        self._eval_counts: dict[int, int] = {}
        # ids of children created by THIS process and not yet reported; pending
        # records replayed from disk are orphans of a dead process and must
        # not block the starvation rescue below
        self._inflight: set[str] = set()
        self._next_index = 0
        self._path = Path(path) if path is not None else None
        self._file = None
        if self._path is not None:
            self._file = open(self._path, "a", encoding="utf-8")

    # -- persistence ---------------------------------------------------------

    def _emit(self, rec: CheckpointRecord) -> None:
        if self._file is None:
            return
        row = {
            "id": rec.id,
            "gen": rec.generation,
            "parent": rec.parent_id,
            "hparams": rec.hparams,
            "loss": rec.loss,
            "initiated": rec.initiated,
            "state_ref": rec.state_ref,
            "seq": rec.seq,
            "metrics": rec.metrics,
            "worker": rec.worker,
            "step": rec.step,
        }
        self._file.write(json.dumps(row) + "\n")
        self._file.flush()

    @classmethod
    def load(cls, path: str | Path) -> "PopulationLog":
        """Replay a persisted log; a truncated trailing line is discarded."""
        path = Path(path)
        log = cls.__new__(cls)
        log._lock = threading.RLock()
        log._changed = threading.Condition(log._lock)
        log._records = []
        log._by_id = {}
        log._eval_counts = {}
        log._inflight = set()
        log._next_index = 0
        log._path = path
        log._file = None

        lines = path.read_text(encoding="utf-8").split("\n")
        if lines and lines[-1] == "":
            lines.pop()
        for i, line in enumerate(lines):
            try:
                row = json.loads(line)
                rec_id = row["id"]
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                if i == len(lines) - 1:
                    logger.warning("discarding truncated trailing log record: %r", line[:80])
                    break
                raise LogCorruptError(f"corrupt record at line {i + 1}: {exc}") from exc
            rec = log._by_id.get(rec_id)
            if rec is None:
                rec = CheckpointRecord(
                    id=rec_id,
                    generation=int(row["gen"]),
                    parent_id=row["parent"],
                    hparams={k: float(v) for k, v in row["hparams"].items()},
                    seq=int(row["seq"]),
                    worker=row.get("worker"),
                    step=row.get("step"),
                )
                log._records.append(rec)
                log._by_id[rec_id] = rec
            if row["loss"] is not None and rec.loss is None:
                rec.loss = float(row["loss"])
                log._eval_counts[rec.generation] = log._eval_counts.get(rec.generation, 0) + 1
            rec.state_ref = row["state_ref"]
            rec.initiated = bool(row["initiated"])
            rec.metrics = {k: float(v) for k, v in row.get("metrics", {}).items()}
        log._next_index = 1 + max((int(r.id[1:]) for r in log._records), default=-1)
        log._file = open(path, "a", encoding="utf-8")
        return log

    def close(self) -> None:
        with self._lock:
            if self._file is not None:
                self._file.close()
                self._file = None

    # -- appends -------------------------------------------------------------

    def _new_record(self, generation, parent_id, hparams, state_ref, worker, step):
        idx = self._next_index
        self._next_index += 1
        rec = CheckpointRecord(
            id=f"c{idx:06d}",
            generation=generation,
            parent_id=parent_id,
            hparams=dict(hparams),
            seq=idx,
            state_ref=state_ref,
            worker=worker,
            step=step,
        )
        self._records.append(rec)
        self._by_id[rec.id] = rec
        self._emit(rec)
        return rec

    def add_seed(self, hparams: HyperparamVector, state_ref: str | None = None) -> CheckpointRecord:
        """Register a generation-0 root with a pending loss."""
        with self._lock:
            rec = self._new_record(0, None, hparams, state_ref, None, None)
            self._changed.notify_all()
            return rec

    def add_child(
        self,
        parent: CheckpointRecord,
        hparams: HyperparamVector,
        worker: int | None = None,
        step: int | None = None,
    ) -> CheckpointRecord:
        """Register a pending child of ``parent`` (training not finished yet)."""
        with self._lock:
            if parent.id not in self._by_id:
                raise KeyError(f"unknown parent {parent.id!r}")
            rec = self._new_record(parent.generation + 1, parent.id, hparams, None, worker, step)
            self._inflight.add(rec.id)
            return rec

    def set_state_ref(self, rec_id: str, state_ref: str) -> None:
        """Attach a state blob locator to a record (used when seeding roots,
        whose blobs are written after the record gets its id)."""
        with self._lock:
            rec = self._by_id[rec_id]
            rec.state_ref = state_ref
            self._emit(rec)

    def report_result(
        self,
        rec_id: str,
        loss: float,
        state_ref: str | None = None,
        metrics: dict[str, float] | None = None,
    ) -> None:
        """Record the evaluated loss for a pending record. Write-once."""
        if math.isnan(loss):
            raise ValueError("loss must not be NaN (use +inf for failed training)")
        with self._lock:
            rec = self._by_id.get(rec_id)
            if rec is None:
                raise KeyError(f"unknown checkpoint {rec_id!r}")
            if rec.loss is not None:
                raise ValueError(f"{rec_id} already has a reported loss")
            rec.loss = float(loss)
            rec.state_ref = state_ref
            if metrics:
                rec.metrics = {k: float(v) for k, v in metrics.items()}
            self._eval_counts[rec.generation] = self._eval_counts.get(rec.generation, 0) + 1
            self._inflight.discard(rec.id)
            self._emit(rec)
            self._changed.notify_all()

    # -- queries -------------------------------------------------------------

    def get(self, rec_id: str) -> CheckpointRecord:
        with self._lock:
            return self._by_id[rec_id]

    def records(self) -> list[CheckpointRecord]:
        """Snapshot of all records in creation order."""
        with self._lock:
            return list(self._records)

    def evaluated_counts(self) -> dict[int, int]:
        with self._lock:
            return dict(self._eval_counts)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)

    def last_completed_generation(self) -> int | None:
        """Latest generation holding at least 2 evaluated checkpoints."""
        with self._lock:
            done = [g for g, n in self._eval_counts.items() if n >= 2]
            return max(done) if done else None

    def rank_percentile(self, ckpt: CheckpointRecord) -> float:
        """Loss rank of ``ckpt`` in its own and the previous generation,
        scaled to [0, 1]: 0 best, 1 worst, ties broken by id."""
        with self._lock:
            if ckpt.loss is None:
                raise ValueError(f"{ckpt.id} has no evaluated loss")
            g = ckpt.generation
            gens = (0,) if g == 0 else (g - 1, g)
            window = [r for r in self._records if r.loss is not None and r.generation in gens]
            window.sort(key=lambda r: (r.loss, r.id))
            n = len(window)
            if n == 1:
                return 0.5
            rank = next(i for i, r in enumerate(window) if r.id == ckpt.id)
            return rank / (n - 1)

    def matchup_winner(
        self,
        initiator: CheckpointRecord,
        opponent: CheckpointRecord,
        handicap: float = DEFAULT_HANDICAP,
    ) -> CheckpointRecord:
        """Percentile matchup, biased toward the initiator by ``handicap``."""
        with self._lock:
            pct_init = self.rank_percentile(initiator)
            pct_opp = self.rank_percentile(opponent)
            return initiator if initiator_wins(pct_init, pct_opp, handicap) else opponent

    # -- parent selection ----------------------------------------------------

    def _selectable(self, rec: CheckpointRecord) -> bool:
        # A parent candidate needs a loss for ranking and a live state blob
        # to train from; failed (+inf, stateless) records are culled here.
        return rec.loss is not None and rec.state_ref is not None

    def sample_initiator(
        self, rng: np.random.Generator, window: int = INITIATOR_WINDOW
    ) -> CheckpointRecord | None:
        """Claim a uniformly sampled non-initiated checkpoint from the last
        ``window`` generations, atomically marking it initiated."""
        with self._lock:
            last = self.last_completed_generation()
            if last is None:
                return None
            lo = max(0, last - (window - 1))
            pool = [
                r
                for r in self._records
                if not r.initiated and self._selectable(r) and lo <= r.generation <= last
            ]
            if not pool:
                return None
            rec = pool[int(rng.integers(len(pool)))]
            rec.initiated = True
            self._emit(rec)
            return rec

    def sample_opponent(
        self,
        initiator: CheckpointRecord,
        rng: np.random.Generator,
        window: int = OPPONENT_WINDOW,
    ) -> CheckpointRecord | None:
        """Uniform draw from the last ``window`` generations, never the
        initiator itself."""
        with self._lock:
            last = self.last_completed_generation()
            if last is None:
                return None
            lo = max(0, last - (window - 1))
            pool = [
                r
                for r in self._records
                if r.id != initiator.id and self._selectable(r) and lo <= r.generation <= last
            ]
            if not pool:
                return None
            return pool[int(rng.integers(len(pool)))]

    def _rescue_parent(
        self, rng: np.random.Generator, window: int
    ) -> CheckpointRecord | None:
        # Liveness valve for fault-thinned populations: when the windowed
        # initiator pool is starved and nothing is in flight, hand out one of
        # the freshest selectable records without consuming an initiation
        # (initiated flags are ignored, not written).
        cands = [r for r in self._records if self._selectable(r)]
        if not cands:
            return None
        top = max(r.generation for r in cands)
        lo = max(0, top - (window - 1))
        pool = [r for r in cands if r.generation >= lo]
        rec = pool[int(rng.integers(len(pool)))]
        logger.warning("initiator pool starved; rescuing population from %s", rec.id)
        return rec

    def find_parent_to_train(
        self,
        rng: np.random.Generator,
        handicap: float = DEFAULT_HANDICAP,
        initiator_window: int = INITIATOR_WINDOW,
        opponent_window: int = OPPONENT_WINDOW,
    ) -> CheckpointRecord | None:
        """Single parent-selection attempt; None means the caller should back
        off and retry.

        Bootstrap phase (no completed generation yet) hands out unclaimed
        generation-0 seeds, one per caller; afterwards an initiator challenges
        a random opponent and the matchup winner becomes the parent.
        """
        with self._lock:
            last = self.last_completed_generation()
            if last is None:
                # a seed whose state blob never landed (torn shutdown during
                # seeding) is unusable and stays unclaimed
                seeds = [
                    r
                    for r in self._records
                    if r.generation == 0 and not r.initiated and r.state_ref is not None
                ]
                if not seeds:
                    return None
                rec = seeds[int(rng.integers(len(seeds)))]
                rec.initiated = True
                self._emit(rec)
                return rec
            initiator = self.sample_initiator(rng, initiator_window)
            if initiator is None:
                if not self._inflight:
                    return self._rescue_parent(rng, initiator_window)
                return None
            opponent = self.sample_opponent(initiator, rng, opponent_window)
            if opponent is None:
                return initiator
            return self.matchup_winner(initiator, opponent, handicap)

    def wait_for_parent(
        self,
        rng: np.random.Generator,
        stop: threading.Event,
        handicap: float = DEFAULT_HANDICAP,
        initiator_window: int = INITIATOR_WINDOW,
        opponent_window: int = OPPONENT_WINDOW,
        poll: float = 0.02,
    ) -> CheckpointRecord | None:
        """Blocking variant of :meth:`find_parent_to_train`; returns None only
        once ``stop`` is set."""
        while not stop.is_set():
            with self._changed:
                rec = self.find_parent_to_train(rng, handicap, initiator_window, opponent_window)
                if rec is not None:
                    return rec
                self._changed.wait(poll)
        return None
