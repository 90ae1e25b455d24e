"""Declarative run configuration: YAML file in, validated RunConfig out.

Unknown keys are rejected, and the fully resolved config is echoed into every
run directory so a run is rerunnable without the original file.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path

import yaml

from .hparam import (
    SPACE_PROFILES,
    HyperparamVector,
    SearchSpace,
    spec_from_dict,
    spec_to_dict,
)


class ConfigError(Exception):
    """Invalid or malformed run configuration."""


@dataclass
class RunConfig:
    task: str = "quadratic"
    task_options: dict = field(default_factory=dict)
    population_size: int = 8
    workers: int = 8
    updates_per_step: int = 2200
    max_generations: int = 160
    seed: int = 0
    mode: str = "async"
    search_space: SearchSpace | None = None  # None: use the task's default space
    mutation_probability: float = 1.0
    handicap: float = 0.25
    initiator_window: int = 3
    opponent_window: int = 2
    fixed_hparams: HyperparamVector | None = None
    max_wall_time: float | None = None
    output_dir: str | None = None

    def validate(self) -> None:
        if self.population_size < 2:
            raise ConfigError("population_size must be >= 2")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1")
        if self.updates_per_step < 1:
            raise ConfigError("updates_per_step must be >= 1")
        if self.max_generations < 1:
            raise ConfigError("max_generations must be >= 1")
        if self.mode not in ("async", "deterministic"):
            raise ConfigError(f"mode must be 'async' or 'deterministic', got {self.mode!r}")
        if not 0.0 <= self.mutation_probability <= 1.0:
            raise ConfigError("mutation_probability must be in [0, 1]")
        if self.handicap < 0.0:
            raise ConfigError("handicap must be >= 0")
        if self.initiator_window < 1 or self.opponent_window < 1:
            raise ConfigError("generation windows must be >= 1")
        if self.max_wall_time is not None and self.max_wall_time <= 0:
            raise ConfigError("max_wall_time must be positive")


_CONFIG_KEYS = {f.name for f in fields(RunConfig)}


def resolve_search_space(value) -> SearchSpace | None:
    """Accept a profile name, an explicit spec list, or None."""
    if value is None:
        return None
    if isinstance(value, str):
        if value not in SPACE_PROFILES:
            raise ConfigError(
                f"unknown search-space profile {value!r}; available: {sorted(SPACE_PROFILES)}"
            )
        return SPACE_PROFILES[value]
    if isinstance(value, (list, tuple)):
        try:
            return tuple(spec_from_dict(d) for d in value)
        except (ValueError, KeyError, TypeError) as exc:
            raise ConfigError(f"bad search space entry: {exc}") from exc
    raise ConfigError("search_space must be a profile name or a list of parameter specs")


def config_from_dict(raw: dict) -> RunConfig:
    if not isinstance(raw, dict):
        raise ConfigError("config root must be a mapping")
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    raw = dict(raw)
    raw["search_space"] = resolve_search_space(raw.get("search_space"))
    if raw.get("fixed_hparams") is not None:
        raw["fixed_hparams"] = {str(k): float(v) for k, v in raw["fixed_hparams"].items()}
    if raw.get("task_options") is not None and not isinstance(raw["task_options"], dict):
        raise ConfigError("task_options must be a mapping")
    try:
        cfg = RunConfig(**raw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc
    for name, kind in (
        ("population_size", int),
        ("workers", int),
        ("updates_per_step", int),
        ("max_generations", int),
        ("seed", int),
    ):
        value = getattr(cfg, name)
        if not isinstance(value, int) or isinstance(value, bool):
            raise ConfigError(f"{name} must be an integer, got {value!r}")
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> RunConfig:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        # YAML errors carry line/column marks; keep them in the message.
        raise ConfigError(f"malformed config {path}: {exc}") from exc
    if raw is None:
        raw = {}
    return config_from_dict(raw)


def config_to_dict(cfg: RunConfig) -> dict:
    return {
        "task": cfg.task,
        "task_options": dict(cfg.task_options),
        "population_size": cfg.population_size,
        "workers": cfg.workers,
        "updates_per_step": cfg.updates_per_step,
        "max_generations": cfg.max_generations,
        "seed": cfg.seed,
        "mode": cfg.mode,
        "search_space": None
        if cfg.search_space is None
        else [spec_to_dict(s) for s in cfg.search_space],
        "mutation_probability": cfg.mutation_probability,
        "handicap": cfg.handicap,
        "initiator_window": cfg.initiator_window,
        "opponent_window": cfg.opponent_window,
        "fixed_hparams": None if cfg.fixed_hparams is None else dict(cfg.fixed_hparams),
        "max_wall_time": cfg.max_wall_time,
        "output_dir": cfg.output_dir,
    }


def save_config(cfg: RunConfig, path: str | Path) -> None:
    Path(path).write_text(yaml.safe_dump(config_to_dict(cfg), sort_keys=False), encoding="utf-8")
