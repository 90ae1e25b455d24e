"""Command-line entry point: run, baseline, resume, analyze.

Exit codes: 0 success, 1 usage/config error, 2 runtime failure. Set
``PBTLAB_LOG`` (debug/info/warning/error) to control log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import yaml

from . import analysis, orchestrator
from .config import ConfigError, load_config
from .hparam import init_vector
from .orchestrator import CONFIG_FILE, LOG_FILE
from .population import PopulationLog
from .tasks import make_task

logger = logging.getLogger(__name__)

USAGE_ERROR = 1
RUNTIME_ERROR = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _UsageError(message)


def _build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pbtlab", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def add_overrides(p):
        p.add_argument("--output", help="run directory (overrides output_dir)")
        p.add_argument("--seed", type=int)
        p.add_argument("--workers", type=int)
        p.add_argument("--population-size", type=int)
        p.add_argument("--updates-per-step", type=int)
        p.add_argument("--max-generations", type=int)
        p.add_argument("--mode", choices=["async", "deterministic"])

    p_run = sub.add_parser("run", help="train a population from a config file")
    p_run.add_argument("config", type=Path)
    add_overrides(p_run)

    p_base = sub.add_parser("baseline", help="fixed-hyperparameter run (mutation disabled)")
    p_base.add_argument("config", type=Path)
    p_base.add_argument(
        "--source",
        default="init",
        help="init | file:<hparams.yaml> | tail-average-of:<run_dir>",
    )
    p_base.add_argument("--tail-k", type=int, default=10, help="tail length for tail-average-of")
    add_overrides(p_base)

    p_resume = sub.add_parser("resume", help="continue an interrupted run")
    p_resume.add_argument("run_dir", type=Path)
    p_resume.add_argument("--max-generations", type=int)
    p_resume.add_argument("--workers", type=int)

    p_an = sub.add_parser("analyze", help="export schedules, series, trends, correlations")
    an_sub = p_an.add_subparsers(dest="analysis", required=True)

    def add_an(name, **kwargs):
        p = an_sub.add_parser(name, **kwargs)
        p.add_argument("run_dir", type=Path)
        p.add_argument("--out", type=Path, required=True)
        p.add_argument("--format", choices=["csv", "json"], default="csv")
        return p

    p_sched = add_an("schedule", help="best model's ancestor-chain hyperparameters")
    p_sched.add_argument("--metric", default="loss")
    p_series = add_an("series", help="per-checkpoint population values of one parameter")
    p_series.add_argument("param")
    p_low = add_an("lowess", help="smoothed trend of one parameter over generations")
    p_low.add_argument("param")
    p_low.add_argument("--frac", type=float, default=0.3)
    p_corr = add_an("correlate", help="Pearson correlation between two logged metrics")
    p_corr.add_argument("metric_a")
    p_corr.add_argument("metric_b")
    return parser


def _apply_overrides(config, args):
    if args.output is not None:
        config.output_dir = args.output
    for attr, key in (
        ("seed", "seed"),
        ("workers", "workers"),
        ("population_size", "population_size"),
        ("updates_per_step", "updates_per_step"),
        ("max_generations", "max_generations"),
        ("mode", "mode"),
    ):
        value = getattr(args, attr)
        if value is not None:
            setattr(config, key, value)
    config.validate()
    return config


def _print_summary(summary) -> None:
    best = summary.best_checkpoint_id.get("loss", "-")
    print(
        f"checkpoints={summary.total_checkpoints} "
        f"generations={summary.generations_completed} "
        f"best={best} wall_time={summary.wall_time:.2f}s"
    )


def _cmd_run(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    _print_summary(orchestrator.run(config))
    return 0


def _baseline_vector(args, config):
    source = args.source
    if source == "init":
        task = make_task(config.task, config.task_options, config.seed)
        space = config.search_space if config.search_space is not None else task.search_space()
        return init_vector(space)
    if source.startswith("file:"):
        path = Path(source[len("file:") :])
        try:
            raw = yaml.safe_load(path.read_text(encoding="utf-8"))
        except OSError as exc:
            raise ConfigError(f"cannot read hyperparameter file: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError("hyperparameter file must be a mapping of name: value")
        return {str(k): float(v) for k, v in raw.items()}
    if source.startswith("tail-average-of:"):
        run_dir = Path(source[len("tail-average-of:") :])
        log_path = run_dir / LOG_FILE
        if not log_path.exists():
            raise ConfigError(f"{run_dir} has no population log")
        log = PopulationLog.load(log_path)
        try:
            schedule = analysis.extract_schedule(log, analysis.best_checkpoint(log))
        finally:
            log.close()
        return analysis.tail_average(schedule, args.tail_k)
    raise ConfigError(f"unknown baseline source {source!r}")


def _cmd_baseline(args) -> int:
    config = _apply_overrides(load_config(args.config), args)
    config.fixed_hparams = _baseline_vector(args, config)
    _print_summary(orchestrator.run(config))
    return 0


def _cmd_resume(args) -> int:
    summary = orchestrator.resume(args.run_dir, args.max_generations, args.workers)
    _print_summary(summary)
    return 0


def _cmd_analyze(args) -> int:
    log_path = args.run_dir / LOG_FILE
    if not log_path.exists():
        raise ConfigError(f"{args.run_dir} is not a run directory (missing {LOG_FILE})")
    log = PopulationLog.load(log_path)
    try:
        return _run_analysis(args, log)
    finally:
        log.close()


def _run_analysis(args, log) -> int:
    if args.analysis == "schedule":
        best = analysis.best_checkpoint(log, args.metric)
        analysis.export(analysis.extract_schedule(log, best), args.out, args.format)
    elif args.analysis == "series":
        analysis.export(analysis.population_series(log, args.param), args.out, args.format)
    elif args.analysis == "lowess":
        points = [(p.generation, p.value) for p in analysis.population_series(log, args.param)]
        smoothed = analysis.lowess(points, args.frac)
        rows = [{"x": x, "y_smoothed": y} for x, y in smoothed]
        if args.format == "json":
            args.out.write_text(json.dumps(rows, indent=2) + "\n", encoding="utf-8")
        else:
            with open(args.out, "w", encoding="utf-8") as f:
                f.write("x,y_smoothed\n")
                for row in rows:
                    f.write(f"{row['x']},{row['y_smoothed']}\n")
    else:
        r = analysis.metric_correlation(log, args.metric_a, args.metric_b)
        payload = {"metric_a": args.metric_a, "metric_b": args.metric_b, "pearson_r": r}
        if args.format == "json":
            args.out.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")
        else:
            with open(args.out, "w", encoding="utf-8") as f:
                f.write("metric_a,metric_b,pearson_r\n")
                f.write(f"{args.metric_a},{args.metric_b},{r}\n")
        print(f"pearson_r={r:.6f}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(
        level=getattr(logging, os.environ.get("PBTLAB_LOG", "warning").upper(), logging.WARNING),
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    try:
        if args.command == "run":
            return _cmd_run(args)
        if args.command == "baseline":
            return _cmd_baseline(args)
        if args.command == "resume":
            return _cmd_resume(args)
        return _cmd_analyze(args)
    except (ConfigError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_ERROR
    except Exception as exc:  # runtime failures (locked dir, corrupt log, ...)
        logger.exception("command failed")
        print(f"runtime error: {exc}", file=sys.stderr)
        return RUNTIME_ERROR


if __name__ == "__main__":
    sys.exit(main())
