import json

import pytest
import yaml

from pbtlab.analysis import best_checkpoint, extract_schedule, read_table, tail_average
from pbtlab.cli import main
from pbtlab.config import RunConfig, load_config
from pbtlab.population import PopulationLog
from pbtlab.tasks import QuadraticTask, grid_baseline


def write_config(path, **overrides):
    cfg = dict(
        task="quadratic",
        population_size=4,
        workers=2,
        updates_per_step=5,
        max_generations=4,
        seed=3,
        mode="deterministic",
    )
    cfg.update(overrides)
    path.write_text(yaml.safe_dump(cfg), encoding="utf-8")
    return path


def test_run_minimal_config(tmp_path, capsys):
    cfg = write_config(tmp_path / "run.yaml", output_dir=str(tmp_path / "out"))
    assert main(["run", str(cfg)]) == 0
    out = tmp_path / "out"
    assert (out / "population.log").exists()
    assert (out / "summary").exists()
    assert "best=" in capsys.readouterr().out
    # resolved config echo is self-describing: search space is explicit
    echoed = yaml.safe_load((out / "config").read_text())
    assert isinstance(echoed["search_space"], list)
    assert {s["name"] for s in echoed["search_space"]} == {"h1", "h2"}


def test_run_seed_override_deterministic_identical(tmp_path):
    cfg = write_config(tmp_path / "run.yaml")
    assert main(["run", str(cfg), "--seed", "7", "--output", str(tmp_path / "a")]) == 0
    assert main(["run", str(cfg), "--seed", "7", "--output", str(tmp_path / "b")]) == 0
    assert (tmp_path / "a/population.log").read_bytes() == (tmp_path / "b/population.log").read_bytes()


def test_malformed_config_exits_one_no_run_dir(tmp_path, capsys):
    bad = tmp_path / "bad.yaml"
    bad.write_text("task: [unclosed", encoding="utf-8")
    assert main(["run", str(bad), "--output", str(tmp_path / "never")]) == 1
    assert not (tmp_path / "never").exists()
    assert "error" in capsys.readouterr().err.lower()


def test_unknown_config_key_exits_one(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("task: quadratic\nbogus_knob: 3\n", encoding="utf-8")
    assert main(["run", str(cfg)]) == 1
    assert "bogus_knob" in capsys.readouterr().err


def test_usage_error_exits_one(capsys):
    assert main(["frobnicate"]) == 1


def test_baseline_init_equals_grid_single_point(tmp_path):
    out = tmp_path / "base"
    cfg = write_config(tmp_path / "b.yaml", output_dir=str(out))
    assert main(["baseline", str(cfg), "--source", "init"]) == 0
    log = PopulationLog.load(out / "population.log")
    best = best_checkpoint(log)
    assert best.hparams == {"h1": 0.5, "h2": 0.5}
    oracle = grid_baseline(
        QuadraticTask(),
        [{"h1": 0.5, "h2": 0.5}],
        RunConfig(max_generations=4, updates_per_step=5, seed=3),
    )
    assert best.loss == oracle[0][1]


def test_baseline_file_source(tmp_path):
    hp = tmp_path / "hp.yaml"
    hp.write_text("h1: 0.25\nh2: 0.75\n", encoding="utf-8")
    out = tmp_path / "basef"
    cfg = write_config(tmp_path / "b.yaml", output_dir=str(out))
    assert main(["baseline", str(cfg), "--source", f"file:{hp}"]) == 0
    log = PopulationLog.load(out / "population.log")
    assert best_checkpoint(log).hparams == {"h1": 0.25, "h2": 0.75}


def test_baseline_file_out_of_range_hints_clamp(tmp_path, capsys):
    hp = tmp_path / "hp.yaml"
    hp.write_text("h1: 1.5\nh2: 0.5\n", encoding="utf-8")
    cfg = write_config(tmp_path / "b.yaml", output_dir=str(tmp_path / "nope"))
    assert main(["baseline", str(cfg), "--source", f"file:{hp}"]) == 1
    err = capsys.readouterr().err
    assert "clamp" in err.lower()


def test_baseline_tail_average_of_run(tmp_path):
    pbt_out = tmp_path / "pbt"
    cfg = write_config(tmp_path / "r.yaml", output_dir=str(pbt_out), max_generations=6)
    assert main(["run", str(cfg)]) == 0
    base_out = tmp_path / "base"
    cfg2 = write_config(tmp_path / "b.yaml", output_dir=str(base_out))
    assert main(
        ["baseline", str(cfg2), "--source", f"tail-average-of:{pbt_out}", "--tail-k", "3"]
    ) == 0
    log = PopulationLog.load(pbt_out / "population.log")
    expected = tail_average(extract_schedule(log, best_checkpoint(log)), 3)
    echoed = yaml.safe_load((base_out / "config").read_text())
    assert echoed["fixed_hparams"] == pytest.approx(expected)


def test_baseline_missing_source_run(tmp_path, capsys):
    cfg = write_config(tmp_path / "b.yaml", output_dir=str(tmp_path / "x"))
    assert main(["baseline", str(cfg), "--source", f"tail-average-of:{tmp_path}/ghost"]) == 1


def test_resume_command(tmp_path, capsys):
    out = tmp_path / "res"
    cfg = write_config(tmp_path / "r.yaml", output_dir=str(out), max_generations=3)
    assert main(["run", str(cfg)]) == 0
    assert main(["resume", str(out), "--max-generations", "6"]) == 0
    assert "generations=" in capsys.readouterr().out
    log = PopulationLog.load(out / "population.log")
    assert log.last_completed_generation() >= 6


def test_analyze_schedule_two_rows_for_one_generation_run(tmp_path):
    out = tmp_path / "one"
    cfg = write_config(
        tmp_path / "r.yaml",
        task="regression",
        output_dir=str(out),
        max_generations=1,
        updates_per_step=5,
    )
    assert main(["run", str(cfg)]) == 0
    dest = tmp_path / "sched.csv"
    assert main(["analyze", "schedule", str(out), "--out", str(dest)]) == 0
    rows = read_table(dest)
    assert len(rows) == 2  # root + child, one parameter (sigma)
    assert [r["generation"] for r in rows] == [0, 1]


def test_analyze_series_row_count_and_unknown_param(tmp_path, capsys):
    out = tmp_path / "ser"
    cfg = write_config(tmp_path / "r.yaml", output_dir=str(out))
    assert main(["run", str(cfg)]) == 0
    dest = tmp_path / "series.csv"
    assert main(["analyze", "series", str(out), "h1", "--out", str(dest)]) == 0
    log = PopulationLog.load(out / "population.log")
    n_eval = sum(1 for r in log.records() if r.evaluated)
    assert len(read_table(dest)) == n_eval
    assert main(["analyze", "series", str(out), "zz", "--out", str(dest)]) == 1
    assert "h1" in capsys.readouterr().err  # lists valid names


def test_analyze_lowess_and_correlate(tmp_path, capsys):
    out = tmp_path / "corr"
    cfg = write_config(
        tmp_path / "r.yaml",
        task="regression",
        output_dir=str(out),
        max_generations=6,
        updates_per_step=10,
    )
    assert main(["run", str(cfg)]) == 0
    low = tmp_path / "low.csv"
    assert main(["analyze", "lowess", str(out), "sigma", "--out", str(low), "--frac", "0.5"]) == 0
    assert low.read_text().startswith("x,y_smoothed")
    dest = tmp_path / "r.json"
    assert main(
        ["analyze", "correlate", str(out), "loss", "report_mse", "--out", str(dest), "--format", "json"]
    ) == 0
    payload = json.loads(dest.read_text())
    assert -1.0 <= payload["pearson_r"] <= 1.0
    assert "pearson_r=" in capsys.readouterr().out


def test_analyze_never_modifies_log(tmp_path):
    out = tmp_path / "ro"
    cfg = write_config(tmp_path / "r.yaml", output_dir=str(out))
    assert main(["run", str(cfg)]) == 0
    before = (out / "population.log").read_bytes()
    assert main(["analyze", "series", str(out), "h1", "--out", str(tmp_path / "s.csv")]) == 0
    assert main(["analyze", "schedule", str(out), "--out", str(tmp_path / "sc.csv")]) == 0
    assert (out / "population.log").read_bytes() == before


def test_analyze_missing_run_dir(tmp_path):
    assert main(["analyze", "series", str(tmp_path / "ghost"), "p", "--out", str(tmp_path / "o")]) == 1


def test_rerun_same_directory_is_config_error(tmp_path, capsys):
    out = tmp_path / "dup"
    cfg = write_config(tmp_path / "r.yaml", output_dir=str(out))
    assert main(["run", str(cfg)]) == 0
    assert main(["run", str(cfg)]) == 1
    assert "resume" in capsys.readouterr().err


def test_config_echo_is_loadable_and_rerunnable(tmp_path):
    out = tmp_path / "echo"
    cfg = write_config(tmp_path / "r.yaml", output_dir=str(out))
    assert main(["run", str(cfg)]) == 0
    echoed = load_config(out / "config")
    assert echoed.task == "quadratic"
    assert echoed.search_space is not None
    echoed.validate()
