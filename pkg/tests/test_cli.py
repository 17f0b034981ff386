import csv
import os
import subprocess
import sys

import numpy as np
import pytest

from hieragg.cli import OUTPUT_ENV, RunConfig, main
from hieragg.errors import ConfigError
from hieragg.hierarchy import check_summation, read_hierarchy

SMALL = ["--families", "2", "--subfamilies", "2", "--leaves", "3", "--weeks", "150"]


def _rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture
def data_dir(tmp_path):
    d = tmp_path / "data"
    assert main(["generate", "--seed", "4", *SMALL, "--output-dir", str(d)]) == 0
    return d


def _run_args(data_dir, out, *extra):
    return [
        "--hierarchy", str(data_dir / "hierarchy.csv"),
        "--sales", str(data_dir / "sales.csv"),
        "--output-dir", str(out),
        "--tasks", "7:1,3:2",
        *extra,
    ]


def test_config_round_trip():
    cfg = RunConfig(tasks=((5, 1), (8, 4)), algorithm="boa", loss="square", gradient_trick=True, eta=0.25,
                    alphas=(0.5, 1.0), betas=(0.125,), benchmarks=("null",), projection="l1", jobs=3)
    text = cfg.to_ini()
    assert RunConfig.from_ini(text) == cfg
    assert RunConfig.from_ini(text).to_ini() == text
    assert RunConfig.from_ini(RunConfig().to_ini()) == RunConfig()


@pytest.mark.parametrize(
    "kw",
    [{"tasks": ((3, 4),)}, {"tasks": ((28, 1),)}, {"algorithm": "ridge"}, {"projection": "l3"},
     {"alphas": (), "betas": (0.5,)}, {"alphas": (), "betas": (), "benchmarks": ()}, {"jobs": 0}],
)
def test_config_validation(kw):
    with pytest.raises(ConfigError):
        RunConfig(**kw)


def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError):
        RunConfig.from_ini("[aggregation]\nalgo = boa\n")


def test_generate_is_byte_identical(tmp_path):
    for d in ("a", "b"):
        main(["generate", "--seed", "7", "--families", "5", "--weeks", "182", "--output-dir", str(tmp_path / d)])
    for name in ("hierarchy.csv", "sales.csv"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()
    assert len(read_hierarchy(tmp_path / "a" / "hierarchy.csv").children["total"]) == 5


def test_generate_too_few_weeks(tmp_path, capsys):
    assert main(["generate", "--weeks", "60", "--output-dir", str(tmp_path)]) == 2
    assert "SpecTooSmall" in capsys.readouterr().err


def test_run_and_evaluate(tmp_path, data_dir):
    out = tmp_path / "out"
    assert main(["run", *_run_args(data_dir, out)]) == 0
    assert RunConfig.load(out / "run.cfg").tasks == ((7, 1), (3, 2))
    for task in ("h7_n1", "h3_n2"):
        d = out / task
        summary = {r["key"]: r["value"] for r in _rows(d / "summary.csv")}
        assert summary["experts"] == "73"
        assert int(summary["summation_violations"]) > 0
        weights = _rows(d / "weights.csv")
        totals = {}
        for r in weights:
            key = (r["target_week"], r["node_id"])
            totals[key] = totals.get(key, 0.0) + float(r["weight"])
        assert all(abs(v - 1.0) < 1e-9 for v in totals.values())
        assert len(_rows(d / "forecasts.csv")) == len(totals)
    assert main(["evaluate", *_run_args(data_dir, out)]) == 0
    report = _rows(out / "report.csv")
    assert {(r["metric"], r["h"], r["n"]) for r in report} >= {("MAE", "7", "1"), ("RMSE", "3", "2")}
    levels = {r["level"] for r in _rows(out / "mape_levels.csv")}
    assert "entire hierarchy" in levels and "total node" in levels
    for name in ("error_cumulative.csv", "error_histogram.csv"):
        assert _rows(out / name)
    traj = _rows(out / "h7_n1" / "trajectory_total.csv")
    per_week = {}
    for r in traj:
        per_week.setdefault(r["target_week"], []).append(float(r["weight"]))
    assert all(len(v) == 73 and abs(sum(v) - 1.0) < 1e-9 for v in per_week.values())


@pytest.mark.parametrize("projection", ["l2", "l1"])
def test_projection_removes_violations(tmp_path, data_dir, projection):
    out = tmp_path / "out"
    assert main(["run", *_run_args(data_dir, out, "--projection", projection, "--tasks", "7:1")]) == 0
    summary = {r["key"]: r["value"] for r in _rows(out / "h7_n1" / "summary.csv")}
    assert int(summary["summation_violations_before_projection"]) > 0
    assert summary["summation_violations"] == "0"
    tree = read_hierarchy(data_dir / "hierarchy.csv")
    vectors = {}
    for r in _rows(out / "h7_n1" / "forecasts.csv"):
        vectors.setdefault(int(r["target_week"]), {})[r["node_id"]] = float(r["forecast"])
    for values in vectors.values():
        if len(values) == len(tree):
            v = np.array([values[node] for node in tree.nodes])
            assert check_summation(tree, v, tol=1e-6) == []


def test_single_expert_pipeline(tmp_path, data_dir):
    out = tmp_path / "out"
    extra = ("--alphas", "", "--betas", "", "--benchmarks", "current", "--tasks", "3:1")
    assert main(["run", *_run_args(data_dir, out, *extra)]) == 0
    sales = {}
    for r in _rows(data_dir / "sales.csv"):
        sales[(int(r["date_or_week"]), r["node_id"])] = float(r["value"])
    tree = read_hierarchy(data_dir / "hierarchy.csv")
    for r in _rows(out / "h3_n1" / "forecasts.csv"):
        t, node = int(r["target_week"]), r["node_id"]
        if node in tree.leaves and t - 3 >= 1:
            assert float(r["forecast"]) == pytest.approx(sales.get((t - 3, node), 0.0), abs=1e-9)
    assert {r["weight"] for r in _rows(out / "h3_n1" / "weights.csv")} == {"1"}


def test_jobs_do_not_change_outputs(tmp_path, data_dir):
    for jobs in ("1", "4"):
        main(["run", *_run_args(data_dir, tmp_path / jobs, "--jobs", jobs, "--tasks", "5:1")])
    for name in ("forecasts.csv", "weights.csv", "summary.csv"):
        assert (tmp_path / "1" / "h5_n1" / name).read_bytes() == (tmp_path / "4" / "h5_n1" / name).read_bytes()


def test_output_dir_precedence(tmp_path, data_dir, monkeypatch):
    cfg_path = tmp_path / "run.ini"
    cfg = RunConfig(hierarchy=str(data_dir / "hierarchy.csv"), sales=str(data_dir / "sales.csv"),
                    output_dir=str(tmp_path / "from_config"), tasks=((2, 1),), alphas=(), betas=())
    cfg_path.write_text(cfg.to_ini())
    monkeypatch.setenv(OUTPUT_ENV, str(tmp_path / "from_env"))
    assert main(["run", "--config", str(cfg_path)]) == 0
    assert (tmp_path / "from_env" / "h2_n1" / "forecasts.csv").exists()
    assert not (tmp_path / "from_config").exists()
    assert main(["run", "--config", str(cfg_path), "--output-dir", str(tmp_path / "from_flag")]) == 0
    assert (tmp_path / "from_flag" / "h2_n1" / "forecasts.csv").exists()


def test_evaluate_without_run(tmp_path, data_dir, capsys):
    assert main(["evaluate", *_run_args(data_dir, tmp_path / "missing")]) == 2
    assert "MissingRunOutput" in capsys.readouterr().err


def test_weights_subcommand(tmp_path, data_dir, capsys):
    out = tmp_path / "out"
    args = _run_args(data_dir, out, "--tasks", "2:1", "--alphas", "0.5", "--betas", "0.5")
    main(["run", *args])
    capsys.readouterr()
    assert main(["weights", *args, "--task", "2:1", "--node", "F01"]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "target_week,node_id,expert_index,weight"
    # targets 1 + h .. T + h
    assert len(lines) - 1 == 7 * 150


def test_console_entry_point(tmp_path):
    env = dict(os.environ, **{OUTPUT_ENV: str(tmp_path / "gen")})
    proc = subprocess.run([sys.executable, "-m", "hieragg.cli", "generate", *SMALL], env=env,
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert (tmp_path / "gen" / "sales.csv").exists()
