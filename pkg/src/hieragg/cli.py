"""Command-line experiment runner: ``generate``, ``run``, ``evaluate``, ``weights``.

A run writes, for every task ``(h, n)``, a directory ``h{h}_n{n}`` under the
output directory with the aggregated forecasts, the non-zero weights, the
expert labels and a summary. ``evaluate`` recomputes the experts from the
data and compares the stored forecasts with the meta-predictors.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import io
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, fields, replace
from pathlib import Path

import numpy as np

from hieragg.aggregate import ALGORITHMS, LOSSES, AggregatorConfig, run_node, write_forecasts, write_weights
from hieragg.data import YEAR_WEEKS, SplitSpec, average_panel, ingest_sales, write_sales
from hieragg.errors import ConfigError, HierAggError, MissingRunOutput
from hieragg.experts import ALPHAS, BENCHMARKS, BETAS, build_columns, default_grid
from hieragg.hierarchy import check_summation, project_l1, project_l2, read_hierarchy, summation_matrix, write_hierarchy
from hieragg.io import fmt
from hieragg.metrics import (
    META_KINDS,
    cumulative_error_curve,
    error_histogram,
    evaluate_task,
    write_report,
)
from hieragg.synth import SynthSpec, generate

log = logging.getLogger("hieragg")

OUTPUT_ENV = "HIERAGG_OUTPUT_DIR"
DEFAULT_TASKS = ((7, 1), (8, 2), (10, 4), (5, 1), (6, 2), (8, 4), (2, 1), (3, 2), (5, 4))
PROJECTIONS = ("none", "l2", "l1")


def _floats(text):
    text = text.strip()
    return tuple(float(x) for x in text.split(",")) if text else ()


def _names(text):
    return tuple(x.strip() for x in text.split(",") if x.strip())


def _tasks(text):
    out = []
    for item in text.split(","):
        item = item.strip()
        if not item:
            continue
        try:
            h, n = item.split(":")
            out.append((int(h), int(n)))
        except ValueError:
            raise ConfigError(f"task {item!r} is not of the form h:n") from None
    return tuple(out)


def _bool(text):
    value = str(text).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


@dataclass(frozen=True)
class RunConfig:
    hierarchy: str = "hierarchy.csv"
    sales: str = "sales.csv"
    output_dir: str = "out"
    granularity: str = "weekly"
    tasks: tuple[tuple[int, int], ...] = DEFAULT_TASKS
    train_end_week: int = 130
    algorithm: str = "ml_poly"
    loss: str = "absolute"
    gradient_trick: bool = False
    projection: str = "none"
    eta: float | None = None
    power: float = 2.0
    alphas: tuple[float, ...] = ALPHAS
    betas: tuple[float, ...] = BETAS
    benchmarks: tuple[str, ...] = BENCHMARKS
    year_weeks: int = YEAR_WEEKS
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ConfigError(f"algorithm must be one of {ALGORITHMS}")
        if self.loss not in LOSSES:
            raise ConfigError(f"loss must be one of {LOSSES}")
        if self.projection not in PROJECTIONS:
            raise ConfigError(f"projection must be one of {PROJECTIONS}")
        if self.granularity not in ("daily", "weekly"):
            raise ConfigError("granularity must be daily or weekly")
        if not self.tasks:
            raise ConfigError("at least one task is required")
        limit = self.year_weeks - self.year_weeks // 2 + 1
        for h, n in self.tasks:
            if not 1 <= n <= h:
                raise ConfigError(f"task ({h},{n}) needs 1 <= n <= h")
            if h > limit:
                raise ConfigError(f"task ({h},{n}) exceeds the horizon limit {limit}")
        if self.betas and not self.alphas:
            raise ConfigError("beta grid given without an alpha grid")
        if self.alphas and not self.betas:
            raise ConfigError("alpha grid needs a beta grid for the Holt experts")
        if set(self.benchmarks) - set(BENCHMARKS):
            raise ConfigError(f"benchmarks must be drawn from {BENCHMARKS}")
        if not self.benchmarks and not self.alphas:
            raise ConfigError("the expert grid is empty")
        if self.jobs < 1:
            raise ConfigError("jobs must be at least 1")

    @property
    def split(self) -> SplitSpec:
        return SplitSpec(self.train_end_week)

    @property
    def aggregator(self) -> AggregatorConfig:
        return AggregatorConfig(self.algorithm, self.loss, self.gradient_trick, self.eta, self.power)

    def specs(self):
        return default_grid(self.alphas, self.betas, self.year_weeks, self.benchmarks)

    def to_ini(self) -> str:
        cp = configparser.ConfigParser(interpolation=None)
        cp["paths"] = {
            "hierarchy": self.hierarchy,
            "sales": self.sales,
            "output_dir": self.output_dir,
            "granularity": self.granularity,
        }
        cp["tasks"] = {
            "tasks": ",".join(f"{h}:{n}" for h, n in self.tasks),
            "train_end_week": str(self.train_end_week),
        }
        cp["aggregation"] = {
            "algorithm": self.algorithm,
            "loss": self.loss,
            "gradient_trick": str(self.gradient_trick).lower(),
            "projection": self.projection,
            "eta": "" if self.eta is None else repr(self.eta),
            "power": repr(self.power),
        }
        cp["experts"] = {
            "alphas": ",".join(repr(a) for a in self.alphas),
            "betas": ",".join(repr(b) for b in self.betas),
            "benchmarks": ",".join(self.benchmarks),
            "year_weeks": str(self.year_weeks),
        }
        cp["run"] = {"seed": str(self.seed), "jobs": str(self.jobs)}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()

    @classmethod
    def from_ini(cls, text: str) -> "RunConfig":
        cp = configparser.ConfigParser(interpolation=None)
        try:
            cp.read_string(text)
        except configparser.Error as exc:
            raise ConfigError(str(exc)) from None
        parsers = {
            "tasks": _tasks,
            "train_end_week": int,
            "gradient_trick": _bool,
            "eta": lambda s: float(s) if s.strip() else None,
            "power": float,
            "alphas": _floats,
            "betas": _floats,
            "benchmarks": _names,
            "year_weeks": int,
            "seed": int,
            "jobs": int,
        }
        known = {f.name for f in fields(cls)}
        values = {}
        for section in cp.sections():
            for key, raw in cp[section].items():
                if key not in known:
                    raise ConfigError(f"unknown key {key!r} in section [{section}]")
                try:
                    values[key] = parsers.get(key, str)(raw)
                except ValueError as exc:
                    raise ConfigError(f"bad value for {key}: {exc}") from None
        return cls(**values)

    @classmethod
    def load(cls, path) -> "RunConfig":
        return cls.from_ini(Path(path).read_text(encoding="utf-8"))


def task_dir(out: Path, h: int, n: int) -> Path:
    return out / f"h{h}_n{n}"


def _load_inputs(cfg: RunConfig):
    tree = read_hierarchy(cfg.hierarchy)
    panel = ingest_sales(cfg.sales, tree, granularity=cfg.granularity)
    cfg.split.validate(max(n for _, n in cfg.tasks), panel.n_weeks)
    return tree, panel


def _expert_cube(panel, averages, h, n, specs, jobs):
    """Expert forecasts for every node: ``(nodes, T + h + 1, J)``."""
    nodes = range(len(panel.hierarchy))

    def one(i):
        return build_columns(averages[i], h, n, specs)

    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return np.stack(list(pool.map(one, nodes)))


def run_task(cfg: RunConfig, tree, panel, h, n):
    """Experts and aggregated forecasts for all nodes of one task."""
    from hieragg.experts import ExpertPanel

    specs = tuple(cfg.specs())
    averages = average_panel(panel, n)
    cube = _expert_cube(panel, averages, h, n, specs, cfg.jobs)
    agg = cfg.aggregator

    def one(i):
        ep = ExpertPanel(tree.nodes[i], h, n, specs, cube[i])
        return run_node(ep, averages[i], agg)

    with ThreadPoolExecutor(max_workers=cfg.jobs) as pool:
        runs = list(pool.map(one, range(len(tree))))
    return specs, averages, cube, runs


def _reconcile(cfg, tree, runs):
    """Project every fully defined target week onto the summation-consistent subspace."""
    fhat = np.stack([r.fhat for r in runs])
    cols = np.flatnonzero(np.all(np.isfinite(fhat), axis=0))
    before = len(_violating_weeks(tree, fhat[:, cols]))
    if cfg.projection != "none" and cols.size:
        S = summation_matrix(tree)
        block = fhat[:, cols]
        fhat[:, cols] = project_l2(S, block) if cfg.projection == "l2" else project_l1(S, block)
    after = len(_violating_weeks(tree, fhat[:, cols]))
    return fhat, cols, before, after


def _violating_weeks(tree, block):
    return [k for k in range(block.shape[1]) if check_summation(tree, block[:, k], tol=None)]


def cmd_generate(args) -> int:
    spec = SynthSpec(
        seed=args.seed,
        shape=(args.families, args.subfamilies, args.leaves),
        weeks=args.weeks,
        leaf_sparsity=args.sparsity,
        null_series_fraction=args.null_fraction,
        noise_scale=args.noise,
        drift_week=args.drift_week,
        drift_magnitude=args.drift_magnitude,
    )
    tree, panel = generate(spec)
    out = _output_dir(args.output_dir, "data")
    out.mkdir(parents=True, exist_ok=True)
    write_hierarchy(tree, out / "hierarchy.csv")
    write_sales(panel, out / "sales.csv")
    print(f"wrote {len(tree)} nodes x {panel.n_weeks} weeks to {out}")
    return 0


def cmd_run(cfg: RunConfig) -> int:
    tree, panel = _load_inputs(cfg)
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "run.cfg").write_text(cfg.to_ini(), encoding="utf-8")
    for h, n in cfg.tasks:
        specs, _, _, runs = run_task(cfg, tree, panel, h, n)
        fhat, cols, before, after = _reconcile(cfg, tree, runs)
        runs = [replace(r, fhat=fhat[i]) for i, r in enumerate(runs)]
        d = task_dir(out, h, n)
        d.mkdir(exist_ok=True)
        write_forecasts(runs, d / "forecasts.csv")
        write_weights(runs, d / "weights.csv", nonzero_only=True)
        labels = [(j + 1, spec.label) for j, spec in enumerate(specs)]
        _write_rows(d / "experts.csv", ["expert_index", "expert_label"], labels)
        _write_rows(
            d / "summary.csv",
            ["key", "value"],
            [
                ("h", h),
                ("n", n),
                ("nodes", len(tree)),
                ("experts", len(specs)),
                ("target_weeks", len(cols)),
                ("first_target_week", int(cols[0]) if cols.size else ""),
                ("projection", cfg.projection),
                ("summation_violations_before_projection", before),
                ("summation_violations", after),
            ],
        )
        print(f"task h={h} n={n}: {len(cols)} target weeks, summation violations {before} -> {after}")
    return 0


def _read_forecasts(path, tree, n_rows):
    if not path.exists():
        raise MissingRunOutput(f"{path} not found; run the experiment first")
    out = np.full((len(tree), n_rows), np.nan)
    idx = tree.index
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        for row in reader:
            t = int(row["target_week"])
            if t < n_rows:
                out[idx[row["node_id"]], t] = float(row["forecast"])
    return out


def cmd_evaluate(cfg: RunConfig) -> int:
    out = Path(cfg.output_dir)
    if not (out / "run.cfg").exists():
        raise MissingRunOutput(f"{out / 'run.cfg'} not found; run the experiment first")
    tree, panel = _load_inputs(cfg)
    T = panel.n_weeks
    reports = []
    curve_rows, hist_rows = [], []
    for h, n in cfg.tasks:
        d = task_dir(out, h, n)
        aggreg = _read_forecasts(d / "forecasts.csv", tree, T + 1)
        specs = tuple(cfg.specs())
        averages = average_panel(panel, n)
        cube = _expert_cube(panel, averages, h, n, specs, cfg.jobs)[:, : T + 1]
        weeks = np.arange(T + 1)
        report = evaluate_task(tree, averages, aggreg, cube, weeks, cfg.split, h, n)
        reports.append(report)
        _error_distributions(tree, report, averages, aggreg, cube, weeks, cfg.split, h, n, curve_rows, hist_rows)
        _write_trajectory(d, tree.root, tree)
    write_report(reports, out / "report.csv")
    _write_rows(
        out / "mape_levels.csv",
        ["h", "n", "forecaster", "level", "value"],
        [(h, n, f, lvl, fmt(v)) for r in reports for (m, h, n, f, lvl, v) in r.rows() if m == "MAPE"],
    )
    _write_rows(out / "error_cumulative.csv", ["h", "n", "forecaster", "abs_error", "cumulative_error"], curve_rows)
    _write_rows(out / "error_histogram.csv", ["h", "n", "forecaster", "bucket_low", "bucket_high", "count"], hist_rows)
    print(f"wrote evaluation for {len(reports)} tasks to {out}")
    return 0


def _error_distributions(tree, report, truth, aggreg, cube, weeks, split, h, n, curve_rows, hist_rows):
    """Leaf-level absolute errors over the test window, as curve and histogram rows."""
    from hieragg.metrics import select_meta

    cols = np.isin(weeks, report.weeks)
    leaves = tree.level_indices(tree.levels[-1])
    errors = {"aggreg": np.abs(truth[leaves][:, cols] - aggreg[leaves][:, cols])}
    for kind in META_KINDS:
        choice = select_meta(cube, truth, kind, "mae", split, weeks)
        errors[kind] = np.abs(truth[leaves][:, cols] - choice.forecasts(cube)[leaves][:, cols])
    top = max(float(e.max()) for e in errors.values())
    edges = np.linspace(0.0, top if top > 0 else 1.0, 21)
    for name, e in errors.items():
        x, c = cumulative_error_curve(e)
        curve_rows.extend((h, n, name, fmt(a), fmt(b)) for a, b in zip(x, c))
        counts = error_histogram(e, edges)
        hist_rows.extend((h, n, name, fmt(lo), fmt(hi), int(k)) for lo, hi, k in zip(edges[:-1], edges[1:], counts))


def _write_trajectory(d: Path, node, tree):
    """Full weight trajectory (zeros included) of ``node`` from the run's weight file."""
    rows = _trajectory_rows(d, node)
    _write_rows(d / f"trajectory_{_safe(node)}.csv", ["target_week", "node_id", "expert_index", "weight"], rows)


def _safe(node):
    return node.replace("/", "_")


def _trajectory_rows(d: Path, node):
    weights_path, experts_path = d / "weights.csv", d / "experts.csv"
    for p in (weights_path, experts_path):
        if not p.exists():
            raise MissingRunOutput(f"{p} not found; run the experiment first")
    with open(experts_path, newline="", encoding="utf-8") as fh:
        J = sum(1 for _ in csv.DictReader(fh))
    table: dict[int, dict[int, str]] = {}
    with open(weights_path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["node_id"] == node:
                table.setdefault(int(row["target_week"]), {})[int(row["expert_index"])] = row["weight"]
    if not table:
        raise MissingRunOutput(f"no weights stored for node {node!r}")
    return [(t, node, j, table[t].get(j, "0")) for t in sorted(table) for j in range(1, J + 1)]


def cmd_weights(cfg: RunConfig, h, n, node, path=None) -> int:
    d = task_dir(Path(cfg.output_dir), h, n)
    rows = _trajectory_rows(d, node)
    header = ["target_week", "node_id", "expert_index", "weight"]
    if path is None:
        writer = csv.writer(sys.stdout, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)
    else:
        _write_rows(path, header, rows)
    return 0


def _write_rows(path, header, rows):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _output_dir(flag, fallback) -> Path:
    if flag:
        return Path(flag)
    return Path(os.environ.get(OUTPUT_ENV) or fallback)


def _config_from_args(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    env = os.environ.get(OUTPUT_ENV)
    if env:
        cfg = replace(cfg, output_dir=env)
    overrides = {}
    for name in ("hierarchy", "sales", "output_dir", "granularity", "train_end_week", "algorithm", "loss",
                 "projection", "eta", "power", "year_weeks", "seed", "jobs"):
        value = getattr(args, name, None)
        if value is not None:
            overrides[name] = value
    if getattr(args, "tasks", None):
        overrides["tasks"] = _tasks(args.tasks)
    if getattr(args, "alphas", None) is not None:
        overrides["alphas"] = _floats(args.alphas)
    if getattr(args, "betas", None) is not None:
        overrides["betas"] = _floats(args.betas)
    if getattr(args, "benchmarks", None) is not None:
        overrides["benchmarks"] = _names(args.benchmarks)
    if getattr(args, "gradient_trick", None) is not None:
        overrides["gradient_trick"] = args.gradient_trick
    return replace(cfg, **overrides) if overrides else cfg


def _add_config_flags(p):
    p.add_argument("--config", help="INI run configuration")
    p.add_argument("--hierarchy")
    p.add_argument("--sales")
    p.add_argument("--output-dir", dest="output_dir")
    p.add_argument("--granularity", choices=("daily", "weekly"))
    p.add_argument("--tasks", help="comma-separated h:n pairs, e.g. 7:1,8:2")
    p.add_argument("--train-end-week", dest="train_end_week", type=int)
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.add_argument("--loss", choices=LOSSES)
    p.add_argument("--gradient-trick", dest="gradient_trick", action=argparse.BooleanOptionalAction, default=None)
    p.add_argument("--projection", choices=PROJECTIONS)
    p.add_argument("--eta", type=float)
    p.add_argument("--power", type=float)
    p.add_argument("--alphas", help="comma-separated alpha grid (empty for benchmarks only)")
    p.add_argument("--betas", help="comma-separated beta grid")
    p.add_argument("--benchmarks", help="comma-separated subset of null,current,year_ago (empty for none)")
    p.add_argument("--year-weeks", dest="year_weeks", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--jobs", type=int)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hieragg", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="write a synthetic hierarchy and sales file")
    defaults = SynthSpec()
    g.add_argument("--seed", type=int, default=defaults.seed)
    g.add_argument("--families", type=int, default=defaults.shape[0])
    g.add_argument("--subfamilies", type=int, default=defaults.shape[1])
    g.add_argument("--leaves", type=int, default=defaults.shape[2])
    g.add_argument("--weeks", type=int, default=defaults.weeks)
    g.add_argument("--sparsity", type=float, default=defaults.leaf_sparsity)
    g.add_argument("--null-fraction", dest="null_fraction", type=float, default=defaults.null_series_fraction)
    g.add_argument("--noise", type=float, default=defaults.noise_scale)
    g.add_argument("--drift-week", dest="drift_week", type=int)
    g.add_argument("--drift-magnitude", dest="drift_magnitude", type=float, default=0.0)
    g.add_argument("--output-dir", dest="output_dir")

    for name, text in (("run", "aggregate expert forecasts for every task"),
                       ("evaluate", "compare a finished run with the meta-predictors")):
        _add_config_flags(sub.add_parser(name, help=text))

    w = sub.add_parser("weights", help="print the full weight trajectory of one node")
    _add_config_flags(w)
    w.add_argument("--task", required=True, help="h:n")
    w.add_argument("--node", help="node id (default: root)")
    w.add_argument("--out", help="CSV path (default: stdout)")
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        if args.command == "generate":
            return cmd_generate(args)
        cfg = _config_from_args(args)
        if args.command == "run":
            return cmd_run(cfg)
        if args.command == "evaluate":
            return cmd_evaluate(cfg)
        (h, n), = _tasks(args.task)
        node = args.node or read_hierarchy(cfg.hierarchy).root
        return cmd_weights(cfg, h, n, node, args.out)
    except (HierAggError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
