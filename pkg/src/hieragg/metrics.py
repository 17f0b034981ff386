"""Error metrics, meta-predictor benchmarks and evaluation reports.

Forecast panels are arrays ``(n_nodes, weeks)`` aligned with a truth panel of
the same shape; expert panels add a trailing expert axis. Joint losses are
accumulated node by node (row sums, then a correctly rounded sum over
nodes), which makes the meta-predictor ordering hold exactly in floating
point: the oracle picks each node's smallest row sum, so its total cannot
exceed that of any single expert.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from hieragg.data import SplitSpec
from hieragg.errors import EmptyWindow, NoAvailableExpert, ZeroDenominatorWeek
from hieragg.hierarchy import Hierarchy
from hieragg.io import fmt

METRICS = ("mae", "rmse")
META_KINDS = ("loc_train", "glob_test", "oracle")
LEVEL_LABELS = {
    "entire": "entire hierarchy",
    "root": "total node",
    "family": "families",
    "subfamily": "subfamilies",
    "subsubfamily": "subsubfamilies",
}


def _pair(truth, forecasts):
    truth = np.asarray(truth, dtype=float)
    forecasts = np.asarray(forecasts, dtype=float)
    if truth.shape != forecasts.shape:
        raise ValueError(f"shape mismatch {truth.shape} vs {forecasts.shape}")
    return truth, forecasts


def mae(truth, forecasts) -> float:
    """Mean absolute error over the weeks where both series are defined."""
    truth, forecasts = _pair(truth, forecasts)
    ok = np.isfinite(truth) & np.isfinite(forecasts)
    if not ok.any():
        raise EmptyWindow("no week where truth and forecast are both defined")
    return float(np.mean(np.abs(truth[ok] - forecasts[ok])))


def rmse(truth, forecasts) -> float:
    truth, forecasts = _pair(truth, forecasts)
    ok = np.isfinite(truth) & np.isfinite(forecasts)
    if not ok.any():
        raise EmptyWindow("no week where truth and forecast are both defined")
    return float(np.sqrt(np.mean((truth[ok] - forecasts[ok]) ** 2)))


def node_loss_sums(truth, forecasts, metric="mae") -> np.ndarray:
    """Per-node sums of absolute (mae) or squared (rmse) errors.

    Every cell must be defined; select the window beforehand.
    """
    truth, forecasts = _pair(truth, forecasts)
    if truth.ndim != 2 or truth.shape[1] == 0:
        raise EmptyWindow("empty evaluation window")
    if not (np.all(np.isfinite(truth)) and np.all(np.isfinite(forecasts))):
        raise ValueError("panels must be fully defined over the window")
    err = np.ascontiguousarray(truth - forecasts)
    cell = np.abs(err) if metric == "mae" else err * err
    return np.array([np.sum(row) for row in cell])


def _joint(node_sums, n_cells):
    return math.fsum(node_sums) / n_cells


def joint_mae(truth, forecasts) -> float:
    """Mean absolute error over all (node, week) cells."""
    truth, _ = _pair(truth, forecasts)
    return _joint(node_loss_sums(truth, forecasts, "mae"), truth.size)


def joint_rmse(truth, forecasts) -> float:
    truth, _ = _pair(truth, forecasts)
    return math.sqrt(_joint(node_loss_sums(truth, forecasts, "rmse"), truth.size))


def joint_loss(truth, forecasts, metric) -> float:
    return joint_mae(truth, forecasts) if metric == "mae" else joint_rmse(truth, forecasts)


def mape(truth, forecasts, rows=None, weeks=None) -> float:
    """Week-wise ratio of summed absolute errors to summed truth, averaged over weeks.

    ``rows`` restricts to a node subset; ``weeks`` labels the columns for
    error messages.
    """
    truth, forecasts = _pair(truth, forecasts)
    if rows is not None:
        truth, forecasts = truth[rows], forecasts[rows]
    if truth.ndim != 2 or truth.shape[1] == 0 or truth.shape[0] == 0:
        raise EmptyWindow("empty evaluation window")
    denom = truth.sum(axis=0)
    zero = np.flatnonzero(denom <= 0.0)
    if zero.size:
        week = int(weeks[zero[0]]) if weeks is not None else int(zero[0])
        raise ZeroDenominatorWeek(week)
    return float(np.mean(np.abs(truth - forecasts).sum(axis=0) / denom))


def mape_node_losses(truth, expert_forecasts, rows) -> np.ndarray:
    """Per-node, per-expert ``sum_t |y - yhat| / sum_{g in subset} y`` over the subset rows."""
    truth = np.asarray(truth, dtype=float)[rows]
    denom = truth.sum(axis=0)
    zero = np.flatnonzero(denom <= 0.0)
    if zero.size:
        raise ZeroDenominatorWeek(int(zero[0]))
    F = np.asarray(expert_forecasts, dtype=float)[rows]
    return (np.abs(truth[:, :, None] - F) / denom[None, :, None]).sum(axis=1)


@dataclass(frozen=True)
class MetaPredictorChoice:
    kind: str
    selected: np.ndarray  # expert index per node (0-based)
    metric: str

    def forecasts(self, expert_forecasts) -> np.ndarray:
        """Assemble the meta-predictor's forecast panel from ``(nodes, weeks, J)``."""
        F = np.asarray(expert_forecasts)
        return F[np.arange(F.shape[0]), :, self.selected]


def _complete_experts(F):
    return np.all(np.isfinite(F), axis=(0, 1))


def select_meta(expert_forecasts, truth, kind, metric, split: SplitSpec, weeks, rows=None) -> MetaPredictorChoice:
    """Pick experts by a meta rule.

    ``expert_forecasts`` is ``(nodes, weeks, J)`` and ``truth`` ``(nodes, weeks)``,
    with ``weeks`` the target-week labels of the columns. ``loc_train`` uses
    train weeks on which every expert is defined; ``glob_test`` and
    ``oracle`` use the test weeks. Only experts defined over the whole
    window are eligible; ties go to the lowest index. ``metric`` is
    ``mae``, ``rmse`` or ``mape`` (the latter restricted to ``rows``).
    """
    if kind not in META_KINDS:
        raise ValueError(f"kind must be one of {META_KINDS}")
    F = np.asarray(expert_forecasts, dtype=float)
    truth = np.asarray(truth, dtype=float)
    weeks = np.asarray(weeks)
    if kind == "loc_train":
        defined = np.all(np.isfinite(F), axis=(0, 2)) & np.all(np.isfinite(truth), axis=0)
        cols = (weeks <= split.train_end_week) & defined
    else:
        cols = (weeks > split.train_end_week) & np.all(np.isfinite(truth), axis=0)
    if not cols.any():
        raise EmptyWindow(f"no {kind} weeks to select on")
    F, truth = F[:, cols], truth[:, cols]
    eligible = np.flatnonzero(_complete_experts(F))
    if eligible.size == 0:
        raise NoAvailableExpert(f"no expert is defined over the {kind} window")
    n_nodes = F.shape[0]
    if metric == "mape":
        rows = np.arange(n_nodes) if rows is None else np.asarray(rows)
        losses = np.full((n_nodes, F.shape[2]), np.inf)
        losses[:, eligible] = 0.0
        losses[np.ix_(rows, eligible)] = mape_node_losses(truth, F[:, :, eligible], rows)
    else:
        losses = np.full((n_nodes, F.shape[2]), np.inf)
        for j in eligible:
            losses[:, j] = node_loss_sums(truth, F[:, :, j], metric)
        if rows is not None:
            keep = np.zeros(n_nodes, dtype=bool)
            keep[rows] = True
            losses[~keep] = 0.0
    if kind == "glob_test":
        totals = np.full(F.shape[2], np.inf)
        for j in eligible:
            totals[j] = math.fsum(losses[:, j])
        selected = np.full(n_nodes, int(np.argmin(totals)))
    else:
        selected = np.argmin(losses, axis=1)
    return MetaPredictorChoice(kind, selected.astype(int), metric)


def level_rows(h: Hierarchy, level: str) -> np.ndarray:
    if level == "entire":
        return np.arange(len(h))
    if level == "root":
        return np.array([h.index[h.root]])
    return h.level_indices(level)


@dataclass
class EvaluationReport:
    """Test-window metrics of several forecasters for one task."""

    h: int
    n: int
    weeks: np.ndarray
    node_mae: dict[str, np.ndarray] = field(default_factory=dict)
    node_rmse: dict[str, np.ndarray] = field(default_factory=dict)
    joint: dict[tuple[str, str, str], float] = field(default_factory=dict)  # (metric, forecaster, level)

    def rows(self):
        """``(metric, h, n, forecaster, level, value)`` tuples, aggregator comparisons last."""
        out = [(m.upper(), self.h, self.n, f, LEVEL_LABELS[lvl], v) for (m, f, lvl), v in self.joint.items()]
        for (m, f, lvl), v in list(self.joint.items()):
            if f == "aggreg":
                continue
            base = v
            agg = self.joint.get((m, "aggreg", lvl))
            if agg is None or f not in META_KINDS:
                continue
            rel = (agg - base) / base if base != 0 else math.nan
            out.append((m.upper(), self.h, self.n, f"aggreg_vs_{f}", LEVEL_LABELS[lvl], rel))
        return out


def evaluate_task(h_tree: Hierarchy, truth, aggreg, expert_forecasts, weeks, split: SplitSpec, h, n,
                  levels=tuple(LEVEL_LABELS)) -> EvaluationReport:
    """Compare the aggregated forecasts with the three meta-predictors.

    ``truth`` and ``aggreg`` are ``(nodes, weeks)``; ``expert_forecasts`` is
    ``(nodes, weeks, J)``; columns are the target weeks ``weeks``. The test
    window is every test week where all compared forecasters are defined.
    MAE and RMSE are reported jointly per level; MAPE per level with the
    meta-predictors re-selected on that level's denominator.
    """
    weeks = np.asarray(weeks)
    truth = np.asarray(truth, dtype=float)
    aggreg = np.asarray(aggreg, dtype=float)
    F = np.asarray(expert_forecasts, dtype=float)
    choices = {(k, m): select_meta(F, truth, k, m, split, weeks) for k in META_KINDS for m in METRICS}
    test = weeks > split.train_end_week
    window = test & np.all(np.isfinite(truth), axis=0) & np.all(np.isfinite(aggreg), axis=0)
    for c in choices.values():
        window &= np.all(np.isfinite(c.forecasts(F)), axis=0)
    if not window.any():
        raise EmptyWindow("no test week where every forecaster is defined")
    report = EvaluationReport(h, n, weeks[window])
    y = truth[:, window]
    panels = {"aggreg": aggreg[:, window]}
    for m in METRICS:
        for k in META_KINDS:
            panels[(k, m)] = choices[(k, m)].forecasts(F)[:, window]

    def forecaster_panel(name, metric):
        return panels["aggreg"] if name == "aggreg" else panels[(name, metric)]

    for name in ("aggreg",) + META_KINDS:
        report.node_mae[name] = node_loss_sums(y, forecaster_panel(name, "mae"), "mae") / y.shape[1]
        report.node_rmse[name] = np.sqrt(node_loss_sums(y, forecaster_panel(name, "rmse"), "rmse") / y.shape[1])
        for m in METRICS:
            for lvl in levels:
                rows = level_rows(h_tree, lvl)
                report.joint[(m, name, lvl)] = joint_loss(y[rows], forecaster_panel(name, m)[rows], m)
    for lvl in levels:
        rows = level_rows(h_tree, lvl)
        try:
            report.joint[("mape", "aggreg", lvl)] = mape(y, panels["aggreg"], rows, report.weeks)
            for k in META_KINDS:
                choice = select_meta(F, truth, k, "mape", split, weeks, rows=rows)
                report.joint[("mape", k, lvl)] = mape(y, choice.forecasts(F)[:, window], rows, report.weeks)
        except ZeroDenominatorWeek:
            continue
    return report


def write_report(reports, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["metric", "h", "n", "forecaster", "level", "value"])
        for report in reports:
            for metric, h, n, forecaster, level, value in report.rows():
                writer.writerow([metric, h, n, forecaster, level, fmt(value)])


def cumulative_error_curve(abs_errors) -> tuple[np.ndarray, np.ndarray]:
    """Sorted absolute errors and the running total of errors up to each one."""
    e = np.sort(np.asarray(abs_errors, dtype=float).ravel())
    return e, np.cumsum(e)


def error_histogram(abs_errors, edges) -> np.ndarray:
    counts, _ = np.histogram(np.asarray(abs_errors, dtype=float).ravel(), bins=edges)
    return counts
