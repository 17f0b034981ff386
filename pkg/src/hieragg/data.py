"""Weekly sales panels: CSV ingestion, n-week averages, sparsity statistics.

Series are stored *week-indexed*: an array ``a`` of length ``T + 1`` holds
week ``t`` at ``a[t]`` (weeks run 1..T) and ``a[0]`` is NaN. Averaged series
are NaN for weeks before their span is complete.
"""

from __future__ import annotations

import csv
import datetime as dt
import logging
import math
from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hieragg.errors import (
    NegativeValue,
    NonContiguousWeeks,
    ParseError,
    SpanTooLarge,
    UnknownNode,
)
from hieragg.hierarchy import Hierarchy, child_sums

log = logging.getLogger(__name__)

YEAR_WEEKS = 52


@dataclass(frozen=True, eq=False)
class WeeklyPanel:
    """Weekly sales at every node; ``sales[i, t - 1]`` is node ``i`` in week ``t``."""

    hierarchy: Hierarchy
    sales: np.ndarray
    unit: str = "currency"

    def __post_init__(self):
        sales = np.asarray(self.sales, dtype=float)
        if sales.ndim != 2 or sales.shape[0] != len(self.hierarchy):
            raise ValueError(f"sales must be (n_nodes, weeks), got {sales.shape}")
        if not np.all(np.isfinite(sales)) or np.any(sales < 0):
            raise ValueError("sales must be finite and non-negative")
        sales.setflags(write=False)
        object.__setattr__(self, "sales", sales)

    @property
    def n_weeks(self) -> int:
        return self.sales.shape[1]

    def series(self, node: str) -> np.ndarray:
        """Week-indexed weekly sales of ``node``."""
        return np.concatenate(([np.nan], self.sales[self.hierarchy.index[node]]))

    @classmethod
    def from_leaves(cls, hierarchy: Hierarchy, leaf_sales: np.ndarray, unit="currency"):
        """Build a panel from ``(n_leaves, weeks)`` leaf sales; internal nodes are summed."""
        leaf_sales = np.asarray(leaf_sales, dtype=float)
        full = np.zeros((len(hierarchy), leaf_sales.shape[1]))
        idx = hierarchy.index
        for j, leaf in enumerate(hierarchy.leaves):
            full[idx[leaf]] = leaf_sales[j]
        return cls(hierarchy, aggregate_up(hierarchy, full), unit)


def aggregate_up(h: Hierarchy, values: np.ndarray) -> np.ndarray:
    """Replace internal rows by the sums of their children, deepest level first.

    Children are added in node order, the same order ``child_sums`` uses, so
    the result satisfies the summation constraints with zero tolerance.
    """
    internal = np.array([bool(h.children[n]) for n in h.nodes])
    out = np.array(values, dtype=float, copy=True)
    out[internal] = 0.0
    pidx = h.parent_index
    depth = np.array([h.depth[n] for n in h.nodes])
    for d in range(int(depth.max()), 0, -1):
        rows = np.flatnonzero(depth == d)
        np.add.at(out, pidx[rows], out[rows])
    return out


@dataclass(frozen=True)
class AveragedSeries:
    node: str
    span: int
    values: np.ndarray  # week-indexed, NaN before week ``span``

    @property
    def n_weeks(self) -> int:
        return len(self.values) - 1


@dataclass(frozen=True)
class SplitSpec:
    """Weeks ``1..train_end_week`` are training data, the rest test data."""

    train_end_week: int

    def validate(self, span: int, n_weeks: int) -> None:
        if not span <= self.train_end_week < n_weeks:
            raise ValueError(
                f"train_end_week must satisfy {span} <= train_end_week < {n_weeks}, "
                f"got {self.train_end_week}"
            )


def trailing_mean(weekly: np.ndarray, span: int) -> np.ndarray:
    """Trailing inclusive ``span``-week means along the last axis.

    ``weekly`` holds weeks 1..T (no leading pad); the result is week-indexed.
    """
    weekly = np.asarray(weekly, dtype=float)
    T = weekly.shape[-1]
    if not 1 <= span <= T:
        raise SpanTooLarge(f"span {span} outside [1, {T}]")
    out = np.full(weekly.shape[:-1] + (T + 1,), np.nan)
    out[..., span:] = sliding_window_view(weekly, span, axis=-1).sum(axis=-1) / span
    return out


def average_series(panel: WeeklyPanel, node: str, n: int) -> AveragedSeries:
    """n-week trailing averages of ``node``; defined for weeks ``n..T``."""
    row = panel.sales[panel.hierarchy.index[node]]
    return AveragedSeries(node, n, trailing_mean(row, n))


def average_panel(panel: WeeklyPanel, n: int) -> np.ndarray:
    """Week-indexed averages for every node, shape ``(n_nodes, T + 1)``."""
    return trailing_mean(panel.sales, n)


def sparsity_stats(panel: WeeklyPanel, level: str) -> dict:
    rows = panel.sales[panel.hierarchy.level_indices(level)]
    cells = rows.ravel()
    return {
        "global_sparsity_rate": float(np.mean(cells == 0.0)) if cells.size else 0.0,
        "null_series_count": int(np.sum(np.all(rows == 0.0, axis=1))),
        "max": float(cells.max()),
        "mean": float(cells.mean()),
        "median": float(np.median(cells)),
        "min": float(cells.min()),
    }


def _parse_value(text, row_no):
    try:
        value = float(text)
    except ValueError:
        raise ParseError(f"value {text!r} is not a number", row=row_no) from None
    if not math.isfinite(value):
        raise ParseError(f"value {text!r} is not finite", row=row_no)
    if value < 0:
        raise NegativeValue(f"negative sales {value}", row=row_no)
    return value


def ingest_sales(path, hierarchy: Hierarchy, granularity="weekly", unit="currency") -> WeeklyPanel:
    """Read a ``date_or_week,node_id,value`` CSV into a :class:`WeeklyPanel`.

    Daily rows are summed into Monday-to-Sunday (ISO) weeks; incomplete first
    and last weeks are dropped. Weekly rows carry integer week numbers, which
    must form a contiguous range and are re-indexed from 1. Leaf values are
    authoritative: internal nodes are recomputed as sums, and file-provided
    internal values that disagree only produce a warning.
    """
    if granularity not in ("daily", "weekly"):
        raise ValueError(f"granularity must be daily or weekly, not {granularity!r}")
    idx = hierarchy.index
    leaf_rows: list[tuple[object, int, float, int]] = []
    internal_rows: list[tuple[object, int, float, int]] = []

    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header][1:] != ["node_id", "value"] or header[0].strip() not in (
            "date_or_week",
            "week",
        ):
            raise ParseError("expected header date_or_week,node_id,value", row=1)
        for row_no, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 3:
                raise ParseError(f"expected 3 fields, got {len(row)}", row=row_no)
            when, node, value = (x.strip() for x in row)
            if node not in idx:
                raise UnknownNode(f"node {node!r} not in hierarchy", row=row_no)
            value = _parse_value(value, row_no)
            if granularity == "daily":
                try:
                    key = dt.date.fromisoformat(when)
                except ValueError:
                    raise ParseError(f"bad ISO date {when!r}", row=row_no) from None
            else:
                try:
                    key = int(when)
                except ValueError:
                    raise ParseError(f"bad week index {when!r}", row=row_no) from None
            target = internal_rows if hierarchy.children[node] else leaf_rows
            target.append((key, idx[node], value, row_no))

    all_rows = leaf_rows + internal_rows
    if not all_rows:
        raise ParseError("no data rows")
    if granularity == "daily":
        week_of = _daily_week_map([r[0] for r in all_rows])
    else:
        week_of = _weekly_week_map(all_rows)
    n_weeks = max(week_of.values()) if week_of else 0
    if n_weeks == 0:
        raise NonContiguousWeeks("no complete week in the data")

    sales = np.zeros((len(hierarchy), n_weeks))
    for key, i, value, _ in leaf_rows:
        week = week_of.get(key)
        if week is not None:
            sales[i, week - 1] += value
    sales = aggregate_up(hierarchy, sales)

    if internal_rows:
        given = np.full_like(sales, np.nan)
        for key, i, value, _ in internal_rows:
            week = week_of.get(key)
            if week is not None:
                given[i, week - 1] = (0.0 if np.isnan(given[i, week - 1]) else given[i, week - 1]) + value
        mask = ~np.isnan(given)
        tol = 1e-6 * (1.0 + np.abs(sales[mask]))
        n_bad = int(np.sum(np.abs(given[mask] - sales[mask]) > tol))
        if n_bad:
            log.warning("%d internal-node cells disagree with the sum of their leaves; leaf sums kept", n_bad)

    return WeeklyPanel(hierarchy, sales, unit)


def _daily_week_map(dates) -> dict:
    first, last = min(dates), max(dates)
    first_monday = first + dt.timedelta(days=(7 - first.weekday()) % 7)
    last_sunday = last - dt.timedelta(days=(last.weekday() + 1) % 7)
    out = {}
    for d in set(dates):
        if first_monday <= d <= last_sunday:
            out[d] = (d - first_monday).days // 7 + 1
    return out


def _weekly_week_map(rows) -> dict:
    weeks = sorted({r[0] for r in rows})
    for prev, cur in zip(weeks, weeks[1:]):
        if cur != prev + 1:
            row_no = min(r[3] for r in rows if r[0] == cur)
            raise NonContiguousWeeks(f"week {prev} is followed by week {cur}", row=row_no)
    start = weeks[0]
    return {w: w - start + 1 for w in weeks}


def write_sales(panel: WeeklyPanel, path, leaves_only=True) -> None:
    """Write the panel in the weekly sales-file format (exact float repr)."""
    h = panel.hierarchy
    nodes = h.leaves if leaves_only else h.nodes
    rows = [h.index[n] for n in nodes]
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["date_or_week", "node_id", "value"])
        for t in range(panel.n_weeks):
            for n, i in zip(nodes, rows):
                writer.writerow([t + 1, n, repr(float(panel.sales[i, t]))])


def write_panel(panel: WeeklyPanel, path) -> None:
    """Dump every node as ``week,node_id,value`` sorted by week then node order."""
    h = panel.hierarchy
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["week", "node_id", "value"])
        for t in range(panel.n_weeks):
            for i, n in enumerate(h.nodes):
                writer.writerow([t + 1, n, repr(float(panel.sales[i, t]))])


def read_panel(path, hierarchy: Hierarchy, unit="currency") -> WeeklyPanel:
    return ingest_sales(path, hierarchy, granularity="weekly", unit=unit)


def check_panel(panel: WeeklyPanel, tol=1e-6) -> list[int]:
    """Weeks (1-based) in which some internal node breaks the summation constraint."""
    gap = np.abs(panel.sales - child_sums(panel.hierarchy, panel.sales))
    internal = np.array([bool(panel.hierarchy.children[n]) for n in panel.hierarchy.nodes])
    scale = tol * (1.0 + np.abs(panel.sales))
    bad = np.any((gap > scale) & internal[:, None], axis=0)
    return [int(t) + 1 for t in np.flatnonzero(bad)]
