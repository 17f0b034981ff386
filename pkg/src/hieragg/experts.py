"""Elementary forecasters: benchmarks, seasonal SES and Holt's linear trend.

All forecasters read a week-indexed averaged series ``y`` (``y[t]`` for
``t = n..T``, NaN elsewhere) and return a column indexed by *target* week:
``col[t + h]`` is the forecast issued at round ``t`` from ``y[:t + 1]``.
Columns have length ``T + h + 1`` and are NaN where the forecaster is not
yet defined.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from hieragg._backend import kernels
from hieragg.data import YEAR_WEEKS, AveragedSeries
from hieragg.errors import SeriesTooShort

ALPHAS = (2.0**-6, 2.0**-5, 2.0**-4, 2.0**-3, 2.0**-2, 0.5, 1.0)
BETAS = (2.0**-4, 2.0**-3, 2.0**-2, 0.5)

BENCHMARKS = ("null", "current", "year_ago")
KINDS = BENCHMARKS + ("ses_add", "ses_mul", "holt_add", "holt_mul")


@dataclass(frozen=True)
class PredictorSpec:
    kind: str
    alpha: float | None = None
    beta: float | None = None
    year_weeks: int = YEAR_WEEKS

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        needs_alpha = self.kind not in BENCHMARKS
        needs_beta = self.kind.startswith("holt")
        if (self.alpha is not None) != needs_alpha or (self.beta is not None) != needs_beta:
            raise ValueError(f"{self.kind} takes alpha={needs_alpha}, beta={needs_beta}")
        for name in ("alpha", "beta"):
            value = getattr(self, name)
            if value is not None and not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")

    @property
    def label(self) -> str:
        if self.kind in BENCHMARKS:
            return self.kind
        if self.beta is None:
            return f"{self.kind}:a={self.alpha:g}"
        return f"{self.kind}:a={self.alpha:g}:b={self.beta:g}"

    def warmup(self, n: int, h: int) -> int:
        """First round ``t`` at which this forecaster issues a forecast."""
        Y = self.year_weeks
        if self.kind == "null":
            return 1
        if self.kind == "current":
            return n
        if self.kind == "year_ago":
            return year_ago_start(n, h, Y)
        start = ses_add_start(n, Y) if self.kind.endswith("add") else ses_mul_start(n, Y)
        return start + 1 if self.kind.startswith("holt") else start


def default_grid(alphas=ALPHAS, betas=BETAS, year_weeks=YEAR_WEEKS, benchmarks=BENCHMARKS) -> list[PredictorSpec]:
    """Benchmarks, then SES (additive, multiplicative), then Holt over alpha x beta."""
    unknown = set(benchmarks) - set(BENCHMARKS)
    if unknown:
        raise ValueError(f"unknown benchmarks {sorted(unknown)}")
    specs = [PredictorSpec(k, year_weeks=year_weeks) for k in BENCHMARKS if k in benchmarks]
    for kind in ("ses_add", "ses_mul"):
        specs += [PredictorSpec(kind, alpha=a, year_weeks=year_weeks) for a in alphas]
    for kind in ("holt_add", "holt_mul"):
        specs += [PredictorSpec(kind, alpha=a, beta=b, year_weeks=year_weeks) for a in alphas for b in betas]
    return specs


def ses_add_start(n, year_weeks=YEAR_WEEKS):
    return year_weeks + n


def ses_mul_start(n, year_weeks=YEAR_WEEKS):
    return year_weeks + year_weeks // 2 + n


def year_ago_start(n, h, year_weeks=YEAR_WEEKS):
    return max(1, year_weeks + n - h)


def _values(y):
    if isinstance(y, AveragedSeries):
        return np.asarray(y.values, dtype=float), y.span
    return np.asarray(y, dtype=float), None


def _span(y, n):
    values, span = _values(y)
    n = n if n is not None else span
    if n is None:
        raise ValueError("span n is required when y is a bare array")
    return values, n


def _empty(T, h):
    return np.full(T + h + 1, np.nan)


def seasonal_difference(y, year_weeks=YEAR_WEEKS):
    """``d[t] = y[t] - y[t - year_weeks]`` (NaN where undefined)."""
    d = np.full(len(y), np.nan)
    d[year_weeks:] = y[year_weeks:] - y[:-year_weeks]
    return d


def seasonal_ratio(y, year_weeks=YEAR_WEEKS):
    """Share of week ``tau`` in the year of sales centred on it.

    The window runs from ``tau - year_weeks//2`` to ``tau + year_weeks - year_weeks//2 - 1``
    (weeks -26..25 for a 52-week year). A zero window gives ratio 0.
    """
    half = year_weeks // 2
    r = np.full(len(y), np.nan)
    if len(y) - 1 < year_weeks:
        return r
    sums = sliding_window_view(y[1:], year_weeks).sum(axis=-1)  # sums[k] covers weeks k+1..k+Y
    tau = np.arange(1 + half, 1 + half + len(sums))
    with np.errstate(divide="ignore", invalid="ignore"):
        r[tau] = np.where(sums == 0.0, 0.0, y[tau] / sums)
    return r


def deseasonalized(y, r, year_weeks=YEAR_WEEKS):
    """``z[t] = y[t] / r[t - year_weeks]``, 0 where that ratio is 0."""
    z = np.full(len(y), np.nan)
    prev = r[:-year_weeks]
    with np.errstate(divide="ignore", invalid="ignore"):
        z[year_weeks:] = np.where(prev == 0.0, 0.0, y[year_weeks:] / prev)
    return z


def forecast_benchmark(spec: PredictorSpec, y, h: int, n: int | None = None) -> np.ndarray:
    values, n = _span(y, n)
    T = len(values) - 1
    col = _empty(T, h)
    Y = spec.year_weeks
    if spec.kind == "null":
        col[1 + h :] = 0.0
    elif spec.kind == "current":
        col[n + h :] = values[n:]
    elif spec.kind == "year_ago":
        start = year_ago_start(n, h, Y)
        ts = np.arange(start, T + 1)
        col[ts + h] = values[ts + h - Y]
    else:
        raise ValueError(f"{spec.kind} is not a benchmark")
    return col


def _check_length(T, start, what):
    if T < start:
        raise SeriesTooShort(f"{what} needs at least {start} weeks, series has {T}")


def _check_mul_horizon(h, year_weeks):
    if h > year_weeks - year_weeks // 2 + 1:
        raise ValueError(f"multiplicative seasonality needs h <= {year_weeks - year_weeks // 2 + 1}, got {h}")


def _ses_add_columns(values, alphas, h, n, Y, start=None):
    T = len(values) - 1
    start = ses_add_start(n, Y) if start is None else start
    _check_length(T, start, "ses_add")
    smoothed = kernels.ses_filter(seasonal_difference(values, Y), start, np.asarray(alphas, float))
    ts = np.arange(start, T + 1)
    cols = np.full((T + h + 1, len(alphas)), np.nan)
    cols[ts + h] = values[ts + h - Y][:, None] + smoothed[ts]
    return cols


def _ses_mul_columns(values, alphas, h, n, Y, start=None):
    T = len(values) - 1
    _check_mul_horizon(h, Y)
    start = ses_mul_start(n, Y) if start is None else start
    _check_length(T, start, "ses_mul")
    r = seasonal_ratio(values, Y)
    smoothed = kernels.ses_filter(deseasonalized(values, r, Y), start, np.asarray(alphas, float))
    ts = np.arange(start, T + 1)
    cols = np.full((T + h + 1, len(alphas)), np.nan)
    cols[ts + h] = r[ts + h - Y][:, None] * smoothed[ts]
    return cols


def _holt_columns(kind, values, alphas, betas, h, n, Y, zero_trend=False):
    T = len(values) - 1
    if kind == "holt_add":
        start = ses_add_start(n, Y) + 1
        x = seasonal_difference(values, Y)
    else:
        _check_mul_horizon(h, Y)
        start = ses_mul_start(n, Y) + 1
        r = seasonal_ratio(values, Y)
        x = deseasonalized(values, r, Y)
    _check_length(T, start, kind)
    level, trend = kernels.holt_filter(x, start, np.asarray(alphas, float), np.asarray(betas, float), zero_trend)
    ts = np.arange(start, T + 1)
    cols = np.full((T + h + 1, len(alphas)), np.nan)
    smoothed = level[ts] + h * trend[ts]
    if kind == "holt_add":
        cols[ts + h] = values[ts + h - Y][:, None] + smoothed
    else:
        cols[ts + h] = r[ts + h - Y][:, None] * smoothed
    return cols


def forecast_ses_add(alpha, y, h, n=None, year_weeks=YEAR_WEEKS, start=None) -> np.ndarray:
    """SES on the year-over-year difference, added back to last year's value.

    ``start`` overrides the first smoothing round (default ``year_weeks + n``).
    """
    values, n = _span(y, n)
    return _ses_add_columns(values, [alpha], h, n, year_weeks, start)[:, 0]


def forecast_ses_mul(alpha, y, h, n=None, year_weeks=YEAR_WEEKS, start=None) -> np.ndarray:
    """SES on the seasonally normalised series, rescaled by last year's ratio."""
    values, n = _span(y, n)
    return _ses_mul_columns(values, [alpha], h, n, year_weeks, start)[:, 0]


def forecast_holt(kind, alpha, beta, y, h, n=None, year_weeks=YEAR_WEEKS, zero_trend=False) -> np.ndarray:
    """Holt's linear trend with additive or multiplicative seasonality.

    With ``zero_trend`` the initial trend is 0 instead of the first difference.
    """
    if kind not in ("holt_add", "holt_mul"):
        raise ValueError(f"kind must be holt_add or holt_mul, got {kind!r}")
    values, n = _span(y, n)
    return _holt_columns(kind, values, [alpha], [beta], h, n, year_weeks, zero_trend)[:, 0]


def forecast(spec: PredictorSpec, y, h, n=None) -> np.ndarray:
    """Forecast column of a single predictor."""
    if spec.kind in BENCHMARKS:
        return forecast_benchmark(spec, y, h, n)
    if spec.kind == "ses_add":
        return forecast_ses_add(spec.alpha, y, h, n, spec.year_weeks)
    if spec.kind == "ses_mul":
        return forecast_ses_mul(spec.alpha, y, h, n, spec.year_weeks)
    return forecast_holt(spec.kind, spec.alpha, spec.beta, y, h, n, spec.year_weeks)


@dataclass(frozen=True, eq=False)
class ExpertPanel:
    """Forecasts of every expert for one node and task; rows are target weeks."""

    node: str
    h: int
    n: int
    specs: tuple[PredictorSpec, ...]
    forecasts: np.ndarray  # (T + h + 1, J)

    @property
    def J(self) -> int:
        return len(self.specs)

    @cached_property
    def available(self) -> np.ndarray:
        return np.isfinite(self.forecasts)

    @property
    def labels(self) -> list[str]:
        return [s.label for s in self.specs]

    def first_complete_target(self) -> int | None:
        """Earliest target week at which every expert is defined."""
        rows = np.flatnonzero(self.available.all(axis=1))
        return int(rows[0]) if rows.size else None


def build_columns(values, h, n, specs) -> np.ndarray:
    """Forecast matrix ``(T + h + 1, J)`` for a week-indexed series.

    Smoothing experts sharing a kind and year length are computed in one
    kernel call.
    """
    if not 1 <= n <= h:
        raise ValueError(f"task needs 1 <= n <= h, got h={h}, n={n}")
    values = np.asarray(values, dtype=float)
    T = len(values) - 1
    out = np.full((T + h + 1, len(specs)), np.nan)
    groups: dict[tuple[str, int], list[int]] = {}
    for j, spec in enumerate(specs):
        if spec.kind in BENCHMARKS:
            out[:, j] = forecast_benchmark(spec, values, h, n)
        else:
            groups.setdefault((spec.kind, spec.year_weeks), []).append(j)
    for (kind, Y), idx in groups.items():
        alphas = [specs[j].alpha for j in idx]
        if kind == "ses_add":
            cols = _ses_add_columns(values, alphas, h, n, Y)
        elif kind == "ses_mul":
            cols = _ses_mul_columns(values, alphas, h, n, Y)
        else:
            cols = _holt_columns(kind, values, alphas, [specs[j].beta for j in idx], h, n, Y)
        out[:, idx] = cols
    return out


def build_panel(panel, node, task, specs) -> ExpertPanel:
    """Expert forecasts for ``node`` of a :class:`~hieragg.data.WeeklyPanel`."""
    from hieragg.data import average_series

    h, n = task
    y = average_series(panel, node, n)
    return ExpertPanel(node, h, n, tuple(specs), build_columns(y.values, h, n, specs))


def write_expert_panel(ep: ExpertPanel, path) -> None:
    """``target_week,expert_index,expert_label,forecast`` for defined cells (1-based index)."""
    from hieragg.io import fmt

    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["target_week", "expert_index", "expert_label", "forecast"])
        for target in range(ep.forecasts.shape[0]):
            for j, spec in enumerate(ep.specs):
                value = ep.forecasts[target, j]
                if np.isfinite(value):
                    writer.writerow([target, j + 1, spec.label, fmt(value)])
