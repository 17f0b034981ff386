"""Online convex aggregation of expert forecasts.

Algorithms: ML-Poly, ML-Prod and BOA (each with an optional gradient trick),
plus fixed-rate EWA and polynomial PWA as baselines. Weights chosen at round
``t`` aggregate the forecasts for target ``t + h``; the weights used to score
experts at round ``t`` are the ones scheduled for target ``t`` (uniform over
available experts if none were).

The step functions below are the readable single-round interface. Whole
series go through :func:`run_node`, which calls the compiled kernel when it
is available.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from hieragg import _kernels_py as ref
from hieragg._backend import kernels
from hieragg.data import AveragedSeries
from hieragg.experts import ExpertPanel
from hieragg.io import fmt

ALGORITHMS = ("ml_poly", "ml_prod", "boa", "ewa", "pwa")
LOSSES = ("absolute", "square")
_ALGO_CODE = {name: code for code, name in enumerate(ALGORITHMS)}
_LOSS_CODE = {"absolute": ref.ABSOLUTE, "square": ref.SQUARE}


@dataclass(frozen=True)
class LossKind:
    kind: str = "absolute"

    def __post_init__(self):
        if self.kind not in LOSSES:
            raise ValueError(f"loss must be one of {LOSSES}, got {self.kind!r}")

    @property
    def code(self) -> int:
        return _LOSS_CODE[self.kind]

    def __call__(self, y, f):
        d = np.subtract(y, f)
        return np.abs(d) if self.kind == "absolute" else d * d

    def psi(self, x):
        """Derivative of the loss in the forecast, evaluated at ``x = f - y``."""
        return np.sign(x) if self.kind == "absolute" else 2.0 * np.asarray(x)


@dataclass(frozen=True)
class AggregatorConfig:
    algorithm: str = "ml_poly"
    loss: str = "absolute"
    gradient_trick: bool = False
    eta: float | None = None  # EWA; defaults to sqrt(8 ln J / rounds)
    power: float = 2.0  # PWA

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"algorithm must be one of {ALGORITHMS}, got {self.algorithm!r}")
        LossKind(self.loss)
        if self.eta is not None and not self.eta > 0:
            raise ValueError("EWA eta must be positive")
        if self.power < 2:
            raise ValueError("PWA power must be at least 2")


def default_eta(J: int, rounds: int) -> float:
    return math.sqrt(8.0 * math.log(J) / max(rounds, 1)) if J > 1 else 1.0


@dataclass(eq=False)
class AggregatorState:
    """Per-expert running statistics of one aggregator.

    ML-Prod's multiplicative weight is kept in log form (``logW``); ``W``
    exposes it. ``seen`` marks experts that have been scored at least once.
    """

    algorithm: str
    J: int
    loss: LossKind = LossKind()
    gradient_trick: bool = False
    eta_fixed: float = 1.0
    power: float = 2.0
    R: np.ndarray = field(default=None, repr=False)
    B: np.ndarray = field(default=None, repr=False)
    S: np.ndarray = field(default=None, repr=False)
    logW: np.ndarray = field(default=None, repr=False)
    L: np.ndarray = field(default=None, repr=False)
    eta: np.ndarray = field(default=None, repr=False)
    seen: np.ndarray = field(default=None, repr=False)
    pending: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.algorithm not in ALGORITHMS:
            raise ValueError(f"unknown algorithm {self.algorithm!r}")
        if self.J < 1:
            raise ValueError("need at least one expert")
        if isinstance(self.loss, str):
            self.loss = LossKind(self.loss)
        fresh = ref.new_state(self.J)
        for name, value in zip(("R", "B", "S", "logW", "L", "eta", "seen"), fresh):
            if getattr(self, name) is None:
                setattr(self, name, value)

    @classmethod
    def from_config(cls, config: AggregatorConfig, J: int, rounds: int = 1) -> "AggregatorState":
        eta = config.eta if config.eta is not None else default_eta(J, rounds)
        return cls(config.algorithm, J, LossKind(config.loss), config.gradient_trick, eta, config.power)

    @property
    def W(self) -> np.ndarray:
        return np.exp(self.logW)

    @property
    def log_j(self) -> float:
        return math.log(self.J)

    @property
    def _arrays(self):
        return self.R, self.B, self.S, self.logW, self.L, self.eta, self.seen


def uniform_weights(available) -> np.ndarray:
    return ref._uniform(np.asarray(available, dtype=bool))


def step(state: AggregatorState, y_t, w_t, preds_t, preds_next):
    """One round: score the experts on ``y_t`` and pick weights for the next target.

    ``y_t`` may be ``None`` (nothing observed yet), ``w_t`` may be ``None``
    (uniform over available experts). NaN forecasts mark unavailable experts.
    Mutates and returns ``state`` together with ``(weights, fhat, e)``; ``e``
    is the error vector of this round, or ``None`` when nothing was scored.
    """
    algo = _ALGO_CODE[state.algorithm]
    e = None
    if y_t is not None and preds_t is not None:
        preds_t = np.asarray(preds_t, dtype=float)
        avail = np.isfinite(preds_t)
        if avail.any() and np.isfinite(y_t):
            w = uniform_weights(avail) if w_t is None else np.asarray(w_t, dtype=float)
            e = ref.round_errors(algo, state.gradient_trick, state.loss.code, float(y_t), w, preds_t, avail)
            ref.update_state(algo, e, avail, state.log_j, *state._arrays)
    preds_next = np.asarray(preds_next, dtype=float)
    avail_next = np.isfinite(preds_next)
    w_next = ref.next_weights(algo, avail_next, state.log_j, state.eta_fixed, state.power, *state._arrays)
    fhat = ref._seqsum(w_next[avail_next] * preds_next[avail_next]) if avail_next.any() else math.nan
    return state, w_next, fhat, e


def _step_as(name):
    def fn(state: AggregatorState, y_t, w_t, preds_t, preds_next):
        if state.algorithm != name:
            raise ValueError(f"state is for {state.algorithm}, not {name}")
        state, w, fhat, _ = step(state, y_t, w_t, preds_t, preds_next)
        return state, w, fhat

    fn.__name__ = f"step_{name}"
    fn.__doc__ = f"One {name} round; returns ``(state, weights, fhat)``."
    return fn


step_ml_poly = _step_as("ml_poly")
step_ml_prod = _step_as("ml_prod")
step_boa = _step_as("boa")
step_ewa = _step_as("ewa")
step_pwa = _step_as("pwa")


@dataclass(frozen=True, eq=False)
class AggregationRun:
    """Aggregated forecasts of one node; rows are indexed by target week."""

    node: str
    h: int
    n: int
    weights: np.ndarray  # (T + h + 1, J), zero rows where nothing was scheduled
    fhat: np.ndarray  # (T + h + 1,), NaN where undefined
    errors: np.ndarray | None = None  # (T + 1, J) per-round e, NaN where not scored

    @property
    def aggregated(self) -> dict[int, float]:
        return {int(t): float(self.fhat[t]) for t in np.flatnonzero(np.isfinite(self.fhat))}


def _inputs(panel: ExpertPanel, y):
    values = y.values if isinstance(y, AveragedSeries) else y
    values = np.asarray(values, dtype=float)
    if panel.forecasts.shape[0] != len(values) + panel.h:
        raise ValueError("forecast rows must equal T + h + 1")
    return values


def run_node(panel: ExpertPanel, y, config: AggregatorConfig = AggregatorConfig(), audit=False) -> AggregationRun:
    """Aggregate the experts of ``panel`` online over the observed series ``y``.

    With ``audit`` the run goes round by round through :func:`step` and
    records each round's error vector.
    """
    values = _inputs(panel, y)
    if isinstance(y, AveragedSeries) and y.span != panel.n:
        raise ValueError(f"series span {y.span} does not match task n={panel.n}")
    T = len(values) - 1
    J = panel.J
    state = AggregatorState.from_config(config, J, rounds=T)
    if audit:
        return _run_audited(panel, values, state)
    weights, fhat = kernels.aggregate(
        _ALGO_CODE[config.algorithm],
        config.gradient_trick,
        _LOSS_CODE[config.loss],
        values,
        panel.forecasts,
        panel.h,
        state.eta_fixed,
        config.power,
    )
    return AggregationRun(panel.node, panel.h, panel.n, weights, fhat)


def _run_audited(panel: ExpertPanel, values, state: AggregatorState) -> AggregationRun:
    F, h = panel.forecasts, panel.h
    T = len(values) - 1
    weights = np.zeros(F.shape)
    fhat = np.full(F.shape[0], np.nan)
    errors = np.full((T + 1, panel.J), np.nan)
    for t in range(1, T + 1):
        y_t = values[t] if np.isfinite(values[t]) else None
        preds_t = F[t] if t < F.shape[0] else None
        w_t = state.pending.pop(t, None)
        if t + h < F.shape[0]:
            state, w, f, e = step(state, y_t, w_t, preds_t, F[t + h])
            state.pending[t + h] = w
            weights[t + h] = w
            fhat[t + h] = f
        else:
            state, _, _, e = step(state, y_t, w_t, preds_t, np.full(panel.J, np.nan))
        if e is not None:
            errors[t] = np.where(np.isfinite(F[t]), e, np.nan)
    return AggregationRun(panel.node, panel.h, panel.n, weights, fhat, errors)


def write_weights(runs, path, nonzero_only=False) -> None:
    """``target_week,node_id,expert_index,weight`` (1-based expert index).

    Only targets that received weights are written; ``nonzero_only`` drops
    zero entries, which leaves each target's weights summing to 1.
    """
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["target_week", "node_id", "expert_index", "weight"])
        for run in runs:
            for target in np.flatnonzero(np.isfinite(run.fhat)):
                row = run.weights[target]
                for j in np.flatnonzero(row) if nonzero_only else range(len(row)):
                    writer.writerow([int(target), run.node, int(j) + 1, fmt(row[j])])


def write_forecasts(runs, path) -> None:
    """``target_week,node_id,forecast`` for every defined aggregated forecast."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["target_week", "node_id", "forecast"])
        for run in runs:
            for target in np.flatnonzero(np.isfinite(run.fhat)):
                writer.writerow([int(target), run.node, fmt(run.fhat[target])])
