"""Synthetic hierarchical weekly sales with seasonality, trend, noise and sparsity.

Random numbers come from SplitMix64, run as one independent stream per leaf
so that a panel depends only on the seed and the leaf identifiers.

* Leaf stream seed: ``mix(seed XOR fnv1a64(leaf_id))`` where ``mix`` is the
  SplitMix64 output finalizer and ``fnv1a64`` is 64-bit FNV-1a over the
  UTF-8 bytes of the identifier.
* ``next()``: ``state += 0x9E3779B97F4A7C15`` then return ``mix(state)``.
* Uniform in [0, 1): ``(next() >> 11) * 2**-53``.
* Standard normal: Box-Muller from two uniforms,
  ``sqrt(-2 ln(1 - u1)) * cos(2 pi u2)``.
* Transcendental functions are the C library's (``log1p``, ``cos``, ``sin``,
  ``exp``), called element by element.

Per leaf, draws are consumed in this order: null-selection key, base level,
seasonal phase, trend slope, drift slope, then for each week ``t = 1..T``
two uniforms for the noise and one for the sparsity mask.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from hieragg.data import YEAR_WEEKS, WeeklyPanel
from hieragg.errors import SpecTooSmall
from hieragg.hierarchy import Hierarchy, build_hierarchy

GOLDEN_GAMMA = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_FNV_OFFSET = 0xCBF29CE484222325
_FNV_PRIME = 0x100000001B3
_MASK64 = (1 << 64) - 1

# libm rather than numpy's vectorized transcendentals, whose last-bit results
# vary with the SIMD path; the streams must be reproducible bit for bit
_log1p = np.frompyfunc(math.log1p, 1, 1)
_cos = np.frompyfunc(math.cos, 1, 1)
_sin = np.frompyfunc(math.sin, 1, 1)
_exp = np.frompyfunc(math.exp, 1, 1)

# holiday peaks, as week-of-year offsets (t mod 52)
EVENT_WEEKS = (46, 50)


def fnv1a64(text: str) -> int:
    h = _FNV_OFFSET
    for byte in text.encode("utf-8"):
        h = ((h ^ byte) * _FNV_PRIME) & _MASK64
    return h


def mix64(z: np.ndarray) -> np.ndarray:
    """SplitMix64 finalizer on a uint64 array (wrapping arithmetic)."""
    z = np.asarray(z, dtype=np.uint64)
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """Vector of independent SplitMix64 streams."""

    def __init__(self, seeds):
        self.state = np.array(seeds, dtype=np.uint64).reshape(-1)

    def next_u64(self) -> np.ndarray:
        self.state = self.state + GOLDEN_GAMMA
        return mix64(self.state)

    def uniform(self) -> np.ndarray:
        return (self.next_u64() >> np.uint64(11)).astype(np.float64) * 2.0**-53

    def normal(self) -> np.ndarray:
        u1, u2 = self.uniform(), self.uniform()
        radius = np.sqrt(-2.0 * _log1p(-u1).astype(np.float64))
        return radius * _cos(2.0 * math.pi * u2).astype(np.float64)


def leaf_seeds(seed: int, leaf_ids) -> np.ndarray:
    raw = np.array([(seed & _MASK64) ^ fnv1a64(leaf) for leaf in leaf_ids], dtype=np.uint64)
    return mix64(raw)


@dataclass(frozen=True)
class SynthSpec:
    """Parameters of a synthetic panel.

    ``noise_scale`` is relative to each leaf's base level. With ``drift_week``
    set, every leaf switches at that week to a new linear trend whose slope is
    drawn in ``[-drift_magnitude, drift_magnitude]`` per week.
    """

    seed: int = 0
    shape: tuple[int, int, int] = (4, 5, 5)
    weeks: int = 182
    seasonal_amplitude: float = 0.5
    trend_slope_range: tuple[float, float] = (-0.002, 0.004)
    noise_scale: float = 0.25
    leaf_sparsity: float = 0.45
    null_series_fraction: float = 133 / 3004
    base_range: tuple[float, float] = (20.0, 500.0)
    event_scale: float = 0.8
    drift_week: int | None = None
    drift_magnitude: float = 0.0
    year_weeks: int = YEAR_WEEKS

    def __post_init__(self):
        if len(self.shape) != 3 or min(self.shape) < 1:
            raise ValueError(f"shape must be three positive counts, got {self.shape}")
        for name in ("leaf_sparsity", "null_series_fraction"):
            value = getattr(self, name)
            if not 0.0 <= value <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {value}")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")
        if not 0.0 <= self.seasonal_amplitude < 1.0:
            raise ValueError("seasonal_amplitude must lie in [0, 1)")
        if self.noise_scale < 0 or self.event_scale < 0 or self.drift_magnitude < 0:
            raise ValueError("scales must be non-negative")
        lo, hi = self.base_range
        if not 0 < lo <= hi:
            raise ValueError("base_range must satisfy 0 < lo <= hi")

    @property
    def min_weeks(self) -> int:
        return 2 * self.year_weeks + 26 + 4

    @property
    def n_leaves(self) -> int:
        return int(np.prod(self.shape))


def synth_hierarchy(shape) -> Hierarchy:
    """Four-level tree: ``total``, ``Fxx``, ``Fxx/Syy``, ``Fxx/Syy/Lzzz``."""
    n_fam, n_sub, n_leaf = shape
    edges = []
    for f in range(1, n_fam + 1):
        fam = f"F{f:02d}"
        edges.append((fam, "total"))
        for s in range(1, n_sub + 1):
            sub = f"{fam}/S{s:02d}"
            edges.append((sub, fam))
            edges.extend((f"{sub}/L{k:03d}", sub) for k in range(1, n_leaf + 1))
    return build_hierarchy(edges)


def generate(spec: SynthSpec) -> tuple[Hierarchy, WeeklyPanel]:
    if spec.weeks < spec.min_weeks:
        raise SpecTooSmall(f"weeks={spec.weeks} is below the warm-up minimum {spec.min_weeks}")
    h = synth_hierarchy(spec.shape)
    leaves = h.leaves
    L, T, Y = len(leaves), spec.weeks, spec.year_weeks
    rng = SplitMix64(leaf_seeds(spec.seed, leaves))

    null_key = rng.next_u64()
    lo, hi = spec.base_range
    base = lo * _exp(rng.uniform() * math.log(hi / lo)).astype(np.float64)
    phase = rng.uniform() * Y
    s_lo, s_hi = spec.trend_slope_range
    slope = s_lo + rng.uniform() * (s_hi - s_lo)
    drift = (2.0 * rng.uniform() - 1.0) * spec.drift_magnitude

    n_null = int(round(spec.null_series_fraction * L))
    is_null = np.zeros(L, dtype=bool)
    is_null[np.argsort(null_key, kind="stable")[:n_null]] = True
    # zero-out rate on the remaining leaves so the overall rate matches leaf_sparsity
    if spec.null_series_fraction < 1.0:
        q = (spec.leaf_sparsity - spec.null_series_fraction) / (1.0 - spec.null_series_fraction)
    else:
        q = 1.0
    q = min(max(q, 0.0), 1.0)

    leaf_sales = np.empty((L, T))
    for t in range(1, T + 1):
        week = t % Y
        seasonal = 1.0 + spec.seasonal_amplitude * _sin(2.0 * math.pi * (week + phase) / Y).astype(np.float64)
        if week in EVENT_WEEKS:
            seasonal = seasonal + spec.event_scale
        level = 1.0 + slope * t
        if spec.drift_week is not None and t > spec.drift_week:
            level = level + drift * (t - spec.drift_week)
        noise = rng.normal() * spec.noise_scale * base
        value = np.maximum(0.0, base * seasonal * level + noise)
        value[rng.uniform() < q] = 0.0
        leaf_sales[:, t - 1] = value
    leaf_sales[is_null] = 0.0
    leaf_sales = np.round(leaf_sales, 2)
    return h, WeeklyPanel.from_leaves(h, leaf_sales)
