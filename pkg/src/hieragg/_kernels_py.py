"""Pure numpy kernels; the reference for (and fallback of) ``_kernels.pyx``.

Algorithm codes: 0 ML-Poly, 1 ML-Prod, 2 BOA, 3 EWA, 4 PWA.
Loss codes: 0 absolute, 1 square.

Aggregator state is a set of per-expert float arrays ``R, B, S, logW, L, eta``
plus a boolean ``seen`` (expert has been scored at least once), all mutated
in place. ML-Prod keeps its multiplicative weight as ``logW = log W``.

Sums run sequentially in index order and transcendental functions go through
the C math library, as in the compiled kernels, so both backends produce the
same bits. This matters: ML-Poly regrets of experts that forecast alike sit at
rounding-noise level, and their sign decides the weights.
"""

import math

import numpy as np

ML_POLY, ML_PROD, BOA, EWA, PWA = range(5)
ABSOLUTE, SQUARE = 0, 1


def ses_filter(x, start, alphas):
    """Exponential smoothing of ``x`` from week ``start`` for each alpha.

    ``out[start] = x[start]`` and ``out[t] = a*x[t] + (1-a)*out[t-1]``.
    Returns shape ``(len(x), len(alphas))``, NaN before ``start``.
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(alphas, dtype=np.float64)
    out = np.full((len(x), len(a)), np.nan)
    if start >= len(x) or len(a) == 0:
        return out
    one_minus = 1.0 - a
    out[start] = x[start]
    for t in range(start + 1, len(x)):
        out[t] = a * x[t] + one_minus * out[t - 1]
    return out


def holt_filter(x, start, alphas, betas, zero_trend=False):
    """Holt level/trend recursion on ``x`` started at week ``start``.

    Level starts at ``x[start]``; trend at ``x[start] - x[start-1]`` (or 0
    with ``zero_trend``). ``alphas`` and ``betas`` are paired elementwise.
    Returns ``(level, trend)``, each ``(len(x), len(alphas))``.
    """
    x = np.asarray(x, dtype=np.float64)
    a = np.asarray(alphas, dtype=np.float64)
    b = np.asarray(betas, dtype=np.float64)
    level = np.full((len(x), len(a)), np.nan)
    trend = np.full((len(x), len(a)), np.nan)
    if start >= len(x) or len(a) == 0:
        return level, trend
    level[start] = x[start]
    trend[start] = 0.0 if zero_trend else x[start] - x[start - 1]
    one_a, one_b = 1.0 - a, 1.0 - b
    for t in range(start + 1, len(x)):
        level[t] = a * x[t] + one_a * (level[t - 1] + trend[t - 1])
        trend[t] = b * (level[t] - level[t - 1]) + one_b * trend[t - 1]
    return level, trend


_exp = np.frompyfunc(math.exp, 1, 1)
_log = np.frompyfunc(math.log, 1, 1)
_log1p = np.frompyfunc(math.log1p, 1, 1)
_pow = np.frompyfunc(math.pow, 2, 1)


def _libm(fn, *args):
    return np.asarray(fn(*args), dtype=np.float64)


def _seqsum(x):
    """Left-to-right sum, matching a plain C accumulation loop."""
    return float(np.cumsum(x)[-1]) if len(x) else 0.0


def _loss(loss, y, f):
    d = y - f
    return np.abs(d) if loss == ABSOLUTE else d * d


def _psi(loss, x):
    return float(np.sign(x)) if loss == ABSOLUTE else 2.0 * x


def round_errors(algo, grad, loss, y, w, preds, avail):
    """Per-expert ``e`` for one round (0 where unavailable)."""
    e = np.zeros(len(preds))
    p = preds[avail]
    wa = w[avail]
    if grad:
        fhat = _seqsum(wa * p)
        g = _psi(loss, fhat - y)
        if algo in (BOA, EWA):
            e[avail] = g * p
        else:
            e[avail] = g * (fhat - p)
    else:
        losses = _loss(loss, y, p)
        if algo in (BOA, EWA):
            e[avail] = losses
        else:
            e[avail] = _seqsum(wa * losses) - losses
    return e


def _f_prod(B, S, log_j):
    return np.minimum(0.5 / B, np.sqrt(log_j / (B * B + S)))


def _f_boa(B, S, log_j):
    return np.minimum(0.5 / B, np.sqrt(log_j / S))


def update_state(algo, e, avail, log_j, R, B, S, logW, L, eta, seen):
    """Fold one round of errors ``e`` into the state of the available experts."""
    ea = e[avail]
    if algo in (ML_POLY, PWA):
        R[avail] += ea
        B[avail] = np.maximum(B[avail], ea * ea)
        S[avail] += ea * ea
    elif algo == ML_PROD:
        b_old, s_old = B[avail], S[avail]
        b_new = np.maximum(b_old, np.abs(ea))
        s_new = s_old + ea * ea
        lw = logW[avail]
        live = b_new > 0.0
        with np.errstate(divide="ignore", invalid="ignore"):
            f_new = np.where(live, _f_prod(b_new, s_new, log_j), 0.0)
            f_old = np.where(b_old > 0.0, _f_prod(b_old, s_old, log_j), 0.0)
            ratio = np.where(f_old > 0.0, f_new / f_old, 0.0)
        lw = np.where(live, ratio * lw + _libm(_log1p, np.where(live, f_new * ea, 0.0)), lw)
        logW[avail] = lw
        B[avail] = b_new
        S[avail] = s_new
    elif algo == BOA:
        L[avail] += ea * (1.0 + eta[avail] * ea)
        b_new = np.maximum(B[avail], np.abs(ea))
        s_new = S[avail] + ea * ea
        with np.errstate(divide="ignore", invalid="ignore"):
            eta[avail] = np.where(b_new > 0.0, _f_boa(b_new, s_new, log_j), 0.0)
        B[avail] = b_new
        S[avail] = s_new
    else:  # EWA
        L[avail] += ea
    seen[avail] = True


def _uniform(mask):
    w = np.zeros(len(mask))
    k = int(mask.sum())
    if k:
        w[mask] = 1.0 / k
    return w


def _normalize(num, cand):
    total = _seqsum(num)
    if total > 0.0:
        return num / total
    return _uniform(cand)


def _softmax(logits, cand):
    w = np.zeros(len(cand))
    lg = logits[cand]
    top = lg.max()
    if not np.isfinite(top):
        return _uniform(cand)
    w[cand] = _libm(_exp, lg - top)
    return w / _seqsum(w)


def next_weights(algo, avail, log_j, eta_fixed, power, R, B, S, logW, L, eta, seen):
    """Convex weights over the experts available for the next target."""
    cand = avail & seen
    if not cand.any():
        return _uniform(avail)
    if algo == ML_POLY:
        num = np.zeros(len(avail))
        denom = B[cand] + S[cand]
        with np.errstate(divide="ignore", invalid="ignore"):
            num[cand] = np.where(denom > 0.0, np.maximum(0.0, R[cand] / denom), 0.0)
        return _normalize(num, cand)
    if algo == PWA:
        num = np.zeros(len(avail))
        num[cand] = _libm(_pow, np.maximum(0.0, R[cand]), power - 1.0)
        return _normalize(num, cand)
    if algo == EWA:
        logits = np.full(len(avail), -np.inf)
        logits[cand] = -eta_fixed * L[cand]
        return _softmax(logits, cand)
    # ML-Prod and BOA: experts without any error yet have an unbounded rate and dominate
    fresh = cand & (B == 0.0)
    if fresh.any():
        return _uniform(fresh)
    logits = np.full(len(avail), -np.inf)
    rate = _f_prod(B[cand], S[cand], log_j) if algo == ML_PROD else eta[cand]
    log_rate = np.full(len(rate), -np.inf)
    pos = rate > 0.0
    log_rate[pos] = _libm(_log, rate[pos])
    if algo == ML_PROD:
        logits[cand] = log_rate + logW[cand]
    else:
        logits[cand] = log_rate - eta[cand] * L[cand]
    return _softmax(logits, cand)


def new_state(J):
    z = np.zeros(J)
    return [z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), z.copy(), np.zeros(J, dtype=bool)]


def aggregate(algo, grad, loss, y, F, h, eta_fixed=1.0, power=2.0):
    """Run one aggregator over a node.

    ``y`` is week-indexed (length ``T + 1``, NaN where unobserved); ``F`` holds
    expert forecasts by target week, shape ``(T + h + 1, J)``, NaN where an
    expert is unavailable. Round ``t`` observes ``y[t]`` and sets the weights
    for target ``t + h``; rounds whose target was never scheduled score
    experts with uniform weights. Returns ``(weights, fhat)`` indexed by
    target week; rows without any available expert are zero / NaN.
    """
    y = np.asarray(y, dtype=np.float64)
    F = np.asarray(F, dtype=np.float64)
    T = len(y) - 1
    n_targets, J = F.shape
    log_j = math.log(J) if J > 0 else 0.0
    state = new_state(J)
    weights = np.zeros((n_targets, J))
    fhat = np.full(n_targets, np.nan)
    scheduled = np.zeros(n_targets, dtype=bool)
    avail_all = np.isfinite(F)
    for t in range(1, T + 1):
        if t < n_targets and np.isfinite(y[t]):
            avail = avail_all[t]
            if avail.any():
                w_prev = weights[t] if scheduled[t] else _uniform(avail)
                e = round_errors(algo, grad, loss, y[t], w_prev, F[t], avail)
                update_state(algo, e, avail, log_j, *state)
        target = t + h
        if target >= n_targets:
            continue
        avail_next = avail_all[target]
        w = next_weights(algo, avail_next, log_j, eta_fixed, power, *state)
        weights[target] = w
        scheduled[target] = True
        if avail_next.any():
            fhat[target] = _seqsum(w[avail_next] * F[target, avail_next])
    return weights, fhat
