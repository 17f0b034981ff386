# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels. Same contracts as ``hieragg._kernels_py``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, log, log1p, sqrt, isfinite, INFINITY, NAN, pow

cnp.import_array()

cdef enum:
    ML_POLY = 0
    ML_PROD = 1
    BOA = 2
    EWA = 3
    PWA = 4
    ABSOLUTE = 0


def ses_filter(x, Py_ssize_t start, alphas):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] a = np.ascontiguousarray(alphas, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], k = a.shape[0], t, j
    out_arr = np.full((n, k), np.nan)
    cdef double[:, ::1] out = out_arr
    if start >= n or k == 0:
        return out_arr
    with nogil:
        for j in range(k):
            out[start, j] = xv[start]
        for t in range(start + 1, n):
            for j in range(k):
                out[t, j] = a[j] * xv[t] + (1.0 - a[j]) * out[t - 1, j]
    return out_arr


def holt_filter(x, Py_ssize_t start, alphas, betas, bint zero_trend=False):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef double[::1] a = np.ascontiguousarray(alphas, dtype=np.float64)
    cdef double[::1] b = np.ascontiguousarray(betas, dtype=np.float64)
    cdef Py_ssize_t n = xv.shape[0], k = a.shape[0], t, j
    level_arr = np.full((n, k), np.nan)
    trend_arr = np.full((n, k), np.nan)
    cdef double[:, ::1] level = level_arr
    cdef double[:, ::1] trend = trend_arr
    if start >= n or k == 0:
        return level_arr, trend_arr
    with nogil:
        for j in range(k):
            level[start, j] = xv[start]
            trend[start, j] = 0.0 if zero_trend else xv[start] - xv[start - 1]
        for t in range(start + 1, n):
            for j in range(k):
                level[t, j] = a[j] * xv[t] + (1.0 - a[j]) * (level[t - 1, j] + trend[t - 1, j])
                trend[t, j] = b[j] * (level[t, j] - level[t - 1, j]) + (1.0 - b[j]) * trend[t - 1, j]
    return level_arr, trend_arr


cdef inline double _loss(int loss, double y, double f) noexcept nogil:
    cdef double d = y - f
    return fabs(d) if loss == ABSOLUTE else d * d


cdef inline double _psi(int loss, double x) noexcept nogil:
    if loss == ABSOLUTE:
        return 1.0 if x > 0.0 else (-1.0 if x < 0.0 else 0.0)
    return 2.0 * x


cdef inline double _f_prod(double B, double S, double log_j) noexcept nogil:
    cdef double u = 0.5 / B, v = sqrt(log_j / (B * B + S))
    return u if u < v else v


cdef inline double _f_boa(double B, double S, double log_j) noexcept nogil:
    cdef double u = 0.5 / B, v = sqrt(log_j / S)
    return u if u < v else v


cdef void _uniform(double[::1] w, const unsigned char[::1] mask, Py_ssize_t J) noexcept nogil:
    cdef Py_ssize_t j, k = 0
    for j in range(J):
        if mask[j]:
            k += 1
    for j in range(J):
        w[j] = (1.0 / k) if (mask[j] and k > 0) else 0.0


cdef void _softmax(double[::1] w, double[::1] logits, const unsigned char[::1] cand, Py_ssize_t J) noexcept nogil:
    cdef Py_ssize_t j
    cdef double top = -INFINITY, total = 0.0
    for j in range(J):
        if cand[j] and logits[j] > top:
            top = logits[j]
    if not isfinite(top):
        _uniform(w, cand, J)
        return
    for j in range(J):
        if cand[j]:
            w[j] = exp(logits[j] - top)
            total += w[j]
        else:
            w[j] = 0.0
    for j in range(J):
        w[j] = w[j] / total


def aggregate(int algo, bint grad, int loss, y, F, Py_ssize_t h, double eta_fixed=1.0, double power=2.0):
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef double[:, ::1] Fv = np.ascontiguousarray(F, dtype=np.float64)
    cdef Py_ssize_t T = yv.shape[0] - 1
    cdef Py_ssize_t n_targets = Fv.shape[0], J = Fv.shape[1]
    cdef double log_j = log(<double>J) if J > 0 else 0.0

    weights_arr = np.zeros((n_targets, J))
    fhat_arr = np.full(n_targets, np.nan)
    cdef double[:, ::1] weights = weights_arr
    cdef double[::1] fhat = fhat_arr

    cdef double[::1] R = np.zeros(J)
    cdef double[::1] B = np.zeros(J)
    cdef double[::1] S = np.zeros(J)
    cdef double[::1] logW = np.zeros(J)
    cdef double[::1] L = np.zeros(J)
    cdef double[::1] eta = np.zeros(J)
    cdef unsigned char[::1] seen = np.zeros(J, dtype=np.uint8)
    cdef unsigned char[::1] scheduled = np.zeros(n_targets, dtype=np.uint8)
    cdef unsigned char[::1] avail = np.zeros(J, dtype=np.uint8)
    cdef unsigned char[::1] cand = np.zeros(J, dtype=np.uint8)
    cdef unsigned char[::1] fresh = np.zeros(J, dtype=np.uint8)
    cdef double[::1] wprev = np.zeros(J)
    cdef double[::1] e = np.zeros(J)
    cdef double[::1] lossv = np.zeros(J)
    cdef double[::1] num = np.zeros(J)
    cdef double[::1] w = np.zeros(J)

    cdef Py_ssize_t t, j, target, n_avail, n_cand, n_fresh
    cdef double yt, mix, fh, g, b_new, s_new, f_new, f_old, ratio, total, denom

    with nogil:
        for t in range(1, T + 1):
            yt = yv[t]
            if t < n_targets and isfinite(yt):
                n_avail = 0
                for j in range(J):
                    avail[j] = isfinite(Fv[t, j])
                    n_avail += avail[j]
                if n_avail > 0:
                    if scheduled[t]:
                        for j in range(J):
                            wprev[j] = weights[t, j]
                    else:
                        _uniform(wprev, avail, J)
                    # errors
                    if grad:
                        fh = 0.0
                        for j in range(J):
                            if avail[j]:
                                fh += wprev[j] * Fv[t, j]
                        g = _psi(loss, fh - yt)
                        for j in range(J):
                            if avail[j]:
                                if algo == BOA or algo == EWA:
                                    e[j] = g * Fv[t, j]
                                else:
                                    e[j] = g * (fh - Fv[t, j])
                    else:
                        mix = 0.0
                        for j in range(J):
                            if avail[j]:
                                lossv[j] = _loss(loss, yt, Fv[t, j])
                                mix += wprev[j] * lossv[j]
                        for j in range(J):
                            if avail[j]:
                                if algo == BOA or algo == EWA:
                                    e[j] = lossv[j]
                                else:
                                    e[j] = mix - lossv[j]
                    # state update
                    for j in range(J):
                        if not avail[j]:
                            continue
                        if algo == ML_POLY or algo == PWA:
                            R[j] += e[j]
                            if e[j] * e[j] > B[j]:
                                B[j] = e[j] * e[j]
                            S[j] += e[j] * e[j]
                        elif algo == ML_PROD:
                            b_new = B[j] if B[j] > fabs(e[j]) else fabs(e[j])
                            s_new = S[j] + e[j] * e[j]
                            if b_new > 0.0:
                                f_new = _f_prod(b_new, s_new, log_j)
                                f_old = _f_prod(B[j], S[j], log_j) if B[j] > 0.0 else 0.0
                                ratio = f_new / f_old if f_old > 0.0 else 0.0
                                logW[j] = ratio * logW[j] + log1p(f_new * e[j])
                            B[j] = b_new
                            S[j] = s_new
                        elif algo == BOA:
                            L[j] += e[j] * (1.0 + eta[j] * e[j])
                            b_new = B[j] if B[j] > fabs(e[j]) else fabs(e[j])
                            s_new = S[j] + e[j] * e[j]
                            eta[j] = _f_boa(b_new, s_new, log_j) if b_new > 0.0 else 0.0
                            B[j] = b_new
                            S[j] = s_new
                        else:
                            L[j] += e[j]
                        seen[j] = 1
            target = t + h
            if target >= n_targets:
                continue
            # weights for target t + h
            n_avail = 0
            n_cand = 0
            for j in range(J):
                avail[j] = isfinite(Fv[target, j])
                cand[j] = avail[j] and seen[j]
                n_avail += avail[j]
                n_cand += cand[j]
            if n_cand == 0:
                _uniform(w, avail, J)
            elif algo == ML_POLY or algo == PWA:
                total = 0.0
                for j in range(J):
                    num[j] = 0.0
                    if cand[j]:
                        if algo == ML_POLY:
                            denom = B[j] + S[j]
                            if denom > 0.0 and R[j] / denom > 0.0:
                                num[j] = R[j] / denom
                        elif R[j] > 0.0:
                            num[j] = pow(R[j], power - 1.0)
                        total += num[j]
                if total > 0.0:
                    for j in range(J):
                        w[j] = num[j] / total
                else:
                    _uniform(w, cand, J)
            elif algo == EWA:
                for j in range(J):
                    num[j] = -eta_fixed * L[j] if cand[j] else -INFINITY
                _softmax(w, num, cand, J)
            else:
                n_fresh = 0
                for j in range(J):
                    fresh[j] = cand[j] and B[j] == 0.0
                    n_fresh += fresh[j]
                if n_fresh > 0:
                    _uniform(w, fresh, J)
                else:
                    for j in range(J):
                        if not cand[j]:
                            num[j] = -INFINITY
                        elif algo == ML_PROD:
                            f_new = _f_prod(B[j], S[j], log_j)
                            num[j] = (log(f_new) if f_new > 0.0 else -INFINITY) + logW[j]
                        else:
                            num[j] = (log(eta[j]) if eta[j] > 0.0 else -INFINITY) - eta[j] * L[j]
                    _softmax(w, num, cand, J)
            fh = 0.0
            for j in range(J):
                weights[target, j] = w[j]
                if avail[j]:
                    fh += w[j] * Fv[target, j]
            scheduled[target] = 1
            if n_avail > 0:
                fhat[target] = fh
    return weights_arr, fhat_arr
