"""Compiled DBMF / PA right-hand sides and a Dormand-Prince 5(4) driver.

The kernels mirror ``meanfield.dbmf_rhs`` and ``meanfield._pa_kernel`` loop
for loop; the driver uses scipy's RK45 tableau and step-size controller so
compiled and interpreted solves follow the same scheme.
"""

from __future__ import annotations

import numpy as np
from numba import njit
from scipy.integrate._ivp.rk import RK45

from .meanfield import EPS_DEN, EPS_X

KIND_DBMF = 0
KIND_PA = 1

STATUS_OK = 0
STATUS_STEP_COLLAPSE = 1
STATUS_NONFINITE = 2
STATUS_STEP_BUDGET = 3

MAX_STEPS = 10_000_000  # attempted steps

_C = np.ascontiguousarray(RK45.C, dtype=float)
_A = np.ascontiguousarray(RK45.A, dtype=float)
_B = np.ascontiguousarray(RK45.B, dtype=float)
_E = np.ascontiguousarray(RK45.E, dtype=float)
_P = np.ascontiguousarray(RK45.P, dtype=float)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0


def pack_params(ix, cls):
    """Tuple of contiguous arrays consumed by the compiled kernels."""
    f64 = lambda a: np.ascontiguousarray(a, dtype=np.float64)
    i64 = lambda a: np.ascontiguousarray(a, dtype=np.int64)
    return (
        f64(cls.weight), f64(cls.k1), f64(cls.km1), f64(cls.kk1),
        i64(ix.i_from), i64(ix.i_to), f64(ix.i_rate),
        i64(ix.c_from), i64(ix.c_to), i64(ix.c_ctx), f64(ix.c_rate),
        f64(ix.i_pair_rate), f64(ix.i_pair_rate.sum(axis=1)),
    )


@njit(cache=True)
def _dbmf(y, S, C, prm, out):
    w, k1 = prm[0], prm[1]
    i_from, i_to, i_rate = prm[4], prm[5], prm[6]
    c_from, c_to, c_ctx, c_rate = prm[7], prm[8], prm[9], prm[10]
    x = y.reshape((S, C))
    dx = out.reshape((S, C))
    dx[:] = 0.0
    mk = 0.0
    for c in range(C):
        mk += w[c] * k1[c]
    pn = np.zeros(S)
    for s in range(S):
        acc = 0.0
        for c in range(C):
            acc += w[c] * k1[c] * x[s, c]
        pn[s] = acc / mk
    for j in range(len(i_rate)):
        a, b, r = i_from[j], i_to[j], i_rate[j]
        for c in range(C):
            f = r * x[a, c]
            dx[b, c] += f
            dx[a, c] -= f
    for j in range(len(c_rate)):
        a, b, r = c_from[j], c_to[j], c_rate[j] * pn[c_ctx[j]]
        for c in range(C):
            f = r * x[a, c] * k1[c]
            dx[b, c] += f
            dx[a, c] -= f


@njit(cache=True)
def _pa(y, S, C, prm, out):
    w, k1, km1, kk1 = prm[0], prm[1], prm[2], prm[3]
    i_from, i_to, i_rate = prm[4], prm[5], prm[6]
    c_from, c_to, c_ctx, c_rate = prm[7], prm[8], prm[9], prm[10]
    pair, out_rate = prm[11], prm[12]
    nx = S * C
    x = y[:nx].reshape((S, C))
    p = y[nx:].reshape((S, C, S))
    dx = out[:nx].reshape((S, C))
    dp = out[nx:].reshape((S, C, S))
    dx[:] = 0.0
    for j in range(len(i_rate)):
        a, b, r = i_from[j], i_to[j], i_rate[j]
        for c in range(C):
            f = r * x[a, c]
            dx[b, c] += f
            dx[a, c] -= f
    for j in range(len(c_rate)):
        a, b, g, r = c_from[j], c_to[j], c_ctx[j], c_rate[j]
        for c in range(C):
            f = r * x[a, c] * k1[c] * p[a, c, g]
            dx[b, c] += f
            dx[a, c] -= f

    inv_x = np.empty((S, C))
    for s in range(S):
        for c in range(C):
            inv_x[s, c] = 0.0 if x[s, c] < EPS_X else 1.0 / x[s, c]

    for s in range(S):
        for c in range(C):
            g = dx[s, c] * inv_x[s, c] + out_rate[s]
            for n in range(S):
                dp[s, c, n] = -g * p[s, c, n]
    for j in range(len(i_rate)):
        a, b, r = i_from[j], i_to[j], i_rate[j]
        for c in range(C):
            g = r * x[a, c] * inv_x[b, c]
            for n in range(S):
                dp[b, c, n] += g * p[a, c, n]
    for j in range(len(c_rate)):
        a, b, gs, r = c_from[j], c_to[j], c_ctx[j], c_rate[j]
        for c in range(C):
            pr = p[a, c, gs]
            ratio = x[a, c] * inv_x[b, c]
            base = r * km1[c] * pr
            for n in range(S):
                q = base * p[a, c, n]
                if n == gs:
                    q += r * pr
                dp[b, c, n] += q * ratio
                dp[a, c, n] -= q

    # beta[s, a, b]
    den = np.zeros((S, S))  # den[a, s]
    for a in range(S):
        for c in range(C):
            wx = w[c] * x[a, c] * k1[c]
            for s in range(S):
                den[a, s] += wx * p[a, c, s]
    num = np.zeros((S, S, S))
    for s in range(S):
        for a in range(S):
            for b in range(S):
                num[s, a, b] = den[a, s] * pair[a, b]
    t = np.empty(S)
    for j in range(len(c_rate)):
        a, b, gs, r = c_from[j], c_to[j], c_ctx[j], c_rate[j]
        t[:] = 0.0
        for c in range(C):
            wx = w[c] * x[a, c] * kk1[c] * p[a, c, gs]
            for s in range(S):
                t[s] += wx * p[a, c, s]
        t[gs] += den[a, gs]
        for s in range(S):
            num[s, a, b] += r * t[s]
    beta = np.zeros((S, S, S))
    bsum = np.zeros((S, S))
    for s in range(S):
        for a in range(S):
            if den[a, s] > EPS_DEN:
                for b in range(S):
                    if b != a:
                        beta[s, a, b] = num[s, a, b] / den[a, s]
                        bsum[s, a] += beta[s, a, b]
    for s in range(S):
        for c in range(C):
            if x[s, c] < EPS_X:
                for n in range(S):
                    dp[s, c, n] = 0.0
                continue
            for n in range(S):
                acc = -p[s, c, n] * bsum[s, n]
                for a in range(S):
                    acc += p[s, c, a] * beta[s, a, n]
                dp[s, c, n] += acc


@njit(cache=True)
def _eval(kind, y, S, C, prm, out):
    if kind == KIND_DBMF:
        _dbmf(y, S, C, prm, out)
    else:
        _pa(y, S, C, prm, out)


def rhs(kind, y, S, C, prm):
    out = np.empty_like(y)
    _eval(kind, np.ascontiguousarray(y, dtype=float), S, C, prm, out)
    return out


@njit(cache=True)
def _rms_scaled(v, scale):
    acc = 0.0
    for i in range(len(v)):
        z = v[i] / scale[i]
        acc += z * z
    return np.sqrt(acc / len(v))


@njit(cache=True)
def _all_finite(v):
    for i in range(len(v)):
        if not np.isfinite(v[i]):
            return False
    return True


@njit(cache=True)
def dopri5(kind, S, C, prm, y0, t_eval, rtol, atol, Cc, A, B, E, P, max_steps):
    """Adaptive Dormand-Prince 5(4) on [0, t_eval[-1]] with dense output at ``t_eval``.

    Returns (samples, status, n_rhs, min_value, n_steps).
    """
    n = len(y0)
    t_end = t_eval[-1]
    out = np.zeros((len(t_eval), n))
    K = np.zeros((7, n))
    y = y0.copy()
    y_new = np.empty(n)
    tmp = np.empty(n)
    scale = np.empty(n)
    n_rhs = 0
    lo = 0.0
    for i in range(n):
        if y[i] < lo:
            lo = y[i]

    _eval(kind, y, S, C, prm, K[0])
    n_rhs += 1
    if not _all_finite(K[0]):
        return out, STATUS_NONFINITE, n_rhs, lo, 0

    # initial step, as in scipy's select_initial_step
    for i in range(n):
        scale[i] = atol + abs(y[i]) * rtol
    d0 = _rms_scaled(y, scale)
    d1 = _rms_scaled(K[0], scale)
    if not np.isfinite(d1):
        return out, STATUS_NONFINITE, n_rhs, lo, 0
    h0 = 1e-6 if (d0 < 1e-5 or d1 < 1e-5) else 0.01 * d0 / d1
    for i in range(n):
        tmp[i] = y[i] + h0 * K[0, i]
    _eval(kind, tmp, S, C, prm, K[1])
    n_rhs += 1
    for i in range(n):
        tmp[i] = (K[1, i] - K[0, i])
    d2 = _rms_scaled(tmp, scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    h = min(100 * h0, h1, t_end)

    out[0] = y
    k_out = 1
    t = 0.0
    n_steps = 0
    Q = np.empty((n, 4))
    while t < t_end:
        min_step = 10.0 * abs(np.nextafter(t, np.inf) - t)
        if h > t_end - t:
            h = t_end - t
        rejected = False
        accepted = False
        while not accepted:
            if h < min_step:
                return out, STATUS_STEP_COLLAPSE, n_rhs, lo, n_steps
            if n_rhs > 7 * max_steps:
                return out, STATUS_STEP_BUDGET, n_rhs, lo, n_steps
            for s in range(1, 6):
                for i in range(n):
                    acc = 0.0
                    for r in range(s):
                        acc += A[s, r] * K[r, i]
                    tmp[i] = y[i] + h * acc
                _eval(kind, tmp, S, C, prm, K[s])
                n_rhs += 1
            for i in range(n):
                acc = 0.0
                for r in range(6):
                    acc += B[r] * K[r, i]
                y_new[i] = y[i] + h * acc
            _eval(kind, y_new, S, C, prm, K[6])
            n_rhs += 1
            if not (_all_finite(K[6]) and _all_finite(y_new)):
                return out, STATUS_NONFINITE, n_rhs, lo, n_steps
            for i in range(n):
                acc = 0.0
                for r in range(7):
                    acc += E[r] * K[r, i]
                tmp[i] = h * acc
                scale[i] = atol + max(abs(y[i]), abs(y_new[i])) * rtol
            err = _rms_scaled(tmp, scale)
            if err < 1.0:
                if err == 0.0:
                    factor = _MAX_FACTOR
                else:
                    factor = min(_MAX_FACTOR, _SAFETY * err ** -0.2)
                if rejected:
                    factor = min(1.0, factor)
                accepted = True
                t_new = t + h
                if t_end - t_new < min_step:
                    t_new = t_end
                # dense output for samples in (t, t_new]
                for i in range(n):
                    for q in range(4):
                        acc = 0.0
                        for r in range(7):
                            acc += K[r, i] * P[r, q]
                        Q[i, q] = acc
                while k_out < len(t_eval) and t_eval[k_out] <= t_new:
                    if t_eval[k_out] >= t_new:
                        out[k_out] = y_new
                    else:
                        xx = (t_eval[k_out] - t) / h
                        for i in range(n):
                            pw = xx
                            acc = 0.0
                            for q in range(4):
                                acc += Q[i, q] * pw
                                pw *= xx
                            out[k_out, i] = y[i] + h * acc
                    k_out += 1
                t = t_new
                h *= factor
                for i in range(n):
                    y[i] = y_new[i]
                    K[0, i] = K[6, i]
                    if y[i] < lo:
                        lo = y[i]
                n_steps += 1
            else:
                h *= max(_MIN_FACTOR, _SAFETY * err ** -0.2)
                rejected = True
    return out, STATUS_OK, n_rhs, lo, n_steps


def run_dopri5(kind, S, C, prm, y0, t_eval, rtol, atol):
    return dopri5(
        kind, S, C, prm, np.ascontiguousarray(y0, dtype=float),
        np.ascontiguousarray(t_eval, dtype=float), float(rtol), float(atol),
        _C, _A, _B, _E, _P, MAX_STEPS,
    )
