"""Student-t tail probabilities and critical values.

Two-tailed p-values come from the regularized incomplete beta function,
evaluated with the modified-Lentz continued fraction; critical values are
obtained by numeric inversion (bisection bracketing plus Newton polish).
Everything here is plain numpy so that results are identical no matter
which compute backend is active.
"""

from __future__ import annotations

import math

import numpy as np

_FPMIN = 1e-300
_EPS = 1e-15
_MAX_ITER = 600


def _betacf(a, b, x):
    """Continued fraction for the incomplete beta, vectorized over x.

    Converged elements are compacted out of the working set, so the cost
    tracks the slowest elements instead of the whole array.
    """
    x = np.asarray(x, dtype=np.float64).ravel()
    n = x.size
    result = np.empty(n)
    idx = np.arange(n)
    qab = a + b
    qap = a + 1.0
    qam = a - 1.0
    c = np.ones(n)
    d = 1.0 - qab * x / qap
    np.copyto(d, _FPMIN, where=np.abs(d) < _FPMIN)
    d = 1.0 / d
    h = d.copy()
    for m in range(1, _MAX_ITER + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        np.copyto(d, _FPMIN, where=np.abs(d) < _FPMIN)
        c = 1.0 + aa / c
        np.copyto(c, _FPMIN, where=np.abs(c) < _FPMIN)
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        np.copyto(d, _FPMIN, where=np.abs(d) < _FPMIN)
        c = 1.0 + aa / c
        np.copyto(c, _FPMIN, where=np.abs(c) < _FPMIN)
        d = 1.0 / d
        delta = d * c
        h *= delta
        done = np.abs(delta - 1.0) < _EPS
        if done.any():
            result[idx[done]] = h[done]
            keep = ~done
            if not keep.any():
                idx = idx[:0]
                break
            idx, x, c, d, h = idx[keep], x[keep], c[keep], d[keep], h[keep]
    if idx.size:
        result[idx] = h
    return result


def regularized_incomplete_beta(x, a: float, b: float):
    """I_x(a, b) for scalar shape parameters, vectorized over x in [0, 1]."""
    x = np.asarray(x, dtype=np.float64)
    if a <= 0 or b <= 0:
        raise ValueError("shape parameters must be positive")
    if (x < 0).any() or (x > 1).any():
        raise ValueError("x outside [0, 1]")
    flat = x.ravel()
    out = np.empty(flat.size)
    ln_beta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)

    interior = (flat > 0) & (flat < 1)
    use_direct = interior & (flat < (a + 1.0) / (a + b + 2.0))
    use_swap = interior & ~use_direct
    for selector, swap in ((use_direct, False), (use_swap, True)):
        if not selector.any():
            continue
        xs = flat[selector]
        front = np.exp(a * np.log(xs) + b * np.log1p(-xs) - ln_beta)
        if swap:
            out[selector] = 1.0 - front * _betacf(b, a, 1.0 - xs) / b
        else:
            out[selector] = front * _betacf(a, b, xs) / a
    out[flat <= 0] = 0.0
    out[flat >= 1] = 1.0
    return np.clip(out, 0.0, 1.0).reshape(x.shape)


def student_t_two_tailed_p(t, df: int):
    """P(|T_df| >= |t|), vectorized over t; infinities map to p = 0."""
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    t = np.asarray(t, dtype=np.float64)
    scalar = t.ndim == 0
    t = np.atleast_1d(t)
    finite = np.isfinite(t)
    tt = np.where(finite, t, 0.0)
    x = df / (df + tt * tt)
    p = regularized_incomplete_beta(x, 0.5 * df, 0.5)
    p = np.where(finite, p, 0.0)
    return float(p[0]) if scalar else p


def _t_pdf(c: float, df: int) -> float:
    ln = (math.lgamma(0.5 * (df + 1)) - math.lgamma(0.5 * df)
          - 0.5 * math.log(df * math.pi)
          - 0.5 * (df + 1) * math.log1p(c * c / df))
    return math.exp(ln)


def t_critical(p_two_tailed: float, df: int) -> float:
    """Value c with P(|T_df| >= c) == p, accurate to better than 1e-8.

    Bisection brackets the root of the monotone two-tailed tail function,
    then Newton steps polish it.
    """
    if not 0.0 < p_two_tailed <= 1.0:
        raise ValueError(f"p must be in (0, 1], got {p_two_tailed}")
    if df < 1:
        raise ValueError(f"df must be >= 1, got {df}")
    if p_two_tailed == 1.0:
        return 0.0

    def tail(c):
        return student_t_two_tailed_p(c, df)

    lo, hi = 0.0, 1.0
    while tail(hi) > p_two_tailed:
        lo = hi
        hi *= 2.0
        if hi > 1e300:
            raise ValueError("failed to bracket critical value")
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if tail(mid) > p_two_tailed:
            lo = mid
        else:
            hi = mid
    c = 0.5 * (lo + hi)
    for _ in range(4):
        f = tail(c) - p_two_tailed
        deriv = -2.0 * _t_pdf(c, df)
        if deriv == 0.0:
            break
        step = f / deriv
        c_new = c - step
        if c_new < lo or c_new > hi:
            break
        c = c_new
        if abs(step) < 1e-13 * max(1.0, c):
            break
    return c


def _norm_ppf(q: float) -> float:
    """Inverse standard normal CDF (rational approximation, then refined)."""
    if not 0.0 < q < 1.0:
        raise ValueError("quantile argument outside (0, 1)")
    # Acklam's rational approximation as the starting point.
    a = (-3.969683028665376e+01, 2.209460984245205e+02, -2.759285104469687e+02,
         1.383577518672690e+02, -3.066479806614716e+01, 2.506628277459239e+00)
    b = (-5.447609879822406e+01, 1.615858368580409e+02, -1.556989798598866e+02,
         6.680131188771972e+01, -1.328068155288572e+01)
    c = (-7.784894002430293e-03, -3.223964580411365e-01, -2.400758277161838e+00,
         -2.549732539343734e+00, 4.374664141464968e+00, 2.938163982698783e+00)
    d = (7.784695709041462e-03, 3.224671290700398e-01, 2.445134137142996e+00,
         3.754408661907416e+00)
    p_low = 0.02425
    if q < p_low:
        r = math.sqrt(-2.0 * math.log(q))
        x = (((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) / \
            ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0)
    elif q <= 1.0 - p_low:
        r = q - 0.5
        s = r * r
        x = (((((a[0] * s + a[1]) * s + a[2]) * s + a[3]) * s + a[4]) * s + a[5]) * r / \
            (((((b[0] * s + b[1]) * s + b[2]) * s + b[3]) * s + b[4]) * s + 1.0)
    else:
        r = math.sqrt(-2.0 * math.log(1.0 - q))
        x = -(((((c[0] * r + c[1]) * r + c[2]) * r + c[3]) * r + c[4]) * r + c[5]) / \
            ((((d[0] * r + d[1]) * r + d[2]) * r + d[3]) * r + 1.0)
    # Newton refinement against the erfc-based CDF.
    for _ in range(3):
        cdf = 0.5 * math.erfc(-x / math.sqrt(2.0))
        pdf = math.exp(-0.5 * x * x) / math.sqrt(2.0 * math.pi)
        if pdf == 0.0:
            break
        x -= (cdf - q) / pdf
    return x


def normal_two_tailed_critical(p_two_tailed: float) -> float:
    """Value c with P(|Z| >= c) == p for a standard normal Z."""
    if not 0.0 < p_two_tailed <= 1.0:
        raise ValueError(f"p must be in (0, 1], got {p_two_tailed}")
    if p_two_tailed == 1.0:
        return 0.0
    return _norm_ppf(1.0 - 0.5 * p_two_tailed)
