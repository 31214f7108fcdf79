"""Log-space CDFs and small numerical helpers.

Probabilities in this package routinely fall below the smallest positive
double (e.g. P(Gamma_1 <= y) with y ~ e^-300), so the Erlang and Beta CDFs
are evaluated in log space with a series expansion whenever the argument is
small enough for the regularized functions to lose all their digits.
"""
from __future__ import annotations

import math

import numpy as np
from scipy import special as sp

_SERIES_TOL = 1e-17
_SERIES_MAX = 10_000


def log1mexp(a: float) -> float:
    """log(1 - exp(-a)) for a > 0, accurate at both ends."""
    if a <= 0:
        return -math.inf
    if a < math.log(2.0):
        return math.log(-math.expm1(-a))
    return math.log1p(-math.exp(-a))


def log1mexp_from_log(log_a: float) -> float:
    """log(1 - exp(-a)) given log a; usable when a itself underflows."""
    if log_a == -math.inf:
        return -math.inf
    if log_a < -20.0:
        a = math.exp(log_a)
        # 1 - e^{-a} = a (1 - a/2 + ...)
        return log_a + math.log1p(-a / 2.0)
    return log1mexp(math.exp(log_a))


def log_diff_exp(la: float, lb: float) -> float:
    """log(e^la - e^lb) for la >= lb."""
    if lb > la:
        raise ValueError("log_diff_exp needs la >= lb")
    if lb == -math.inf:
        return la
    if la == lb:
        return -math.inf
    return la + math.log(-math.expm1(lb - la))


def log_erlang_cdf(i: int, y: float | None = None, log_y: float | None = None) -> float:
    """log P(Gamma_i <= y) where Gamma_i ~ Erlang(i, 1).

    Supply y or log_y. For y < 1 the series
    P = y^i e^{-y} / i! * sum_k y^k / ((i+1)...(i+k)) is summed directly.
    """
    if i < 1:
        raise ValueError("Erlang shape must be >= 1")
    if log_y is None:
        if y is None:
            raise ValueError("need y or log_y")
        if y <= 0:
            return -math.inf
        log_y = math.log(y)
    if log_y >= 0.0:
        return math.log(sp.gammainc(i, math.exp(log_y)))
    yv = math.exp(log_y)
    total, term, k = 1.0, 1.0, 0
    while k < _SERIES_MAX:
        k += 1
        term *= yv / (i + k)
        total += term
        if term < _SERIES_TOL * total:
            break
    return i * log_y - yv - sp.gammaln(i + 1) + math.log(total)


def log_beta_cdf(a: float, b: float, x: float | None = None,
                 log_x: float | None = None) -> float:
    """log I_x(a, b), the regularized incomplete beta function.

    Uses I_x(a,b) = x^a (1-x)^b / (a B(a,b)) * 2F1(a+b, 1; a+1; x) when
    (a+b)x is small, scipy's betainc otherwise.
    """
    if log_x is None:
        if x is None:
            raise ValueError("need x or log_x")
        if x <= 0:
            return -math.inf
        if x >= 1:
            return 0.0
        log_x = math.log(x)
    xv = math.exp(log_x)
    if (a + b) * xv >= 0.5:
        return math.log(sp.betainc(a, b, xv))
    total, term, k = 1.0, 1.0, 0
    while k < _SERIES_MAX:
        term *= (a + b + k) / (a + 1 + k) * xv
        k += 1
        total += term
        if term < _SERIES_TOL * total:
            break
    return (a * log_x + b * math.log1p(-xv) - math.log(a) - sp.betaln(a, b)
            + math.log(total))


def clopper_pearson(hits: int, trials: int, level: float = 0.99) -> tuple[float, float]:
    """Exact two-sided binomial confidence interval."""
    if trials <= 0:
        return 0.0, 1.0
    alpha = 1.0 - level
    lo = 0.0 if hits == 0 else float(sp.betaincinv(hits, trials - hits + 1, alpha / 2))
    hi = 1.0 if hits == trials else float(sp.betaincinv(hits + 1, trials - hits, 1 - alpha / 2))
    return lo, hi


def ks_two_sample_pvalue(x: np.ndarray, y: np.ndarray) -> float:
    from scipy.stats import ks_2samp

    return float(ks_2samp(x, y).pvalue)
