"""Lognormal-type tails nu[x, inf) = c x^beta exp(-lam (log x)^gamma).

Everything is parametrised through r(u) = lam u^gamma - beta u - log c, so
that tail(x) = exp(-r(log x)). The speed of every large-deviation statement
in the package is r(log n).
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from .special import log_beta_cdf, log_diff_exp, log_erlang_cdf

_BISECT_RTOL = 1e-12
_BISECT_MAXIT = 200
_LOG2 = math.log(2.0)


@dataclass(frozen=True)
class TailParams:
    c: float = 1.0
    beta: float = 0.0
    lam: float = 1.0
    gamma: float = 2.0

    def __post_init__(self):
        if not (self.c > 0 and self.lam > 0 and self.gamma > 1):
            raise ValueError(f"need c > 0, lambda > 0, gamma > 1; got {self}")
        # d/du log tail(e^u) = beta - lam*gamma*u^(gamma-1) is largest at u = 0,
        # so the tail is nonincreasing on [1, inf) iff beta <= 0.
        if self.beta > 0:
            raise ValueError(
                f"tail increases on [1, {math.exp((self.beta / (self.lam * self.gamma)) ** (1 / (self.gamma - 1))):.4g}]"
                f" for beta={self.beta} > 0")

    def to_dict(self) -> dict:
        return {"c": self.c, "beta": self.beta, "lambda": self.lam, "gamma": self.gamma}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: Mapping) -> "TailParams":
        extra = set(d) - {"c", "beta", "lambda", "gamma"}
        if extra:
            raise ValueError(f"unknown tail keys: {sorted(extra)}")
        return cls(c=float(d.get("c", 1.0)), beta=float(d.get("beta", 0.0)),
                   lam=float(d.get("lambda", 1.0)), gamma=float(d.get("gamma", 2.0)))

    @classmethod
    def from_json(cls, s: str) -> "TailParams":
        return cls.from_dict(json.loads(s))


REFERENCE = TailParams()


def r_eval(params: TailParams, u):
    u = np.asarray(u, dtype=float)
    out = params.lam * u ** params.gamma - params.beta * u - math.log(params.c)
    return float(out) if out.ndim == 0 else out


def _check_x(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 1) or np.any(np.isnan(x)):
        raise ValueError("tail is only defined on [1, inf); small jumps live in jump_sim")
    return x


def log_tail(params: TailParams, x):
    x = _check_x(x)
    out = -r_eval(params, np.log(x))
    return float(out) if np.ndim(out) == 0 else out


def tail(params: TailParams, x):
    """nu[x, inf) for x >= 1 (unnormalised; divide by tail(1) for P(Z >= x))."""
    out = np.exp(log_tail(params, x))
    return float(out) if np.ndim(out) == 0 else out


def speed(params: TailParams, n) -> float:
    if n < 2:
        raise ValueError("speed needs n >= 2")
    s = r_eval(params, math.log(n))
    if s <= 0:
        raise ValueError(f"speed r(log {n}) = {s:.4g} is not positive; n too small")
    return float(s)


def log_q_n(params: TailParams, n, x):
    out = math.log(n) + log_tail(params, x)
    return out


def q_n(params: TailParams, n, x):
    out = n * np.asarray(tail(params, x))
    return float(out) if out.ndim == 0 else out


def log_q_tilde(params: TailParams, x):
    """log P(Z >= x) for the normalised tail law; zero below 1."""
    x = np.asarray(x, dtype=float)
    out = np.where(x <= 1, 0.0, -(r_eval(params, np.log(np.maximum(x, 1.0))) - r_eval(params, 0.0)))
    return float(out) if out.ndim == 0 else out


def solve_r(params: TailParams, target):
    """Smallest u >= 0 with r(u) >= target (r is increasing on [0, inf)).

    Closed form when beta = 0, otherwise vectorised bisection in u = log x
    (a relative tolerance on x is an absolute one on u), with the upper
    bracket doubled in x until it overshoots.
    """
    target = np.asarray(target, dtype=float)
    r0 = r_eval(params, 0.0)
    t = np.maximum(target, r0)
    if params.beta == 0:
        u = ((t + math.log(params.c)) / params.lam) ** (1.0 / params.gamma)
        return float(u) if u.ndim == 0 else u
    hi = np.full(t.shape, _LOG2)
    for _ in range(_BISECT_MAXIT):
        short = r_eval(params, hi) < t
        if not np.any(short):
            break
        hi = np.where(short, hi + hi, hi)
    lo = np.zeros(t.shape)
    for _ in range(_BISECT_MAXIT):
        mid = 0.5 * (lo + hi)
        above = r_eval(params, mid) >= t
        hi = np.where(above, mid, hi)
        lo = np.where(above, lo, mid)
        if np.all(hi - lo <= _BISECT_RTOL * np.maximum(1.0, hi)):
            break
    u = np.where(target <= r0, 0.0, hi)
    return float(u) if u.ndim == 0 else u


def q_n_inverse_log(params: TailParams, n, log_y):
    """Q_n^{<-} evaluated from log y (y itself may underflow)."""
    u = solve_r(params, math.log(n) - np.asarray(log_y, dtype=float))
    out = np.exp(u)
    return float(out) if np.ndim(out) == 0 else out


def q_n_inverse(params: TailParams, n, y):
    """Generalised inverse inf{s : Q_n(s) < y}, clamped to 1 when y >= Q_n(1)."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("q_n_inverse needs y > 0")
    return q_n_inverse_log(params, n, np.log(y))


def q_tilde_inverse(params: TailParams, v):
    """Inverse of the normalised tail: inf{s >= 1 : P(Z >= s) < v}, v in (0, 1]."""
    v = np.asarray(v, dtype=float)
    u = solve_r(params, r_eval(params, 0.0) - np.log(v))
    out = np.exp(u)
    return float(out) if np.ndim(out) == 0 else out


def sample_tail_variable(params: TailParams, rng, size=None):
    """Z with P(Z >= x) = tail(x)/tail(1), by inverse transform."""
    u = rng.random(size)
    # 1 - U lies in (0, 1], avoiding log(0)
    return q_tilde_inverse(params, 1.0 - u)


# ---------------------------------------------------------------------------
# limit lemmas

LIMIT_IDS = tuple(f"limit{i}" for i in range(1, 10))

_DEFAULT_AUX = {
    "limit1": {"x": 1.0},
    "limit2": {"x": 1.0},
    "limit3": {"x": 1.0},
    "limit4": {"x1": 1.0, "x2": 2.0, "sign": -1.0},
    "limit5": {"i": 1.0, "c": 1.0},
    "limit6": {"x": 2.0},
    "limit7": {"x1": 2.0, "x2": 3.0},
    "limit8": {"x": 1.0},
    "limit9": {"i": 1.0, "x": 2.0},
}

DEFAULT_N_GRID = (10**4, 10**5, 10**6, 10**7, 10**8)


@dataclass
class LimitCheckReport:
    limit_id: str
    n_grid: list
    values: list
    target: float
    aux: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.values) != len(self.n_grid):
            raise ValueError("values and n_grid differ in length")

    @property
    def errors(self) -> list:
        return [abs(v - self.target) for v in self.values]

    @property
    def max_abs_error_at_largest_n(self) -> float:
        return self.errors[-1]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "value", "target"])
        for n, v in zip(self.n_grid, self.values):
            w.writerow([n, repr(float(v)), repr(float(self.target))])
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["max_abs_error_at_largest_n"] = self.max_abs_error_at_largest_n
        return d


def _pos(aux, key):
    v = float(aux[key])
    if v <= 0:
        raise ValueError(f"{key} must be positive")
    return v


def _need_at_least_one(params, n, x):
    if n * x < 1:
        raise ValueError(f"n*x = {n * x} < 1 lies outside the tail's domain")


def _limit_value(limit_id: str, params: TailParams, aux: Mapping, n: float) -> tuple[float, float]:
    """(value, target) of one limit sequence at n."""
    logn = math.log(n)
    rn = r_eval(params, logn)
    if limit_id in ("limit1", "limit2", "limit3"):
        x = _pos(aux, "x")
        _need_at_least_one(params, n, x)
        lq = log_q_n(params, n, n * x)
        if limit_id == "limit1":
            return math.exp(lq), 0.0
        if limit_id == "limit2":
            return math.exp(lq) / rn, 0.0
        return lq / rn, -1.0
    if limit_id == "limit4":
        x1, x2 = _pos(aux, "x1"), _pos(aux, "x2")
        if x1 >= x2:
            raise ValueError("limit4 needs x1 < x2")
        _need_at_least_one(params, n, x1)
        la, lb = log_q_n(params, n, n * x1), log_q_n(params, n, n * x2)
        sign = float(aux.get("sign", -1.0))
        if sign > 0:
            val = np.logaddexp(la, lb)
        else:
            val = log_diff_exp(la, lb)
        return float(val) / rn, -1.0
    if limit_id == "limit5":
        i, c = int(aux["i"]), _pos(aux, "c")
        if i < 1 or i != aux["i"]:
            raise ValueError("limit5 needs a positive integer i")
        _need_at_least_one(params, n, c)
        return log_erlang_cdf(i, log_y=log_q_n(params, n, n * c)) / rn, -float(i)
    # normalised tail, speed -log Q~(n)
    norm = -float(log_q_tilde(params, n))
    if limit_id == "limit6":
        x = _pos(aux, "x")
        _need_at_least_one(params, n, x)
        return float(log_q_tilde(params, n * x)) / norm, -1.0
    if limit_id == "limit7":
        x1, x2 = _pos(aux, "x1"), _pos(aux, "x2")
        if x1 >= x2:
            raise ValueError("limit7 needs x1 < x2")
        _need_at_least_one(params, n, x1)
        val = log_diff_exp(float(log_q_tilde(params, n * x1)), float(log_q_tilde(params, n * x2)))
        return val / norm, -1.0
    if limit_id == "limit8":
        x = _pos(aux, "x")
        _need_at_least_one(params, n, x)
        q = math.exp(float(log_q_tilde(params, n * x)))
        return n * math.log1p(-q) / norm, 0.0
    if limit_id == "limit9":
        i, x = int(aux["i"]), _pos(aux, "x")
        if i < 0 or i != aux["i"] or i + 1 >= n - 1:
            raise ValueError("limit9 needs an integer 0 <= i < n - 2")
        _need_at_least_one(params, n, x)
        lv = log_beta_cdf(i + 1, n - i - 1, log_x=float(log_q_tilde(params, n * x)))
        return lv / norm, -(i + 1.0)
    raise ValueError(f"unknown limit id {limit_id!r}")


def verify_limit(limit_id: str, params: TailParams = REFERENCE, aux: Mapping | None = None,
                 n_grid: Sequence = DEFAULT_N_GRID) -> LimitCheckReport:
    """Evaluate one appendix limit sequence analytically along n_grid."""
    if limit_id not in LIMIT_IDS:
        raise ValueError(f"unknown limit id {limit_id!r}")
    merged = dict(_DEFAULT_AUX[limit_id])
    if aux:
        allowed = set(merged)
        bad = set(aux) - allowed
        if bad:
            raise ValueError(f"{limit_id} does not take {sorted(bad)}")
        merged.update(aux)
    vals, target = [], 0.0
    for n in n_grid:
        v, target = _limit_value(limit_id, params, merged, n)
        vals.append(float(v))
    return LimitCheckReport(limit_id, list(n_grid), vals, target, merged)


__all__ = [
    "TailParams", "REFERENCE", "r_eval", "tail", "log_tail", "speed", "q_n", "log_q_n",
    "q_n_inverse", "q_n_inverse_log", "q_tilde_inverse", "log_q_tilde", "solve_r",
    "sample_tail_variable", "verify_limit", "LimitCheckReport", "LIMIT_IDS", "DEFAULT_N_GRID",
]
