"""A closed set whose M1' large-deviation upper bound fails.

F is the union over n >= N of F_n = B_n + C_n, where B_n collects paths
whose two largest jumps have the shape required by A_n and C_n is a thin
uniform tube around the compensating drift t -> -mu_1 nu_1 t. The module
evaluates the set predicates and produces numerical evidence that

* F stays at positive M1' distance from paths with at most one jump, and
* P(Xbar_n in F) decays at a rate strictly slower than r(log n) * 2.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import jump_sim as js
from .cadlag import GridPath, StepPath, _as_step, classify
from .rng import stream
from .special import log1mexp
from .tail_models import REFERENCE, TailParams, log_q_n, speed


# ---------------------------------------------------------------------------
# parameters

def _threshold_gap(N: int, drift: float) -> float:
    return math.log(N) - 0.5 * drift - N ** (-1.0 / 3.0) / 3.0 - 1.0


def n_threshold(params) -> int:
    """Smallest integer N with log N - nu_1 mu_1 / 2 - N^(-1/3)/3 > 1.

    ``params`` is a CounterexampleParams, a TailParams / LevyConfig, or the
    product nu_1 mu_1 itself. The left side increases in N, so an upward
    scan terminates.
    """
    if isinstance(params, CounterexampleParams):
        drift = params.nu1 * params.mu1
    elif isinstance(params, (TailParams, js.LevyConfig)):
        mc = js.moments(params)
        drift = mc.nu1 * mc.mu1
    else:
        drift = float(params)
    if drift < 0 or not math.isfinite(drift):
        raise ValueError("nu_1 mu_1 must be finite and nonnegative")
    # jump close to the answer: log N > 1 + drift/2 is necessary
    N = max(1, int(math.exp(1.0 + 0.5 * drift)) - 1)
    while _threshold_gap(N, drift) <= 0:
        N += 1
    return N


@dataclass(frozen=True)
class CounterexampleParams:
    tail: TailParams = REFERENCE
    nu1: float = 1.0
    mu1: float = 0.0
    N: int = 1

    def __post_init__(self):
        if _threshold_gap(self.N, self.nu1 * self.mu1) <= 0:
            raise ValueError(f"N={self.N} violates log N - nu1 mu1/2 - N^(-1/3)/3 > 1")

    @classmethod
    def from_tail(cls, tail: TailParams = REFERENCE) -> "CounterexampleParams":
        mc = js.moments(tail)
        return cls(tail, mc.nu1, mc.mu1, n_threshold(mc.nu1 * mc.mu1))

    @property
    def drift(self) -> float:
        return self.nu1 * self.mu1

    def to_dict(self) -> dict:
        return {"tail": self.tail.to_dict(), "nu1": self.nu1, "mu1": self.mu1, "N": self.N}

    @classmethod
    def from_dict(cls, d) -> "CounterexampleParams":
        tail = TailParams.from_dict(d.get("tail", {}))
        if "N" not in d:
            return cls.from_tail(tail)
        mc = js.moments(tail)
        return cls(tail, float(d.get("nu1", mc.nu1)), float(d.get("mu1", mc.mu1)), int(d["N"]))


# ---------------------------------------------------------------------------
# the map pi and the sets

def _jump_list(p: StepPath) -> list[tuple[float, float]]:
    """Jumps including a positive start, which counts as a jump at time 0."""
    if p.initial < 0 or any(s < 0 for _, s in p.jumps):
        raise ValueError("pi is defined on nondecreasing step paths (nonnegative jumps)")
    out = [(0.0, p.initial)] if p.initial > 0 else []
    return out + list(p.jumps)


def pi_two_largest(p) -> StepPath:
    """Keep the two largest jumps (earliest time on ties); identity with <= 2 jumps."""
    p = _as_step(p)
    jumps = _jump_list(p)
    if len(jumps) <= 2:
        return p
    keep = sorted(jumps, key=lambda ts: (-ts[1], ts[0]))[:2]
    return StepPath(0.0, keep)


def in_A_n(p, n: float) -> bool:
    p = _as_step(p)
    if p.initial != 0.0 or p.n_jumps != 2:
        return False
    (v1, z1), (v2, z2) = p.jumps
    return bool(z1 >= math.log(n) and z2 >= n ** (-1.0 / 3.0) and z1 >= z2
                and 0.25 < v1 <= 0.5 and 0.75 < v2 <= 1.0)


def in_B_n(p, n: float) -> bool:
    p = _as_step(p)
    if not classify(p).in_d_hat:
        return False
    return in_A_n(pi_two_largest(p), n)


def _drift_of(moments) -> float:
    if isinstance(moments, js.MomentCache):
        return moments.nu1 * moments.mu1
    if isinstance(moments, CounterexampleParams):
        return moments.drift
    if isinstance(moments, (TailParams, js.LevyConfig)):
        mc = js.moments(moments)
        return mc.nu1 * mc.mu1
    return float(moments)


def sup_distance_to_drift(p, drift: float) -> float:
    """sup_t |p(t) + drift t|; exact for StepPath, node values for GridPath."""
    if isinstance(p, GridPath):
        return float(np.max(np.abs(p.values + drift * p.times)))
    p = _as_step(p)
    lv = p.levels()
    edges = np.concatenate(([0.0], p.times, [1.0]))
    # on [a, b) the level is lv[k]; |lv + drift t| is extreme at the ends
    lo = np.abs(lv + drift * edges[:-1])
    hi = np.abs(lv + drift * edges[1:])
    return float(max(lo.max(), hi.max()))


def in_C_n(p, n: float, moments) -> bool:
    return sup_distance_to_drift(p, _drift_of(moments)) <= n ** (-1.0 / 3.0) / 3.0


def in_F(n_used: int, j_component, h_component, params: CounterexampleParams) -> bool:
    """Membership of J + H in F_n via the simulator's (Jbar_n, Hbar_n) split."""
    if h_component is None or j_component is None:
        raise ValueError("F-membership needs the decomposed (J, H) pair; arbitrary paths are not supported")
    if n_used < params.N:
        raise ValueError(f"n={n_used} is below the threshold N={params.N}")
    return in_B_n(j_component, n_used) and in_C_n(h_component, n_used, params)


# ---------------------------------------------------------------------------
# separation from one-jump paths

def point_to_one_jump(y, t, z, v):
    """l-inf distance from (y, t) to the completed graph of z 1_[v,1] (z >= 0).

    Vectorised over z and v; agrees with cadlag.distance_to_graph.
    """
    z, v = np.broadcast_arrays(np.asarray(z, float), np.asarray(v, float))
    gap = lambda x, lo, hi: np.maximum(0.0, np.maximum(lo - x, x - hi))  # noqa: E731
    # flat at 0 on [0, v], vertical at v from 0 to z, flat at z on [v, 1]
    d0 = np.maximum(abs(y), gap(t, 0.0, v))
    d1 = np.maximum(abs(t - v), gap(y, 0.0, z))
    d2 = np.maximum(np.abs(y - z), gap(t, v, 1.0))
    return np.minimum(np.minimum(d0, d1), d2)


def flat_window_one_jump(height: float, s: float, t: float, z, v):
    """Flat-jump bound for eta = z 1_[v,1] against a rise of size 2*height on [s, t].

    Agrees with cadlag.flatjump_bound_at(eta, xi, s, t).
    """
    z, v = np.broadcast_arrays(np.asarray(z, float), np.asarray(v, float))
    out = np.full(z.shape, height)
    has = z > 0
    before = has & (v <= s)
    inside = has & (v > s) & (v <= t)
    after = has & (v > t)
    out[before] = np.minimum(height, s - v[before])
    out[inside] = 0.0
    out[after] = np.minimum(height, v[after] - t)
    return np.maximum(out, 0.0)


def construct_f_path(n: int, params: CounterexampleParams, rng=None, resolution: int = 1024,
                     extreme: bool = False) -> tuple[StepPath, GridPath]:
    """A (J, H) pair with J in B_n and H in C_n.

    ``extreme`` puts every parameter at the edge of A_n (z_1 = log n,
    z_2 = n^(-1/3), v_1 = 1/2, v_2 = 1) and pushes H down to the tube's edge.
    """
    m = resolution
    t = np.arange(m + 1) / m
    tube = n ** (-1.0 / 3.0) / 3.0
    if extreme:
        j = StepPath(0.0, [(0.5, math.log(n)), (1.0, n ** (-1.0 / 3.0))])
        h = GridPath(-params.drift * t - (1 - 1e-9) * tube * np.minimum(1.0, t * m))
        return j, h
    g = rng if rng is not None else stream(0)
    z1 = math.log(n) * (1.0 + g.random())
    z2 = n ** (-1.0 / 3.0) + (z1 - n ** (-1.0 / 3.0)) * g.random() ** 3
    v1 = 0.25 + 0.25 * (1.0 - g.random())
    v2 = 0.75 + 0.25 * (1.0 - g.random())
    extra = [(float(g.random()), float(z2 * g.random())) for _ in range(int(g.integers(0, 4)))]
    j = StepPath(0.0, [(v1, z1), (v2, z2)] + extra)
    walk = np.cumsum(g.standard_normal(m + 1))
    walk = walk - walk.mean()
    scale = np.max(np.abs(walk))
    h = GridPath(-params.drift * t + 0.999 * tube * g.random() * walk / (scale if scale > 0 else 1.0))
    return j, h


def _separation_bounds(xi: StepPath, z, v):
    """Certified M1' lower bounds between xi and eta = z 1_[v,1], per device."""
    y_half = float(xi.value(0.5))
    pg = point_to_one_jump(y_half, 0.5, z, v)
    jt, js_ = xi.times, xi.sizes
    late = (jt > 0.75)
    if np.any(late):
        k = int(np.flatnonzero(late)[np.argmax(np.abs(js_[late]))])
        s = float(jt[k])
        fj = flat_window_one_jump(abs(js_[k]) / 2.0, s, s, z, v)
    else:
        fj = np.zeros(np.broadcast(z, v).shape)
    return pg, fj


def eta_grid(zmax: float, n_z: int = 60, n_v: int = 200):
    z = np.concatenate(([0.0], np.geomspace(1e-3, max(zmax, 2e-3), n_z - 1)))
    v = np.linspace(0.0, 1.0, n_v)
    return np.meshgrid(z, v, indexing="ij")


@dataclass
class Lemma31Report:
    rows: list  # per (n, sample): minima per regime at two grid densities
    minimum: float
    stable: bool
    grid: dict = field(default_factory=dict)

    @property
    def positive(self) -> bool:
        return self.minimum > 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["n", "sample", "min_late_jump_regime", "min_early_jump_regime", "min_coarse", "min_fine"]
        w.writerow(cols)
        for r in self.rows:
            w.writerow([r[c] if isinstance(r[c], int) else repr(r[c]) for c in cols])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return asdict(self)


def lemma31_evidence(params: CounterexampleParams, n_list: Sequence[int] = (16, 100, 1000, 10**4),
                     samples: int = 20, seed: int = 0, n_z: int = 60, n_v: int = 200,
                     resolution: int = 1024) -> Lemma31Report:
    """Minimum certified M1' lower bound between F_n paths and one-jump paths.

    For each xi and each eta = z 1_[v,1] on the grid, the bound is the larger
    of the point-gap at (xi(1/2), 1/2) and the flat-jump bound on xi's jump
    in (3/4, 1]. Regimes v > 1/2 (late) and v <= 1/2 (early) are reported
    separately. The grid is then refined (twice as many z and v values) and
    the minimum recomputed.
    """
    rows = []
    for n in n_list:
        if n < params.N:
            raise ValueError(f"n={n} below threshold N={params.N}")
        for k in range(samples + 1):
            jpath, hpath = construct_f_path(n, params, stream(seed, int(n), k), resolution, extreme=(k == 0))
            xi = _as_step(GridPath(jpath.grid_values(resolution) + hpath.values))
            zmax = 2.0 * float(np.max(np.abs(xi.levels())))
            mins = []
            for nz, nv in ((n_z, n_v), (2 * n_z, 2 * n_v)):
                Z, V = eta_grid(zmax, nz, nv)
                pg, fj = _separation_bounds(xi, Z, V)
                mins.append((np.maximum(pg, fj), V))
            best, V = mins[0]
            rows.append({
                "n": int(n), "sample": k,
                "min_late_jump_regime": float(best[V > 0.5].min()),
                "min_early_jump_regime": float(best[V <= 0.5].min()),
                "min_coarse": float(best.min()),
                "min_fine": float(mins[1][0].min()),
            })
    minimum = min(min(r["min_coarse"], r["min_fine"]) for r in rows)
    stable = all(r["min_fine"] >= 0.5 * r["min_coarse"] for r in rows)
    return Lemma31Report(rows, minimum, bool(stable),
                         {"n_z": n_z, "n_v": n_v, "refined": [2 * n_z, 2 * n_v], "samples": samples,
                          "resolution": resolution})


# ---------------------------------------------------------------------------
# lower bound on P(Xbar_n in F)

def jbar_factor_terms(tail: TailParams, log_n: float) -> dict:
    """Exact terms of the lower bound for P(Jbar_n in B_n), at n = e^log_n.

    The event: Y_1 in (Q_n(2n log n), Q_n(n log n)], Y_2 below
    Q_n(n^(2/3)) - Q_n(n log n), U_1 in (1/4, 1/2], U_2 in (3/4, 1].
    All terms are divided by r(log n).
    """
    n = math.exp(log_n)
    L = log_n
    spd = speed(tail, n)
    l_hi = log_q_n(tail, n, n * L)  # log Q_n(n log n)
    l_lo = log_q_n(tail, n, 2 * n * L)  # log Q_n(2 n log n)
    l_two_thirds = log_q_n(tail, n, n ** (2.0 / 3.0))
    hi, lo = math.exp(l_hi), math.exp(l_lo)
    gap_log = l_hi + math.log(-math.expm1(l_lo - l_hi))  # log(hi - lo)
    if l_two_thirds <= l_hi:
        raise ValueError("n too small: Q_n(n^(2/3)) <= Q_n(n log n)")
    # D = Q_n(n^(2/3)) - Q_n(n log n), kept in logs since both may underflow
    log_D = l_two_thirds + math.log(-math.expm1(l_hi - l_two_thirds))
    D = math.exp(log_D)
    log_p1 = -lo + log1mexp(hi - lo) if hi - lo > 1e-300 else -lo + gap_log
    log_p2 = log1mexp(D) if D > 1e-12 else log_D + math.log1p(-D / 2)
    const = 2.0 * math.log(0.25)
    return {
        "n": n, "log_n": L, "speed": spd,
        "III": -hi / spd,
        "IV": gap_log / spd,
        "V": log_p2 / spd,
        "uniform_times": const / spd,
        "log_p_jbar": log_p1 + log_p2 + const,
        "jbar_ratio": (log_p1 + log_p2 + const) / spd,
    }


def chebyshev_hbar_bound(cfg: js.LevyConfig, n: float) -> float:
    """Upper bound 9 (a^2 + int_0^1 x^2 nu(dx)) / n^(1/3) on P(Hbar_n not in C_n)."""
    var = cfg.a ** 2 + (cfg.small_jump.second_moment() if cfg.small_jump is not None else 0.0)
    return 9.0 * var / n ** (1.0 / 3.0)


def hbar_in_cn_estimate(cfg: js.LevyConfig, n: int, trials: int, seed: int = 0,
                        resolution: int = 256) -> tuple[int, int]:
    """Hits of {Hbar_n in C_n} over independent draws (grid-node evaluation)."""
    if cfg.pure_compound_poisson:
        # Hbar_n is exactly the drift line, so every draw is in C_n
        return trials, trials
    empty = js.PoissonCoupling(cfg, n, 0, np.empty(0), np.empty(0), 0)
    drift = js.moments(cfg).nu1 * js.moments(cfg).mu1
    hits = 0
    for k in range(trials):
        h = js.sample_r_bar(cfg, n, resolution, stream(seed, int(n), k), coupling=empty)
        hits += in_C_n(h, n, drift)
    return hits, trials


@dataclass
class Lemma32Report:
    rows: list
    target: float
    terminal: float
    above_minus_two: bool
    verdict: str
    analytic: dict
    notes: str = ""

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["log_n", "III", "IV", "V", "uniform_times", "jbar_ratio", "hbar_log_ratio", "combined"]
        w.writerow(cols)
        for r in self.rows:
            w.writerow([repr(float(r[c])) for c in cols])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return asdict(self)


def lemma32_experiment(params: CounterexampleParams, log_n_grid: Sequence[float] = (6.0, 8.0, 10.0, 12.0),
                       budget: int = 200, cfg: js.LevyConfig | None = None, seed: int = 0,
                       mc_max_n: float = 2e4, tolerance: float = 0.5,
                       analytic_log_n: float = 12.0) -> Lemma32Report:
    """Lower bound on log P(Xbar_n in F_n) / r(log n) along n = e^log_n.

    The Jbar factor is exact. P(Hbar_n in C_n) is estimated by simulation
    while n <= mc_max_n and replaced by its Chebyshev lower bound beyond.
    Simulated zero-hit cases fall back on the bound as well.
    """
    cfg = cfg or js.LevyConfig(params.tail)
    tail = params.tail
    target = -1.0 - (2.0 / 3.0) ** tail.gamma
    rows = []
    for L in log_n_grid:
        n = math.exp(L)
        if n < params.N:
            raise ValueError(f"n=e^{L} below threshold N={params.N}")
        terms = jbar_factor_terms(tail, L)
        cheb = chebyshev_hbar_bound(cfg, n)
        log_h_bound = math.log1p(-cheb) if cheb < 1 else -math.inf
        if n <= mc_max_n and budget > 0:
            hits, trials = hbar_in_cn_estimate(cfg, int(round(n)), budget, seed)
            log_h = math.log(hits / trials) if hits else log_h_bound
        else:
            hits, trials, log_h = None, None, log_h_bound
        combined = terms["jbar_ratio"] + log_h / terms["speed"]
        rows.append({**terms, "hbar_hits": hits, "hbar_trials": trials, "hbar_chebyshev": cheb,
                     "hbar_log_ratio": log_h / terms["speed"], "combined": combined})
    combo = [r["combined"] for r in rows]
    dist = [abs(c - target) for c in combo]
    approaching = all(b <= a + 0.02 for a, b in zip(dist, dist[1:]))
    terminal = combo[-1]
    verdict = "consistent" if dist[-1] <= tolerance and approaching else "inconsistent"
    a = jbar_factor_terms(tail, analytic_log_n)
    v_target = -(2.0 / 3.0) ** tail.gamma
    analytic = {
        "log_n": analytic_log_n,
        "III": a["III"], "IV": a["IV"], "V": a["V"],
        "IV_target": -1.0, "V_target": v_target,
        "IV_error": abs(a["IV"] + 1.0), "V_error": abs(a["V"] - v_target),
        "III_error": abs(a["III"]),
    }
    return Lemma32Report(rows, target, terminal, bool(terminal > -2.0), verdict, analytic,
                         f"tolerance {tolerance} around {target}; Hbar factor by simulation up to n={mc_max_n}")


__all__ = [
    "CounterexampleParams", "n_threshold", "pi_two_largest", "in_A_n", "in_B_n", "in_C_n", "in_F",
    "sup_distance_to_drift", "point_to_one_jump", "flat_window_one_jump", "construct_f_path",
    "eta_grid", "lemma31_evidence", "Lemma31Report", "jbar_factor_terms", "chebyshev_hbar_bound",
    "hbar_in_cn_estimate", "lemma32_experiment", "Lemma32Report",
]
