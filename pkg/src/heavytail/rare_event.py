"""Rare-event estimation and extended-LDP checks.

Log-probabilities are normalised by the speed r(log n) from tail_models.
Monte Carlo work is cut into fixed-size blocks, block b drawing from
``stream(seed, ..., b)``, so hit counts do not depend on the thread count.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy import integrate, optimize, special, stats

from . import jump_sim as js
from .cadlag import RateValue
from .rng import child_seed, default_threads, stream
from .special import clopper_pearson, log_beta_cdf, log_erlang_cdf
from .tail_models import (TailParams, log_q_n, log_q_tilde, q_tilde_inverse, r_eval,
                          sample_tail_variable, speed)

BLOCK = 2**14
CI_LEVEL = 0.99
DEFAULT_TOLERANCE = 0.5


# ---------------------------------------------------------------------------
# result types

@dataclass(frozen=True)
class EventSpec:
    """A named event; ``predicate`` maps a sample batch to a boolean array.

    ``kind`` says what the predicate consumes: "path" (a JumpBatch) or
    "jumps" (a (trials, k) array of the k largest scaled jumps).
    """

    name: str
    predicate: Callable
    params: dict = field(default_factory=dict)
    inner_rate: Optional[RateValue] = None
    outer_rate: Optional[RateValue] = None
    jump_threshold: Optional[float] = None
    kind: str = "path"
    k: int = 0

    def __post_init__(self):
        if self.inner_rate is not None and self.outer_rate is not None:
            if self.inner_rate < self.outer_rate:
                raise ValueError("inner rate (open-set infimum) must be >= outer rate")
        if self.kind not in ("path", "jumps"):
            raise ValueError("kind must be 'path' or 'jumps'")


@dataclass
class EstimateResult:
    n: int
    trials: int
    hits: int
    p_hat: float
    ci_low: float
    ci_high: float
    log_ratio: Optional[float]
    estimator: str
    log_p_hat: float = -math.inf
    speed: float = math.nan

    def __post_init__(self):
        if self.hits > self.trials and self.estimator != "exact":
            raise ValueError("hits exceed trials")
        slack = 1e-12 * max(1.0, self.p_hat)
        if not (self.ci_low - slack <= self.p_hat <= self.ci_high + slack):
            raise ValueError(f"CI [{self.ci_low}, {self.ci_high}] excludes p_hat {self.p_hat}")

    @property
    def upper_bound_only(self) -> bool:
        return self.hits == 0 and self.estimator != "exact"

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LdpReport:
    event: str
    estimates: list
    terminal_log_ratio: Optional[float]
    band: tuple
    tolerance: float
    verdict: str
    decreasing: bool
    approaching: bool
    notes: str = ""

    def __post_init__(self):
        ns = [e.n for e in self.estimates]
        if any(b <= a for a, b in zip(ns, ns[1:])):
            raise ValueError("n-grid must be strictly increasing")

    @property
    def log_ratios(self) -> list:
        return [e.log_ratio for e in self.estimates]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["n", "p_hat", "ci_low", "ci_high", "log_ratio"])
        for e in self.estimates:
            w.writerow([e.n, repr(e.p_hat), repr(e.ci_low), repr(e.ci_high),
                        "" if e.log_ratio is None else repr(e.log_ratio)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        d = asdict(self)
        d["band"] = list(self.band)
        return d


def _result(n, trials, hits, log_p, lo, hi, estimator, spd) -> EstimateResult:
    p = math.exp(log_p) if log_p > -math.inf else 0.0
    lr = log_p / spd if log_p > -math.inf else None
    return EstimateResult(n, trials, hits, p, min(lo, p), max(hi, p), lr, estimator, log_p, spd)


def exact_result(n: int, log_p: float, spd: float) -> EstimateResult:
    return _result(n, 0, 0, log_p, math.exp(log_p) if log_p > -math.inf else 0.0,
                   math.exp(log_p) if log_p > -math.inf else 0.0, "exact", spd)


# ---------------------------------------------------------------------------
# samplers and Monte Carlo

@dataclass(frozen=True)
class LevySampler:
    """Batches of Xbar_n paths (a = 0, no small jumps)."""

    cfg: js.LevyConfig = field(default_factory=js.LevyConfig)
    centered: bool = True

    def __call__(self, n, trials, rng):
        return js.sample_levy_batch(self.cfg, n, trials, rng, centered=self.centered)

    def conditioned(self, n, trials, rng, j, q, below):
        return js.sample_levy_batch_conditioned(self.cfg, n, trials, rng, j, q, below, self.centered)


@dataclass(frozen=True)
class KJumpSampler:
    tail: TailParams
    k: int
    kind: str = "levy"

    def __call__(self, n, trials, rng):
        return js.sample_k_jump_batch(self.tail, n, self.k, trials, rng, self.kind)


def _seed_of(rng) -> int:
    if isinstance(rng, (int, np.integer)):
        return int(rng)
    if isinstance(rng, np.random.Generator):
        return child_seed(rng)
    if rng is None:
        return 0
    raise TypeError("rng must be an int seed or a numpy Generator")


def _count_hits(draw: Callable[[int, np.random.Generator], np.ndarray], trials: int, seed: int,
                key: tuple, threads: int) -> int:
    blocks = [(b, min(BLOCK, trials - b * BLOCK)) for b in range((trials + BLOCK - 1) // BLOCK)]

    def work(item):
        b, size = item
        return int(np.count_nonzero(draw(size, stream(seed, *key, b))))

    if threads > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(threads) as ex:
            return sum(ex.map(work, blocks))
    return sum(map(work, blocks))


def _speed_for(sampler, n) -> float:
    tail = sampler.tail if isinstance(sampler, KJumpSampler) else sampler.cfg.tail
    return speed(tail, n)


def estimate_plain(event: EventSpec, n: int, trials: int, sampler=None, rng=0,
                   threads: int | None = None, min_trials: int = 1000) -> EstimateResult:
    """Indicator Monte Carlo with an exact (Clopper-Pearson) 99% interval."""
    if trials < min_trials:
        raise ValueError(f"need at least {min_trials} trials")
    sampler = sampler or LevySampler()
    threads = threads or default_threads()
    seed = _seed_of(rng)
    hits = _count_hits(lambda size, g: event.predicate(sampler(n, size, g)), trials, seed, (0,), threads)
    lo, hi = clopper_pearson(hits, trials, CI_LEVEL)
    log_p = math.log(hits / trials) if hits else -math.inf
    return _result(n, trials, hits, log_p, lo, hi, "plain", _speed_for(sampler, n))


def estimate_big_jump_conditioned(event: EventSpec, n: int, j: int, trials: int, rng=0,
                                  sampler: LevySampler | None = None, complement_fraction: float = 0.1,
                                  threads: int | None = None) -> EstimateResult:
    """Stratify on {Gamma_j <= Q_n(n theta)} and its complement.

    Each stratum is sampled exactly from its conditional law and weighted by
    its exact probability, so the combined estimate is unbiased. The
    complement keeps a small share of the budget so that configurations
    without j big jumps are still counted.
    """
    sampler = sampler or LevySampler()
    if j == 0:
        return estimate_plain(event, n, trials, sampler, rng, threads)
    if j < 0:
        raise ValueError("j must be nonnegative")
    if event.jump_threshold is None:
        raise ValueError(f"event {event.name!r} has no jump-size threshold; use estimate_plain")
    if event.kind != "path":
        raise ValueError("conditioning applies to path events")
    threads = threads or default_threads()
    seed = _seed_of(rng)
    theta = event.jump_threshold
    if n * theta < 1:
        raise ValueError("threshold below the big-jump scale; conditioning is vacuous")
    lq = log_q_n(sampler.cfg.tail, n, n * theta)
    q = math.exp(lq)
    log_pa = log_erlang_cdf(j, log_y=lq)
    pa = math.exp(log_pa)
    pb = 1.0 - pa
    tb = int(round(trials * complement_fraction)) if pb > 0 else 0
    ta = trials - tb
    ha = _count_hits(lambda size, g: event.predicate(sampler.conditioned(n, size, g, j, q, True)),
                     ta, seed, (1,), threads)
    hb = _count_hits(lambda size, g: event.predicate(sampler.conditioned(n, size, g, j, q, False)),
                     tb, seed, (2,), threads) if tb else 0
    level = 1 - (1 - CI_LEVEL) / 2
    la, ua = clopper_pearson(ha, ta, level)
    lb, ub = clopper_pearson(hb, tb, level) if tb else (0.0, 0.0 if pb == 0 else 1.0)
    terms = []
    if ha:
        terms.append(log_pa + math.log(ha / ta))
    if hb:
        terms.append(math.log(pb) + math.log(hb / tb))
    log_p = float(special.logsumexp(terms)) if terms else -math.inf
    lo = pa * la + pb * lb
    hi = min(1.0, pa * ua + pb * ub)
    return _result(n, trials, ha + hb, log_p, lo, hi, "conditioned", speed(sampler.cfg.tail, n))


# ---------------------------------------------------------------------------
# exact k-jump probabilities

def _gamma_box(tail: TailParams, n: int, lo: float, hi: float, kind: str):
    """Map a size interval [lo, hi] to an interval for Gamma_i (or V_(i))."""
    if kind == "levy":
        g = lambda x: math.exp(log_q_n(tail, n, n * x))  # noqa: E731
        top = math.inf if n * lo <= 1 else g(lo)
    else:
        g = lambda x: math.exp(float(log_q_tilde(tail, n * x)))  # noqa: E731
        top = 1.0 if n * lo <= 1 else g(lo)
    if n * hi < 1:
        return None
    bottom = 0.0 if hi == math.inf else g(hi)
    return bottom, top


def _ordered_volume(boxes, scale):
    """Piecewise polynomials f_k(u) = density of the ordered chain ending at u.

    f_1 = 1[box_1], f_{i+1}(u) = 1[box_{i+1}](u) * int_0^u f_i, in units u = g/scale.
    Returns (breakpoints, list of Polynomial for f_k on each piece).
    """
    pts = {0.0}
    for a, b in boxes:
        pts.add(a / scale)
        if math.isfinite(b):
            pts.add(b / scale)
    br = sorted(pts) + [math.inf]
    mids = [(br[m] + (br[m + 1] if math.isfinite(br[m + 1]) else br[m] + 1.0)) / 2 for m in range(len(br) - 1)]

    def inside(box, m):
        a, b = box[0] / scale, box[1] / scale
        return a <= mids[m] <= b

    one, zero = Polynomial([1.0]), Polynomial([0.0])
    f = [one if inside(boxes[0], m) else zero for m in range(len(mids))]
    for box in boxes[1:]:
        nxt, acc = [], 0.0
        for m in range(len(mids)):
            anti = f[m].integ()
            F = anti - anti(br[m]) + acc
            nxt.append(F if inside(box, m) else zero)
            if math.isfinite(br[m + 1]):
                acc = F(br[m + 1])
        f = nxt
    return br, f


def log_jump_vector_prob(tail: TailParams, n: int, rectangle: Sequence, k: int | None = None,
                         kind: str = "levy") -> float:
    """log P(size_i in [lo_i, hi_i] for i <= k) for the k largest scaled jumps.

    Size events become boxes for the ordered points (Gamma_1 < ... < Gamma_k,
    or the smallest uniform order statistics for the walk); the ordered
    volume is a piecewise polynomial integrated against the joint density.
    """
    k = len(rectangle) if k is None else k
    if len(rectangle) != k:
        raise ValueError("rectangle needs one interval per coordinate")
    boxes = []
    for lo, hi in rectangle:
        lo, hi = max(0.0, float(lo)), float(hi)
        if lo > hi:
            return -math.inf
        b = _gamma_box(tail, n, lo, hi, kind)
        if b is None or b[0] > b[1]:
            return -math.inf
        boxes.append(b)
    finite = [x for bx in boxes for x in bx if math.isfinite(x) and x > 0]
    if kind == "rw":
        # the trivial cap 1 of unconstrained walk coordinates would swamp a tiny box
        finite = [x for x in finite if x < 1.0] or finite
    scale = max(finite) if finite else 1.0
    br, f = _ordered_volume(boxes, scale)
    if kind == "levy":
        # P = scale^k int e^{-scale u} f_k(u) du
        pieces = []
        for m, poly in enumerate(f):
            if poly == Polynomial([0.0]) or not poly.coef.any():
                continue
            a, b = br[m], br[m + 1]
            if math.isfinite(b):
                val, _ = integrate.quad(lambda u: math.exp(-scale * u) * poly(u), a, b,
                                        epsabs=0.0, epsrel=1e-10, limit=200)
                if val > 0:
                    pieces.append(k * math.log(scale) + math.log(val))
            else:
                # shift to (u - a): int_a^inf e^{-s u} (u-a)^j du = e^{-s a} j!/s^{j+1}
                shifted = poly(Polynomial([a, 1.0]))
                tot = sum(c * math.factorial(jj) * scale ** (k - 1 - jj) for jj, c in enumerate(shifted.coef))
                if tot > 0:
                    pieces.append(-scale * a + math.log(tot))
        return float(special.logsumexp(pieces)) if pieces else -math.inf
    if kind == "rw":
        N = n - 1
        if k > N:
            raise ValueError("k exceeds the number of walk increments")
        logc = special.gammaln(N + 1) - special.gammaln(N - k + 1) + k * math.log(scale)
        umax = 1.0 / scale
        total = 0.0
        for m, poly in enumerate(f):
            if not poly.coef.any():
                continue
            a, b = br[m], min(br[m + 1], umax)
            if a >= b:
                continue
            val, _ = integrate.quad(lambda u: math.exp((N - k) * math.log1p(-min(scale * u, 1.0)) if scale * u < 1 else -math.inf) * poly(u),
                                    a, b, epsabs=0.0, epsrel=1e-10, limit=200)
            total += val
        return logc + math.log(total) if total > 0 else -math.inf
    raise ValueError("kind must be 'levy' or 'rw'")


def exact_jump_vector_prob(tail: TailParams, n: int, rectangle: Sequence, k: int | None = None,
                           kind: str = "levy") -> float:
    lp = log_jump_vector_prob(tail, n, rectangle, k, kind)
    return math.exp(lp) if lp > -math.inf else 0.0


def size_at_least(i: int, x: float) -> list:
    """Rectangle for {size_i >= x} among the i largest jumps."""
    return [(0.0, math.inf)] * (i - 1) + [(x, math.inf)]


# ---------------------------------------------------------------------------
# slope checks

def _verdict(estimates, band, tolerance):
    lrs = [e.log_ratio for e in estimates]
    lower, upper = band
    if any(v is None for v in lrs):
        return None, "inconclusive", False, False
    term = lrs[-1]

    def dist(v):
        return max(0.0, lower - v, v - upper)

    approaching = all(dist(b) <= dist(a) + 0.02 for a, b in zip(lrs, lrs[1:]))
    decreasing = all(b < a for a, b in zip(lrs, lrs[1:]))
    ok = lower - tolerance <= term <= upper + tolerance and approaching
    return term, ("consistent" if ok else "inconsistent"), decreasing, approaching


def ldp_slope_check(name: str, family: Callable[[int], EstimateResult], rate_band: tuple,
                    n_grid: Sequence[int], tolerance: float = DEFAULT_TOLERANCE) -> LdpReport:
    """Evaluate family(n) along the grid and compare with [-inner, -outer].

    ``rate_band`` is (inner, outer) as rates (nonnegative numbers).
    """
    inner, outer = (float(r) for r in rate_band)
    if inner < outer:
        raise ValueError("inner rate must be >= outer rate")
    if any(b <= a for a, b in zip(n_grid, n_grid[1:])):
        raise ValueError("n_grid must be strictly increasing")
    ests = [family(n) for n in n_grid]
    band = (-inner, -outer)
    term, verdict, dec, app = _verdict(ests, band, tolerance)
    note = f"tolerance band +-{tolerance} around [{band[0]}, {band[1]}]; verdict needs a monotone approach"
    return LdpReport(name, ests, term, band, tolerance, verdict, dec, app, note)


def exact_k_jump_family(tail: TailParams, i: int, x: float, kind: str = "levy"):
    """n -> exact EstimateResult for {size_i >= x}."""
    def fam(n):
        return exact_result(n, log_jump_vector_prob(tail, n, size_at_least(i, x), kind=kind), speed(tail, n))
    return fam


def boundary_crossing_event(b: float, c: float, margin: float = 0.1) -> EventSpec:
    """{sup Xbar_n >= b, largest jump <= c}; rate ceil(b/c) on both sides when b/c is not an integer."""
    ratio = b / c
    inner = RateValue.of(math.floor(ratio) + 1) if ratio.is_integer() else RateValue.of(math.ceil(ratio))
    outer = RateValue.of(math.ceil(ratio))
    return EventSpec(
        name=f"boundary_crossing(b={b},c={c})",
        predicate=lambda batch: (batch.sup() >= b) & (batch.max_jump() <= c),
        params={"b": b, "c": c, "margin": margin},
        inner_rate=inner, outer_rate=outer,
        jump_threshold=c * (1.0 - margin),
    )


def boundary_crossing_check(b: float = 1.5, c: float = 1.0, n_grid=tuple(2**p for p in range(5, 11)),
                            trials: int = 100_000, j: int | None = None, seed: int = 0,
                            cfg: js.LevyConfig | None = None, tolerance: float = 0.6,
                            threads: int | None = None) -> LdpReport:
    ev = boundary_crossing_event(b, c)
    j = math.ceil(b / c) if j is None else j
    sampler = LevySampler(cfg or js.LevyConfig())
    # same seed at every n: common random numbers along the grid
    fam = lambda n: estimate_big_jump_conditioned(ev, n, j, trials, seed, sampler, threads=threads)  # noqa: E731
    return ldp_slope_check(ev.name, fam, (ev.inner_rate.count, ev.outer_rate.count), list(n_grid), tolerance)


# ---------------------------------------------------------------------------
# one big jump

@dataclass
class OneBigJumpReport:
    x: float
    rows: list  # dicts with n, p_n, p_1, ratio, ratio_low, ratio_high, in_regime
    regime_note: str = "in regime when P(X(n) > x) <= 0.05, i.e. x lies beyond the bulk of X(n)"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["n", "p_n", "p_1", "ratio", "ratio_low", "ratio_high", "in_regime"]
        w.writerow(cols)
        for r in self.rows:
            w.writerow([repr(r[c]) if isinstance(r[c], float) else r[c] for c in cols])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return asdict(self)


def _centered_values(cfg, t, trials, seed, key, threads):
    """Samples of X(t) - E X(t) for integer t >= 1 (unscaled)."""
    out = []
    blocks = (trials + BLOCK - 1) // BLOCK

    def work(b):
        size = min(BLOCK, trials - b * BLOCK)
        batch = js.sample_levy_batch(cfg, max(int(t), 2), size, stream(seed, *key, b))
        if t == 1:
            # X(1): rescale a batch drawn for n = 2 would be wrong; draw directly
            mc = js.moments(cfg)
            g = stream(seed, *key, b, 1)
            cnt = g.poisson(mc.nu1, size=size)
            z = np.atleast_1d(sample_tail_variable(cfg.tail, g, int(cnt.sum()))) if cnt.sum() else np.empty(0)
            s = np.bincount(np.repeat(np.arange(size), cnt), weights=z, minlength=size)
            return s - mc.nu1 * mc.mu1
        return batch.value_at(1.0) * batch.n

    if threads > 1 and blocks > 1:
        with ThreadPoolExecutor(threads) as ex:
            out = list(ex.map(work, range(blocks)))
    else:
        out = [work(b) for b in range(blocks)]
    return np.concatenate(out)


def tail_quantile_x1(cfg: js.LevyConfig, level: float = 1e-3, trials: int = 10**6, seed: int = 0,
                     threads: int | None = None) -> float:
    """x with P(X(1) - EX(1) > x) close to level, from simulation."""
    vals = _centered_values(cfg, 1, trials, seed, (7,), threads or default_threads())
    return float(np.quantile(vals, 1.0 - level))


def one_big_jump_check(cfg: js.LevyConfig, x: float, n_grid: Sequence[int], budget: int,
                       seed: int = 0, threads: int | None = None) -> OneBigJumpReport:
    """Monte Carlo ratios P(X(n) > x) / (n P(X(1) > x)) for the centred process."""
    threads = threads or default_threads()
    v1 = _centered_values(cfg, 1, budget, seed, (1,), threads)
    h1 = int(np.count_nonzero(v1 > x))
    lo1, hi1 = clopper_pearson(h1, budget, CI_LEVEL)
    rows = []
    for n in n_grid:
        vn = _centered_values(cfg, n, budget, seed, (2, int(n)), threads)
        hn = int(np.count_nonzero(vn > x))
        lon, hin = clopper_pearson(hn, budget, CI_LEVEL)
        pn, p1 = hn / budget, h1 / budget
        ratio = pn / (n * p1) if p1 > 0 else math.inf
        rows.append({"n": int(n), "p_n": pn, "p_1": p1, "ratio": ratio,
                     "ratio_low": lon / (n * hi1) if hi1 > 0 else 0.0,
                     "ratio_high": hin / (n * lo1) if lo1 > 0 else math.inf,
                     "in_regime": bool(pn <= 0.05)})
    return OneBigJumpReport(x, rows)


def compound_poisson_tail(cfg: js.LevyConfig, t: float, x, h: float = 0.05, xmax: float | None = None) -> np.ndarray:
    """P(X(t) - EX(t) > x) for the compound-Poisson default, by Panjer recursion.

    Jump sizes are rounded up to the lattice hZ, which makes the result a
    slight overestimate of order h.
    """
    if not cfg.pure_compound_poisson:
        raise NotImplementedError("numeric tail needs a = 0 and no small jumps")
    mc = js.moments(cfg)
    x = np.atleast_1d(np.asarray(x, float))
    shift = t * mc.nu1 * mc.mu1
    top = (xmax if xmax is not None else x.max()) + shift
    S = int(math.ceil(top / h)) + 2
    edges = np.arange(S + 1) * h
    qt = np.exp(np.asarray(log_q_tilde(cfg.tail, np.maximum(edges, 1.0))))
    f = np.zeros(S + 1)
    f[1:] = qt[:-1] - qt[1:]  # P(Z in ((k-1)h, kh])
    lam = t * mc.nu1
    g = np.zeros(S + 1)
    g[0] = math.exp(-lam)
    kf = np.arange(S + 1) * f
    for s in range(1, S + 1):
        g[s] = lam / s * np.dot(kf[1:s + 1], g[s - 1::-1][:s])
    cdf = np.cumsum(g)
    idx = np.floor((x + shift) / h).astype(int)
    idx = np.clip(idx, 0, S)
    return np.maximum(0.0, 1.0 - cdf[idx])


def one_big_jump_exact(cfg: js.LevyConfig, n: int, x_grid, h: float = 0.05) -> list:
    """Panjer-based ratios P(X(n) > x)/(n P(X(1) > x)) along an x-grid."""
    pn = compound_poisson_tail(cfg, n, x_grid, h)
    p1 = compound_poisson_tail(cfg, 1, x_grid, h)
    return [float(a / (n * b)) if b > 0 else math.inf for a, b in zip(pn, p1)]


# ---------------------------------------------------------------------------
# truncated sums

def _log_truncated_mgf(tail: TailParams, s: float, cap: float) -> float:
    """log E exp(s Y) with Y = Z 1{Z <= cap}."""
    r0 = r_eval(tail, 0.0)
    ucap = math.log(cap)
    log_p_over = float(log_q_tilde(tail, cap))

    def expo(u):  # log integrand in u = log z
        return s * math.exp(u) - (r_eval(tail, u) - r0)

    def rprime(u):
        return tail.lam * tail.gamma * u ** (tail.gamma - 1) - tail.beta

    grid = np.linspace(0.0, ucap, 400)
    vals = [expo(u) for u in grid]
    peak = max(vals)
    val, _ = integrate.quad(lambda u: math.exp(expo(u) - peak) * rprime(u), 0.0, ucap,
                            epsabs=0.0, epsrel=1e-10, limit=500, points=[grid[int(np.argmax(vals))]])
    # Z has density Q~(z) r'(log z)/z on (1, inf) and dz/z = du
    terms = [peak + math.log(val)] if val > 0 else []
    terms.append(log_p_over)
    return float(special.logsumexp(terms))


def chernoff_log_bound(tail: TailParams, n: int, j: int, eps: float, delta: float, sign: int = 1) -> float:
    """Certified upper bound on log P(sum_{i<=j} (Y_i - EZ) > n eps) by Cramer-Chernoff.

    The MGF of the truncated variable is computed by quadrature and the
    exponent optimised over s; any s gives a valid bound.
    """
    if sign != 1:
        raise ValueError("the Chernoff bound is for the upper deviation; use bernstein_log_bound")
    ez = js.moments(tail).mu1
    cap = n * delta
    level = n * eps + j * ez

    def g(tt):
        s = tt / cap
        return -s * level + j * _log_truncated_mgf(tail, s, cap)

    hi = 4.0 * max(r_eval(tail, math.log(cap)), 1.0) + 10.0
    res = optimize.minimize_scalar(g, bounds=(1e-9, hi), method="bounded", options={"xatol": 1e-6})
    return float(min(res.fun, 0.0))


def bernstein_log_bound(tail: TailParams, n: int, j: int, eps: float, delta: float) -> float:
    """log of the Bernstein bound on P(sum_{i<=j} (EZ - Y_i) > n eps)."""
    mc = js.moments(tail)
    cap = n * delta
    # E[Z; Z > cap] by tail integration, so that EZ - EY is exact
    ucap = math.log(cap)
    r0 = r_eval(tail, 0.0)
    above, _ = integrate.quad(lambda u: math.exp(u - (r_eval(tail, u) - r0)), ucap, np.inf, epsabs=0.0, epsrel=1e-10)
    above += cap * math.exp(float(log_q_tilde(tail, cap)))
    t = n * eps - j * above
    if t <= 0:
        return 0.0
    b = mc.mu1 - above  # EY - Y <= EY
    v = j * mc.second
    return float(-t * t / (2.0 * (v + b * t / 3.0)))


@dataclass
class TruncatedSumReport:
    eps: float
    delta: float
    M: int
    rows: list
    bound: float  # -eps/(2 delta)
    holds_at_largest_n: bool
    reversed_rows: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        cols = ["n", "j", "chernoff_ratio", "mc_log_ratio", "mc_log_ratio_high", "bernstein_ratio"]
        w.writerow(cols)
        rev = {r["n"]: r for r in self.reversed_rows}
        for r in self.rows:
            w.writerow([r["n"], r["j"], repr(r["chernoff_ratio"]),
                        "" if r["mc_log_ratio"] is None else repr(r["mc_log_ratio"]),
                        repr(r["mc_log_ratio_high"]),
                        repr(rev[r["n"]]["bernstein_ratio"]) if r["n"] in rev else ""])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return asdict(self)


def _conditioned_truncated_sum(tail, n, j, eps, delta, trials, seed):
    """Stratified estimate of log P(sum (Y_i - EZ) > n eps), stratified on the
    number K of values in [h, n delta] with h = n delta / 2.

    Returns (log p_hat, log of a 99% upper confidence value).
    """
    ez = js.moments(tail).mu1
    cap, h = n * delta, n * delta / 2
    q_h, q_cap = math.exp(float(log_q_tilde(tail, h))), math.exp(float(log_q_tilde(tail, cap)))
    p_large = q_h - q_cap
    level = n * eps + j * ez
    m_hi = min(j, int(math.ceil(2 * eps / delta)) + 4)
    ks = np.arange(m_hi + 1)
    log_w = stats.binom.logpmf(ks, j, p_large)
    log_rest = float(stats.binom.logsf(m_hi, j, p_large))
    per = max(100, trials // (m_hi + 1))
    est_terms, hi_terms = [], [log_rest] if log_rest > -math.inf else []
    for m in ks:
        g = stream(seed, int(n), int(j), int(m))
        hits = 0
        for start in range(0, per, 256):
            size = min(256, per - start)
            big = q_tilde_inverse(tail, q_cap + g.random((size, m)) * p_large) if m else np.zeros((size, 0))
            # the other j - m values: below h with prob (1 - q_h)/(1 - p_large), else killed (0)
            rest_n = j - m
            below_p = (1.0 - q_h) / (1.0 - p_large)
            nb = g.binomial(rest_n, below_p, size=size)
            small_sum = np.zeros(size)
            tot = int(nb.sum())
            if tot:
                v = q_h + g.random(tot) * (1.0 - q_h)
                z = np.atleast_1d(q_tilde_inverse(tail, v))
                small_sum = np.bincount(np.repeat(np.arange(size), nb), weights=z, minlength=size)
            s = big.sum(axis=1) + small_sum
            hits += int(np.count_nonzero(s > level))
        lo, up = clopper_pearson(hits, per, 1 - (1 - CI_LEVEL) / (m_hi + 1))
        if hits:
            est_terms.append(log_w[m] + math.log(hits / per))
        if up > 0:
            hi_terms.append(log_w[m] + math.log(up))
    log_p = float(special.logsumexp(est_terms)) if est_terms else -math.inf
    log_hi = float(special.logsumexp(hi_terms)) if hi_terms else -math.inf
    return log_p, log_hi


def truncated_sum_tail_check(tail: TailParams, delta: float, eps: float, M: int = 1,
                             n_grid: Sequence[int] = (10**2, 10**3, 10**4), budget: int = 20_000,
                             seed: int = 0, reversed_eps: float | None = None,
                             j_fractions: Sequence[float] = (0.25, 0.5, 1.0)) -> TruncatedSumReport:
    """Check log max_j P(sum_{i<=j}(Y_i - EZ) > n eps)/r(log n) < -eps/(2 delta).

    The maximum over j = 1..Mn is taken over j in {f * M n} for the given
    fractions. For each j the Chernoff bound (certified) and a stratified
    Monte Carlo estimate are reported; the verdict uses the Chernoff bound.
    The reversed sign uses the Bernstein bound.
    """
    if delta <= 0 or eps <= 0:
        raise ValueError("delta and eps must be positive")
    bound = -eps / (2 * delta)
    rows, rev = [], []
    for n in n_grid:
        spd = speed(tail, n)
        best = None
        for f in j_fractions:
            j = max(1, int(round(f * M * n)))
            ch = chernoff_log_bound(tail, n, j, eps, delta) / spd
            mc_lp, mc_hi = _conditioned_truncated_sum(tail, n, j, eps, delta, budget, seed)
            row = {"n": int(n), "j": j, "chernoff_ratio": ch,
                   "mc_log_ratio": mc_lp / spd if mc_lp > -math.inf else None,
                   "mc_log_ratio_high": mc_hi / spd}
            if best is None or ch > best["chernoff_ratio"]:
                best = row
        rows.append(best)
        r_eps = eps if reversed_eps is None else reversed_eps
        worst = max(bernstein_log_bound(tail, n, max(1, int(round(f * M * n))), r_eps, delta) for f in j_fractions)
        rev.append({"n": int(n), "bernstein_ratio": worst / spd})
    holds = rows[-1]["chernoff_ratio"] < bound
    return TruncatedSumReport(eps, delta, M, rows, bound, bool(holds), rev)


# ---------------------------------------------------------------------------
# concentration oracles

def etemadi_oracle(partial_sum_samples, x: float) -> bool:
    """Empirical check of P(max_k |S_k| >= 3x) <= 3 max_k P(|S_k| >= x).

    Rows are independent replications, columns the partial sums S_1..S_n.
    """
    S = np.asarray(partial_sum_samples, float)
    if S.ndim != 2 or not np.all(np.isfinite(S)):
        raise ValueError("need a finite (trials, n) array of partial sums")
    if x < 0:
        raise ValueError("x must be nonnegative")
    T = S.shape[0]
    lhs_hits = int(np.count_nonzero(np.max(np.abs(S), axis=1) >= 3 * x))
    col_hits = np.count_nonzero(np.abs(S) >= x, axis=0)
    lo_lhs, _ = clopper_pearson(lhs_hits, T, CI_LEVEL)
    _, hi_rhs = clopper_pearson(int(col_hits.max()), T, CI_LEVEL)
    return bool(lo_lhs <= min(1.0, 3.0 * hi_rhs))


def bernstein_bound(v: float, b: float, t: float) -> float:
    if t <= 0:
        return 1.0
    return math.exp(-t * t / (2.0 * (v + b * t / 3.0)))


def bernstein_oracle(samples, b: float, t: float, mean=None) -> bool:
    """Empirical check of P(sum (X_i - EX_i) >= t) <= exp(-t^2 / (2(v + bt/3))).

    Rows are replications, columns the independent summands. The centred
    summands must not exceed b.
    """
    X = np.asarray(samples, float)
    if X.ndim != 2 or not np.all(np.isfinite(X)):
        raise ValueError("need a finite (trials, n) array")
    m = X.mean(axis=0) if mean is None else np.broadcast_to(np.asarray(mean, float), X.shape[1:])
    C = X - m
    if np.any(C > b + 1e-12 * max(1.0, abs(b))):
        raise ValueError("a centred summand exceeds b: Bernstein hypothesis violated")
    v = float(np.sum(np.mean(C * C, axis=0)))
    hits = int(np.count_nonzero(C.sum(axis=1) >= t))
    lo, _ = clopper_pearson(hits, X.shape[0], CI_LEVEL)
    return bool(lo <= bernstein_bound(v, b, t))


# ---------------------------------------------------------------------------
# products

def product_ldp_check(tails: Sequence[TailParams], events: Sequence, n_grid: Sequence[int],
                      tolerance: float = DEFAULT_TOLERANCE, kind: str = "levy") -> LdpReport:
    """Exact log-probabilities of product events A_1 x A_2 against sum_i lambda_i j_i.

    ``events`` holds, per coordinate, either None (the sure event) or a pair
    (i, x) meaning {size_i >= x}. The common speed is (log n)^gamma.
    """
    if len(tails) != len(events):
        raise ValueError("one event per coordinate")
    gammas = {t.gamma for t in tails}
    if len(gammas) != 1:
        raise ValueError("coordinates must share gamma for a common speed")
    g = gammas.pop()
    target = sum(t.lam * ev[0] for t, ev in zip(tails, events) if ev is not None)

    def fam(n):
        lp = 0.0
        for t, ev in zip(tails, events):
            if ev is not None:
                lp += log_jump_vector_prob(t, n, size_at_least(ev[0], ev[1]), kind=kind)
        return exact_result(n, lp, math.log(n) ** g)

    ests = [fam(n) for n in n_grid]
    band = (-target, -target)
    term, verdict, dec, app = _verdict(ests, band, tolerance)
    return LdpReport("product:" + ",".join(str(e) for e in events), ests, term, band, tolerance,
                     verdict, dec, app, "speed (log n)^gamma; target = -sum lambda_i j_i")


def product_mc_estimate(tails: Sequence[TailParams], predicate: Callable, k: int, n: int, trials: int,
                        seed: int = 0, kind: str = "levy") -> EstimateResult:
    """Plain Monte Carlo for a (possibly non-product) event on independent k-jump vectors."""
    def draw(size, g):
        arrays = [js.sample_k_jump_batch(t, n, k, size, g, kind) for t in tails]
        return predicate(*arrays)

    hits = _count_hits(draw, trials, seed, (3,), 1)
    lo, hi = clopper_pearson(hits, trials, CI_LEVEL)
    lp = math.log(hits / trials) if hits else -math.inf
    g_ = tails[0].gamma
    return _result(n, trials, hits, lp, lo, hi, "plain", math.log(n) ** g_)


def walk_size_at_least_log_prob(tail: TailParams, n: int, i: int, x: float) -> float:
    """Closed form log P(i-th largest walk jump >= x) = log P(V_(i) <= Q~(nx))."""
    return log_beta_cdf(i, n - i, log_x=float(log_q_tilde(tail, n * x)))


__all__ = [
    "EventSpec", "EstimateResult", "LdpReport", "LevySampler", "KJumpSampler", "estimate_plain",
    "estimate_big_jump_conditioned", "exact_jump_vector_prob", "log_jump_vector_prob", "size_at_least",
    "ldp_slope_check", "exact_k_jump_family", "boundary_crossing_event", "boundary_crossing_check",
    "one_big_jump_check", "one_big_jump_exact", "compound_poisson_tail", "tail_quantile_x1",
    "truncated_sum_tail_check", "chernoff_log_bound", "bernstein_log_bound", "etemadi_oracle",
    "bernstein_oracle", "bernstein_bound", "product_ldp_check", "product_mc_estimate",
    "walk_size_at_least_log_prob", "exact_result",
]
