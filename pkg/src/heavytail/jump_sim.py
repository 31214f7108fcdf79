"""Samplers for the scaled Lévy process, its big-jump decomposition and the
random-walk representations.

The Lévy process has Lévy measure nu on [1, inf) (the lognormal-type tail),
an optional small-jump density on (0, 1), Brownian coefficient a and drift b.
Its centred, space-time scaled version is

    Xbar_n(t) = X(nt)/n - t E X(1).

Big jumps are coupled to a unit-rate Poisson process: the points Gamma_i <= n nu_1
are the jumps, with sizes Q_n^{<-}(Gamma_i) (so Gamma order is size order)
and uniform times U_i.
"""
from __future__ import annotations

import functools
import json
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import integrate, special

from .cadlag import GridPath, StepPath
from .tail_models import TailParams, q_n_inverse, q_tilde_inverse, sample_tail_variable, tail

DEFAULT_RESOLUTION = 2**10
SMALL_JUMP_VAR_CUTOFF = 1e-6


@dataclass(frozen=True)
class SmallJumpSpec:
    """Small-jump Lévy density kappa * x^(-1-alpha) on (0, 1)."""

    kappa: float = 1.0
    alpha: float = 0.5

    def __post_init__(self):
        if self.kappa <= 0:
            raise ValueError("kappa must be positive")
        bad = not (self.alpha < 2)
        if not bad:
            second, err = integrate.quad(lambda x: self.kappa * x ** (1.0 - self.alpha), 0.0, 1.0, limit=200)
            bad = not math.isfinite(second) or err > 1e-6 * max(second, 1.0)
        if bad:
            raise ValueError(f"small-jump density must have a finite second moment (alpha={self.alpha})")

    def _moment(self, k: int, lo: float) -> float:
        """int_lo^1 x^k nu(dx)."""
        e = k - self.alpha
        if e == 0:
            return self.kappa * -math.log(lo)
        return self.kappa * (1.0 - lo**e) / e

    @property
    def finite_mass(self) -> bool:
        return self.alpha < 0

    @property
    def cutoff(self) -> float:
        """Jumps below this level are dropped; their variance is <= 1e-6."""
        if self.finite_mass:
            return 0.0
        # int_0^lo kappa x^(1-alpha) dx = kappa lo^(2-alpha)/(2-alpha)
        return (SMALL_JUMP_VAR_CUTOFF * (2 - self.alpha) / self.kappa) ** (1.0 / (2 - self.alpha))

    def mass(self) -> float:
        return self._moment(0, self.cutoff)

    def mean(self) -> float:
        return self._moment(1, self.cutoff)

    def second_moment(self) -> float:
        return self._moment(2, 0.0)

    def sample(self, size, rng) -> np.ndarray:
        lo, u = self.cutoff, rng.random(size)
        if self.alpha == 0:
            return lo ** (1.0 - u)
        a = -self.alpha
        # density proportional to x^(a-1) on [lo, 1]
        return (lo**a + u * (1.0 - lo**a)) ** (1.0 / a)

    def to_dict(self) -> dict:
        return {"kappa": self.kappa, "alpha": self.alpha}


@dataclass(frozen=True)
class LevyConfig:
    tail: TailParams = field(default_factory=TailParams)
    a: float = 0.0
    b: float = 0.0
    small_jump: Optional[SmallJumpSpec] = None

    def __post_init__(self):
        if self.a < 0:
            raise ValueError("Brownian coefficient a must be nonnegative")

    @property
    def pure_compound_poisson(self) -> bool:
        return self.a == 0 and self.small_jump is None

    def to_dict(self) -> dict:
        return {"tail": self.tail.to_dict(), "a": self.a, "b": self.b,
                "small_jump": None if self.small_jump is None else self.small_jump.to_dict()}

    @classmethod
    def from_dict(cls, d) -> "LevyConfig":
        sj = d.get("small_jump")
        return cls(tail=TailParams.from_dict(d.get("tail", {})), a=float(d.get("a", 0.0)),
                   b=float(d.get("b", 0.0)),
                   small_jump=None if sj is None else SmallJumpSpec(**sj))


@dataclass(frozen=True)
class MomentCache:
    nu1: float
    mu1: float
    second: float  # E Z^2 under the normalised tail law


@functools.lru_cache(maxsize=64)
def _tail_moments(params: TailParams) -> MomentCache:
    nu1 = tail(params, 1.0)

    def integral(power: int) -> float:
        # int_1^inf x^(power-1) tail(x) dx with x = e^u
        def f(u):
            return math.exp(power * u - (params.lam * u**params.gamma - params.beta * u - math.log(params.c)))

        val, err = integrate.quad(f, 0.0, np.inf, epsabs=0.0, epsrel=1e-10, limit=400)
        if not math.isfinite(val) or err > 1e-8 * abs(val):
            raise ArithmeticError("tail integral did not converge")
        return val

    mu1 = 1.0 + integral(1) / nu1
    second = 1.0 + 2.0 * integral(2) / nu1
    return MomentCache(nu1=nu1, mu1=mu1, second=second)


def moments(cfg) -> MomentCache:
    """nu_1 = nu[1, inf) and mu_1 = E Z, by tail integration."""
    params = cfg.tail if isinstance(cfg, LevyConfig) else cfg
    return _tail_moments(params)


# ---------------------------------------------------------------------------
# Poisson coupling

def sample_gamma_uniform(k: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """First k arrival times of a unit-rate Poisson process, and k uniforms."""
    if k < 1:
        raise ValueError("k must be positive")
    gam = np.cumsum(rng.exponential(size=k))
    return gam, rng.random(k)


@dataclass(frozen=True)
class PoissonCoupling:
    """One draw of the (Gamma, U) point set behind the big-jump decomposition.

    ``gammas`` holds every arrival up to n*nu_1 plus further arrivals until at
    least k are present; ``n_big`` counts those at or below n*nu_1.
    """

    cfg: LevyConfig
    n: int
    k: int
    gammas: np.ndarray
    uniforms: np.ndarray
    n_big: int

    @property
    def raw_sizes(self) -> np.ndarray:
        """Q_n^{<-}(Gamma_i): unscaled jump sizes, clamped to 1 beyond n*nu_1."""
        return np.atleast_1d(q_n_inverse(self.cfg.tail, self.n, self.gammas))

    @property
    def big_times(self) -> np.ndarray:
        return self.uniforms[: self.n_big]

    def count_process(self, t) -> np.ndarray:
        """N(nt): number of big jumps by scaled time t."""
        return np.searchsorted(np.sort(self.big_times), np.asarray(t, float), side="right")


def draw_coupling(cfg: LevyConfig, n: int, k: int, rng) -> PoissonCoupling:
    """Arrivals below n nu_1 as sorted uniforms given a Poisson count (same law
    as exponential partial sums), topped up past n nu_1 until k points exist."""
    if n < 2 or k < 0:
        raise ValueError("need n >= 2 and k >= 0")
    L = n * moments(cfg).nu1
    m = int(rng.poisson(L))
    g = np.sort(rng.random(m)) * L
    if m < k:
        g = np.concatenate((g, L + np.cumsum(rng.exponential(size=k - m))))
    u = rng.random(len(g))
    return PoissonCoupling(cfg, n, k, g, u, m)


def _coupling(cfg, n, k, rng_or_coupling, need_coupled: bool) -> PoissonCoupling:
    if isinstance(rng_or_coupling, PoissonCoupling):
        c = rng_or_coupling
        if c.n != n or c.cfg != cfg or len(c.gammas) < k:
            raise ValueError("coupling was drawn for different (cfg, n, k)")
        return c
    if need_coupled:
        raise TypeError("this component must be sampled from the same PoissonCoupling "
                        "as the other components; pass the coupling, not a generator")
    return draw_coupling(cfg, n, k, rng_or_coupling)


def sample_j_hat_k(cfg: LevyConfig, n: int, k: int, rng) -> StepPath:
    """(1/n) sum_{i<=k} Q_n^{<-}(Gamma_i) 1[U_i, 1], clamped sizes included."""
    c = _coupling(cfg, n, k, rng, need_coupled=False)
    if k < 1:
        raise ValueError("k must be positive")
    return StepPath.from_arrays(0.0, c.uniforms[:k], c.raw_sizes[:k] / n)


def sample_j_check_k(cfg: LevyConfig, n: int, k: int, rng_coupled) -> StepPath:
    """Cancels the clamped jumps of J^hat: those with index beyond N~_n."""
    c = _coupling(cfg, n, k, rng_coupled, need_coupled=True)
    idx = np.arange(c.n_big, k)
    return StepPath.from_arrays(0.0, c.uniforms[idx], -c.raw_sizes[idx] / n)


def _rank_order(sizes: np.ndarray) -> np.ndarray:
    """Rank (0 = largest) by decreasing size, ties to the smaller index."""
    order = np.argsort(-sizes, kind="stable")
    rank = np.empty_like(order)
    rank[order] = np.arange(len(order))
    return rank


def sample_h_bar_k(cfg: LevyConfig, n: int, k: int, rng_coupled) -> StepPath:
    """(1/n) sum over big jumps of (Z_i 1{rank > k} - mu_1) at their times.

    Pure-jump, so returned as a StepPath; call ``.to_grid(m)`` for a grid.
    """
    c = _coupling(cfg, n, k, rng_coupled, need_coupled=True)
    mu1 = moments(cfg).mu1
    z = c.raw_sizes[: c.n_big]
    keep = _rank_order(z) >= k
    return StepPath.from_arrays(0.0, c.big_times, (np.where(keep, z, 0.0) - mu1) / n)


def sample_r_bar(cfg: LevyConfig, n: int, resolution: int, rng, coupling: PoissonCoupling | None = None) -> GridPath:
    """aB(nt)/n + compensated small jumps + mu_1 N(nt)/n - t nu_1 mu_1 on a grid.

    Without a coupling the Poisson count of big jumps is drawn afresh.
    """
    if resolution < 16:
        raise ValueError("resolution must be at least 16")
    m = resolution
    t = np.arange(m + 1) / m
    mc = moments(cfg)
    if coupling is None:
        coupling = draw_coupling(cfg, n, 0, rng)
    vals = mc.mu1 * coupling.count_process(t) / n - t * mc.nu1 * mc.mu1
    if cfg.a > 0:
        inc = rng.standard_normal(m) * math.sqrt(n / m) * cfg.a / n
        vals = vals + np.concatenate(([0.0], np.cumsum(inc)))
    sj = cfg.small_jump
    if sj is not None:
        cnt = int(rng.poisson(n * sj.mass()))
        times = rng.random(cnt)
        sizes = sj.sample(cnt, rng)
        order = np.argsort(times)
        cum = np.concatenate(([0.0], np.cumsum(sizes[order])))
        idx = np.searchsorted(times[order], t, side="right")
        vals = vals + cum[idx] / n - t * sj.mean()
    return GridPath(vals)


@dataclass(frozen=True)
class XBarSample:
    j_hat: StepPath
    j_check: StepPath
    h_bar: StepPath
    r_bar: GridPath
    total: GridPath
    coupling: PoissonCoupling

    def component_grids(self) -> tuple[np.ndarray, ...]:
        m = self.total.m
        return (self.j_hat.grid_values(m), self.j_check.grid_values(m),
                self.h_bar.grid_values(m), self.r_bar.values)

    def to_record(self) -> dict:
        return {"j_hat": self.j_hat.to_dict(), "j_check": self.j_check.to_dict(),
                "h_bar": self.h_bar.to_dict(), "r_bar": self.r_bar.to_dict(),
                "total": self.total.to_dict()}


def sample_x_bar(cfg: LevyConfig, n: int, k: int, resolution: int = DEFAULT_RESOLUTION, rng=None) -> XBarSample:
    """Xbar_n = J^hat + J^check + H^bar + R^bar, all from one coupling."""
    c = draw_coupling(cfg, n, k, rng)
    jh = sample_j_hat_k(cfg, n, k, c) if k else StepPath()
    jc = sample_j_check_k(cfg, n, k, c)
    hb = sample_h_bar_k(cfg, n, k, c)
    rb = sample_r_bar(cfg, n, resolution, rng, coupling=c)
    m = resolution
    total = jh.grid_values(m) + jc.grid_values(m) + hb.grid_values(m) + rb.values
    return XBarSample(jh, jc, hb, rb, GridPath(total), c)


def sample_big_small_split(cfg: LevyConfig, n: int, resolution: int, rng) -> tuple[StepPath, GridPath]:
    """(Jbar_n, Hbar_n): uncentred big jumps, and aB/n + small jumps - t nu_1 mu_1."""
    c = draw_coupling(cfg, n, 0, rng)
    jbar = StepPath.from_arrays(0.0, c.big_times, c.raw_sizes[: c.n_big] / n)
    # a coupling with no big jumps leaves exactly aB/n + small jumps - t nu_1 mu_1
    empty = PoissonCoupling(cfg, n, 0, np.empty(0), np.empty(0), 0)
    rest = sample_r_bar(cfg, n, resolution, rng, coupling=empty)
    return jbar, rest


def dump_jsonl(records, fh) -> None:
    for rec in records:
        fh.write(json.dumps(rec, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# vectorised batches for Monte Carlo

@dataclass
class JumpBatch:
    """Jumps of many independent scaled paths, flattened.

    Path value: sum of its jumps up to t minus ``drift * t``.
    """

    n: int
    trials: int
    owner: np.ndarray
    sizes: np.ndarray
    times: np.ndarray
    drift: float
    weight: float = 1.0

    def _time_sorted(self):
        order = np.lexsort((self.times, self.owner))
        return self.owner[order], self.sizes[order], self.times[order]

    def value_at(self, t: float) -> np.ndarray:
        out = np.zeros(self.trials)
        sel = self.times <= t
        np.add.at(out, self.owner[sel], self.sizes[sel])
        return out - self.drift * t

    def sup(self) -> np.ndarray:
        """sup_t of each path; with drift >= 0 it is attained at 0 or just after a jump."""
        if self.drift < 0:
            raise ValueError("sup() assumes a nonincreasing drift part")
        own, sz, tm = self._time_sorted()
        out = np.zeros(self.trials)
        if len(sz) == 0:
            return out
        cs = np.cumsum(sz)
        starts = np.r_[0, np.nonzero(np.diff(own))[0] + 1]
        lens = np.diff(np.r_[starts, len(own)])
        base = np.repeat(np.r_[0.0, cs][starts], lens)
        vals = cs - base - self.drift * tm
        np.maximum.at(out, own, vals)
        return out

    def max_jump(self) -> np.ndarray:
        out = np.zeros(self.trials)
        np.maximum.at(out, self.owner, self.sizes)
        return out

    def counts(self) -> np.ndarray:
        return np.bincount(self.owner, minlength=self.trials)

    def top(self, k: int) -> np.ndarray:
        """(trials, k) array of the k largest jump sizes, zero padded."""
        out = np.zeros((self.trials, k))
        order = np.lexsort((-self.sizes, self.owner))
        own = self.owner[order]
        starts = np.r_[0, np.nonzero(np.diff(own))[0] + 1] if len(own) else np.empty(0, int)
        pos = np.arange(len(own)) - np.repeat(starts, np.diff(np.r_[starts, len(own)]))
        sel = pos < k
        out[own[sel], pos[sel]] = self.sizes[order][sel]
        return out


def _require_batchable(cfg: LevyConfig):
    if not cfg.pure_compound_poisson:
        raise NotImplementedError("vectorised batches cover a = 0 and no small jumps; "
                                  "use sample_x_bar for other configurations")


def sample_levy_batch(cfg: LevyConfig, n: int, trials: int, rng, centered: bool = True) -> JumpBatch:
    """Plain Monte Carlo batch of Xbar_n (or its uncentred jump part)."""
    _require_batchable(cfg)
    mc = moments(cfg)
    counts = rng.poisson(n * mc.nu1, size=trials)
    total = int(counts.sum())
    owner = np.repeat(np.arange(trials), counts)
    z = np.atleast_1d(sample_tail_variable(cfg.tail, rng, total)) if total else np.empty(0)
    times = rng.random(total)
    drift = mc.nu1 * mc.mu1 if centered else 0.0
    return JumpBatch(n, trials, owner, z / n, times, drift)


def _truncated_erlang(j: int, q: float, below: bool, size: int, rng) -> np.ndarray:
    """Gamma_j conditioned on Gamma_j <= q (below) or > q, exactly."""
    if below:
        mass = special.gammainc(j, q)
        if mass > 1e-280:
            u = rng.random(size)
            out = special.gammaincinv(j, u * mass)
            bad = ~(out > 0) | (out > q)
            if not np.any(bad):
                return out
        # rejection from the density s^(j-1) on [0, q]: accept with e^{-s} >= e^{-q}
        out = np.empty(size)
        todo = np.arange(size)
        while len(todo):
            s = q * rng.random(len(todo)) ** (1.0 / j)
            ok = rng.random(len(todo)) < np.exp(-s)
            out[todo[ok]] = s[ok]
            todo = todo[~ok]
        return out
    tail_mass = special.gammaincc(j, q)
    if tail_mass < 1e-280:
        raise ArithmeticError("P(Gamma_j > q) underflows")
    u = rng.random(size)
    out = special.gammainccinv(j, u * tail_mass)
    return np.maximum(out, np.nextafter(q, np.inf))


def sample_levy_batch_conditioned(cfg: LevyConfig, n: int, trials: int, rng, j: int, q: float,
                                  below: bool = True, centered: bool = True) -> JumpBatch:
    """Batch of Xbar_n given Gamma_j <= q (or > q), sampled exactly.

    Given Gamma_j, the earlier arrivals are sorted uniforms on [0, Gamma_j]
    and the later ones form a unit-rate Poisson process beyond Gamma_j.
    """
    _require_batchable(cfg)
    if j < 1:
        raise ValueError("j must be positive")
    mc = moments(cfg)
    L = n * mc.nu1
    gj = _truncated_erlang(j, q, below, trials, rng)
    early = np.sort(rng.random((trials, j - 1)), axis=1) * gj[:, None]
    first = np.concatenate((early, gj[:, None]), axis=1)
    later_n = rng.poisson(np.maximum(L - gj, 0.0))
    owner_late = np.repeat(np.arange(trials), later_n)
    later = gj[owner_late] + rng.random(len(owner_late)) * (L - gj[owner_late])
    owner_first = np.repeat(np.arange(trials), j)
    gam = np.concatenate((first.ravel(), later))
    owner = np.concatenate((owner_first, owner_late))
    big = gam <= L
    gam, owner = gam[big], owner[big]
    sizes = np.atleast_1d(q_n_inverse(cfg.tail, n, gam)) / n if len(gam) else np.empty(0)
    times = rng.random(len(gam))
    drift = mc.nu1 * mc.mu1 if centered else 0.0
    return JumpBatch(n, trials, owner, sizes, times, drift)


# ---------------------------------------------------------------------------
# random walks and k-jump vectors

def sample_w_bar(n: int, tail_params: TailParams, rng) -> StepPath:
    """(1/n) sum_{i <= nt} (Z_i - EZ): jumps at i/n."""
    if n < 2:
        raise ValueError("n must be at least 2")
    ez = moments(tail_params).mu1
    z = np.atleast_1d(sample_tail_variable(tail_params, rng, n))
    return StepPath.from_arrays(0.0, np.arange(1, n + 1) / n, (z - ez) / n)


def sample_s_bar(n: int, tail_params: TailParams, rng) -> StepPath:
    """n-1 centred increments at uniform times plus the last one at t = 1."""
    return sample_w_s_coupled(n, tail_params, rng)[1]


def sample_w_s_coupled(n: int, tail_params: TailParams, rng) -> tuple[StepPath, StepPath, float]:
    """(Wbar_n, Sbar_n, sup_i |i/n - U_(i)|) with the increment placed at rank i
    of the uniforms used as the i-th random-walk step."""
    if n < 2:
        raise ValueError("n must be at least 2")
    ez = moments(tail_params).mu1
    z = np.atleast_1d(sample_tail_variable(tail_params, rng, n))
    u = rng.random(n - 1)
    inc = (z - ez) / n
    s = StepPath.from_arrays(0.0, np.r_[u, 1.0], inc)
    order = np.argsort(u)
    w_inc = np.r_[inc[:-1][order], inc[-1]]
    w = StepPath.from_arrays(0.0, np.arange(1, n + 1) / n, w_inc)
    gap = float(np.max(np.abs(np.arange(1, n) / n - u[order]))) if n > 1 else 0.0
    return w, s, gap


@dataclass(frozen=True)
class JumpVector:
    k: int
    sizes: np.ndarray
    times: np.ndarray

    def __post_init__(self):
        if len(self.sizes) != self.k or np.any(np.diff(self.sizes) > 0):
            raise ValueError("sizes must be a nonincreasing k-vector")


def rw_uniform_order_stats(n: int, k: int, rng, trials: int | None = None) -> np.ndarray:
    """k smallest of n-1 uniforms (ascending), via exponential spacings."""
    shape = (k,) if trials is None else (trials, k)
    e = rng.exponential(size=shape)
    partial = np.cumsum(e, axis=-1)
    rest = rng.gamma(n - k, size=() if trials is None else (trials,))
    total = partial[..., -1] + rest
    return partial / np.asarray(total)[..., None]


def sample_k_jump_sizes(tail_params: TailParams, n: int, k: int, rng, kind: str = "levy") -> JumpVector:
    """The k largest scaled jumps: Q_n^{<-}(Gamma_i)/n, or Q~^{<-}(V_(i))/n for the walk.

    V_(i) is the i-th smallest of n-1 uniforms, so V_(i+1) ~ Beta(i+1, n-i-1)
    and the sizes come out nonincreasing.
    """
    if kind == "levy":
        g, u = sample_gamma_uniform(k, rng)
        sizes = np.atleast_1d(q_n_inverse(tail_params, n, g)) / n
        return JumpVector(k, sizes, u)
    if kind == "rw":
        if k > n - 1:
            raise ValueError("random-walk variant needs k <= n - 1")
        v = rw_uniform_order_stats(n, k, rng)
        sizes = np.atleast_1d(q_tilde_inverse(tail_params, v)) / n
        return JumpVector(k, sizes, rng.random(k))
    raise ValueError("kind must be 'levy' or 'rw'")


def sample_k_jump_batch(tail_params: TailParams, n: int, k: int, trials: int, rng,
                        kind: str = "levy") -> np.ndarray:
    """(trials, k) array of k-largest-jump vectors."""
    if kind == "levy":
        g = np.cumsum(rng.exponential(size=(trials, k)), axis=1)
        return q_n_inverse(tail_params, n, g) / n
    if kind == "rw":
        v = rw_uniform_order_stats(n, k, rng, trials)
        return q_tilde_inverse(tail_params, v) / n
    raise ValueError("kind must be 'levy' or 'rw'")
