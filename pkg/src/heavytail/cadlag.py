"""Step paths on [0, 1], Skorokhod distances and jump-counting rate functions.

Conventions
-----------
* A StepPath is ``initial + sum(size_i * 1[t_i, 1])`` with strictly increasing
  jump times in (0, 1]. A jump supplied at t = 0 is folded into ``initial``.
* Completed graphs use xi(0-) = 0, so a nonzero start value is drawn as a
  vertical segment at t = 0 (and counts as a time-0 jump for the hat classes).
* Graph points are (value, time) and the distance between them is
  |x - y| v |t - s|.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from typing import Iterable, NamedTuple, Sequence

import numba
import numpy as np

DEFAULT_DENSITY = 1e-3
DEFAULT_TOL = 1e-6


class StepPath:
    """Right-continuous pure-jump path on [0, 1]."""

    __slots__ = ("initial", "times", "sizes")

    def __init__(self, initial: float = 0.0, jumps: Iterable = ()):
        jumps = [(float(t), float(s)) for t, s in jumps]
        for t, _ in jumps:
            if not (0.0 <= t <= 1.0) or math.isnan(t):
                raise ValueError(f"jump time {t} outside [0, 1]")
        init = float(initial)
        merged: dict[float, float] = {}
        for t, s in jumps:
            if t == 0.0:
                init += s
            else:
                merged[t] = merged.get(t, 0.0) + s
        ts = sorted(t for t, s in merged.items() if s != 0.0)
        object.__setattr__(self, "initial", init)
        object.__setattr__(self, "times", np.array(ts, dtype=float))
        object.__setattr__(self, "sizes", np.array([merged[t] for t in ts], dtype=float))
        self.times.flags.writeable = False
        self.sizes.flags.writeable = False

    def __setattr__(self, name, value):
        raise AttributeError("StepPath is immutable")

    @classmethod
    def from_arrays(cls, initial: float, times, sizes) -> "StepPath":
        return cls(initial, zip(np.asarray(times, float).tolist(), np.asarray(sizes, float).tolist()))

    @classmethod
    def indicator(cls, t: float, size: float = 1.0) -> "StepPath":
        """size * 1_{[t, 1]}."""
        return cls(0.0, [(t, size)])

    @property
    def jumps(self) -> list[tuple[float, float]]:
        return list(zip(self.times.tolist(), self.sizes.tolist()))

    @property
    def n_jumps(self) -> int:
        return len(self.times)

    def levels(self) -> np.ndarray:
        """Values taken: initial, then after each jump."""
        return self.initial + np.concatenate(([0.0], np.cumsum(self.sizes)))

    def value(self, t):
        idx = np.searchsorted(self.times, np.asarray(t, float), side="right")
        out = self.levels()[idx]
        return float(out) if np.ndim(out) == 0 else out

    def left_limit(self, t):
        """xi(t-), with xi(0-) = 0."""
        t = np.asarray(t, float)
        idx = np.searchsorted(self.times, t, side="left")
        out = np.where(t <= 0.0, 0.0, self.levels()[idx])
        return float(out) if np.ndim(out) == 0 else out

    def grid_values(self, m: int) -> np.ndarray:
        return self.value(np.arange(m + 1) / m)

    def to_grid(self, m: int) -> "GridPath":
        return GridPath(self.grid_values(m))

    def __add__(self, other: "StepPath") -> "StepPath":
        return StepPath(self.initial + other.initial, self.jumps + other.jumps)

    def __neg__(self) -> "StepPath":
        return StepPath(-self.initial, [(t, -s) for t, s in self.jumps])

    def __eq__(self, other) -> bool:
        return (isinstance(other, StepPath) and self.initial == other.initial
                and np.array_equal(self.times, other.times) and np.array_equal(self.sizes, other.sizes))

    def __hash__(self):
        return hash((self.initial, self.times.tobytes(), self.sizes.tobytes()))

    def __repr__(self):
        return f"StepPath(initial={self.initial!r}, jumps={self.jumps!r})"

    def to_dict(self) -> dict:
        return {"initial": self.initial, "jumps": [[t, s] for t, s in self.jumps]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d) -> "StepPath":
        if not isinstance(d, dict) or "jumps" not in d:
            raise ValueError("StepPath JSON needs 'initial' and 'jumps'")
        jumps = d["jumps"]
        for j in jumps:
            if len(j) != 2:
                raise ValueError(f"malformed jump {j!r}")
        return cls(float(d.get("initial", 0.0)), [(j[0], j[1]) for j in jumps])

    @classmethod
    def from_json(cls, s: str) -> "StepPath":
        return cls.from_dict(json.loads(s))

    def to_csv(self, m: int = 1024) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "value"])
        for i, v in enumerate(self.grid_values(m)):
            w.writerow([repr(i / m), repr(float(v))])
        return buf.getvalue()


class GridPath:
    """Values of a general path at t = 0, 1/m, ..., 1.

    Distances treat it as the right-continuous step path through its nodes.
    Rate functions cannot certify that a sampled path is pure-jump, so any
    nonconstant GridPath has infinite rate.
    """

    __slots__ = ("values",)

    def __init__(self, values):
        v = np.array(values, dtype=float)
        if v.ndim != 1 or len(v) < 2:
            raise ValueError("GridPath needs at least two values")
        v.flags.writeable = False
        object.__setattr__(self, "values", v)

    def __setattr__(self, name, value):
        raise AttributeError("GridPath is immutable")

    @property
    def m(self) -> int:
        return len(self.values) - 1

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.m + 1) / self.m

    def to_step(self) -> StepPath:
        inc = np.diff(self.values)
        nz = np.nonzero(inc)[0]
        return StepPath.from_arrays(self.values[0], (nz + 1) / self.m, inc[nz])

    def __add__(self, other: "GridPath") -> "GridPath":
        if other.m != self.m:
            raise ValueError("resolution mismatch")
        return GridPath(self.values + other.values)

    def to_dict(self) -> dict:
        return {"m": self.m, "values": self.values.tolist()}

    @classmethod
    def from_dict(cls, d) -> "GridPath":
        g = cls(d["values"])
        if "m" in d and int(d["m"]) != g.m:
            raise ValueError("GridPath length does not match m")
        return g

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t", "value"])
        for t, v in zip(self.times, self.values):
            w.writerow([repr(float(t)), repr(float(v))])
        return buf.getvalue()


def _as_step(p) -> StepPath:
    if isinstance(p, StepPath):
        return p
    if isinstance(p, GridPath):
        return p.to_step()
    raise TypeError(f"expected StepPath or GridPath, got {type(p).__name__}")


# ---------------------------------------------------------------------------
# uniform and J1 distances

def uniform_distance(p, q) -> float:
    p, q = _as_step(p), _as_step(q)
    ts = np.union1d(np.union1d(p.times, q.times), [0.0])
    # on a step path every left limit is the value at the previous breakpoint
    return float(np.max(np.abs(p.value(ts) - q.value(ts))))


@numba.njit(cache=True)
def _j1_feasible(s, v, r, w, eps):
    a = s.shape[0]
    b = r.shape[0]
    inf = np.inf
    E = np.full((a + 1, b + 1), inf)
    if abs(v[0] - w[0]) > eps:
        return False
    E[0, 0] = 0.0
    for i in range(a + 1):
        for j in range(b + 1):
            T = E[i, j]
            if T == inf:
                continue
            rq = r[j] if j < b else 2.0
            if i < a:
                si = s[i]
                # p's next jump on its own, strictly before q's next jump
                if abs(v[i + 1] - w[j]) <= eps:
                    if si == 1.0:
                        sp = 1.0
                        ok = T <= 1.0 and rq > 1.0
                    else:
                        sp = max(T, si - eps)
                        ok = sp <= si + eps and sp < rq and sp < 1.0
                    if ok and sp < E[i + 1, j]:
                        E[i + 1, j] = sp
                # simultaneous with q's next jump
                if j < b and abs(v[i + 1] - w[j + 1]) <= eps:
                    if T <= rq and abs(si - rq) <= eps and ((si == 1.0) == (rq == 1.0)):
                        if rq < E[i + 1, j + 1]:
                            E[i + 1, j + 1] = rq
            if j < b and abs(v[i] - w[j + 1]) <= eps:
                if T <= rq and rq < E[i, j + 1]:
                    E[i, j + 1] = rq
    return E[a, b] < inf


def j1_feasible(p: StepPath, q: StepPath, eps: float) -> bool:
    """Is there a time change lambda with ||lambda - e|| and ||p o lambda - q|| <= eps?"""
    return bool(_j1_feasible(p.times, p.levels(), q.times, q.levels(), float(eps)))


def j1_distance(p, q, tol: float = DEFAULT_TOL) -> float:
    """Skorokhod J1 distance to within tol, by bisection on a DP feasibility test.

    The DP walks the lattice of (jumps of p used, jumps of q used), moving
    p's next jump (within eps of its original time) or passing q's next
    jump, and keeps the earliest feasible entry time of each state.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    p, q = _as_step(p), _as_step(q)
    # compute with the pair in a fixed order so the result is symmetric bit-for-bit
    if (p.n_jumps, p.initial, p.times.tobytes()) > (q.n_jumps, q.initial, q.times.tobytes()):
        p, q = q, p
    hi = uniform_distance(p, q)
    if hi == 0.0 or j1_feasible(p, q, 0.0):
        return 0.0
    lo = 0.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if j1_feasible(p, q, mid):
            hi = mid
        else:
            lo = mid
    return hi


# ---------------------------------------------------------------------------
# completed graphs and M1'

class GraphPoint(NamedTuple):
    value: float
    time: float


def _graph_vertices(p: StepPath) -> np.ndarray:
    """Corner points (value, time) of Gamma(p) in traversal order."""
    lv = p.levels()
    pts = [(0.0, 0.0)]
    if p.initial != 0.0:
        pts.append((lv[0], 0.0))
    for k, t in enumerate(p.times):
        pts.append((lv[k], t))
        pts.append((lv[k + 1], t))
    pts.append((lv[-1], 1.0))
    out = [pts[0]]
    for pt in pts[1:]:
        if pt != out[-1]:
            out.append(pt)
    return np.array(out, dtype=float)


def _densify(vertices: np.ndarray, density: float) -> np.ndarray:
    if len(vertices) == 1:
        return vertices.copy()
    seg = np.diff(vertices, axis=0)
    lengths = np.max(np.abs(seg), axis=1)
    pieces = np.maximum(1, np.ceil(lengths / density).astype(np.int64))
    chunks = []
    for k in range(len(seg)):
        f = np.arange(pieces[k]) / pieces[k]
        chunks.append(vertices[k] + f[:, None] * seg[k])
    chunks.append(vertices[-1:])
    return np.concatenate(chunks)


def graph_array(p, density: float = DEFAULT_DENSITY) -> np.ndarray:
    if density <= 0:
        raise ValueError("density must be positive")
    return _densify(_graph_vertices(_as_step(p)), density)


def completed_graph(p, density: float = DEFAULT_DENSITY) -> list[GraphPoint]:
    """Points of the completed graph, ordered along the curve, spacing <= density."""
    return [GraphPoint(float(v), float(t)) for v, t in graph_array(p, density)]


def graph_precedes(p: StepPath, a: GraphPoint, b: GraphPoint) -> bool:
    """a strictly precedes b in the order on Gamma(p)."""
    if a.time != b.time:
        return a.time < b.time
    base = p.left_limit(a.time)
    return abs(base - a.value) < abs(base - b.value)


@numba.njit(cache=True)
def _frechet_linf(P, Q):
    n = P.shape[0]
    m = Q.shape[0]
    prev = np.empty(m)
    cur = np.empty(m)
    for j in range(m):
        c = max(abs(P[0, 0] - Q[j, 0]), abs(P[0, 1] - Q[j, 1]))
        prev[j] = c if j == 0 else max(c, prev[j - 1])
    for i in range(1, n):
        c = max(abs(P[i, 0] - Q[0, 0]), abs(P[i, 1] - Q[0, 1]))
        cur[0] = max(c, prev[0])
        for j in range(1, m):
            c = max(abs(P[i, 0] - Q[j, 0]), abs(P[i, 1] - Q[j, 1]))
            best = min(prev[j], prev[j - 1], cur[j - 1])
            cur[j] = max(c, best)
        for j in range(m):
            prev[j] = cur[j]
    return prev[m - 1]


def m1prime_upper(p, q, density: float = DEFAULT_DENSITY) -> float:
    """Upper bound on d_M1' by a monotone min-max alignment of sampled graphs.

    Any monotone coupling of the two sample sequences induces parametrizations
    of the completed graphs, so the bottleneck cost bounds the metric from
    above; it converges as density -> 0.
    """
    P, Q = graph_array(p, density), graph_array(q, density)
    if len(P) > len(Q):
        P, Q = Q, P
    return float(_frechet_linf(P, Q))


def _graph_segments(p: StepPath):
    """Horizontal (t0, t1, y) and vertical (t, y0, y1) pieces of Gamma(p)."""
    V = _graph_vertices(p)
    hor, ver = [], []
    if len(V) == 1:
        hor.append((0.0, 0.0, V[0, 0]))
    for (y0, t0), (y1, t1) in zip(V[:-1], V[1:]):
        if t0 == t1:
            ver.append((t0, min(y0, y1), max(y0, y1)))
        else:
            hor.append((t0, t1, y0))
    return np.array(hor, float).reshape(-1, 3), np.array(ver, float).reshape(-1, 3)


def _interval_gap(x, lo, hi):
    return np.maximum(0.0, np.maximum(lo - x, x - hi))


def distance_to_graph(points: np.ndarray, p, chunk: int = 2048) -> np.ndarray:
    """Exact d(z, Gamma(p)) for each row z = (value, time) of points."""
    hor, ver = _graph_segments(_as_step(p))
    pts = np.atleast_2d(np.asarray(points, float))
    out = np.empty(len(pts))
    for k in range(0, len(pts), chunk):
        z = pts[k:k + chunk]
        y, t = z[:, :1], z[:, 1:]
        best = np.full(len(z), np.inf)
        if len(hor):
            d = np.maximum(np.abs(y - hor[:, 2]), _interval_gap(t, hor[:, 0], hor[:, 1]))
            best = np.minimum(best, d.min(axis=1))
        if len(ver):
            d = np.maximum(np.abs(t - ver[:, 0]), _interval_gap(y, ver[:, 1], ver[:, 2]))
            best = np.minimum(best, d.min(axis=1))
        out[k:k + chunk] = best
    return out


def m1prime_lower_pointgap(p, q, density: float = DEFAULT_DENSITY) -> float:
    """max over sampled z in Gamma(p) of d(z, Gamma(q)), and symmetrically.

    Distances to the other graph are exact, so the result is a certified
    lower bound on d_M1' whatever the sampling density.
    """
    p, q = _as_step(p), _as_step(q)
    a = distance_to_graph(graph_array(p, density), q).max()
    b = distance_to_graph(graph_array(q, density), p).max()
    return float(max(a, b))


def _jump_events(q: StepPath):
    """(times, value before, value after) with the time-0 jump from xi(0-) = 0."""
    lv = q.levels()
    times, before, after = list(q.times), list(lv[:-1]), list(lv[1:])
    if q.initial != 0.0:
        times.insert(0, 0.0)
        before.insert(0, 0.0)
        after.insert(0, q.initial)
    return np.array(times), np.array(before), np.array(after)


def _flat_one_way(p: StepPath, q: StepPath) -> float:
    qt, qb, qa = _jump_events(q)
    if len(qt) == 0:
        return 0.0
    edges = np.concatenate(([0.0], p.times, [1.0]))
    best = 0.0
    for k in range(len(edges) - 1):
        a, b = edges[k], edges[k + 1]
        if a == b:
            continue
        # slack is unlimited at an end where Gamma(p) has no vertical segment
        left_free = k == 0 and p.initial == 0.0
        right_free = k == len(edges) - 2 and not (p.n_jumps and p.times[-1] == 1.0)
        sel = (qt >= a) & (qt <= b)
        if not right_free:
            sel &= qt < b
        if not np.any(sel):
            continue
        ts, vb, va = qt[sel], qb[sel], qa[sel]
        # pairs s <= t among q's jumps in [a, b]
        height = np.abs(va[None, :] - vb[:, None]) / 2.0
        ls = np.inf if left_free else ts - a
        rs = np.inf if right_free else b - ts
        ls = np.broadcast_to(ls, ts.shape)[:, None]
        rs = np.broadcast_to(rs, ts.shape)[None, :]
        delta = np.minimum(height, np.minimum(ls, rs))
        delta = np.where(np.triu(np.ones((len(ts), len(ts)), bool)), delta, 0.0)
        best = max(best, float(delta.max()))
    return best


def m1prime_lower_flatjump(p, q) -> float:
    """Largest delta with |q(t) - q(s-)| >= 2 delta while p is flat on [s-delta, t+delta].

    Taken over both orientations of the pair, so the bound is symmetric.
    """
    p, q = _as_step(p), _as_step(q)
    return max(_flat_one_way(p, q), _flat_one_way(q, p))


def flatjump_bound_at(p, q, s: float, t: float) -> float:
    """The single-window version: delta for the window [s, t] of q's jumps."""
    p, q = _as_step(p), _as_step(q)
    height = abs(q.value(t) - q.left_limit(s)) / 2.0
    idx = np.searchsorted(p.times, s, side="right")
    a = p.times[idx - 1] if idx > 0 else 0.0
    nxt = np.searchsorted(p.times, t, side="right")
    # p must not jump in (s, t]
    if nxt != idx:
        return 0.0
    b = p.times[nxt] if nxt < p.n_jumps else None
    left = (s - a) if (idx > 0 or p.initial != 0.0) else np.inf
    right = (b - t) if b is not None else np.inf
    return float(max(0.0, min(height, left, right)))


def m1prime_interval(p, q, density: float = DEFAULT_DENSITY) -> tuple[float, float]:
    lo = max(m1prime_lower_pointgap(p, q, density), m1prime_lower_flatjump(p, q))
    return lo, m1prime_upper(p, q, density)


# ---------------------------------------------------------------------------
# classification and rate functions

@dataclass(frozen=True, order=True)
class RateValue:
    """Extended natural number: a jump count or infinity."""

    count: float

    def __post_init__(self):
        c = self.count
        if not (c == math.inf or (c >= 0 and float(c).is_integer())):
            raise ValueError(f"RateValue must be a nonnegative integer or inf, got {c}")

    @classmethod
    def of(cls, k: int) -> "RateValue":
        return cls(int(k))

    @classmethod
    def inf(cls) -> "RateValue":
        return cls(math.inf)

    @property
    def infinite(self) -> bool:
        return self.count == math.inf

    @property
    def finite(self) -> bool:
        return not self.infinite

    def __int__(self):
        if self.infinite:
            raise OverflowError("infinite rate")
        return int(self.count)

    def __float__(self):
        return float(self.count)

    def __eq__(self, other):
        if isinstance(other, RateValue):
            return self.count == other.count
        if isinstance(other, (int, float)):
            return self.count == other
        return NotImplemented

    def __hash__(self):
        return hash(self.count)

    def __add__(self, other: "RateValue") -> "RateValue":
        return RateValue(self.count + other.count)

    def to_json(self):
        return "inf" if self.infinite else int(self.count)

    def __str__(self):
        return "inf" if self.infinite else str(int(self.count))


@dataclass(frozen=True)
class Membership:
    """Where a path sits in the D-subspace families; j is the class index."""

    nondecreasing: bool
    jumps: int  # jumps in (0, 1]
    in_d: bool  # D_{=j}: start 0, no jump at 1
    in_d_tilde: bool  # D~_{=j}: start 0, jump at 1 allowed
    in_d_hat: bool  # D^_{=j}: start >= 0 counted as a jump
    j_hat: int

    def in_d_leq(self, j: int) -> bool:
        return self.in_d and self.jumps <= j


def classify(p) -> Membership:
    if isinstance(p, GridPath):
        if np.all(p.values == p.values[0]):
            p = StepPath(p.values[0])
        else:
            return Membership(False, 0, False, False, False, 0)
    up = bool(np.all(p.sizes > 0))
    jump_at_one = p.n_jumps > 0 and p.times[-1] == 1.0
    start0 = p.initial == 0.0
    return Membership(
        nondecreasing=up,
        jumps=p.n_jumps,
        in_d=up and start0 and not jump_at_one,
        in_d_tilde=up and start0,
        in_d_hat=up and p.initial >= 0.0,
        j_hat=p.n_jumps + (1 if p.initial > 0 else 0),
    )


def rate_j1(p) -> RateValue:
    m = classify(p)
    return RateValue.of(m.jumps) if m.in_d else RateValue.inf()


def rate_rw(p) -> RateValue:
    m = classify(p)
    return RateValue.of(m.jumps) if m.in_d_tilde else RateValue.inf()


def rate_m1prime(p) -> RateValue:
    m = classify(p)
    return RateValue.of(m.j_hat) if m.in_d_hat else RateValue.inf()


def rate_k_vector(x: Sequence[float]) -> RateValue:
    x = np.asarray(x, float)
    if np.any(x < 0):
        raise ValueError("k-vector must be nonnegative")
    if np.any(np.diff(x) > 0):
        raise ValueError("k-vector must be nonincreasing")
    return RateValue.of(int(np.count_nonzero(x)))


def rate_multi(paths: Sequence, lambdas: Sequence[float], kind: str = "levy") -> float:
    if len(paths) != len(lambdas):
        raise ValueError("paths and lambdas differ in length")
    if kind not in ("levy", "rw"):
        raise ValueError("kind must be 'levy' or 'rw'")
    f = rate_j1 if kind == "levy" else rate_rw
    total = 0.0
    for p, lam in zip(paths, lambdas):
        if lam <= 0:
            raise ValueError("lambdas must be positive")
        r = f(p)
        if r.infinite:
            return math.inf
        total += lam * r.count
    return total


def phi(p) -> tuple[float, float]:
    """(sup_t p(t), sup_t |p(t) - p(t-)|), with p(0-) = 0."""
    p = _as_step(p)
    lv = p.levels()
    jumps = np.concatenate(([abs(p.initial)], np.abs(p.sizes)))
    return float(lv.max()), float(jumps.max())


def rate_phi(x: float, y: float) -> RateValue:
    if y <= 0:
        raise ValueError("y must be positive")
    if x <= 0:
        return RateValue.of(0)
    return RateValue.of(math.ceil(x / y))


def fattening_distance(p, family: Sequence, metric: str = "J1", tol: float = DEFAULT_TOL,
                       density: float = DEFAULT_DENSITY) -> float:
    """inf over the family of d(p, member); the M1' variant uses the upper bound."""
    if not family:
        raise ValueError("family must be nonempty")
    key = metric.upper().replace("'", "P")
    if key == "J1":
        return min(j1_distance(p, f, tol) for f in family)
    if key in ("M1P", "M1PRIME"):
        return min(m1prime_upper(p, f, density) for f in family)
    if key in ("U", "UNIFORM"):
        return min(uniform_distance(p, f) for f in family)
    raise ValueError(f"unknown metric {metric!r}")
