"""Shared strategies and independent oracles for the test suite."""
import itertools
import math

import numpy as np
from hypothesis import strategies as st

from heavytail.cadlag import StepPath

# jump times on a coarse lattice so that coincidences (and t = 1) occur
TIMES = st.integers(min_value=1, max_value=20).map(lambda k: k / 20)
SIZES = st.floats(min_value=-3, max_value=3, allow_nan=False).filter(lambda s: abs(s) > 1e-3)
POS_SIZES = st.floats(min_value=0.05, max_value=3, allow_nan=False)


@st.composite
def step_paths(draw, max_jumps=4, positive=False, allow_initial=True):
    k = draw(st.integers(0, max_jumps))
    times = draw(st.lists(TIMES, min_size=k, max_size=k, unique=True))
    sizes = draw(st.lists(POS_SIZES if positive else SIZES, min_size=k, max_size=k))
    init = 0.0
    if allow_initial and draw(st.booleans()):
        init = draw(POS_SIZES if positive else SIZES)
    return StepPath(init, list(zip(times, sizes)))


def random_step_path(rng, max_jumps=4, lattice=None):
    k = int(rng.integers(0, max_jumps + 1))
    if lattice:
        times = rng.choice(np.arange(1, lattice + 1) / lattice, size=k, replace=False)
    else:
        times = rng.random(k)
    sizes = rng.choice([-1, 1], size=k) * (0.1 + 2 * rng.random(k))
    return StepPath(0.0, list(zip(times.tolist(), sizes.tolist())))


def _uniform_after_moving(p: StepPath, q: StepPath, X: np.ndarray) -> np.ndarray:
    """sup_u |p(u) - q_x(u)| where q_x has q's jumps relocated to the rows of X."""
    T, k = X.shape
    s = np.broadcast_to(p.times, (T, p.n_jumps))
    pts = np.concatenate((np.zeros((T, 1)), s, X), axis=1)
    pv = p.levels()[np.searchsorted(p.times, pts, side="right")]
    qv = q.initial + np.einsum("tj,tbj->tb", np.broadcast_to(q.sizes, (T, k)),
                               (X[:, None, :] <= pts[:, :, None]).astype(float))
    return np.max(np.abs(pv - qv), axis=1)


def j1_brute_force(p: StepPath, q: StepPath, eta: float = 1e-4, grid: int = 11) -> float:
    """d_J1 by enumeration of time changes.

    A time change lambda acts on q by moving its jump at r_j to x_j; any
    strictly increasing x with x_j = 1 iff r_j = 1 is reachable by a
    piecewise-linear lambda, and then ||lambda - e|| = max |x_j - r_j|.
    Candidates for each x_j: r_j, p's jump times and tiny offsets around
    them, and a uniform grid.
    """
    if q.n_jumps == 0:
        X = np.zeros((1, 0))
        return float(max(0.0, _uniform_after_moving(p, q, X)[0]))
    offs = [0.0] + [sgn * m * eta for m in (1, 2, 3, 4) for sgn in (-1, 1)]
    cand_all = set(np.linspace(0, 1, grid).tolist())
    cand_all |= {min(1.0, max(0.0, s + o)) for s in p.times for o in offs}
    per = []
    for r in q.times:
        if r == 1.0:
            per.append([1.0])
        else:
            per.append(sorted({c for c in cand_all if 0.0 < c < 1.0} | {r}))
    # build strictly increasing tuples incrementally
    tuples = np.array(per[0])[:, None]
    for c in per[1:]:
        c = np.array(c)
        a = np.repeat(tuples, len(c), axis=0)
        b = np.tile(c, len(tuples))[:, None]
        keep = b[:, 0] > a[:, -1]
        tuples = np.concatenate((a[keep], b[keep]), axis=1)
    rows = tuples
    best = np.inf
    for start in range(0, len(rows), 200_000):
        X = rows[start:start + 200_000]
        shift = np.max(np.abs(X - q.times), axis=1)
        sup = _uniform_after_moving(p, q, X)
        best = min(best, float(np.min(np.maximum(shift, sup))))
    return best


def count_jumps_brute(p: StepPath, m: int = 4000):
    """Jump count, and the list of jump sizes, from a fine evaluation grid."""
    t = np.linspace(0, 1, m + 1)
    v = np.concatenate(([0.0], np.asarray(p.value(t))))
    # time 0 is handled by the 0- convention, time 1 by the grid end point
    d = np.diff(v)
    # a grid cell contains at most one jump time for lattice-1/20 paths
    return d[np.abs(d) > 1e-12]


def erlang_cdf_oracle(i: int, y: float) -> float:
    """P(Gamma_i <= y) = 1 - sum_{m < i} e^-y y^m / m!."""
    term, acc = 1.0, 0.0
    for m in range(i):
        if m:
            term *= y / m
        acc += term
    return 1.0 - np.exp(-y) * acc


def all_increasing(seq):
    return all(b > a for a, b in itertools.pairwise(seq)) if hasattr(itertools, "pairwise") else \
        all(b > a for a, b in zip(seq, seq[1:]))


def rate_oracle(p: StepPath):
    """Rates from grid evaluation and the domain rules, not from classify."""
    d = count_jumps_brute(p)
    start = float(p.value(0.0))
    at_one = float(p.value(1.0)) != float(p.value(1.0 - 1e-9))
    pos = bool(np.all(d > 0))
    k = len(d)
    inf = math.inf
    return {
        "j1": k if (pos and start == 0 and not at_one) else inf,
        "rw": k if (pos and start == 0) else inf,
        "m1p": k if pos else inf,
    }


# criterion number -> one summary line, filled in by test_acceptance
ACCEPTANCE_LINES = {}


def record_criterion(num: int, ok: bool, detail: str, seconds: float) -> None:
    line = f"criterion {num:>2}: {'PASS' if ok else 'FAIL'}  {detail}  [{seconds:.1f} s]"
    ACCEPTANCE_LINES[num] = line
    print(line)
