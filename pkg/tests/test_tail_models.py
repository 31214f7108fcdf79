import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.optimize import brentq

from heavytail.tail_models import (
    LIMIT_IDS, REFERENCE, TailParams, q_n, q_n_inverse, r_eval, sample_tail_variable,
    speed, tail, verify_limit,
)

params_st = st.builds(
    TailParams,
    c=st.floats(0.2, 5.0),
    beta=st.floats(-2.0, 0.0),
    lam=st.floats(0.3, 3.0),
    gamma=st.floats(1.1, 3.0),
)


class TestTailParams:
    def test_rejects_bad_parameters(self):
        for kw in ({"c": 0.0}, {"lam": -1.0}, {"gamma": 1.0}, {"beta": 0.5}):
            with pytest.raises(ValueError):
                TailParams(**kw)

    def test_json_round_trip(self):
        p = TailParams(2.0, -0.5, 1.5, 2.5)
        d = json.loads(p.to_json())
        assert d == {"c": 2.0, "beta": -0.5, "lambda": 1.5, "gamma": 2.5}
        assert TailParams.from_json(p.to_json()) == p

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError):
            TailParams.from_dict({"c": 1, "alpha": 2})


class TestTail:
    def test_examples(self):
        assert tail(REFERENCE, 1.0) == 1.0
        assert tail(REFERENCE, math.e) == pytest.approx(math.exp(-1), rel=1e-12)
        assert tail(TailParams(c=2.0), 1.0) == 2.0

    def test_domain_error(self):
        with pytest.raises(ValueError):
            tail(REFERENCE, 0.5)

    def test_r_eval_examples(self):
        assert r_eval(REFERENCE, 0.0) == 0.0
        assert r_eval(REFERENCE, 3.0) == pytest.approx(9.0)
        # beta < 0 counterpart of the (e, 1, 1, 2) example: 1 + 1 - 1
        assert r_eval(TailParams(math.e, -1.0, 1.0, 2.0), 1.0) == pytest.approx(1.0)

    @given(params_st)
    def test_exp_minus_r_is_tail(self, p):
        x = np.logspace(0, 6, 40)
        expected = p.c * x ** p.beta * np.exp(-p.lam * np.log(x) ** p.gamma)
        got = np.exp(-r_eval(p, np.log(x)))
        ok = expected > 1e-300
        np.testing.assert_allclose(got[ok], expected[ok], rtol=1e-12)
        np.testing.assert_allclose(tail(p, x)[ok], expected[ok], rtol=1e-12)

    @given(params_st, st.lists(st.floats(1.0, 1e6), min_size=2, max_size=20))
    def test_monotone(self, p, xs):
        xs = np.sort(xs)
        t = tail(p, xs)
        assert np.all(np.diff(t) <= 1e-300)
        assert np.all(np.diff(q_n(p, 100, xs)) <= 1e-300)


class TestSpeed:
    def test_examples(self):
        assert speed(REFERENCE, 55) == pytest.approx(math.log(55) ** 2, rel=1e-12)
        assert speed(REFERENCE, 55) == pytest.approx(16.058, abs=1e-3)
        assert speed(REFERENCE, 3) == pytest.approx(1.2069, abs=1e-4)
        assert speed(TailParams(lam=2.0), 3) == pytest.approx(2.4139, abs=1e-4)

    def test_nonpositive_speed_rejected(self):
        with pytest.raises(ValueError):
            speed(TailParams(c=100.0), 2)


class TestQn:
    def test_examples(self):
        assert q_n(REFERENCE, 10, 1.0) == 10.0
        n = math.exp(5)
        assert q_n(REFERENCE, n, math.e) == pytest.approx(n / math.e, rel=1e-12)
        assert q_n(REFERENCE, 148, math.e) == pytest.approx(54.45, abs=0.01)
        x = brentq(lambda s: tail(REFERENCE, s) - 0.01, 1.0, 1e3)
        assert q_n(REFERENCE, 100, x) == pytest.approx(1.0, rel=1e-9)

    def test_inverse_closed_form(self):
        n = math.ceil(math.e ** 4)
        expected = math.exp(math.sqrt(math.log(n)))
        assert q_n_inverse(REFERENCE, n, 1.0) == pytest.approx(expected, rel=1e-9)
        assert q_n_inverse(REFERENCE, n, 1.0) == pytest.approx(7.40, abs=0.01)

    def test_inverse_boundary_and_clamp(self):
        p = TailParams(1.5, -0.3, 0.8, 2.2)
        assert q_n_inverse(p, 40, q_n(p, 40, 1.0)) == pytest.approx(1.0)
        assert q_n_inverse(p, 40, 10 * q_n(p, 40, 1.0)) == 1.0

    def test_inverse_bisection_matches_root_finder(self):
        p = TailParams(1.0, -0.5, 1.0, 2.0)
        v = q_n_inverse(p, 1000, 2.0)
        oracle = brentq(lambda s: q_n(p, 1000, s) - 2.0, 1.0, 1e6, xtol=1e-14, rtol=1e-15)
        assert abs(q_n(p, 1000, v) - 2.0) <= 1e-9 * 2
        assert v == pytest.approx(oracle, rel=1e-10)

    def test_inverse_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            q_n_inverse(REFERENCE, 10, 0.0)

    @given(params_st, st.floats(1e-8, 0.99))
    def test_closed_form_vs_bisection_beta0(self, p, frac):
        p0 = TailParams(p.c, 0.0, p.lam, p.gamma)
        n = 500
        y = frac * q_n(p0, n, 1.0)
        closed = math.exp((math.log(p0.c * n / y) / p0.lam) ** (1 / p0.gamma))
        assert q_n_inverse(p0, n, y) == pytest.approx(closed, rel=1e-9)
        # bisection path: a vanishing negative beta forces the generic branch
        pb = TailParams(p.c, -1e-13, p.lam, p.gamma)
        assert q_n_inverse(pb, n, y) == pytest.approx(closed, rel=1e-9)

    @given(params_st, st.floats(1e-6, 0.999))
    def test_galois(self, p, frac):
        n = 200
        y = frac * q_n(p, n, 1.0)
        x = q_n_inverse(p, n, y)
        assert q_n(p, n, x) <= y * (1 + 1e-9)
        assert q_n(p, n, max(1.0, x * (1 - 1e-6))) >= y

    @given(params_st, st.lists(st.floats(1e-6, 1e3), min_size=2, max_size=15))
    def test_inverse_monotone(self, p, ys):
        ys = np.sort(ys)
        x = q_n_inverse(p, 100, ys)
        assert np.all(np.diff(x) <= 1e-12 * x[:-1])


class TestSampling:
    def test_tail_frequency(self):
        z = sample_tail_variable(REFERENCE, np.random.default_rng(3), 10**6)
        p = math.exp(-1)
        hat = np.mean(z >= math.e)
        assert abs(hat - p) < 3 * math.sqrt(p * (1 - p) / 10**6)
        assert z.min() >= 1.0

    def test_deterministic(self):
        a = sample_tail_variable(REFERENCE, np.random.default_rng(9), 50)
        b = sample_tail_variable(REFERENCE, np.random.default_rng(9), 50)
        assert np.array_equal(a, b)

    def test_normalised_by_tail_at_one(self):
        p = TailParams(c=3.0)
        z = sample_tail_variable(p, np.random.default_rng(4), 200_000)
        assert abs(np.mean(z >= math.e) - math.exp(-1)) < 0.005


class TestLimits:
    def test_limit3_example(self):
        rep = verify_limit("limit3", n_grid=[1e8])
        assert rep.values[0] == pytest.approx(1 / math.log(1e8) - 1, rel=1e-12)
        assert rep.values[0] == pytest.approx(-0.9457, abs=1e-4)

    def test_limit1_example(self):
        rep = verify_limit("limit1", n_grid=[math.exp(5)])
        assert rep.values[0] == pytest.approx(math.exp(-20), rel=1e-10)
        assert rep.target == 0

    def test_limit5_example(self):
        n = 1e8
        q = n * math.exp(-math.log(n) ** 2)
        rep = verify_limit("limit5", aux={"i": 1, "c": 1}, n_grid=[n])
        assert rep.values[0] == pytest.approx(math.log(-math.expm1(-q)) / math.log(n) ** 2, rel=1e-9)
        assert rep.values[0] == pytest.approx(-0.946, abs=1e-3)

    @pytest.mark.parametrize("lid", LIMIT_IDS)
    def test_errors_decrease(self, lid):
        rep = verify_limit(lid)
        assert len(rep.values) == len(rep.n_grid)
        e = rep.errors
        assert all(b <= a + 1e-15 for a, b in zip(e, e[1:]))
        assert rep.max_abs_error_at_largest_n < 0.1

    def test_malformed_aux(self):
        with pytest.raises(ValueError):
            verify_limit("limit4", aux={"x1": 3.0, "x2": 2.0})
        with pytest.raises(ValueError):
            verify_limit("limit7", aux={"x1": 3.0, "x2": 3.0})
        with pytest.raises(ValueError):
            verify_limit("limit5", aux={"bogus": 1})
        with pytest.raises(ValueError):
            verify_limit("limit10")

    def test_csv(self):
        rep = verify_limit("limit2", n_grid=[100, 1000])
        lines = rep.to_csv().strip().splitlines()
        assert lines[0] == "n,value,target" and len(lines) == 3
