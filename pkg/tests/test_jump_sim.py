import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, stats
from scipy.special import erf

from heavytail import jump_sim as js
from heavytail.cadlag import j1_distance
from heavytail.special import ks_two_sample_pvalue
from heavytail.tail_models import REFERENCE, TailParams, q_n
from helpers import erlang_cdf_oracle

CFG = js.LevyConfig()
MU1 = 1 + math.exp(0.25) * math.sqrt(math.pi) / 2 * (1 + erf(0.5))


def binom_ok(hits, trials, p, z=3.3):
    return abs(hits / trials - p) <= z * math.sqrt(p * (1 - p) / trials) + 1e-12


class TestConfig:
    def test_moments(self):
        m = js.moments(CFG)
        assert m.nu1 == 1.0
        assert m.mu1 == pytest.approx(MU1, rel=1e-8)
        assert m.mu1 == pytest.approx(2.7302, abs=1e-4)
        m2 = js.moments(js.LevyConfig(TailParams(c=2.0)))
        assert m2.nu1 == 2.0 and m2.mu1 == pytest.approx(MU1, rel=1e-8)

    def test_second_moment_by_quadrature(self):
        p = TailParams(1.0, -0.5, 1.3, 2.0)
        # E Z^2 = 1 + int_1^inf 2x P(Z >= x) dx
        val, _ = integrate.quad(lambda x: 2 * x * math.exp(-0.5 * math.log(x) - 1.3 * math.log(x) ** 2),
                                1, np.inf)
        assert js.moments(p).second == pytest.approx(1 + val, rel=1e-7)

    def test_round_trip(self):
        cfg = js.LevyConfig(TailParams(2.0, -0.1, 1.0, 2.5), a=0.3, b=1.0,
                            small_jump=js.SmallJumpSpec(2.0, 0.5))
        assert js.LevyConfig.from_dict(cfg.to_dict()) == cfg

    def test_validation(self):
        with pytest.raises(ValueError):
            js.LevyConfig(a=-1.0)
        with pytest.raises(ValueError):
            js.SmallJumpSpec(1.0, 2.5)
        with pytest.raises(ValueError):
            js.SmallJumpSpec(-1.0, 0.5)

    def test_small_jump_sampler_density(self):
        sj = js.SmallJumpSpec(1.0, 0.5)
        x = sj.sample(200_000, np.random.default_rng(0))
        assert x.min() >= sj.cutoff and x.max() <= 1
        # mean under the normalised density on [cutoff, 1]
        assert np.mean(x) == pytest.approx(sj.mean() / sj.mass(), rel=0.02)


class TestCoupling:
    def test_gamma_uniform(self):
        rng = np.random.default_rng(1)
        draws = np.array([js.sample_gamma_uniform(3, rng)[0] for _ in range(20_000)])
        assert np.all(np.diff(draws, axis=1) > 0)
        for i in range(3):
            assert abs(draws[:, i].mean() - (i + 1)) < 3 * math.sqrt((i + 1) / 20_000)
        assert binom_ok(int(np.sum(draws[:, 0] <= 1)), 20_000, 1 - math.exp(-1))

    def test_gamma_uniform_rejects_k0(self):
        with pytest.raises(ValueError):
            js.sample_gamma_uniform(0, np.random.default_rng(0))

    def test_largest_jump_law(self):
        rng = np.random.default_rng(2)
        n, x, trials = 50, 0.1, 5000
        hits = sum(js.sample_j_hat_k(CFG, n, 1, rng).sizes.max(initial=0) >= x for _ in range(trials))
        assert binom_ok(hits, trials, 1 - math.exp(-q_n(REFERENCE, n, n * x)))

    def test_jump_times_uniform(self):
        rng = np.random.default_rng(3)
        t = np.array([js.sample_j_hat_k(CFG, 50, 1, rng).times[0] for _ in range(10_000)])
        ks = stats.kstest(t, "uniform").statistic
        # DKW: P(KS > eps) <= 2 exp(-2 eps^2 n) = 1e-3
        assert ks < math.sqrt(math.log(2 / 1e-3) / (2 * 10_000))

    def test_check_needs_coupling(self):
        with pytest.raises(TypeError):
            js.sample_j_check_k(CFG, 50, 3, np.random.default_rng(0))

    def test_check_zero_when_all_big(self):
        c = js.draw_coupling(CFG, 50, 3, np.random.default_rng(4))
        assert c.n_big >= 3
        assert js.sample_j_check_k(CFG, 50, 3, c).n_jumps == 0

    @settings(max_examples=30)
    @given(st.integers(0, 10**6), st.integers(1, 8))
    def test_hat_plus_check_keeps_big_jumps(self, seed, k):
        cfg = js.LevyConfig(TailParams(c=0.5))
        c = js.draw_coupling(cfg, 4, k, np.random.default_rng(seed))
        jh = js.sample_j_hat_k(cfg, 4, k, c)
        jc = js.sample_j_check_k(cfg, 4, k, c)
        both = np.sort(np.r_[jh.sizes, jc.sizes])
        total = {}
        for t, s in list(jh.jumps) + list(jc.jumps):
            total[t] = total.get(t, 0.0) + s
        kept = sorted(s * 4 for s in total.values() if abs(s) > 1e-15)
        expected = sorted(c.raw_sizes[: min(k, c.n_big)])
        assert np.allclose(kept, expected)
        assert all(s >= 1 for s in kept)
        assert len(both) >= len(kept)

    def test_poisson_lower_tail(self):
        rng = np.random.default_rng(5)
        cfg = js.LevyConfig(TailParams(c=0.02))  # n nu_1 = 1 at n = 50
        trials = 20_000
        hits = sum(js.draw_coupling(cfg, 50, 3, rng).n_big < 3 for _ in range(trials))
        assert binom_ok(hits, trials, stats.poisson.cdf(2, 1.0))
        # reference tail at n = 50: P(N < 3) is below 1e-18
        assert stats.poisson.cdf(2, 50.0) < 1e-18

    def test_rank_partition_exact(self):
        rng = np.random.default_rng(6)
        for k in (0, 2, 5):
            c = js.draw_coupling(CFG, 20, k, rng)
            hb = js.sample_h_bar_k(CFG, 20, k, c)
            mu1 = js.moments(CFG).mu1
            kept = hb.sizes * 20 + mu1
            nz = np.sort(kept[np.abs(kept) > 1e-9])
            z = np.sort(c.raw_sizes[: c.n_big])
            assert np.allclose(nz, z[: max(0, len(z) - k)])


class TestHBar:
    def test_all_removed_is_counting_drift(self):
        c = js.draw_coupling(CFG, 10, 200, np.random.default_rng(7))
        hb = js.sample_h_bar_k(CFG, 10, 200, c)
        t = np.linspace(0, 1, 101)
        mu1 = js.moments(CFG).mu1
        assert np.allclose(hb.value(t), -mu1 * c.count_process(t) / 10)

    def test_centred_at_k0(self):
        rng = np.random.default_rng(8)
        v = np.array([js.sample_h_bar_k(CFG, 20, 0, js.draw_coupling(CFG, 20, 0, rng)).value(1.0)
                      for _ in range(20_000)])
        # Hbar^{<=0}(1) = (1/n) sum_{i <= N(n)} (Z_i - mu1) has mean zero
        assert abs(v.mean()) < 3.5 * v.std() / math.sqrt(len(v))

    def test_tail_shrinks_with_k(self):
        rng = np.random.default_rng(9)
        t = np.linspace(0, 1, 257)
        sups = {0: [], 2: [], 5: []}
        for _ in range(3000):
            c = js.draw_coupling(CFG, 30, 5, rng)
            for k in sups:
                sups[k].append(np.max(js.sample_h_bar_k(CFG, 30, k, c).value(t)))
        freq = [np.mean(np.array(sups[k]) > 0.3) for k in (0, 2, 5)]
        assert freq[0] > freq[1] >= freq[2]


class TestRBar:
    def test_mean_zero_and_variance_scaling(self):
        rng = np.random.default_rng(10)
        v1 = np.array([js.sample_r_bar(CFG, 50, 16, rng).values[-1] for _ in range(40_000)])
        v4 = np.array([js.sample_r_bar(CFG, 200, 16, rng).values[-1] for _ in range(40_000)])
        assert abs(v1.mean()) < 3.5 * v1.std() / math.sqrt(len(v1))
        assert 3 <= v1.var() / v4.var() <= 5

    def test_brownian_sup(self):
        rng = np.random.default_rng(11)
        cfg = js.LevyConfig(a=1.0)
        empty = js.PoissonCoupling(cfg, 10**4, 0, np.empty(0), np.empty(0), 0)
        t = np.arange(257) / 256
        drift = js.moments(cfg).nu1 * js.moments(cfg).mu1 * t
        sups = [np.max(np.abs(js.sample_r_bar(cfg, 10**4, 256, rng, coupling=empty).values + drift))
                for _ in range(2000)]
        assert np.mean(np.array(sups) > 0.1) < 0.01

    def test_resolution_guard(self):
        with pytest.raises(ValueError):
            js.sample_r_bar(CFG, 10, 8, np.random.default_rng(0))

    def test_small_jumps_centred(self):
        rng = np.random.default_rng(12)
        cfg = js.LevyConfig(small_jump=js.SmallJumpSpec(1.0, 0.5))
        v = np.array([js.sample_r_bar(cfg, 20, 16, rng).values[-1] for _ in range(20_000)])
        assert abs(v.mean()) < 3.5 * v.std() / math.sqrt(len(v))


class TestXBar:
    def test_components_sum_exactly(self):
        rng = np.random.default_rng(13)
        cfg = js.LevyConfig(a=0.5, small_jump=js.SmallJumpSpec(1.0, 0.5))
        for k in (0, 1, 3):
            s = js.sample_x_bar(cfg, 40, k, 128, rng)
            total = np.sum(s.component_grids(), axis=0)
            assert np.array_equal(total, s.total.values)
            assert set(s.to_record()) == {"j_hat", "j_check", "h_bar", "r_bar", "total"}

    def test_mean_and_k_invariance(self):
        rng = np.random.default_rng(14)
        a = np.array([js.sample_x_bar(CFG, 30, 2, 16, rng).total.values[-1] for _ in range(10_000)])
        b = np.array([js.sample_x_bar(CFG, 30, 5, 16, rng).total.values[-1] for _ in range(10_000)])
        assert abs(a.mean()) < 3.5 * a.std() / math.sqrt(len(a))
        assert ks_two_sample_pvalue(a, b) > 0.01

    def test_split_matches_direct_compound_poisson(self):
        rng = np.random.default_rng(15)
        n, trials = 30, 10_000
        split = np.array([js.sample_x_bar(CFG, n, 2, 16, rng).total.values[-1] for _ in range(trials)])
        direct = js.sample_levy_batch(CFG, n, trials, rng).value_at(1.0)
        assert ks_two_sample_pvalue(split, direct) > 0.01

    def test_deterministic(self):
        a = js.sample_x_bar(CFG, 40, 3, 64, np.random.default_rng(99))
        b = js.sample_x_bar(CFG, 40, 3, 64, np.random.default_rng(99))
        assert np.array_equal(a.total.values, b.total.values)


class TestRandomWalk:
    def test_w_bar_times(self):
        w = js.sample_w_bar(25, REFERENCE, np.random.default_rng(0))
        assert np.allclose(w.times, np.arange(1, 26) / 25)

    def test_w_s_equal_in_law(self):
        rng = np.random.default_rng(16)
        w = [js.sample_w_bar(20, REFERENCE, rng).value(1.0) for _ in range(10_000)]
        s = [js.sample_s_bar(20, REFERENCE, rng).value(1.0) for _ in range(10_000)]
        assert ks_two_sample_pvalue(np.array(w), np.array(s)) > 0.01

    def test_coupled_j1_bound(self):
        rng = np.random.default_rng(17)
        for _ in range(20):
            w, s, gap = js.sample_w_s_coupled(8, REFERENCE, rng)
            assert j1_distance(w, s) <= gap + 1e-5

    def test_w_bar_rejects_small_n(self):
        with pytest.raises(ValueError):
            js.sample_w_bar(1, REFERENCE, np.random.default_rng(0))


class TestKJump:
    def test_levy_size2_erlang(self):
        rng = np.random.default_rng(18)
        n, x, trials = 50, 0.1, 20_000
        v = js.sample_k_jump_batch(REFERENCE, n, 2, trials, rng)
        p = erlang_cdf_oracle(2, q_n(REFERENCE, n, n * x))
        assert binom_ok(int(np.sum(v[:, 1] >= x)), trials, p)

    def test_rw_beta_moments(self):
        rng = np.random.default_rng(19)
        n, k = 30, 3
        v = js.rw_uniform_order_stats(n, k, rng, trials=50_000)
        for i in range(k):
            a, b = i + 1, n - i - 1
            assert abs(v[:, i].mean() - a / (a + b)) < 4 * math.sqrt(a * b / ((a + b) ** 2 * (a + b + 1)) / 50_000)

    def test_single_vectors(self):
        rng = np.random.default_rng(20)
        for kind in ("levy", "rw"):
            jv = js.sample_k_jump_sizes(REFERENCE, 40, 4, rng, kind=kind)
            assert jv.k == 4 and np.all(np.diff(jv.sizes) <= 0)
        with pytest.raises(ValueError):
            js.sample_k_jump_sizes(REFERENCE, 3, 5, rng, kind="rw")

    @settings(max_examples=20)
    @given(st.integers(0, 10**6), st.sampled_from(["levy", "rw"]))
    def test_sizes_nonincreasing(self, seed, kind):
        v = js.sample_k_jump_batch(REFERENCE, 100, 5, 50, np.random.default_rng(seed), kind=kind)
        assert np.all(np.diff(v, axis=1) <= 0)


class TestBatches:
    def test_batch_sup_and_top(self):
        b = js.JumpBatch(10, 2, np.array([0, 0, 1]), np.array([1.0, 2.0, 0.5]),
                         np.array([0.5, 0.2, 0.9]), drift=1.0)
        assert np.allclose(b.value_at(1.0), [2.0, -0.5])
        assert np.allclose(b.sup(), [3.0 - 0.5, 0.0])
        assert np.allclose(b.top(2), [[2.0, 1.0], [0.5, 0.0]])
        assert np.allclose(b.max_jump(), [2.0, 0.5])

    def test_conditioned_batch_respects_condition(self):
        rng = np.random.default_rng(21)
        q = 3.0
        b = js.sample_levy_batch_conditioned(CFG, 40, 2000, rng, j=2, q=q)
        from heavytail.tail_models import q_n_inverse
        thr = q_n_inverse(REFERENCE, 40, q) / 40
        assert np.all(b.top(2)[:, 1] >= thr * (1 - 1e-12))

    def test_not_batchable(self):
        with pytest.raises(NotImplementedError):
            js.sample_levy_batch(js.LevyConfig(a=1.0), 10, 5, np.random.default_rng(0))
