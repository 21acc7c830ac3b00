import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from enspost.errors import (
    DegenerateVariance,
    GridMismatch,
    InvalidAlpha,
    LengthMismatch,
    TooFewSamples,
    ZeroError,
)
from enspost.scoring import GaussianForecast
from enspost.verification import (
    bh_procedure,
    chi_square_uniform,
    dm_p_value,
    dm_test,
    mean_crps_by_station,
    pairwise_significance_matrix,
    pit_histogram,
    pit_values,
    rank_histogram,
    ranks,
    spread_error_ratio,
)


class TestRankHistogram:
    def test_extremes(self):
        ens = np.arange(5, dtype=float)[None, :]
        assert ranks(ens, [-1.0])[0] == 1
        assert ranks(ens, [9.0])[0] == 6

    def test_bins_and_counts(self):
        rng = np.random.default_rng(0)
        h = rank_histogram(rng.normal(size=(100, 4)), rng.normal(size=100))
        assert h.K == 5 and h.counts.sum() == 100 and h.kind == "rank"

    def test_ties_spread_uniformly(self):
        m, n = 5, 100_000
        h = rank_histogram(np.zeros((n, m)), np.zeros(n), seed=3)
        p = 1 / (m + 1)
        se = math.sqrt(p * (1 - p) / n)
        assert np.all(np.abs(h.frequencies - p) <= 3 * se)

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            rank_histogram(np.zeros((3, 2)), np.zeros(4))

    def test_permutation_invariance(self):
        rng = np.random.default_rng(1)
        ens, y = rng.normal(size=(200, 6)), rng.normal(size=200)
        perm = rng.permutation(200)
        assert np.array_equal(rank_histogram(ens, y).counts, rank_histogram(ens[perm], y[perm]).counts)


class TestPit:
    def test_median(self):
        assert pit_values([GaussianForecast(0.0, 1.0)], [0.0])[0] == 0.5

    def test_calibrated_simulation_is_uniform(self):
        rng = np.random.default_rng(2)
        n, K = 10_000, 20
        mu, sigma = rng.normal(size=n), rng.uniform(0.5, 2, n)
        h = pit_histogram((mu, sigma), rng.normal(mu, sigma), K)
        assert h.chi2 < stats.chi2.ppf(0.99, K - 1)

    def test_far_observations_fill_last_bin(self):
        h = pit_histogram(np.zeros(50), np.full(50, 10.0), 20, sigma=np.ones(50))
        assert h.counts[-1] == 50 and h.counts.sum() == 50

    def test_length_mismatch(self):
        with pytest.raises(LengthMismatch):
            pit_histogram(np.zeros(3), np.zeros(4), sigma=np.ones(3))

    def test_chi_square_of_flat_histogram(self):
        assert chi_square_uniform([5, 5, 5, 5]) == 0.0
        assert chi_square_uniform([8, 0]) == pytest.approx(8.0)


class TestSpreadError:
    def test_construction(self):
        err = np.array([1.0, -1.0, 1.0, -1.0])
        assert spread_error_ratio(np.ones(4), err, np.zeros(4)) == pytest.approx(1.0)
        assert spread_error_ratio(0.5 * np.ones(4), err, np.zeros(4)) == pytest.approx(0.5)

    def test_calibrated_simulation(self):
        rng = np.random.default_rng(3)
        sigma = rng.uniform(0.5, 1.5, 10_000)
        y = rng.normal(0, sigma)
        assert 0.9 <= spread_error_ratio(sigma, np.zeros_like(y), y) <= 1.1

    def test_zero_error(self):
        with pytest.raises(ZeroError):
            spread_error_ratio([1.0, 1.0], [2.0, 3.0], [2.0, 3.0])


class TestStationMeans:
    def test_single_station(self):
        assert mean_crps_by_station([1.0, 2.0, 3.0], [0, 0, 0]).overall == 2.0

    def test_overall_is_sample_weighted(self):
        r = mean_crps_by_station([1.0, 1.0, 1.0, 5.0], ["a", "a", "a", "b"])
        assert list(r.means) == [1.0, 5.0]
        assert r.overall == 2.0
        assert list(r.counts) == [3, 1]

    def test_constant(self):
        assert mean_crps_by_station(np.full(7, 0.3), np.arange(7) % 2).overall == pytest.approx(0.3)


class TestDm:
    def test_identical_series_are_degenerate(self):
        with pytest.raises(DegenerateVariance) as info:
            dm_test(np.ones(10), np.ones(10))
        assert info.value.mean_difference == 0.0

    def test_constant_difference_reports_mean(self):
        b = np.random.default_rng(0).uniform(size=50)
        with pytest.raises(DegenerateVariance) as info:
            dm_test(b + 0.5, b)
        assert info.value.mean_difference == pytest.approx(0.5)
        assert dm_p_value(b, b + 0.5) == 0.0 and dm_p_value(b + 0.5, b) == 1.0 and dm_p_value(b, b) == 1.0

    def test_antisymmetry(self):
        rng = np.random.default_rng(4)
        a, b = rng.normal(size=100), rng.normal(size=100)
        r1, r2 = dm_test(a, b), dm_test(b, a)
        assert r1.t_n == -r2.t_n and r1.sigma_hat == r2.sigma_hat and r1.n == r2.n
        assert r1.p_value + r2.p_value == pytest.approx(1.0)

    def test_hand_computed_statistic(self):
        a = np.array([1.0, 2.0, 4.0, 3.0])
        b = np.zeros(4)
        d = a - a.mean()
        var = (d @ d) / 4 + 2 * (d[1:] @ d[:-1]) / 4
        r = dm_test(a, b, k=2)
        assert r.sigma_hat == pytest.approx(math.sqrt(var))
        assert r.t_n == pytest.approx(2 * 2.5 / math.sqrt(var))
        assert r.p_value == pytest.approx(stats.norm.cdf(r.t_n))

    def test_negative_variance_estimate_is_clipped(self):
        a = np.array([1.0, -1.0] * 10)
        r = dm_test(a, np.zeros(20), k=2)
        assert r.sigma_hat == pytest.approx(1e-6)

    def test_requires_n_at_least_2k(self):
        with pytest.raises(TooFewSamples):
            dm_test([1.0, 2.0, 3.0], [0.0, 0.0, 1.0], k=2)
        with pytest.raises(LengthMismatch):
            dm_test([1.0, 2.0], [1.0])

    def test_null_pvalues_uniform(self):
        rng = np.random.default_rng(5)
        p = np.array([dm_test(rng.normal(size=366), rng.normal(size=366)).p_value for _ in range(10_000)])
        assert stats.kstest(p, "uniform").statistic < 0.02


class TestBh:
    def test_hand_example(self):
        r = bh_procedure([0.01, 0.02, 0.04], 0.05)
        assert r.threshold == 0.04 and r.rejected.all()

    def test_no_rejections(self):
        r = bh_procedure([0.9, 0.95], 0.05)
        assert r.threshold == 0.0 and not r.rejected.any()

    def test_all_zero(self):
        assert bh_procedure([0.0, 0.0, 0.0], 0.05).rejected.all()

    def test_step_up(self):
        # 0.03 > 1/4 * 0.05 but the largest qualifying p(i) = 0.035 <= 3/4 * 0.05 pulls it in
        r = bh_procedure([0.5, 0.03, 0.035, 0.001], 0.05)
        assert list(r.rejected) == [False, True, True, True] and r.threshold == 0.035

    @pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 2.0])
    def test_invalid_alpha(self, alpha):
        with pytest.raises(InvalidAlpha):
            bh_procedure([0.1], alpha)

    @given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.floats(0.001, 0.5), st.floats(0.001, 0.5))
    @settings(max_examples=200, deadline=None)
    def test_monotone_and_bracketed(self, p, a1, a2):
        lo, hi = sorted((a1, a2))
        p = np.array(p)
        r_lo, r_hi = bh_procedure(p, lo), bh_procedure(p, hi)
        assert np.all(r_lo.rejected <= r_hi.rejected)
        assert np.all((p <= lo / len(p)) <= r_lo.rejected)
        assert np.all(r_lo.rejected <= (p <= lo))
        assert r_lo.threshold == 0.0 or r_lo.threshold in p
        assert np.all(p[r_lo.rejected] <= r_lo.threshold)


class TestPairwise:
    def test_self_comparison_is_zero(self):
        rng = np.random.default_rng(6)
        s = rng.uniform(size=300)
        st_ = np.repeat(np.arange(3), 100)
        assert not pairwise_significance_matrix([s, s], st_).any()

    def test_constructed_dominance(self):
        rng = np.random.default_rng(7)
        b = rng.uniform(0.5, 1.5, size=50 * 365)
        st_ = np.repeat(np.arange(50), 365)
        m = pairwise_significance_matrix([b + 0.5, b], st_, 0.05)
        assert m[0, 1] == 0.0 and m[1, 0] == 100.0

    def test_null_rates_small(self):
        st_ = np.repeat(np.arange(20), 200)
        for seed in range(10):
            rng = np.random.default_rng(seed)
            m = pairwise_significance_matrix([rng.normal(size=4000), rng.normal(size=4000)], st_)
            assert m[0, 1] <= 10 and m[1, 0] <= 10
            assert m[0, 1] + m[1, 0] <= 100

    def test_grid_mismatch(self):
        with pytest.raises(GridMismatch):
            pairwise_significance_matrix([np.zeros(10), np.zeros(9)], np.zeros(10))

    def test_dates_order_series(self):
        rng = np.random.default_rng(8)
        a, b = rng.normal(size=60), rng.normal(size=60)
        st_ = np.repeat([0, 1], 30)
        dates = np.tile(np.arange(30), 2)
        perm = rng.permutation(60)
        m1 = pairwise_significance_matrix([a, b], st_, dates=dates)
        m2 = pairwise_significance_matrix([a[perm], b[perm]], st_[perm], dates=dates[perm])
        assert np.array_equal(m1, m2)
