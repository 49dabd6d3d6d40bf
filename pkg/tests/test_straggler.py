import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bcgc.straggler import (
    FixedTimes,
    ShiftedExponential,
    exponential_integral,
    harmonic_means_formula,
    harmonic_means_quadrature,
    harmonic_numbers,
    monte_carlo_order_stats,
    order_stat_harmonic_means,
    order_stat_means,
    sample_draw,
    summarize,
)

# Reference values from mpmath at 30 digits.
EI_REFERENCE = {
    -0.01: -4.03792957653811381117712962355,
    -1.0: -0.21938393439552027367716377546,
    -6.0: -0.000360082452162658659295394115772,
    -6.5: -0.000203429866839398197373833315921,
    -10.0: -4.15696892968532427740285981028e-6,
    -50.0: -3.78326402955045901869896785402e-24,
}

# 1/E[1/T_(n)] by adaptive mpmath quadrature of the order-statistic density.
HARMONIC_REFERENCE = {
    (4, 0.5, 2.0): [2.4231186857573855, 2.9901754008319834, 3.8308199920638018, 5.4190507202073226],
    (3, 1e-3, 50.0): [195.90998151998426, 532.17391160213703, 1250.2798611567651],
}


class TestDistributions:
    def test_rejects_bad_parameters(self):
        with pytest.raises(ValueError):
            ShiftedExponential(0.0, 1.0)
        with pytest.raises(ValueError):
            ShiftedExponential(1.0, -1.0)
        with pytest.raises(ValueError):
            FixedTimes([1.0, -2.0])

    def test_samples_respect_shift_and_shape(self):
        d = ShiftedExponential(2.0, 3.0)
        rng = np.random.default_rng(1)
        one = d.sample(rng, 5)
        many = d.sample(rng, 5, 1000)
        assert one.shape == (5,) and many.shape == (1000, 5)
        assert many.min() >= 3.0
        assert abs(many.mean() - d.mean) < 0.05

    def test_fixed_times_tile(self):
        d = FixedTimes([1.0, 2.0, 3.0])
        assert np.array_equal(d.sample(None, 3, 2), [[1, 2, 3], [1, 2, 3]])
        with pytest.raises(ValueError):
            d.sample(None, 4)

    def test_sample_draw_is_one_vector(self):
        T = sample_draw(ShiftedExponential(1.0), 4, np.random.default_rng(0))
        assert T.shape == (4,)


class TestOrderStatMeans:
    def test_single_worker(self):
        assert order_stat_means(ShiftedExponential(2.0, 1.0), 1)[0] == pytest.approx(1.5, abs=1e-15)

    def test_four_workers(self):
        t = order_stat_means(ShiftedExponential(1.0, 50.0), 4)
        assert t[-1] == pytest.approx(50 + 25 / 12, rel=1e-15)

    def test_harmonic_numbers(self):
        H = harmonic_numbers(4)
        assert H[0] == 0 and H[-1] == pytest.approx(25 / 12)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(1, 60), st.floats(1e-4, 10), st.floats(0, 100))
    def test_nondecreasing_and_above_shift(self, N, mu, t0):
        t = order_stat_means(ShiftedExponential(mu, t0), N)
        assert t.shape == (N,)
        assert np.all(np.diff(t) >= 0)
        assert np.all(t >= t0)

    def test_matches_monte_carlo(self):
        d = ShiftedExponential(1e-3, 50.0)
        N = 6
        draws = np.sort(d.sample(np.random.default_rng(7), N, 200_000), axis=1)
        se = draws.std(axis=0, ddof=1) / math.sqrt(draws.shape[0])
        assert np.all(np.abs(draws.mean(axis=0) - order_stat_means(d, N)) < 3 * se)


class TestExponentialIntegral:
    @pytest.mark.parametrize("x,ref", sorted(EI_REFERENCE.items()))
    def test_reference_values(self, x, ref):
        assert exponential_integral(x) == pytest.approx(ref, rel=1e-11)

    def test_deep_tail_underflows_to_zero(self):
        assert exponential_integral(-800.0) == 0.0

    def test_rejects_nonnegative(self):
        with pytest.raises(ValueError):
            exponential_integral(0.0)

    @settings(max_examples=60, deadline=None)
    @given(st.floats(-40.0, -1e-3))
    def test_against_scipy(self, x):
        from scipy.special import expi

        assert exponential_integral(x) == pytest.approx(expi(x), rel=1e-10)


class TestHarmonicMeans:
    def test_single_worker_closed_form(self):
        d = ShiftedExponential(1.0, 1.0)
        for method in ("formula", "quadrature"):
            assert order_stat_harmonic_means(d, 1, method)[0] == pytest.approx(1.676875028178701, rel=1e-10)

    @pytest.mark.parametrize("key", sorted(HARMONIC_REFERENCE))
    @pytest.mark.parametrize("method", ["formula", "quadrature"])
    def test_against_reference(self, key, method):
        N, mu, t0 = key
        got = order_stat_harmonic_means(ShiftedExponential(mu, t0), N, method)
        np.testing.assert_allclose(got, HARMONIC_REFERENCE[key], rtol=1e-9)

    def test_formula_matches_quadrature(self):
        # The alternating sum loses digits to cancellation as N grows; ~1e-6 at N=20.
        for N in (2, 7, 12, 16):
            for a in (0.05, 1.0, 10.0):
                d = ShiftedExponential(a / 50, 50.0)
                np.testing.assert_allclose(harmonic_means_formula(d, N), harmonic_means_quadrature(d, N), rtol=1e-6)

    def test_bounded_by_shift_and_mean(self):
        d = ShiftedExponential(1e-3, 50.0)
        tp = harmonic_means_quadrature(d, 10)
        t = order_stat_means(d, 10)
        assert np.all(tp >= 50.0)
        assert np.all(tp <= t)
        assert np.all(np.diff(tp) > 0)

    def test_needs_shift(self):
        with pytest.raises(ValueError):
            harmonic_means_quadrature(ShiftedExponential(1.0, 0.0), 3)
        with pytest.raises(ValueError):
            order_stat_harmonic_means(ShiftedExponential(1.0, 1.0), 3, "magic")

    def test_monte_carlo_within_half_percent(self):
        d = ShiftedExponential(1e-3, 50.0)
        mc = monte_carlo_order_stats(d, 5, 1_000_000, np.random.default_rng(3))
        np.testing.assert_allclose(mc.t_harmonic, harmonic_means_quadrature(d, 5), rtol=5e-3)
        np.testing.assert_allclose(mc.t_mean, order_stat_means(d, 5), rtol=5e-3)


class TestSummarize:
    def test_analytic_for_shifted_exponential(self):
        d = ShiftedExponential(1.0, 2.0)
        s = summarize(d, 4)
        np.testing.assert_array_equal(s.t_mean, order_stat_means(d, 4))

    def test_fixed_times_are_sorted_values(self):
        s = summarize(FixedTimes([3.0, 1.0, 2.0]), 3)
        np.testing.assert_array_equal(s.t_mean, [1, 2, 3])
        np.testing.assert_array_equal(s.t_harmonic, [1, 2, 3])

    def test_unshifted_has_no_harmonic_means(self):
        assert np.all(np.isnan(summarize(ShiftedExponential(1.0), 3).t_harmonic))
