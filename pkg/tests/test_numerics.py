import math

import numpy as np
import pytest
from scipy import stats

from semieff.errors import DomainError, QuadratureError, SingularMatrixError
from semieff.numerics import (
    QuantileFn,
    RngStream,
    empirical_quantile,
    integrate,
    is_spd,
    kde_score,
    kde_with_derivative,
    solve_spd,
)


def brute_force_quantile(sample, u):
    """Independent oracle: scan the sorted sample for inf{x : F_n(x) >= u}."""
    xs = sorted(sample)
    n = len(xs)
    for x in xs:
        if sum(1 for v in xs if v <= x) / n >= u:
            return x
    return xs[-1]


class TestEmpiricalQuantile:
    def test_middle_order_statistic(self):
        assert empirical_quantile([3, 1, 2], 0.5) == 2

    def test_second_order_statistic(self):
        # ceil(3 * 0.34) = 2; cross-checked by the brute-force scan
        assert empirical_quantile([3, 1, 2], 0.34) == brute_force_quantile([3, 1, 2], 0.34)
        assert empirical_quantile([3, 1, 2], 0.34) == 2

    def test_single_point(self):
        assert empirical_quantile([5], 0.99) == 5

    def test_empty_sample_rejected(self):
        with pytest.raises(DomainError):
            empirical_quantile([], 0.5)

    @pytest.mark.parametrize("u", [0.0, 1.0, -0.2, 1.3])
    def test_u_outside_unit_interval_rejected(self, u):
        with pytest.raises(DomainError):
            empirical_quantile([1.0, 2.0], u)

    def test_matches_brute_force_on_random_samples(self):
        gen = RngStream(101).generator()
        for trial in range(20):
            sample = gen.standard_normal(gen.integers(1, 40))
            for u in [0.01, 0.2, 1 / 3, 0.5, 0.6180339887, 0.9, 0.999]:
                assert empirical_quantile(sample, u) == brute_force_quantile(sample, u)


class TestQuantileFn:
    def test_from_sample_is_left_continuous_inverse(self):
        q = QuantileFn.from_sample([3, 1, 2])
        assert q(0.34) == 2 and q(1 / 3) == 1 and q(0.99) == 3

    def test_monotone_on_grid(self):
        q = QuantileFn.from_sample(RngStream(7).generator().standard_normal(500))
        assert q.monotone_on(np.linspace(0.01, 0.99, 200))

    def test_composition_with_uniforms_reproduces_sample_law(self):
        # empirical_quantile(sample, U_i) should have the sample's ECDF
        gen = RngStream(11).generator()
        sample = gen.standard_normal(10_000)
        q = QuantileFn.from_sample(sample)
        u = RngStream(12).generator().uniform(size=10_000)
        ks = stats.ks_2samp(q(u), sample).statistic
        assert ks < 0.02


class TestIntegrate:
    def test_linear(self):
        assert integrate(lambda x: x, 0.0, 1.0, 1e-10) == pytest.approx(0.5, abs=1e-10)

    def test_integrable_endpoint_singularity(self):
        assert integrate(lambda x: 1.0 / math.sqrt(x), 0.0, 1.0, 1e-8) == pytest.approx(
            2.0, abs=1e-8
        )

    def test_normal_quantile_tail_integral(self):
        # identity: int_{1/2}^1 Phi^{-1} = phi(0); independent oracle below
        val = integrate(stats.norm.ppf, 0.5, 1.0, 1e-9)
        ts = np.linspace(0.5, 1.0 - 1e-9, 2_000_001)
        mids = 0.5 * (ts[1:] + ts[:-1])
        riemann = float(np.sum(stats.norm.ppf(mids)) * (ts[1] - ts[0]))
        assert val == pytest.approx(riemann, abs=2e-6)
        assert val == pytest.approx(0.3989422804014327, abs=1e-8)

    def test_additive_over_subintervals(self):
        tol = 1e-9
        for f in (np.exp, lambda x: 1.0 / np.sqrt(np.abs(x) + 1e-30)):
            whole = integrate(f, 0.0, 2.0, tol)
            parts = integrate(f, 0.0, 0.7, tol) + integrate(f, 0.7, 2.0, tol)
            assert abs(whole - parts) <= 2 * tol

    def test_bad_interval_rejected(self):
        with pytest.raises(DomainError):
            integrate(lambda x: x, 1.0, 0.0, 1e-8)

    def test_nonconvergence_carries_best_estimate(self):
        with pytest.raises(QuadratureError) as err:
            integrate(lambda x: math.sin(1.0 / max(x, 1e-300)), 0.0, 1.0, 1e-14)
        assert np.isfinite(err.value.estimate)
        assert err.value.error_bound > 1e-14


class TestSolveSpd:
    def test_identity(self):
        assert np.allclose(solve_spd(np.eye(2), [3, 4]), [3, 4])

    def test_two_by_two_hand_inverted(self):
        a = np.array([[2.0, 1.0], [1.0, 1.0]])
        x = solve_spd(a, [1.0, 0.0])
        assert np.allclose(x, [1.0, -1.0], atol=1e-12)
        assert np.allclose(a @ x, [1.0, 0.0], atol=1e-12)  # multiply-back oracle

    def test_diagonal(self):
        assert np.allclose(solve_spd(np.diag([1.0, 2.0]), [0, 2]), [0, 1])

    def test_non_spd_rejected(self):
        with pytest.raises(SingularMatrixError):
            solve_spd(np.array([[1.0, 2.0], [2.0, 1.0]]), [1.0, 1.0])

    def test_random_spd_multiply_back(self):
        gen = RngStream(42).generator()
        for _ in range(100):
            k = int(gen.integers(1, 7))
            m = gen.standard_normal((k, k))
            a = m @ m.T + k * np.eye(k)
            b = gen.standard_normal(k)
            x = solve_spd(a, b)
            resid = np.linalg.norm(a @ x - b)
            assert resid <= 1e-9 * (np.linalg.norm(a) * np.linalg.norm(x) + np.linalg.norm(b))

    def test_is_spd(self):
        assert is_spd(np.diag([1.0, 2.0]))
        assert not is_spd(np.array([[1.0, 0.1], [0.0, 1.0]]))  # asymmetric


class TestKde:
    def test_symmetric_sample_has_zero_derivative_at_center(self):
        _, deriv = kde_with_derivative([-1.0, 1.0], 1.0, 0.0)
        assert deriv == pytest.approx(0.0, abs=1e-15)

    def test_sample_too_small_rejected(self):
        with pytest.raises(DomainError):
            kde_with_derivative([0.0], 1.0, 0.0)

    def test_consistency_at_the_normal_mode(self):
        n = 10_000
        draws = RngStream(5).generator().standard_normal(n)
        dens, _ = kde_with_derivative(draws, n ** (-0.2), 0.0)
        assert abs(dens - 0.3989422804014327) < 0.05

    def test_derivative_matches_finite_difference(self):
        draws = RngStream(6).generator().standard_normal(200)
        h, x, step = 0.4, 0.37, 1e-6
        _, deriv = kde_with_derivative(draws, h, x)
        up, _ = kde_with_derivative(draws, h, x + step)
        dn, _ = kde_with_derivative(draws, h, x - step)
        assert deriv == pytest.approx((up - dn) / (2 * step), abs=1e-6)

    def test_density_positive_on_wide_range(self):
        draws = RngStream(8).generator().standard_normal(100)
        dens, deriv = kde_with_derivative(draws, 0.5, np.linspace(-8, 8, 41))
        assert np.all(dens > 0) and np.all(np.isfinite(deriv))

    def test_score_equals_ratio(self):
        draws = RngStream(9).generator().standard_normal(300)
        xs = np.linspace(-2, 2, 9)
        dens, deriv = kde_with_derivative(draws, 0.3, xs)
        assert np.allclose(kde_score(draws, 0.3, xs), -deriv / dens, atol=1e-10)


class TestRngStream:
    def test_bit_identical_reproduction(self):
        a = RngStream(123, 7).generator().standard_normal(64)
        b = RngStream(123, 7).generator().standard_normal(64)
        assert np.array_equal(a, b)

    def test_distinct_streams_differ(self):
        a = RngStream(123, 7).generator().standard_normal(64)
        b = RngStream(123, 8).generator().standard_normal(64)
        assert not np.array_equal(a, b)

    def test_substream_deterministic_and_distinct(self):
        s = RngStream(99)
        assert s.substream(3, 4) == s.substream(3, 4)
        assert s.substream(3, 4) != s.substream(4, 3)

    def test_worker_count_invariance(self):
        # drawing rep r from substream(r) cannot depend on execution order
        s = RngStream(1000)
        seq = [s.substream(r).generator().standard_normal() for r in range(8)]
        rev = [s.substream(r).generator().standard_normal() for r in reversed(range(8))]
        assert np.allclose(seq, rev[::-1])
