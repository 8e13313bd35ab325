import json
import math

import numpy as np
import pytest

from semieff.errors import DomainError, SingularMatrixError
from semieff.geometry import (
    bound_report,
    correlation_bound,
    efficient_score,
    influence_from_model,
    influence_full,
    influence_restricted,
    linear_regression_influence,
    optimal_direction_b,
    partition,
    semiparametric_influence_symmetric_location,
)
from semieff.models import (
    CovariateLaw,
    LocationFamily,
    cox_parametric_model,
    gaussian_family,
    laplace_family,
    linear_regression_model,
    normal_model,
)
from semieff.numerics import RngStream

COX_THETA = np.array([0.0, 1.0])


def cox_split_scores(cox):
    s1 = lambda obs, th: cox.score(obs, th)[:, :1]
    s2 = lambda obs, th: cox.score(obs, th)[:, 1:]
    return s1, s2


class TestPartition:
    def test_cox_schur_complement(self):
        p = partition(np.array([[2.0, 1.0], [1.0, 1.0]]), 1)
        assert p.i11_2[0, 0] == pytest.approx(1.0)
        assert p.i22_1[0, 0] == pytest.approx(0.5)

    def test_orthogonal_nuisance(self):
        p = partition(np.diag([1.0, 2.0]), 1)
        assert p.i11_2[0, 0] == pytest.approx(1.0)

    def test_identity_three(self):
        p = partition(np.eye(3), 2)
        assert np.allclose(p.i11_2, np.eye(2))

    def test_non_spd_rejected(self):
        with pytest.raises(SingularMatrixError):
            partition(np.array([[1.0, 2.0], [2.0, 1.0]]), 1)

    def test_bad_split_rejected(self):
        with pytest.raises(DomainError):
            partition(np.eye(3), 3)

    def test_block_inverse_identity_on_random_spd(self):
        gen = RngStream(90).generator()
        for _ in range(100):
            k = int(gen.integers(2, 7))
            m = int(gen.integers(1, k))
            a = gen.standard_normal((k, k))
            info = a @ a.T + k * np.eye(k)
            p = partition(info, m)
            assert np.abs(p.block_inverse() @ info - np.eye(k)).max() <= 1e-9


class TestEfficientScore:
    def test_cox_closed_form(self):
        cox = cox_parametric_model()
        p = partition(cox.fisher(COX_THETA), 1)
        star = efficient_score(*cox_split_scores(cox), p)
        obs = cox.sample(COX_THETA, 64, RngStream(91))
        y, z = obs
        manual = (z - 1.0) * (1.0 - np.exp(z * COX_THETA[0]) * COX_THETA[1] * y)
        assert np.allclose(star(obs, COX_THETA).ravel(), manual, atol=1e-12)

    def test_orthogonal_case_is_identity(self):
        nm = normal_model()
        p = partition(nm.fisher([0.0, 1.0]), 1)
        star = efficient_score(
            lambda x, th: nm.score(x, th)[:, :1], lambda x, th: nm.score(x, th)[:, 1:], p
        )
        x = nm.sample(np.array([0.0, 1.0]), 32, RngStream(92))
        assert np.allclose(
            star(x, np.array([0.0, 1.0])), nm.score(x, np.array([0.0, 1.0]))[:, :1]
        )

    def test_mc_covariance_equals_schur_complement(self):
        cox = cox_parametric_model()
        p = partition(cox.fisher(COX_THETA), 1)
        star = efficient_score(*cox_split_scores(cox), p)
        obs = cox.sample(COX_THETA, 100_000, RngStream(93))
        vals = star(obs, COX_THETA).ravel()
        se = (vals**2).std(ddof=1) / math.sqrt(vals.size)
        assert abs((vals**2).mean() - 1.0) <= 3 * se  # Var Z = 1

    def test_mc_orthogonality_to_nuisance_score(self):
        cox = cox_parametric_model()
        p = partition(cox.fisher(COX_THETA), 1)
        _, s2 = cox_split_scores(cox)
        star = efficient_score(*cox_split_scores(cox), p)
        obs = cox.sample(COX_THETA, 100_000, RngStream(94))
        prod = star(obs, COX_THETA).ravel() * s2(obs, COX_THETA).ravel()
        assert abs(prod.mean()) <= 3 * prod.std(ddof=1) / math.sqrt(prod.size)


class TestInfluenceFunctions:
    def test_restricted_cox_formula(self):
        cox = cox_parametric_model(CovariateLaw.normal(1.0, 1.0))
        p = partition(cox.fisher(COX_THETA), 1)
        infl = influence_restricted(cox_split_scores(cox)[0], p)
        obs = cox.sample(COX_THETA, 32, RngStream(95))
        y, z = obs
        manual = 0.5 * z * (1.0 - y)  # 1/EZ^2 = 1/2 at nu=0, lam=1
        assert np.allclose(infl.eval(obs, COX_THETA).ravel(), manual)
        assert infl.bound[0, 0] == pytest.approx(0.5)

    def test_restricted_normal_mean(self):
        nm = normal_model()
        p = partition(nm.fisher([0.2, 1.0]), 1)
        infl = influence_restricted(lambda x, th: nm.score(x, th)[:, :1], p)
        x = nm.sample(np.array([0.2, 1.0]), 16, RngStream(96))
        assert np.allclose(infl.eval(x, np.array([0.2, 1.0])).ravel(), x - 0.2)

    def test_full_model_bounds(self):
        cox = cox_parametric_model(CovariateLaw.normal(1.0, 1.0))
        p = partition(cox.fisher(COX_THETA), 1)
        full = influence_full(*cox_split_scores(cox), p)
        rest = influence_restricted(cox_split_scores(cox)[0], p)
        assert full.bound[0, 0] == pytest.approx(1.0)
        assert rest.bound[0, 0] == pytest.approx(0.5)
        assert full.information_loss[0, 0] == pytest.approx(0.5)

    def test_centered_covariate_gives_equal_bounds(self):
        cox = cox_parametric_model(CovariateLaw.normal(0.0, 1.0))
        p = partition(cox.fisher(COX_THETA), 1)
        full = influence_full(*cox_split_scores(cox), p)
        assert full.information_loss[0, 0] == pytest.approx(0.0, abs=1e-12)

    def test_bivariate_normal_mean_has_no_loss(self):
        # mean and covariance parameters of a bivariate normal are
        # information-orthogonal, so knowing the covariance does not help
        nu = np.zeros(2)
        e1, e2, rho = 1.0, 1.0, 0.3
        cov = np.array([[e1**2, rho * e1 * e2], [rho * e1 * e2, e2**2]])
        cov_inv = np.linalg.inv(cov)
        d_eta1 = np.array([[2 * e1, rho * e2], [rho * e2, 0.0]])
        d_eta2 = np.array([[0.0, rho * e1], [rho * e1, 2 * e2]])
        d_rho = np.array([[0.0, e1 * e2], [e1 * e2, 0.0]])

        gen = RngStream(97).generator()
        x = gen.multivariate_normal(nu, cov, size=200_000)
        centered = x - nu
        scores = np.empty((x.shape[0], 5))
        scores[:, :2] = centered @ cov_inv.T
        for j, dp in enumerate((d_eta1, d_eta2, d_rho)):
            a = cov_inv @ dp @ cov_inv
            scores[:, 2 + j] = 0.5 * (
                np.einsum("ni,ij,nj->n", centered, a, centered) - np.trace(cov_inv @ dp)
            )
        fisher_mc = scores.T @ scores / x.shape[0]
        p = partition(fisher_mc, 2)
        loss = np.linalg.inv(p.i11_2) - np.linalg.inv(p.i11)
        assert np.abs(loss).max() < 2e-3

    def test_influence_from_model_matches_solve(self):
        cox = cox_parametric_model()
        infl = influence_from_model(cox)
        obs = cox.sample(COX_THETA, 16, RngStream(98))
        manual = cox.score(obs, COX_THETA) @ np.linalg.inv(cox.fisher(COX_THETA)).T
        assert np.allclose(infl.eval(obs, COX_THETA), manual, atol=1e-12)

    def test_projection_identity(self):
        # E[(full-influence - I11^{-1} l1) l1'] = 0
        cox = cox_parametric_model()
        p = partition(cox.fisher(COX_THETA), 1)
        s1, s2 = cox_split_scores(cox)
        full = influence_full(s1, s2, p)
        rest = influence_restricted(s1, p)
        obs = cox.sample(COX_THETA, 100_000, RngStream(99))
        gap = (full.eval(obs, COX_THETA) - rest.eval(obs, COX_THETA)).ravel()
        prod = gap * s1(obs, COX_THETA).ravel()
        assert abs(prod.mean()) <= 3 * prod.std(ddof=1) / math.sqrt(prod.size)

    def test_information_loss_is_psd_on_random_inputs(self):
        gen = RngStream(100).generator()
        for _ in range(50):
            k = int(gen.integers(2, 7))
            m = int(gen.integers(1, k))
            a = gen.standard_normal((k, k))
            p = partition(a @ a.T + k * np.eye(k), m)
            loss = np.linalg.inv(p.i11_2) - np.linalg.inv(p.i11)
            assert np.linalg.eigvalsh(0.5 * (loss + loss.T)).min() >= -1e-10


class TestCorrelationBound:
    def test_values(self):
        assert correlation_bound(0.0) == 1.0
        assert correlation_bound(0.6) == pytest.approx(0.4096)

    def test_domain(self):
        with pytest.raises(DomainError):
            correlation_bound(1.0)

    def test_sample_correlation_attains_bound(self):
        rho, n, reps = 0.6, 2000, 600
        cov = np.array([[1.0, rho], [rho, 1.0]])
        gen = RngStream(110).generator()
        rs = np.empty(reps)
        for r in range(reps):
            x = gen.multivariate_normal([0.0, 0.0], cov, size=n)
            rs[r] = np.corrcoef(x[:, 0], x[:, 1])[0, 1]
        assert n * rs.var() == pytest.approx(correlation_bound(rho), rel=0.15)


class TestOptimalDirection:
    def test_identity_case(self):
        b = optimal_direction_b(np.eye(2), np.eye(2), [1.0, 0.0])
        assert np.allclose(b, [1.0, 0.0])

    def test_cox_direction_and_value(self):
        info = np.array([[2.0, 1.0], [1.0, 1.0]])
        q_grad = np.array([[1.0, 0.0]])
        b = optimal_direction_b(info, q_grad, [1.0])
        assert np.allclose(b, [1.0, -1.0])
        attained = float(b @ q_grad.T @ np.array([1.0])) ** 2 / float(b @ info @ b)
        assert attained == pytest.approx(1.0)

    def test_no_other_direction_beats_it(self):
        info = np.array([[2.0, 1.0], [1.0, 1.0]])
        q_grad = np.array([[1.0, 0.0]])
        a = np.array([1.0])
        best = optimal_direction_b(info, q_grad, a)
        opt = float(best @ q_grad.T @ a) ** 2 / float(best @ info @ best)
        gen = RngStream(111).generator()
        for _ in range(200):
            b = gen.standard_normal(2)
            denom = float(b @ info @ b)
            val = float(b @ q_grad.T @ a) ** 2 / denom
            assert val <= opt + 1e-12

    def test_degenerate_target_rejected(self):
        with pytest.raises(DomainError):
            optimal_direction_b(np.eye(2), np.array([[1.0, 0.0]]), [0.0])


class TestSymmetricLocationInfluence:
    def test_normal_case(self):
        infl = semiparametric_influence_symmetric_location(gaussian_family())
        x = np.array([0.5, 2.0, -1.0])
        assert np.allclose(infl.eval(x, [0.3]).ravel(), x - 0.3)
        assert infl.bound[0, 0] == pytest.approx(1.0)
        assert infl.information_loss[0, 0] == 0.0

    def test_laplace_case(self):
        infl = semiparametric_influence_symmetric_location(laplace_family())
        x = np.array([-1.0, 0.7])
        assert np.allclose(infl.eval(x, [0.0]).ravel(), [-1.0, 1.0])
        assert infl.bound[0, 0] == pytest.approx(1.0)

    def test_antisymmetry(self):
        infl = semiparametric_influence_symmetric_location(logistic := gaussian_family())
        nu, t = 0.4, 1.3
        left = infl.eval(np.array([nu - t]), [nu])
        right = infl.eval(np.array([nu + t]), [nu])
        assert np.allclose(left, -right)

    def test_asymmetric_family_rejected(self):
        fake = LocationFamily(
            name="shifted-exp",
            log_density=lambda x: -x,
            score=lambda x: np.ones_like(x),
            fisher_location=1.0,
            sample=lambda stream, n: stream.generator().exponential(1.0, n),
            variance=1.0,
            symmetric=False,
        )
        with pytest.raises(DomainError):
            semiparametric_influence_symmetric_location(fake)


class TestLinearRegressionInfluence:
    def test_mc_covariance_matches_bound(self):
        # the adaptive answer, verified by the covariance identity
        fam = laplace_family()
        model = linear_regression_model(fam, dim=2)
        infl = linear_regression_influence(fam, np.eye(2))
        nu = np.array([0.3, -0.5])
        obs = model.sample(nu, 150_000, RngStream(120))
        vals = infl.eval(obs, nu)
        cov = vals.T @ vals / vals.shape[0]
        se = np.einsum("ni,nj->nij", vals, vals).std(axis=0, ddof=1) / math.sqrt(
            vals.shape[0]
        )
        assert np.all(np.abs(cov - infl.bound) <= 3 * se)


class TestBoundReport:
    def test_json_payload(self):
        p = partition(np.array([[2.0, 1.0], [1.0, 1.0]]), 1)
        payload = json.loads(bound_report("cox", COX_THETA, p))
        assert payload["model"] == "cox"
        assert payload["restricted_bound"] == [[0.5]]
        assert payload["full_bound"] == [[1.0]]
        assert payload["loss"] == [[0.5]]
        assert payload["trace_ratio"] == pytest.approx(2.0)
