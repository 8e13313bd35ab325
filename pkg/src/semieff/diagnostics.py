"""Monte Carlo verification harness tying estimators to bounds.

Each check draws seeded replications, aggregates order-independently, and
returns an :class:`McReport` whose serialized form is byte-identical for a
given ``(experiment_id, seed)`` regardless of worker count.
"""
from __future__ import annotations

import json
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy import stats as _stats

from .errors import DomainError, NotRegularError
from .models import ParametricModel
from .numerics import QuantileFn, RngStream, solve_spd
from .spread import is_more_spread

__all__ = [
    "Verdict",
    "McReport",
    "lan_check",
    "las_spread_check",
    "regularity_check",
    "excess_variance",
    "ecdf_cramer_rao_check",
    "run_replications",
]

# asymptotic two-sample Kolmogorov-Smirnov critical coefficient at 1%
_KS_COEF_1PCT = 1.6276


@dataclass(frozen=True)
class Verdict:
    name: str
    passed: bool
    margin: float
    threshold: float


@dataclass
class McReport:
    """Seeded Monte Carlo summary with recorded pass/fail verdicts."""

    experiment_id: str
    seed: int
    n_grid: List[int]
    reps: int
    cells: List[dict] = field(default_factory=list)
    verdicts: List[Verdict] = field(default_factory=list)

    @property
    def all_passed(self) -> bool:
        return all(v.passed for v in self.verdicts)

    def add_cell(self, cell: str, statistic: str, value, n=None, target=None, stderr=None):
        self.cells.append(
            {
                "cell": cell,
                "n": None if n is None else int(n),
                "statistic": statistic,
                "value": float(value),
                "target": None if target is None else float(target),
                "stderr": None if stderr is None else float(stderr),
            }
        )

    def add_verdict(self, name: str, passed: bool, margin: float, threshold: float):
        self.verdicts.append(
            Verdict(name, bool(passed), float(margin), float(threshold))
        )

    def to_dict(self) -> dict:
        return {
            "experiment_id": self.experiment_id,
            "seed": self.seed,
            "n_grid": list(self.n_grid),
            "reps": self.reps,
            "cells": self.cells,
            "verdicts": [
                {
                    "name": v.name,
                    "passed": v.passed,
                    "margin": v.margin,
                    "threshold": v.threshold,
                }
                for v in self.verdicts
            ],
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    def csv_rows(self):
        """Flat rows (one per cell) for plotting; header first."""
        header = ["experiment_id", "cell", "n", "statistic", "value", "target", "stderr"]
        rows = [header]
        for c in self.cells:
            rows.append(
                [
                    self.experiment_id,
                    c["cell"],
                    "" if c["n"] is None else str(c["n"]),
                    c["statistic"],
                    repr(c["value"]),
                    "" if c["target"] is None else repr(c["target"]),
                    "" if c["stderr"] is None else repr(c["stderr"]),
                ]
            )
        return rows


def run_replications(fn: Callable, reps: int, stream: RngStream, workers: int = 1):
    """Evaluate ``fn(substream, r)`` for ``r = 0..reps-1``.

    Results are stored by replication index, so the output is identical
    for any worker count; the reducer can then aggregate with numpy's
    pairwise summation without order effects.
    """
    results = [None] * reps
    if workers <= 1:
        for r in range(reps):
            results[r] = fn(stream.substream(r), r)
        return results

    def worker(r):
        results[r] = fn(stream.substream(r), r)

    with ThreadPoolExecutor(max_workers=workers) as pool:
        list(pool.map(worker, range(reps)))
    return results


def _fisher_or_pilot(model: ParametricModel, theta0, stream: RngStream):
    """Fisher matrix, or the pilot outer-product estimate for non-regular
    models (so the LAN failure can still be exhibited)."""
    try:
        return np.asarray(model.fisher(theta0), dtype=float)
    except NotRegularError:
        x = model.sample(theta0, 100_000, stream)
        s = np.atleast_2d(model.score(x, theta0))
        return s.T @ s / s.shape[0]


def lan_check(
    model: ParametricModel,
    theta0,
    t,
    n_grid: Sequence[int],
    reps: int,
    rng: RngStream,
    workers: int = 1,
    decay_slack: float = 0.1,
    exact_tol: float = 1e-10,
    experiment_id: str = "lan",
) -> McReport:
    """Empirical LAN remainder decay check.

    For each sample size the remainder
    ``R_n = [L_n(theta + t/sqrt n) - L_n(theta)] - [t'S_n - t'I t / 2]``
    is computed over seeded replications.  The verdict passes if every
    median |R_n| is below ``exact_tol`` (exactly quadratic likelihoods) or
    the medians decrease by at least the slack factor along the grid.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    info = _fisher_or_pilot(model, theta0, rng.substream(0xF15E2))
    quad = 0.5 * float(t @ info @ t)
    report = McReport(experiment_id, rng.root_seed, [int(n) for n in n_grid], reps)

    medians = []
    for n in n_grid:
        theta_n = theta0 + t / math.sqrt(n)
        if not model.theta_domain(theta_n):
            raise DomainError(f"lan_check: local parameter {theta_n} outside domain")

        def one(stream, r, n=n, theta_n=theta_n):
            x = model.sample(theta0, n, stream)
            lam = float(
                np.sum(model.log_density(x, theta_n))
                - np.sum(model.log_density(x, theta0))
            )
            s_n = np.atleast_2d(model.score(x, theta0)).sum(axis=0) / math.sqrt(n)
            return lam - (float(t @ s_n) - quad)

        r_n = np.abs(np.asarray(run_replications(one, reps, rng.substream(n), workers)))
        med = float(np.median(r_n))
        medians.append(med)
        report.add_cell("lan-remainder", "median_abs", med, n=n)
        report.add_cell("lan-remainder", "p90_abs", float(np.quantile(r_n, 0.9)), n=n)

    exact = all(m <= exact_tol for m in medians)
    decays = all(
        medians[i + 1] <= (1.0 - decay_slack) * medians[i]
        for i in range(len(medians) - 1)
    )
    worst = max(medians)
    report.add_verdict(
        "lan-remainder-vanishes",
        exact or decays,
        margin=worst,
        threshold=exact_tol if exact else decay_slack,
    )
    return report


def _bootstrap_increment_slack(z, u_grid, stream: RngStream, n_boot: int = 200) -> float:
    """3x bootstrap stderr of the worst-case quantile increment."""
    gen = stream.generator()
    n = z.size
    qs = np.empty((n_boot, u_grid.size))
    for b in range(n_boot):
        resample = z[gen.integers(0, n, n)]
        qs[b] = np.quantile(resample, u_grid)
    inc_sd = np.zeros((u_grid.size, u_grid.size))
    for i in range(u_grid.size):
        inc_sd[i] = np.std(qs - qs[:, [i]], axis=0, ddof=1)
    return 3.0 * float(inc_sd.max())


def las_spread_check(
    model: ParametricModel,
    estimator: Callable,
    theta0,
    a,
    n: int,
    reps: int,
    rng: RngStream,
    workers: int = 1,
    expect: str = "dominates",
    attain_tol: float = 0.10,
    u_grid=None,
    experiment_id: str = "las-spread",
) -> McReport:
    """Spread comparison of an estimator against the local normal bound.

    Builds the empirical quantile function of ``sqrt(n) a'(T_n - theta0)``
    and checks the spread partial order against the normal law with the
    information-bound variance ``a' I(theta0)^{-1} a``.  ``expect`` selects
    the verdict: ``dominates`` (the inequality), ``attains`` (increments
    additionally within ``attain_tol`` of the bound's), or
    ``informational`` (record the comparison without judging it, e.g. for
    the degenerate estimator at its favored point).
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    a = np.atleast_1d(np.asarray(a, dtype=float))
    grid = (
        np.round(np.arange(0.05, 0.9501, 0.05), 10)
        if u_grid is None
        else np.asarray(u_grid, dtype=float)
    )
    var_bound = float(a @ solve_spd(model.fisher(theta0), a))
    sd_bound = math.sqrt(var_bound)

    def one(stream, r):
        x = model.sample(theta0, n, stream)
        est = np.atleast_1d(np.asarray(estimator(x), dtype=float))
        return math.sqrt(n) * float(a @ (est - theta0))

    z = np.asarray(run_replications(one, reps, rng.substream(1), workers))
    report = McReport(experiment_id, rng.root_seed, [int(n)], reps)
    spread_range = float(z.max() - z.min())
    report.add_cell("estimator", "spread_range", spread_range, n=n)
    report.add_cell("bound", "sd", sd_bound, n=n)

    g_inv = QuantileFn.from_sample(z)
    k_inv = QuantileFn(eval=lambda u: sd_bound * _stats.norm.ppf(u))
    slack = _bootstrap_increment_slack(z, grid, rng.substream(2))
    cmp_ = is_more_spread(g_inv, k_inv, grid, slack=slack)
    report.add_cell("comparison", "worst_violation", cmp_.worst_violation, n=n)
    report.add_cell("comparison", "slack", slack, n=n)
    for u in grid:
        report.add_cell("quantiles", f"G_inv@{u:g}", float(g_inv(u)), n=n,
                        target=float(k_inv(u)))

    if expect == "informational":
        report.add_verdict("spread-informational", True, cmp_.worst_violation, slack)
        return report
    report.add_verdict(
        "spread-dominates-bound", cmp_.is_more_spread, cmp_.worst_violation, slack
    )
    if expect == "attains":
        gq = np.asarray(g_inv(grid))
        kq = np.asarray(k_inv(grid))
        g_inc = gq[None, :] - gq[:, None]
        k_inc = kq[None, :] - kq[:, None]
        iu = np.triu_indices(grid.size, k=1)
        rel = np.abs(g_inc[iu] - k_inc[iu]) - slack
        worst = float((rel / np.maximum(k_inc[iu], 1e-12)).max())
        report.add_verdict("spread-attains-bound", worst <= attain_tol, worst, attain_tol)
    return report


def regularity_check(
    model: ParametricModel,
    estimator: Callable,
    theta0,
    t,
    n: int,
    reps: int,
    rng: RngStream,
    workers: int = 1,
    experiment_id: str = "regularity",
) -> McReport:
    """Two-sample law comparison under the null and a local alternative.

    Draws ``sqrt(n)(T_n - theta_n)`` under ``theta_n = theta0 + t/sqrt n``
    and ``sqrt(n)(T_n - theta0)`` under ``theta0``; a regular estimator's
    laws agree, so the per-coordinate two-sample KS distance must stay
    below the asymptotic 1% critical value.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    t = np.atleast_1d(np.asarray(t, dtype=float))
    theta_n = theta0 + t / math.sqrt(n)
    if not model.theta_domain(theta_n):
        raise DomainError(f"regularity_check: {theta_n} outside parameter domain")

    def draws(theta, stream_tag):
        def one(stream, r):
            x = model.sample(theta, n, stream)
            est = np.atleast_1d(np.asarray(estimator(x), dtype=float))
            return math.sqrt(n) * (est - theta)

        return np.asarray(run_replications(one, reps, rng.substream(stream_tag), workers))

    z0 = draws(theta0, 10)
    z1 = draws(theta_n, 11)
    crit = _KS_COEF_1PCT * math.sqrt(2.0 / reps)
    report = McReport(experiment_id, rng.root_seed, [int(n)], reps)
    worst = 0.0
    for j in range(z0.shape[1]):
        ks = float(_stats.ks_2samp(z0[:, j], z1[:, j]).statistic)
        worst = max(worst, ks)
        report.add_cell("ks", f"coordinate_{j}", ks, n=n, target=crit)
    report.add_verdict("regular-under-local-shift", worst < crit, worst, crit)
    return report


def excess_variance(
    model: ParametricModel,
    estimator: Callable,
    theta0,
    n: int,
    reps: int,
    rng: RngStream,
    workers: int = 1,
    bound: Optional[np.ndarray] = None,
    experiment_id: str = "excess-variance",
) -> McReport:
    """Covariance of the scaled error against the information bound.

    The verdict passes when the smallest eigenvalue of
    ``cov(sqrt n (T_n - theta0)) - bound`` is above ``-3 x`` the largest
    entrywise Monte Carlo standard error: no estimator may beat the bound.
    """
    theta0 = np.atleast_1d(np.asarray(theta0, dtype=float))
    if bound is None:
        bound = np.linalg.inv(np.asarray(model.fisher(theta0), dtype=float))
    bound = np.atleast_2d(np.asarray(bound, dtype=float))

    def one(stream, r):
        x = model.sample(theta0, n, stream)
        est = np.atleast_1d(np.asarray(estimator(x), dtype=float))
        return math.sqrt(n) * (est - theta0)

    z = np.asarray(run_replications(one, reps, rng.substream(3), workers))
    centered = z - z.mean(axis=0)
    cov = centered.T @ centered / (reps - 1)
    prods = centered[:, :, None] * centered[:, None, :]
    se = np.sqrt(prods.var(axis=0, ddof=1) / reps)
    diff = cov - bound
    eig_min = float(np.linalg.eigvalsh(0.5 * (diff + diff.T)).min())
    thresh = -3.0 * float(se.max())
    report = McReport(experiment_id, rng.root_seed, [int(n)], reps)
    for i in range(cov.shape[0]):
        for j in range(i, cov.shape[1]):
            report.add_cell(
                "covariance", f"v{i}{j}", float(cov[i, j]), n=n,
                target=float(bound[i, j]), stderr=float(se[i, j]),
            )
    report.add_cell("excess", "eig_min", eig_min, n=n)
    report.add_verdict("no-estimator-beats-bound", eig_min >= thresh, eig_min, thresh)
    return report


def ecdf_cramer_rao_check(
    sampler: Callable,
    cdf: Callable,
    t_grid,
    n: int,
    reps: int,
    rng: RngStream,
    workers: int = 1,
    competitor_sd_scale: float = 0.5,
    experiment_id: str = "ecdf-cramer-rao",
) -> McReport:
    """Finite-sample variance identity for the empirical CDF.

    Checks that ``var F_n(t)`` matches ``F(t)(1 - F(t))/n`` within three
    Monte Carlo standard errors at each grid point, that the perturbed
    distribution family used in the information bound's proof stays a
    valid density for tilts in [0, 1], and that a noise-perturbed unbiased
    competitor strictly exceeds the bound.
    """
    t_grid = np.asarray(t_grid, dtype=float)

    def one(stream, r):
        gen = stream.generator()
        x = np.asarray(sampler(gen, n), dtype=float)
        ecdf_vals = (x[:, None] <= t_grid[None, :]).mean(axis=0)
        noise = competitor_sd_scale / math.sqrt(n) * gen.standard_normal(t_grid.size)
        return np.concatenate([ecdf_vals, ecdf_vals + noise])

    out = np.asarray(run_replications(one, reps, rng.substream(7), workers))
    m = t_grid.size
    ecdf_draws, comp_draws = out[:, :m], out[:, m:]
    report = McReport(experiment_id, rng.root_seed, [int(n)], reps)

    f_t = np.asarray(cdf(t_grid), dtype=float)
    bound = f_t * (1.0 - f_t) / n
    ok_var = True
    worst_dev = 0.0
    for j, t in enumerate(t_grid):
        v = float(np.var(ecdf_draws[:, j], ddof=1))
        c = ecdf_draws[:, j] - ecdf_draws[:, j].mean()
        se = math.sqrt(float(np.var(c * c, ddof=1)) / reps)
        dev = abs(v - bound[j])
        ok_var &= dev <= 3.0 * se + 1e-12  # floor guards degenerate tails
        worst_dev = max(worst_dev, dev / max(se, 1e-300))
        report.add_cell("ecdf-variance", f"t={t:g}", v, n=n, target=float(bound[j]),
                        stderr=se)
    report.add_verdict("ecdf-variance-attains-bound", ok_var, worst_dev, 3.0)

    # perturbed family 1 - eps (1[x <= t] - F(t)) must stay nonnegative
    eps_grid = np.linspace(0.0, 1.0, 5)
    min_factor = np.inf
    for t, ft in zip(t_grid, f_t):
        for ind in (0.0, 1.0):
            vals = 1.0 - eps_grid * (ind - ft)
            min_factor = min(min_factor, float(vals.min()))
    report.add_cell("perturbation", "min_density_factor", min_factor)
    report.add_verdict("perturbed-family-valid", min_factor >= 0.0, min_factor, 0.0)

    excess = 0.0
    ok_comp = True
    for j in range(m):
        v = float(np.var(comp_draws[:, j], ddof=1))
        c = comp_draws[:, j] - comp_draws[:, j].mean()
        se = math.sqrt(float(np.var(c * c, ddof=1)) / reps)
        ok_comp &= v - bound[j] >= 3.0 * se
        excess = max(excess, v - bound[j])
        report.add_cell("competitor-variance", f"t={t_grid[j]:g}", v, n=n,
                        target=float(bound[j]), stderr=se)
    report.add_verdict("competitor-exceeds-bound", ok_comp, excess, 0.0)
    return report
