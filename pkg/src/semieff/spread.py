"""Spread lower bounds for estimator error distributions.

Builds the bound's quantile function ``K^{-1}(u) = int_{1/2}^u ds / J(s)``
with ``J(s) = int_s^1 H^{-1}(t) dt``, where ``H`` is the distribution of a
mean-zero score statistic.  Also provides the closed-form uniform,
triangular (Van Zwet) and trigonometric bounds driven by moment envelopes,
the general weighted-parametrization score statistic, the spread partial
order checker, and the Monte Carlo attainment residual.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Optional, Sequence, Tuple

import numpy as np
from scipy import stats as _stats
from scipy.stats import rankdata

from .errors import DomainError
from .numerics import QuantileFn, RngStream, integrate

__all__ = [
    "ScoreStatistic",
    "SpreadBound",
    "WeightedParametrization",
    "spread_bound_from_score",
    "uniform_bound",
    "van_zwet_bound",
    "trigonometric_bound",
    "general_score_statistic",
    "is_more_spread",
    "SpreadComparison",
    "spread_equality_residual",
    "strong_unimodality_margin",
    "DEFAULT_U_GRID",
]

# Interior evaluation grid; endpoints are excluded because the bound's
# quantile function may diverge as u -> 0 or 1.
DEFAULT_U_GRID = np.round(np.arange(1, 200) * 0.005, 10)


@dataclass(frozen=True)
class ScoreStatistic:
    """A mean-zero score statistic ``S`` known through a sampler.

    ``draw(stream, n)`` returns ``n`` draws as a pure function of the
    stream.  When the law of ``S`` is known analytically, ``quantile``
    holds ``H^{-1}``; the moment fields feed the closed-form bounds.
    """

    draw: Callable[[RngStream, int], np.ndarray]
    quantile: Optional[QuantileFn] = None
    abs_moment: Optional[float] = None
    second_moment: Optional[float] = None

    @staticmethod
    def normal(variance: float) -> "ScoreStatistic":
        """Score statistic with the centered normal law of given variance."""
        if not variance > 0:
            raise DomainError("normal score statistic needs variance > 0")
        sd = math.sqrt(variance)
        return ScoreStatistic(
            draw=lambda stream, n: sd * stream.generator().standard_normal(n),
            quantile=QuantileFn(eval=lambda u: _stats.norm.ppf(u) * sd),
            abs_moment=sd * math.sqrt(2.0 / math.pi),
            second_moment=variance,
        )


@dataclass(frozen=True)
class SpreadBound:
    """A spread lower bound, represented by its quantile function.

    ``k_inverse(1/2) = 0`` by construction.  ``density_at_quantile`` is the
    map ``s -> J(s)``, the reciprocal of the quantile density; its
    log-concavity is the strong-unimodality property every bound of this
    family satisfies.
    """

    k_inverse: QuantileFn
    provenance: str
    density_at_quantile: Callable[[np.ndarray], np.ndarray]

    def table(self, grid=None) -> np.ndarray:
        """Two-column array ``(u, K^{-1}(u))`` over the evaluation grid."""
        g = DEFAULT_U_GRID if grid is None else np.asarray(grid, dtype=float)
        return np.column_stack([g, self.k_inverse(g)])


def _segment_reciprocal_integral(j_lo: float, slope: float, width: float) -> float:
    """Exact ``int_0^width ds / (j_lo - slope*s)`` for affine positive J."""
    j_hi = j_lo - slope * width
    if j_lo <= 0 or j_hi <= 0:
        raise DomainError(
            "spread bound: int_s^1 H^{-1} is nonpositive on the needed range "
            "(score statistic not mean-zero?)"
        )
    if abs(slope) * width < 1e-14 * j_lo:
        return width / j_lo
    return math.log(j_lo / j_hi) / slope


class _EmpiricalH:
    """Exact integrals against an empirical (step-function) H^{-1}.

    Draws are recentered at their sample mean: the score statistic has mean
    zero exactly, and without recentering the O(n^{-1/2}) mean noise shifts
    ``J(s)`` by a constant that dominates near s = 1.  A sample mean more
    than five standard errors from zero is rejected as an invalid score
    statistic instead of silently recentered.
    """

    def __init__(self, draws):
        raw = np.asarray(draws, dtype=float)
        mu = float(raw.mean())
        se = float(raw.std(ddof=1)) / math.sqrt(raw.size) if raw.size > 1 else 0.0
        if abs(mu) > max(5.0 * se, 1e-12):
            raise DomainError(
                f"spread bound: score statistic has mean {mu:.4g} "
                f"(more than 5 stderr from 0); E S must be 0"
            )
        self.x = np.sort(raw - mu)
        self.n = self.x.size
        # tail[i] = (1/n) * sum of order statistics above piece i+1 (0-indexed)
        self.tail = np.concatenate([np.cumsum(self.x[::-1])[::-1][1:], [0.0]]) / self.n

    def j_of(self, s: float) -> float:
        """``J(s) = int_s^1 H^{-1}(t) dt`` in closed form."""
        n = self.n
        i = min(max(int(math.ceil(n * s - 1e-12)), 1), n)
        return self.x[i - 1] * (i / n - s) + self.tail[i - 1]

    def reciprocal_integral(self, lo: float, hi: float) -> float:
        """``int_lo^hi ds / J(s)`` piece by piece, exactly."""
        n, x, tail = self.n, self.x, self.tail
        total = 0.0
        i = int(math.floor(n * lo + 1e-12)) + 1  # first piece right of lo
        while i <= n:
            piece_lo = max((i - 1) / n, lo)
            piece_hi = min(i / n, hi)
            if piece_hi > piece_lo:
                width = piece_hi - piece_lo
                j_top = x[i - 1] * (i / n - piece_hi) + tail[i - 1]
                j_bot = j_top + x[i - 1] * width
                total += _segment_reciprocal_integral(j_bot, x[i - 1], width)
            if i / n >= hi - 1e-15:
                break
            i += 1
        return total


def _cumulative_from_half(reciprocal_integral, anchors: np.ndarray) -> np.ndarray:
    """K^{-1} at grid anchors via cumulative integration away from 1/2."""
    values = np.zeros(anchors.size)
    mid = int(np.searchsorted(anchors, 0.5))
    acc = 0.0
    for i in range(mid, anchors.size - 1):
        acc += reciprocal_integral(anchors[i], anchors[i + 1])
        values[i + 1] = acc
    acc = 0.0
    for i in range(mid, 0, -1):
        acc -= reciprocal_integral(anchors[i - 1], anchors[i])
        values[i - 1] = acc
    return values


class _AnalyticH:
    """Tabulated ``J(s) = int_s^1 H^{-1}`` for a smooth analytic quantile.

    The upper tail ``int_{s_top}^1 H^{-1}`` (where the quantile function may
    have an integrable singularity) is done once adaptively; everything
    below ``s_top`` uses vectorized fixed-order Gauss-Legendre panels, which
    are machine-precision on the smooth interior.  A monotone cubic
    interpolant serves point queries between table nodes.
    """

    GL_ORDER = 15

    def __init__(self, hinv: Callable, lo: float, hi: float, tail_tol: float):
        from scipy.interpolate import PchipInterpolator

        self.hinv = hinv
        self.tail_tol = tail_tol
        nodes = np.linspace(lo, hi, max(int((hi - lo) / 2.5e-4), 64) + 1)
        gx, gw = np.polynomial.legendre.leggauss(self.GL_ORDER)
        a, b = nodes[:-1], nodes[1:]
        half = 0.5 * (b - a)
        pts = 0.5 * (a + b)[:, None] + half[:, None] * gx[None, :]
        vals = np.asarray(hinv(pts.ravel()), dtype=float).reshape(pts.shape)
        panel = (vals * gw[None, :]).sum(axis=1) * half
        tail = integrate(hinv, hi, 1.0, abs_tol=tail_tol)
        j_desc = tail + np.concatenate([[0.0], np.cumsum(panel[::-1])])
        self.nodes = nodes
        self.j_table = j_desc[::-1]
        if np.any(self.j_table <= 0):
            s_bad = float(nodes[np.argmax(self.j_table <= 0)])
            raise DomainError(
                f"spread bound: int_s^1 H^-1 <= 0 at s={s_bad} "
                "(score statistic not mean-zero?)"
            )
        self._interp = PchipInterpolator(nodes, self.j_table, extrapolate=False)

    def j_of(self, s: float) -> float:
        if self.nodes[0] <= s <= self.nodes[-1]:
            return float(self._interp(s))
        return integrate(self.hinv, s, 1.0, abs_tol=self.tail_tol) if s < 1.0 else 0.0

    def reciprocal_integral(self, lo: float, hi: float) -> float:
        def recip(s):
            j = self.j_of(float(s))
            if j <= 0:
                raise DomainError(
                    f"spread bound: int_s^1 H^-1 <= 0 at s={s} "
                    "(score statistic not mean-zero?)"
                )
            return 1.0 / j

        return integrate(recip, lo, hi, abs_tol=self.tail_tol)


def spread_bound_from_score(
    score: ScoreStatistic,
    quad_tol: float = 1e-6,
    rng: Optional[RngStream] = None,
    n_draws: int = 100_000,
    grid=None,
) -> SpreadBound:
    """Spread bound ``K`` from the law ``H`` of a score statistic.

    Evaluates ``K^{-1}(u) = int_{1/2}^u [int_s^1 H^{-1}]^{-1} ds`` by nested
    adaptive quadrature when ``score.quantile`` is analytic, and by exact
    piecewise integration of the empirical quantile function of ``n_draws``
    draws otherwise.

    Raises
    ------
    DomainError
        If ``int_s^1 H^{-1}(t) dt <= 0`` somewhere on the needed range,
        which signals a score statistic whose mean is not zero.
    """
    anchors = DEFAULT_U_GRID if grid is None else np.asarray(grid, dtype=float)
    anchors = np.unique(np.concatenate([anchors, [0.5]]))
    if anchors[0] <= 0.0 or anchors[-1] >= 1.0:
        raise DomainError("spread bound grid must lie strictly inside (0, 1)")

    if score.quantile is not None:
        tab = _AnalyticH(
            score.quantile.eval,
            lo=float(anchors[0]),
            hi=float(anchors[-1]),
            tail_tol=max(quad_tol * 1e-3, 1e-11),
        )
        j_of = tab.j_of
        reciprocal_integral = tab.reciprocal_integral
        provenance = "score:analytic"
    else:
        stream = rng if rng is not None else RngStream(0x5EED, 0)
        emp = _EmpiricalH(score.draw(stream, n_draws))
        j_of = emp.j_of
        reciprocal_integral = emp.reciprocal_integral
        provenance = f"score:empirical[{n_draws}]"

    anchor_v = _cumulative_from_half(reciprocal_integral, anchors)

    def _eval(u):
        u_arr = np.atleast_1d(np.asarray(u, dtype=float))
        if np.any((u_arr <= 0.0) | (u_arr >= 1.0)):
            raise DomainError("spread bound quantile argument must be in (0, 1)")
        idx = np.searchsorted(anchors, u_arr)
        out = np.empty_like(u_arr)
        for i, (uu, k) in enumerate(zip(u_arr, idx)):
            if k < anchors.size and abs(anchors[k] - uu) < 1e-12:
                out[i] = anchor_v[k]
            elif k > 0 and abs(anchors[k - 1] - uu) < 1e-12:
                out[i] = anchor_v[k - 1]
            elif k > 0:
                out[i] = anchor_v[k - 1] + reciprocal_integral(anchors[k - 1], uu)
            else:
                out[i] = anchor_v[0] - reciprocal_integral(uu, anchors[0])
        return out if np.ndim(u) else float(out[0])

    def density_at_quantile(s):
        s_arr = np.atleast_1d(np.asarray(s, dtype=float))
        vals = np.array([j_of(float(t)) for t in s_arr])
        return vals if np.ndim(s) else float(vals[0])

    return SpreadBound(
        k_inverse=QuantileFn(eval=_eval),
        provenance=provenance,
        density_at_quantile=density_at_quantile,
    )


def _check_unit_interval(u_arr):
    if np.any((u_arr <= 0.0) | (u_arr >= 1.0)):
        raise DomainError("quantile argument must lie in (0, 1)")


def uniform_bound(abs_moment: float) -> SpreadBound:
    """Uniform spread bound on an interval of length ``1 / E|S|``.

    The density envelope ``g(G^{-1}(s)) <= E|S|`` is constant, so the bound
    is the uniform law.  Only quantile increments matter for spread
    comparisons; we center the interval so that ``K^{-1}(1/2) = 0``.
    """
    if not abs_moment > 0:
        raise DomainError("uniform_bound: E|S| must be positive")

    def _eval(u):
        u_arr = np.asarray(u, dtype=float)
        _check_unit_interval(u_arr)
        out = (u_arr - 0.5) / abs_moment
        return out if np.ndim(u) else float(out)

    half = 0.5 / abs_moment
    return SpreadBound(
        k_inverse=QuantileFn(eval=_eval, support_hint=(-half, half)),
        provenance=f"uniform[E|S|={abs_moment!r}]",
        density_at_quantile=lambda s: np.full(np.shape(np.asarray(s)), abs_moment)
        if np.ndim(s)
        else abs_moment,
    )


def van_zwet_bound(second_moment: float) -> SpreadBound:
    """Symmetric triangular bound on ``[-sqrt(2/ES^2), sqrt(2/ES^2)]``.

    Integrates the density envelope ``g(G^{-1}(s)) <= sqrt(ES^2 (s ^ (1-s)))``.
    """
    if not second_moment > 0:
        raise DomainError("van_zwet_bound: E S^2 must be positive")
    c = math.sqrt(second_moment)
    lim = math.sqrt(2.0 / second_moment)

    def _eval(u):
        u_arr = np.asarray(u, dtype=float)
        _check_unit_interval(u_arr)
        tail = np.minimum(u_arr, 1.0 - u_arr)
        mag = (2.0 / c) * (math.sqrt(0.5) - np.sqrt(tail))
        out = np.where(u_arr >= 0.5, mag, -mag)
        return out if np.ndim(u) else float(out)

    def envelope(s):
        s_arr = np.asarray(s, dtype=float)
        out = c * np.sqrt(np.minimum(s_arr, 1.0 - s_arr))
        return out if np.ndim(s) else float(out)

    return SpreadBound(
        k_inverse=QuantileFn(eval=_eval, support_hint=(-lim, lim)),
        provenance=f"van-zwet[ES2={second_moment!r}]",
        density_at_quantile=envelope,
    )


def trigonometric_bound(second_moment: float) -> SpreadBound:
    """Trigonometric bound with CDF ``(1 + sin(sqrt(ES^2) x)) / 2``.

    Sharper than the triangular bound: its envelope ``sqrt(ES^2 s(1-s))``
    is dominated by ``sqrt(ES^2 (s ^ (1-s)))`` pointwise.  The support is
    ``|x| <= pi/(2 sqrt(ES^2))`` and ``K^{-1}(u) = arcsin(2u-1)/sqrt(ES^2)``.
    """
    if not second_moment > 0:
        raise DomainError("trigonometric_bound: E S^2 must be positive")
    c = math.sqrt(second_moment)
    lim = math.pi / (2.0 * c)

    def _eval(u):
        u_arr = np.asarray(u, dtype=float)
        _check_unit_interval(u_arr)
        out = np.arcsin(2.0 * u_arr - 1.0) / c
        return out if np.ndim(u) else float(out)

    def envelope(s):
        s_arr = np.asarray(s, dtype=float)
        out = c * np.sqrt(s_arr * (1.0 - s_arr))
        return out if np.ndim(s) else float(out)

    return SpreadBound(
        k_inverse=QuantileFn(eval=_eval, support_hint=(-lim, lim)),
        provenance=f"trigonometric[ES2={second_moment!r}]",
        density_at_quantile=envelope,
    )


@dataclass(frozen=True)
class WeightedParametrization:
    """Parameter-of-interest map and weight data for the general bound.

    ``q_grad(theta)`` is the (m, k) Jacobian, ``q_hess(theta)`` the stacked
    (m, k, k) per-coordinate Hessians (``None`` for affine ``q``), and
    ``weight_score(theta)`` the k-vector of the weight's log-derivative.
    With ``vectorized=True`` the callables receive an (n, k) batch of theta
    draws and return batched arrays, avoiding a Python loop in the sampler.
    """

    q: Callable
    q_grad: Callable
    weight_score: Callable
    direction_a: np.ndarray
    direction_b: np.ndarray
    q_hess: Optional[Callable] = None
    vectorized: bool = False


def general_score_statistic(
    wp: WeightedParametrization,
    model_score: Callable,
    draw_joint: Callable[[RngStream, int], Tuple],
) -> ScoreStatistic:
    """Score statistic for a weighted parametric model and direction pair.

    The sampler draws ``(X, theta)`` jointly and evaluates

        S = b^T {score(X|theta) + w_score(theta) - corr(theta)}
            / (b^T q_grad(theta)^T a)

    with ``corr = sum_h a_h q_hess_h(theta) b / (b^T q_grad^T a)``; the
    correction vanishes for affine ``q``.

    Raises
    ------
    DomainError
        If the denominator ``b^T q_grad(theta)^T a`` vanishes at a sampled
        theta (the offending theta is named).
    """
    a = np.asarray(wp.direction_a, dtype=float)
    b = np.asarray(wp.direction_b, dtype=float)

    def draw(stream: RngStream, n: int) -> np.ndarray:
        x, thetas = draw_joint(stream, n)
        thetas = np.atleast_2d(np.asarray(thetas, dtype=float))
        scores = np.atleast_2d(np.asarray(model_score(x, thetas), dtype=float))
        if wp.vectorized:
            grads = np.asarray(wp.q_grad(thetas), dtype=float)  # (n, m, k)
            denom = np.einsum("i,nik,k->n", a, grads, b)
            _check_denominators(denom, thetas)
            vec = scores + np.asarray(wp.weight_score(thetas), dtype=float)
            if wp.q_hess is not None:
                hess = np.asarray(wp.q_hess(thetas), dtype=float)  # (n, m, k, k)
                corr = np.einsum("h,nhij,j->ni", a, hess, b)
                vec = vec - corr / denom[:, None]
            return (vec @ b) / denom
        out = np.empty(n)
        for r in range(n):
            th = thetas[r]
            grad = np.atleast_2d(np.asarray(wp.q_grad(th), dtype=float))
            denom = float(a @ grad @ b)
            if abs(denom) < 1e-300:
                raise DomainError(
                    f"general score statistic: b^T q_grad^T a vanishes at theta={th}"
                )
            vec = scores[r] + np.asarray(wp.weight_score(th), dtype=float)
            if wp.q_hess is not None:
                hess = np.asarray(wp.q_hess(th), dtype=float).reshape(
                    a.size, b.size, b.size
                )
                corr = np.einsum("h,hij,j->i", a, hess, b)
                vec = vec - corr / denom
            out[r] = float(b @ vec) / denom
        return out

    return ScoreStatistic(draw=draw)


def _check_denominators(denom, thetas):
    bad = np.where(np.abs(denom) < 1e-300)[0]
    if bad.size:
        raise DomainError(
            f"general score statistic: b^T q_grad^T a vanishes at theta={thetas[bad[0]]}"
        )


class SpreadComparison(NamedTuple):
    is_more_spread: bool
    worst_violation: float
    worst_pair: Tuple[float, float]


def is_more_spread(
    g_inv: QuantileFn,
    k_inv: QuantileFn,
    grid: Sequence[float],
    slack: float = 0.0,
) -> SpreadComparison:
    """Check the spread partial order ``G >=_s K`` on a probability grid.

    True iff every quantile increment of ``G`` dominates the matching
    increment of ``K`` up to ``slack``; the worst offending pair ``(u, v)``
    and its violation ``K-incr - G-incr`` are reported either way.
    """
    u = np.asarray(grid, dtype=float)
    if u.ndim != 1 or u.size < 2 or np.any(np.diff(u) <= 0):
        raise DomainError("is_more_spread: grid must be strictly increasing")
    if slack < 0:
        raise DomainError("is_more_spread: slack must be nonnegative")
    g = np.asarray(g_inv(u), dtype=float)
    k = np.asarray(k_inv(u), dtype=float)
    diff = (k[None, :] - k[:, None]) - (g[None, :] - g[:, None])
    iu = np.triu_indices(u.size, k=1)
    viols = diff[iu]
    w = int(np.argmax(viols))
    worst = float(viols[w])
    pair = (float(u[iu[0][w]]), float(u[iu[1][w]]))
    return SpreadComparison(worst <= slack, worst, pair)


def spread_equality_residual(pairs) -> float:
    """Monte Carlo attainment residual ``E|H(S) - G(T - theta)|``.

    Uses the empirical CDFs of each margin; a value near zero certifies the
    attainment condition ``T - theta = G^{-1}(H(S))``, while independence
    of the two coordinates gives ``E|U - V| = 1/3``.
    """
    arr = np.asarray(pairs, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise DomainError("spread_equality_residual: expected (n, 2) array of pairs")
    if arr.shape[0] < 1000:
        raise DomainError("spread_equality_residual: need at least 10^3 paired draws")
    n = arr.shape[0]
    g_vals = rankdata(arr[:, 0], method="max") / n
    h_vals = rankdata(arr[:, 1], method="max") / n
    return float(np.mean(np.abs(h_vals - g_vals)))


def strong_unimodality_margin(bound: SpreadBound, grid=None) -> float:
    """Maximum second difference of ``log J`` on the grid.

    Nonpositive (up to rounding) iff the bound's implied density is
    log-concave, i.e. the bound is strongly unimodal.
    """
    g = DEFAULT_U_GRID if grid is None else np.asarray(grid, dtype=float)
    j = np.asarray(bound.density_at_quantile(g), dtype=float)
    if np.any(j <= 0):
        raise DomainError("strong_unimodality_margin: J must be positive on the grid")
    second = np.diff(np.log(j), n=2)
    return float(second.max())
