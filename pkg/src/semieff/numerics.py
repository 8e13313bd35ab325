"""Shared numerical substrate.

Deterministic counter-based RNG streams, adaptive quadrature, empirical and
analytic quantile functions, small dense SPD linear algebra, and Gaussian
kernel density estimation with exact analytic derivatives.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np
from scipy import integrate as _scipy_integrate
from scipy import linalg as _scipy_linalg

from .errors import DomainError, QuadratureError, SingularMatrixError

__all__ = [
    "RngStream",
    "QuantileFn",
    "empirical_quantile",
    "integrate",
    "solve_spd",
    "is_spd",
    "assert_fisher_matrix",
    "kde_with_derivative",
    "kde_score",
    "silverman_bandwidth",
]

_MASK64 = (1 << 64) - 1


def _mix64(x: int) -> int:
    # SplitMix64 finalizer; good avalanche for deriving substream indices.
    x = (x + 0x9E3779B97F4A7C15) & _MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & _MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & _MASK64
    return x ^ (x >> 31)


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(root_seed, stream_index)``.

    The draws produced by :meth:`generator` are a pure function of both
    fields: the backing bit generator is counter-based (Philox), so distinct
    stream indices give statistically independent streams and replication
    ``r`` of experiment ``e`` can be addressed directly as a substream.
    """

    root_seed: int
    stream_index: int = 0

    def generator(self) -> np.random.Generator:
        """Fresh generator positioned at the start of this stream."""
        key = np.array(
            [self.root_seed & _MASK64, self.stream_index & _MASK64],
            dtype=np.uint64,
        )
        return np.random.Generator(np.random.Philox(key=key))

    def substream(self, *indices: int) -> "RngStream":
        """Derive a child stream from one or more nonnegative indices."""
        ix = self.stream_index & _MASK64
        for k in indices:
            ix = _mix64(ix ^ _mix64(int(k) & _MASK64))
        return RngStream(self.root_seed, ix)


@dataclass(frozen=True)
class QuantileFn:
    """A monotone map from the open unit interval to the reals.

    ``eval`` accepts a float or ndarray of probabilities in (0, 1).  For
    instances built from a sample, ``eval`` is the left-continuous
    generalized inverse ``u -> inf{x : F_n(x) >= u}`` exactly, with no
    interpolation between order statistics.
    """

    eval: Callable[[np.ndarray], np.ndarray]
    support_hint: Optional[Tuple[float, float]] = None

    def __call__(self, u):
        return self.eval(u)

    @staticmethod
    def from_sample(sample) -> "QuantileFn":
        x = np.sort(np.asarray(sample, dtype=float))
        if x.size == 0:
            raise DomainError("empirical quantile function needs a nonempty sample")
        n = x.size

        def _eval(u):
            u_arr = np.asarray(u, dtype=float)
            if np.any((u_arr <= 0.0) | (u_arr >= 1.0)):
                raise DomainError("quantile argument must lie in (0, 1)")
            k = np.ceil(n * u_arr - 1e-9).astype(int)
            out = x[np.maximum(k, 1) - 1]
            return out if np.ndim(u) else float(out)

        return QuantileFn(eval=_eval, support_hint=(float(x[0]), float(x[-1])))

    def monotone_on(self, grid) -> bool:
        """Check nondecreasingness on a finite grid of probabilities."""
        vals = self.eval(np.asarray(grid, dtype=float))
        return bool(np.all(np.diff(vals) >= -1e-12))


def empirical_quantile(sample, u: float) -> float:
    """Left-continuous empirical quantile ``inf{x : F_n(x) >= u}``.

    Equals the ``ceil(n*u)``-th order statistic of the sample.

    Raises
    ------
    DomainError
        If the sample is empty or ``u`` is outside (0, 1).
    """
    x = np.asarray(sample, dtype=float)
    if x.size == 0:
        raise DomainError("empirical_quantile: empty sample")
    if not (0.0 < u < 1.0):
        raise DomainError(f"empirical_quantile: u={u} outside (0, 1)")
    k = int(np.ceil(x.size * u - 1e-9))
    return float(np.partition(x, max(k, 1) - 1)[max(k, 1) - 1])


def integrate(f, a: float, b: float, abs_tol: float = 1e-10) -> float:
    """Adaptive quadrature of ``f`` over ``(a, b)``.

    Gauss-Kronrod subdivision with extrapolation toward endpoint
    singularities; integrable singularities at ``a`` or ``b`` are handled.

    Raises
    ------
    QuadratureError
        If the estimated absolute error exceeds ``abs_tol``; the exception
        carries the best estimate and its error bound.
    """
    if not a < b:
        raise DomainError(f"integrate: needs a < b, got [{a}, {b}]")
    out = _scipy_integrate.quad(
        f, a, b, epsabs=0.5 * abs_tol, epsrel=1e-10, limit=500, full_output=1
    )
    result, abserr = out[0], out[1]
    if abserr > abs_tol:
        raise QuadratureError(
            f"integrate: error bound {abserr:.3e} exceeds tolerance {abs_tol:.3e}",
            estimate=result,
            error_bound=abserr,
        )
    return result


def is_spd(a, tol: float = 0.0) -> bool:
    """True iff ``a`` is symmetric (to 1e-12 relative) and positive definite."""
    a = np.asarray(a, dtype=float)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        return False
    scale = max(np.abs(a).max(), 1.0)
    if np.abs(a - a.T).max() > 1e-12 * scale:
        return False
    try:
        w = np.linalg.eigvalsh(0.5 * (a + a.T))
    except np.linalg.LinAlgError:
        return False
    return bool(w.min() > tol)


def assert_fisher_matrix(a) -> np.ndarray:
    """Validate a Fisher information matrix: symmetric and positive definite."""
    a = np.asarray(a, dtype=float)
    if not is_spd(a):
        raise SingularMatrixError("matrix is not symmetric positive definite")
    return a


def solve_spd(a, b) -> np.ndarray:
    """Solve ``a @ x = b`` for symmetric positive definite ``a`` via Cholesky.

    Raises
    ------
    SingularMatrixError
        If the Cholesky factorization fails (non-SPD input).
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    try:
        c, low = _scipy_linalg.cho_factor(a, check_finite=False)
    except (np.linalg.LinAlgError, _scipy_linalg.LinAlgError, ValueError) as exc:
        raise SingularMatrixError(f"solve_spd: Cholesky failed ({exc})") from exc
    return _scipy_linalg.cho_solve((c, low), b, check_finite=False)


def silverman_bandwidth(sample) -> float:
    """Normal-reference bandwidth ``1.06 * std * n**(-1/5)``."""
    x = np.asarray(sample, dtype=float)
    sd = float(np.std(x, ddof=1)) if x.size > 1 else 1.0
    return 1.06 * max(sd, 1e-12) * x.size ** (-0.2)


def kde_with_derivative(sample, bandwidth: float, x):
    """Gaussian-kernel density estimate and its exact analytic derivative.

    Parameters
    ----------
    sample : array_like, size >= 2
    bandwidth : float, > 0
    x : float or ndarray
        Evaluation point(s).

    Returns
    -------
    (density, derivative)
        Scalars for scalar ``x``, arrays for array ``x``.  The estimate is
        strictly positive and both values are finite wherever the kernel
        sums do not underflow.
    """
    xs = np.asarray(sample, dtype=float)
    if xs.size < 2:
        raise DomainError("kde_with_derivative: sample size must be >= 2")
    if not bandwidth > 0:
        raise DomainError("kde_with_derivative: bandwidth must be positive")
    pts = np.atleast_1d(np.asarray(x, dtype=float))
    z = (pts[:, None] - xs[None, :]) / bandwidth
    k = np.exp(-0.5 * z * z)
    norm = xs.size * bandwidth * math.sqrt(2.0 * math.pi)
    dens = k.sum(axis=1) / norm
    deriv = (-z * k).sum(axis=1) / (norm * bandwidth)
    if np.ndim(x) == 0:
        return float(dens[0]), float(deriv[0])
    return dens, deriv


def kde_score(sample, bandwidth: float, x):
    """Location score ``-g'/g`` of the Gaussian-kernel estimate, stably.

    Uses a shifted-exponential (softmax) form so the ratio stays finite even
    where the raw density underflows.
    """
    xs = np.asarray(sample, dtype=float)
    if xs.size < 2:
        raise DomainError("kde_score: sample size must be >= 2")
    pts = np.atleast_1d(np.asarray(x, dtype=float))
    z = (pts[:, None] - xs[None, :]) / bandwidth
    e = -0.5 * z * z
    e -= e.max(axis=1, keepdims=True)
    w = np.exp(e)
    score = (w * z).sum(axis=1) / (w.sum(axis=1) * bandwidth)
    return score if np.ndim(x) else float(score[0])
