"""Regular parametric models with exact scores and Fisher information.

Concrete instances: normal location-scale, one-parameter location families
with pluggable error density, the parametric Cox model with exponential
baseline, linear regression, and the deliberately non-regular exponential
shift model.  Observations are opaque to callers: scalar models use a
float array, paired models use a ``(y, z)`` tuple.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Callable, Optional

import numpy as np

from .errors import DomainError, NotRegularError
from .numerics import RngStream, integrate

__all__ = [
    "ParametricModel",
    "LocationFamily",
    "CovariateLaw",
    "gaussian_family",
    "laplace_family",
    "logistic_family",
    "normal_model",
    "location_model",
    "cox_parametric_model",
    "linear_regression_model",
    "exponential_shift_model",
    "regularity_quotient",
    "get_model",
    "MODEL_TAGS",
]

_EULER_GAMMA = 0.5772156649015329


@dataclass(frozen=True)
class ParametricModel:
    """A parametric family with score vector, Fisher matrix and sampler.

    All observation-level callables are vectorized: ``log_density(obs,
    theta)`` returns an (n,) array and ``score(obs, theta)`` an (n, k)
    array for a sample of n observations.  ``sample(theta, n, stream)``
    draws a fresh sample as a pure function of the stream.  ``fisher``
    raises :class:`NotRegularError` for models flagged non-regular.
    """

    name: str
    dim_theta: int
    log_density: Callable
    score: Callable
    fisher: Callable[[np.ndarray], np.ndarray]
    sample: Callable[[np.ndarray, int, RngStream], object]
    theta_domain: Callable[[np.ndarray], bool]
    regular: bool = True


@dataclass(frozen=True)
class LocationFamily:
    """An error density ``g`` for location models.

    ``score(x)`` is the location score ``-g'/g(x)``; ``fisher_location``
    is ``I(g) = int (g'/g)^2 g``, which must be finite and positive.
    """

    name: str
    log_density: Callable
    score: Callable
    fisher_location: float
    sample: Callable[[RngStream, int], np.ndarray]
    variance: float
    symmetric: bool
    cdf: Optional[Callable] = None


def gaussian_family(sigma: float = 1.0) -> LocationFamily:
    if not sigma > 0:
        raise DomainError("gaussian_family: sigma must be positive")
    s2 = sigma * sigma
    const = -0.5 * math.log(2.0 * math.pi * s2)
    return LocationFamily(
        name=f"normal(sigma={sigma:g})",
        log_density=lambda x: const - 0.5 * np.square(x) / s2,
        score=lambda x: np.asarray(x, dtype=float) / s2,
        fisher_location=1.0 / s2,
        sample=lambda stream, n: sigma * stream.generator().standard_normal(n),
        variance=s2,
        symmetric=True,
        cdf=lambda x: _norm_cdf(np.asarray(x, dtype=float) / sigma),
    )


def _norm_cdf(z):
    from scipy.special import ndtr

    return ndtr(z)


def laplace_family(scale: float = 1.0) -> LocationFamily:
    """Double-exponential density ``exp(-|x|/b) / (2b)``.

    The location score is ``sign(x)/b`` a.e.; at the kink we take 0, a
    measure-zero choice matching the a.e. derivative.  ``I(g) = 1/b^2``
    and the variance is ``2 b^2`` (so ``scale = 1/sqrt(2)`` gives unit
    variance).
    """
    if not scale > 0:
        raise DomainError("laplace_family: scale must be positive")
    b = scale

    def cdf(x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0, 0.5 * np.exp(x / b), 1.0 - 0.5 * np.exp(-x / b))

    return LocationFamily(
        name=f"laplace(scale={scale:g})",
        log_density=lambda x: -np.abs(x) / b - math.log(2.0 * b),
        score=lambda x: np.sign(x) / b,
        fisher_location=1.0 / (b * b),
        sample=lambda stream, n: stream.generator().laplace(0.0, b, n),
        variance=2.0 * b * b,
        symmetric=True,
        cdf=cdf,
    )


def logistic_family(scale: float = 1.0) -> LocationFamily:
    """Logistic density with ``I(g) = 1/(3 scale^2)``, variance ``pi^2 scale^2 / 3``."""
    if not scale > 0:
        raise DomainError("logistic_family: scale must be positive")
    s = scale

    def log_density(x):
        z = np.asarray(x, dtype=float) / s
        return -z - 2.0 * np.logaddexp(0.0, -z) - math.log(s)

    def score(x):
        z = np.asarray(x, dtype=float) / s
        # -g'/g = (1 - 2 F(-x)) ... = (2 F(x) - 1) / s for the logistic cdf F
        return (2.0 / (1.0 + np.exp(-z)) - 1.0) / s

    return LocationFamily(
        name=f"logistic(scale={scale:g})",
        log_density=log_density,
        score=score,
        fisher_location=1.0 / (3.0 * s * s),
        sample=lambda stream, n: stream.generator().logistic(0.0, s, n),
        variance=math.pi**2 * s * s / 3.0,
        symmetric=True,
        cdf=lambda x: 1.0 / (1.0 + np.exp(-np.asarray(x, dtype=float) / s)),
    )


def normal_model() -> ParametricModel:
    """Normal family with ``theta = (mu, sigma)``, ``sigma > 0``.

    Score ``((x-mu)/sigma^2, ((x-mu)^2/sigma^2 - 1)/sigma)`` and Fisher
    information ``diag(1/sigma^2, 2/sigma^2)``.
    """

    def _check(theta):
        mu, sigma = float(theta[0]), float(theta[1])
        if not sigma > 0:
            raise DomainError(f"normal model: sigma={sigma} must be positive")
        return mu, sigma

    def log_density(x, theta):
        mu, sigma = _check(theta)
        z = (np.asarray(x, dtype=float) - mu) / sigma
        return -0.5 * z * z - math.log(sigma) - 0.5 * math.log(2.0 * math.pi)

    def score(x, theta):
        mu, sigma = _check(theta)
        z = (np.asarray(x, dtype=float) - mu) / sigma
        return np.column_stack([z / sigma, (z * z - 1.0) / sigma])

    def fisher(theta):
        _, sigma = _check(theta)
        return np.diag([1.0 / sigma**2, 2.0 / sigma**2])

    return ParametricModel(
        name="normal",
        dim_theta=2,
        log_density=log_density,
        score=score,
        fisher=fisher,
        sample=lambda theta, n, stream: _check(theta)[0]
        + _check(theta)[1] * stream.generator().standard_normal(n),
        theta_domain=lambda theta: float(theta[1]) > 0,
    )


def location_model(g: LocationFamily) -> ParametricModel:
    """One-parameter location family ``x ~ g(. - theta)``."""
    if not (np.isfinite(g.fisher_location) and g.fisher_location > 0):
        raise DomainError("location_model: family needs finite positive I(g)")

    return ParametricModel(
        name=f"location[{g.name}]",
        dim_theta=1,
        log_density=lambda x, theta: g.log_density(
            np.asarray(x, dtype=float) - float(theta[0])
        ),
        score=lambda x, theta: g.score(np.asarray(x, dtype=float) - float(theta[0]))[
            :, None
        ],
        fisher=lambda theta: np.array([[g.fisher_location]]),
        sample=lambda theta, n, stream: float(theta[0]) + g.sample(stream, n),
        theta_domain=lambda theta: True,
    )


@dataclass(frozen=True)
class CovariateLaw:
    """Scalar covariate law for the Cox and regression examples."""

    mean: float
    second_moment: float
    draw: Callable[[np.random.Generator, int], np.ndarray]

    @property
    def variance(self) -> float:
        return self.second_moment - self.mean**2

    @staticmethod
    def normal(mean: float = 1.0, variance: float = 1.0) -> "CovariateLaw":
        sd = math.sqrt(variance)
        return CovariateLaw(
            mean=mean,
            second_moment=variance + mean * mean,
            draw=lambda gen, n: mean + sd * gen.standard_normal(n),
        )


def cox_parametric_model(z_law: Optional[CovariateLaw] = None) -> ParametricModel:
    """Proportional hazards with constant baseline hazard ``lambda``.

    Observation ``(y, z)``; given ``Z = z`` the survival time is
    exponential with rate ``exp(z nu) lambda``, so ``theta = (nu, lambda)``
    with ``lambda > 0``.  Scores are ``z (1 - exp(z nu) lambda y)`` and
    ``1/lambda - exp(z nu) y``; the Fisher matrix is
    ``[[E Z^2, E Z / lambda], [E Z / lambda, 1/lambda^2]]``.
    """
    law = z_law if z_law is not None else CovariateLaw.normal()
    if not law.variance > 0:
        raise DomainError("cox model: Var Z must be positive")

    def _check(theta):
        nu, lam = float(theta[0]), float(theta[1])
        if not lam > 0:
            raise DomainError(f"cox model: lambda={lam} must be positive")
        return nu, lam

    def log_density(obs, theta):
        nu, lam = _check(theta)
        y, z = obs
        zn = np.asarray(z, dtype=float) * nu
        return zn + math.log(lam) - np.exp(zn) * lam * np.asarray(y, dtype=float)

    def score(obs, theta):
        nu, lam = _check(theta)
        y, z = obs
        y = np.asarray(y, dtype=float)
        z = np.asarray(z, dtype=float)
        w = np.exp(z * nu) * y
        return np.column_stack([z * (1.0 - lam * w), 1.0 / lam - w])

    def fisher(theta):
        _, lam = _check(theta)
        return np.array(
            [
                [law.second_moment, law.mean / lam],
                [law.mean / lam, 1.0 / lam**2],
            ]
        )

    def sample(theta, n, stream):
        nu, lam = _check(theta)
        gen = stream.generator()
        z = law.draw(gen, n)
        y = gen.exponential(1.0, n) / (np.exp(z * nu) * lam)
        return y, z

    return ParametricModel(
        name="cox",
        dim_theta=2,
        log_density=log_density,
        score=score,
        fisher=fisher,
        sample=sample,
        theta_domain=lambda theta: float(theta[1]) > 0,
    )


def linear_regression_model(
    g: LocationFamily, z_law: Optional[object] = None, dim: int = 1
) -> ParametricModel:
    """Linear regression ``Y = nu' Z + eps`` with error density ``g``.

    The score in ``nu`` is ``z * (-g'/g)(y - nu' z)`` and the Fisher
    matrix is ``I(g) * E Z Z'``.  The default covariate law is standard
    normal in ``dim`` dimensions (nonsingular second moment).
    """
    if z_law is None:
        second_moment = np.eye(dim)

        def draw_z(gen, n):
            return gen.standard_normal((n, dim))

    else:
        second_moment = np.asarray(z_law.second_moment, dtype=float)
        second_moment = (
            second_moment.reshape(1, 1) if second_moment.ndim == 0 else second_moment
        )
        dim = second_moment.shape[0]

        def draw_z(gen, n):
            return np.asarray(z_law.draw(gen, n), dtype=float).reshape(n, dim)

    if abs(np.linalg.det(second_moment)) < 1e-12:
        raise DomainError("linear regression: E Z Z' must be nonsingular")

    def residuals(obs, theta):
        y, z = obs
        return np.asarray(y, dtype=float) - np.asarray(z, dtype=float) @ np.asarray(
            theta, dtype=float
        )

    def sample(theta, n, stream):
        gen = stream.generator()
        z = draw_z(gen, n)
        eps = g.sample(stream.substream(1), n)
        return z @ np.asarray(theta, dtype=float) + eps, z

    return ParametricModel(
        name=f"linreg[{g.name}]",
        dim_theta=dim,
        log_density=lambda obs, theta: g.log_density(residuals(obs, theta)),
        score=lambda obs, theta: np.asarray(obs[1], dtype=float)
        * g.score(residuals(obs, theta))[:, None],
        fisher=lambda theta: g.fisher_location * second_moment,
        sample=sample,
        theta_domain=lambda theta: True,
    )


def exponential_shift_model() -> ParametricModel:
    """Shifted exponential ``exp(-(x-theta))`` on ``x > theta``: not regular.

    The density jumps at its left endpoint, so no root-density derivative
    exists; the Fisher query raises :class:`NotRegularError`.  The score
    field returns the a.e. derivative (identically 1), which is enough for
    diagnostics to exhibit the LAN failure.
    """

    def log_density(x, theta):
        x = np.asarray(x, dtype=float)
        d = x - float(theta[0])
        return np.where(d > 0, -d, -np.inf)

    def fisher(theta):
        raise NotRegularError(
            "exponential shift model is not regular: no Fisher information"
        )

    return ParametricModel(
        name="expshift",
        dim_theta=1,
        log_density=log_density,
        score=lambda x, theta: np.ones((np.asarray(x).size, 1)),
        fisher=fisher,
        sample=lambda theta, n, stream: float(theta[0])
        + stream.generator().exponential(1.0, n),
        theta_domain=lambda theta: True,
        regular=False,
    )


def regularity_quotient(
    model: ParametricModel, theta, h, n: int, stream: RngStream
) -> float:
    """Monte Carlo estimate of the root-density Frechet quotient.

    Computes ``||s(theta+h) - s(theta) - (h' score/2) s(theta)|| / |h|``
    in ``L_2(mu)`` by importance-rewriting the integral under ``P_theta``;
    it must tend to zero as ``h -> 0`` for a regular parametrization.
    """
    theta = np.asarray(theta, dtype=float)
    h = np.asarray(h, dtype=float)
    x = model.sample(theta, n, stream)
    ratio = np.exp(0.5 * (model.log_density(x, theta + h) - model.log_density(x, theta)))
    lin = 0.5 * (model.score(x, theta) @ h)
    return float(np.sqrt(np.mean((ratio - 1.0 - lin) ** 2)) / np.linalg.norm(h))


MODEL_TAGS = (
    "normal",
    "location:normal",
    "location:laplace",
    "location:logistic",
    "cox",
    "linreg",
    "expshift",
    "ar1",
)


def get_model(tag: str, **params) -> ParametricModel:
    """Look up a model by registry tag.

    Tags: ``normal``, ``location:normal``, ``location:laplace``,
    ``location:logistic``, ``cox``, ``linreg``, ``expshift``.  The ``ar1``
    tag is reserved for the time-series pipeline and has no i.i.d. model.
    """
    if tag == "normal":
        return normal_model()
    if tag.startswith("location:"):
        return location_model(_family_by_name(tag.split(":", 1)[1], **params))
    if tag == "cox":
        law = CovariateLaw.normal(params.pop("ez", 1.0), params.pop("varz", 1.0))
        if params:
            raise DomainError(f"cox model: unknown parameters {sorted(params)}")
        return cox_parametric_model(law)
    if tag == "linreg":
        fam = _family_by_name(params.pop("family", "normal"), **params)
        return linear_regression_model(fam, dim=int(params.pop("dim", 1)))
    if tag == "expshift":
        return exponential_shift_model()
    if tag == "ar1":
        raise DomainError(
            "the 'ar1' tag names a time-series process; use semieff.timeseries"
        )
    raise DomainError(f"unknown model tag {tag!r}; known: {', '.join(MODEL_TAGS)}")


def _family_by_name(name: str, **params) -> LocationFamily:
    factories = {
        "normal": gaussian_family,
        "laplace": laplace_family,
        "logistic": logistic_family,
    }
    if name not in factories:
        raise DomainError(f"unknown location family {name!r}")
    return factories[name](**params) if params else factories[name]()
