"""semieff: spread lower bounds, semiparametric information bounds,
locally efficient one-step estimators, and a seeded Monte Carlo
verification harness."""

__version__ = "0.1.0"

from .errors import (
    DomainError,
    EstimationError,
    NotRegularError,
    QuadratureError,
    SingularMatrixError,
)
from .numerics import QuantileFn, RngStream, empirical_quantile, integrate, solve_spd

__all__ = [
    "__version__",
    "DomainError",
    "EstimationError",
    "NotRegularError",
    "QuadratureError",
    "SingularMatrixError",
    "QuantileFn",
    "RngStream",
    "empirical_quantile",
    "integrate",
    "solve_spd",
]
