"""Exception types shared across the toolkit."""


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class SingularMatrixError(ValueError):
    """A matrix required to be symmetric positive definite is not."""


class QuadratureError(RuntimeError):
    """Adaptive quadrature failed to reach the requested tolerance.

    Carries the best available estimate and its error bound so callers can
    decide whether to accept a degraded result.
    """

    def __init__(self, message, estimate, error_bound):
        super().__init__(message)
        self.estimate = estimate
        self.error_bound = error_bound


class NotRegularError(RuntimeError):
    """Raised when a regular-model quantity is requested from a model
    that is flagged non-regular (no Fisher information exists)."""


class EstimationError(RuntimeError):
    """An estimator could not be computed from the given sample."""
