"""Exception types shared across the package."""


class CsbmLabError(Exception):
    """Base class for all csbmlab errors."""


class InvalidConfig(CsbmLabError):
    """A configuration value is out of range or inconsistent."""


class InterpolationRegion(CsbmLabError):
    """Ridgeless closed forms requested inside the interpolation region
    (tau * gamma <= 1), where they do not hold."""


class SolverDiverged(CsbmLabError):
    """An iterative solver failed to reach its residual target.

    Carries the residual trace so callers can inspect the failure.
    """

    def __init__(self, message, residuals=None):
        super().__init__(message)
        self.residuals = list(residuals) if residuals is not None else []


class EstimatorNoisy(CsbmLabError):
    """Monte Carlo trace estimator variance exceeded its tolerance."""


class EmptyResult(CsbmLabError):
    """An operation produced no rows to emit."""
