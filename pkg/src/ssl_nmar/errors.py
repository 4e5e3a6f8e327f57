"""Exception types shared across the package."""


class SingularCovarianceError(ValueError):
    """Covariance matrix is not numerically positive definite."""


class DimensionError(ValueError):
    """Array shapes do not agree."""


class FitError(RuntimeError):
    """An estimator could not produce a usable fit."""


class DegenerateFitError(FitError):
    """A fit collapsed (empty class, vanishing covariance eigenvalue)."""


class QuadratureError(RuntimeError):
    """Numerical integration did not reach the requested accuracy."""


class DiagnosticError(ValueError):
    """Entropy diagnostics cannot be formed for the given groups."""


class SimulationError(RuntimeError):
    """Every replication of a simulation failed."""
