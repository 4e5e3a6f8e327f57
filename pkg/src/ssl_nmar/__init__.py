"""Semi-supervised two-class normal discrimination with entropy-driven missing labels."""

from .errors import (
    DegenerateFitError,
    DiagnosticError,
    DimensionError,
    FitError,
    QuadratureError,
    SimulationError,
    SingularCovarianceError,
)
from .model import (
    DiscriminantCoeffs,
    FullParams,
    GaussianPairModel,
    MissingnessParams,
    PartialSample,
    bayes_classify,
    bayes_coefficients,
    canonicalize,
    discriminant,
    mahalanobis_sq,
    missing_prob,
    posterior,
    shannon_entropy,
)

__version__ = "0.1.0"

__all__ = [
    "DegenerateFitError",
    "DiagnosticError",
    "DimensionError",
    "DiscriminantCoeffs",
    "FitError",
    "FullParams",
    "GaussianPairModel",
    "MissingnessParams",
    "PartialSample",
    "QuadratureError",
    "SimulationError",
    "SingularCovarianceError",
    "bayes_classify",
    "bayes_coefficients",
    "canonicalize",
    "discriminant",
    "mahalanobis_sq",
    "missing_prob",
    "posterior",
    "shannon_entropy",
]
