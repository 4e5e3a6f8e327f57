"""Error rates of linear rules under the two-class normal model, and the
expected-error expansion of the hard-assignment (CML) iteration."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .model import DiscriminantCoeffs, GaussianPairModel, bayes_coefficients, mahalanobis_sq


class DegenerateRuleWarning(UserWarning):
    """The rule has a zero slope vector and assigns every point to one class."""


def conditional_error(beta: DiscriminantCoeffs, theta: GaussianPairModel) -> float:
    """Error of the rule "class 1 iff d(y) > 0" when data follow ``theta``."""
    b1 = beta.beta1
    s = float(np.sqrt(b1 @ theta.sigma @ b1))
    if s == 0.0:
        warnings.warn("zero slope: rule is constant", DegenerateRuleWarning, stacklevel=2)
        return theta.pi2 if beta.beta0 > 0 else theta.pi1
    e1 = norm.cdf(-(beta.beta0 + b1 @ theta.mu1) / s)
    e2 = norm.cdf((beta.beta0 + b1 @ theta.mu2) / s)
    return float(theta.pi1 * e1 + theta.pi2 * e2)


def optimal_error(theta: GaussianPairModel) -> float:
    """Error rate of the Bayes rule itself."""
    delta = np.sqrt(mahalanobis_sq(theta))
    if theta.pi1 == 0.5:
        return float(norm.cdf(-0.5 * delta))
    if delta == 0.0:
        return min(theta.pi1, theta.pi2)
    return conditional_error(bayes_coefficients(theta), theta)


def excess_error(beta_hat: DiscriminantCoeffs, theta: GaussianPairModel, atol: float = 1e-12) -> float:
    """Conditional minus optimal error, clipped at zero within ``atol``."""
    ex = conditional_error(beta_hat, theta) - optimal_error(theta)
    if ex < -atol:
        raise ArithmeticError(f"excess error {ex:.3g} below zero beyond tolerance")
    return max(ex, 0.0)


@dataclass(frozen=True)
class CmlExpansionConfig:
    delta: float
    p: int
    n1c: int
    n2c: int
    k: int = 0

    def __post_init__(self):
        if not self.delta > 0:
            raise ValueError("delta must be positive")
        if self.p < 1 or self.k < 0:
            raise ValueError("need p >= 1 and k >= 0")
        if self.n1c < 1 or self.n2c < 1 or self.n1c + self.n2c < 3:
            raise ValueError("need n1c, n2c >= 1 and n1c + n2c >= 3")


def cml_h_coefficients(delta: float) -> tuple[float, float]:
    """Per-iteration contraction factors ``(h1, h2)`` of the CML iteration."""
    phi = norm.pdf(0.5 * delta)
    h1 = phi * (4.0 * phi + delta * (1.0 - 2.0 * norm.cdf(-0.5 * delta)))
    h2 = phi**2 * (4.0 + delta**2) / h1
    return float(h1), float(h2)


def cml_expected_error(cfg: CmlExpansionConfig) -> float:
    """First-order expected error after ``cfg.k`` hard-assignment iterations.

    Equal known priors and a very large unclassified sample are assumed; the
    remainder of order ``1/n_c**2`` is not included.
    """
    d = cfg.delta
    h1, h2 = cml_h_coefficients(d)
    nc = cfg.n1c + cfg.n2c
    k2 = 2 * cfg.k
    a1 = (
        h1**k2 * d / 4.0
        + h2**k2 * (cfg.p - 1) / d * (1.0 / cfg.n1c + 1.0 / cfg.n2c)
        + h2**k2 * (cfg.p - 1) * d / (nc - 2)
    )
    return float(norm.cdf(-0.5 * d) + norm.pdf(0.5 * d) / 4.0 * a1)
