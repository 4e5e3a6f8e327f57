"""Two-class homoscedastic Gaussian model, its linear Bayes rule, and the
entropy-based missing-label probability.

Every other module consumes the value types defined here. Functions accept a
single feature vector (shape ``(p,)``) or a batch of rows (shape ``(n, p)``)
and return a scalar or an array accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.special import expit

from .errors import DimensionError, SingularCovarianceError

PD_RTOL = 1e-10
_LOG_2PI = np.log(2.0 * np.pi)


def _frozen(a) -> np.ndarray:
    arr = np.array(a, dtype=float)
    arr.setflags(write=False)
    return arr


def check_positive_definite(sigma: np.ndarray) -> None:
    """Raise unless the smallest eigenvalue exceeds ``PD_RTOL`` times the largest."""
    if not np.all(np.isfinite(sigma)):
        raise SingularCovarianceError("covariance has non-finite entries")
    eig = np.linalg.eigvalsh(sigma)
    if eig[-1] <= 0 or eig[0] <= PD_RTOL * eig[-1]:
        raise SingularCovarianceError(
            f"covariance not positive definite (eigenvalues {eig[0]:.3g} .. {eig[-1]:.3g})"
        )


@dataclass(frozen=True)
class GaussianPairModel:
    """Class means, shared covariance and class-1 prior."""

    mu1: np.ndarray
    mu2: np.ndarray
    sigma: np.ndarray
    pi1: float

    def __post_init__(self):
        mu1 = _frozen(self.mu1).reshape(-1)
        mu2 = _frozen(self.mu2).reshape(-1)
        p = mu1.size
        sigma = _frozen(self.sigma).reshape(p, p) if np.size(self.sigma) == p * p else None
        if mu2.size != p or sigma is None:
            raise DimensionError("mu1, mu2 and sigma must share dimension p")
        if not np.allclose(sigma, sigma.T, rtol=1e-12, atol=1e-14):
            raise SingularCovarianceError("covariance is not symmetric")
        check_positive_definite(sigma)
        if not 0.0 < float(self.pi1) < 1.0:
            raise ValueError(f"pi1 must lie in (0, 1), got {self.pi1}")
        object.__setattr__(self, "mu1", mu1)
        object.__setattr__(self, "mu2", mu2)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "pi1", float(self.pi1))

    @property
    def p(self) -> int:
        return self.mu1.size

    @property
    def pi2(self) -> float:
        return 1.0 - self.pi1

    @classmethod
    def canonical(cls, delta: float, p: int = 1, pi1: float = 0.5) -> "GaussianPairModel":
        """Identity covariance, ``mu1 = (delta, 0, ...)`` and ``mu2 = 0``."""
        mu1 = np.zeros(p)
        mu1[0] = delta
        return cls(mu1, np.zeros(p), np.eye(p), pi1)


@dataclass(frozen=True)
class DiscriminantCoeffs:
    beta0: float
    beta1: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "beta0", float(self.beta0))
        object.__setattr__(self, "beta1", _frozen(self.beta1).reshape(-1))

    def as_vector(self) -> np.ndarray:
        return np.concatenate([[self.beta0], self.beta1])

    @classmethod
    def from_vector(cls, v) -> "DiscriminantCoeffs":
        v = np.asarray(v, dtype=float)
        return cls(v[0], v[1:])


@dataclass(frozen=True)
class MissingnessParams:
    """Logistic missing-label model: ``q = expit(xi0 + xi1 * d**2)``."""

    xi0: float
    xi1: float

    def __post_init__(self):
        if not (np.isfinite(self.xi0) and np.isfinite(self.xi1)):
            raise ValueError("xi0 and xi1 must be finite")
        object.__setattr__(self, "xi0", float(self.xi0))
        object.__setattr__(self, "xi1", float(self.xi1))


@dataclass(frozen=True)
class FullParams:
    theta: GaussianPairModel
    xi: MissingnessParams


@dataclass(frozen=True)
class PartialSample:
    """Feature rows with optional labels in {1, 2}.

    ``labels`` stores 0 where a label is absent; ``miss`` is 1 exactly there.
    """

    features: np.ndarray
    labels: np.ndarray
    miss: np.ndarray = field(default=None)

    def __post_init__(self):
        y = np.array(self.features, dtype=float)
        if y.ndim == 1:
            y = y[:, None]
        if y.ndim != 2 or y.shape[0] < 1:
            raise DimensionError("features must be an (n, p) array with n >= 1")
        labels = np.array(
            [0 if (z is None or (isinstance(z, float) and np.isnan(z))) else z for z in self.labels],
            dtype=float,
        )
        if labels.shape != (y.shape[0],):
            raise DimensionError("one label entry is required per feature row")
        if not np.all(np.isin(labels, (0, 1, 2))):
            raise ValueError("labels must be 1, 2 or missing")
        labels = labels.astype(np.int64)
        miss = (labels == 0).astype(np.int64)
        if self.miss is not None:
            given = np.asarray(self.miss, dtype=np.int64).reshape(-1)
            if not np.array_equal(given, miss):
                raise ValueError("miss[j] must be 1 exactly when labels[j] is absent")
        for name, arr in (("features", y), ("labels", labels), ("miss", miss)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def p(self) -> int:
        return self.features.shape[1]

    @property
    def n_unclassified(self) -> int:
        return int(self.miss.sum())

    @property
    def n_classified(self) -> int:
        return self.n - self.n_unclassified

    def class_counts(self) -> tuple[int, int]:
        return int(np.sum(self.labels == 1)), int(np.sum(self.labels == 2))

    @classmethod
    def from_arrays(cls, features, labels: Sequence[Optional[int]]) -> "PartialSample":
        return cls(features, labels)


def _rows(y, p: int) -> tuple[np.ndarray, bool]:
    y = np.asarray(y, dtype=float)
    single = y.ndim == 1
    y2 = y[None, :] if single else y
    if y2.ndim != 2 or y2.shape[1] != p:
        raise DimensionError(f"expected feature dimension {p}, got shape {y.shape}")
    return y2, single


def mahalanobis_sq(theta: GaussianPairModel) -> float:
    delta = theta.mu1 - theta.mu2
    return float(delta @ np.linalg.solve(theta.sigma, delta))


def bayes_coefficients(theta: GaussianPairModel) -> DiscriminantCoeffs:
    """Coefficients of the linear rule ``d(y) = beta0 + beta1 @ y``."""
    check_positive_definite(theta.sigma)
    beta1 = np.linalg.solve(theta.sigma, theta.mu1 - theta.mu2)
    beta0 = np.log(theta.pi1 / theta.pi2) - 0.5 * (theta.mu1 + theta.mu2) @ beta1
    return DiscriminantCoeffs(beta0, beta1)


def discriminant(y, beta: DiscriminantCoeffs):
    y2, single = _rows(y, beta.beta1.size)
    d = beta.beta0 + y2 @ beta.beta1
    return float(d[0]) if single else d


def log_joint_densities(y, theta: GaussianPairModel) -> np.ndarray:
    """``log(pi_i f_i(y))`` as an ``(n, 2)`` array."""
    y2, _ = _rows(y, theta.p)
    chol = np.linalg.cholesky(theta.sigma)
    half_logdet = np.sum(np.log(np.diag(chol)))
    out = np.empty((y2.shape[0], 2))
    for i, (mu, pi) in enumerate(((theta.mu1, theta.pi1), (theta.mu2, theta.pi2))):
        z = np.linalg.solve(chol, (y2 - mu).T)
        out[:, i] = np.log(pi) - 0.5 * theta.p * _LOG_2PI - half_logdet - 0.5 * np.sum(z * z, axis=0)
    return out


def posterior(y, theta: GaussianPairModel) -> np.ndarray:
    """Class posterior probabilities ``(tau1, tau2)`` computed from the densities."""
    lj = log_joint_densities(y, theta)
    tau = np.exp(lj - np.logaddexp(lj[:, :1], lj[:, 1:]))
    return tau[0] if np.ndim(y) == 1 else tau


def bayes_classify(y, theta: GaussianPairModel):
    """Argmax of the posterior; exact ties go to class 1."""
    lj = log_joint_densities(y, theta)
    cls = np.where(lj[:, 0] >= lj[:, 1], 1, 2)
    return int(cls[0]) if np.ndim(y) == 1 else cls


def shannon_entropy(tau, atol: float = 1e-9):
    """Natural-log entropy along the last axis, with ``0 log 0 = 0``."""
    tau = np.asarray(tau, dtype=float)
    if np.any(tau < 0) or np.any(np.abs(tau.sum(axis=-1) - 1.0) > atol):
        raise ValueError("not a probability vector")
    with np.errstate(divide="ignore", invalid="ignore"):
        terms = np.where(tau > 0, tau * np.log(np.where(tau > 0, tau, 1.0)), 0.0)
    e = -terms.sum(axis=-1)
    return float(e) if e.ndim == 0 else e


def missing_prob(y, psi: FullParams):
    """Probability that the label of ``y`` is missing."""
    d = discriminant(y, bayes_coefficients(psi.theta))
    q = expit(psi.xi.xi0 + psi.xi.xi1 * np.square(d))
    return float(q) if np.ndim(q) == 0 else q


def missing_prob_from_posterior(tau1, xi: MissingnessParams):
    """Same probability written through the class-1 posterior (logit tau1 = d)."""
    tau1 = np.asarray(tau1, dtype=float)
    logit = np.log(tau1) - np.log1p(-tau1)
    q = expit(xi.xi0 + xi.xi1 * logit**2)
    return float(q) if q.ndim == 0 else q


def canonicalize(theta: GaussianPairModel) -> GaussianPairModel:
    """Equivalent model with identity covariance, ``mu2 = 0`` and the same Δ and prior."""
    delta = np.sqrt(max(mahalanobis_sq(theta), 0.0))
    return GaussianPairModel.canonical(delta, theta.p, theta.pi1)
