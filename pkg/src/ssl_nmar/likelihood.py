"""Log-likelihoods of a partially classified sample and their gradients.

The free (unconstrained) parameter vector used by the optimizers is::

    [mu1 (p), mu2 (p), log-Cholesky of sigma (p(p+1)/2), logit pi1, xi0, xi1]

where the log-Cholesky block lists ``tril_indices(p)`` entries of the lower
Cholesky factor with the diagonal entries replaced by their logarithms.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import expit

from .errors import DimensionError
from .model import (
    FullParams,
    GaussianPairModel,
    MissingnessParams,
    PartialSample,
    bayes_coefficients,
    discriminant,
    log_joint_densities,
)

_LOG_2PI = np.log(2.0 * np.pi)


@dataclass(frozen=True)
class LogLikValue:
    value: float
    n_classified: int
    n_unclassified: int


def _check(sample: PartialSample, theta: GaussianPairModel) -> None:
    if sample.p != theta.p:
        raise DimensionError(f"sample has p={sample.p}, model has p={theta.p}")


def loglik_classified(sample: PartialSample, theta: GaussianPairModel) -> float:
    _check(sample, theta)
    lab = sample.miss == 0
    if not lab.any():
        return 0.0
    lj = log_joint_densities(sample.features[lab], theta)
    z = sample.labels[lab] - 1
    return float(np.sum(lj[np.arange(z.size), z]))


def loglik_unclassified(sample: PartialSample, theta: GaussianPairModel) -> float:
    _check(sample, theta)
    unl = sample.miss == 1
    if not unl.any():
        return 0.0
    lj = log_joint_densities(sample.features[unl], theta)
    return float(np.sum(np.logaddexp(lj[:, 0], lj[:, 1])))


def loglik_ignore(sample: PartialSample, theta: GaussianPairModel) -> float:
    return loglik_classified(sample, theta) + loglik_unclassified(sample, theta)


def loglik_missing(sample: PartialSample, psi: FullParams) -> float:
    _check(sample, psi.theta)
    d = discriminant(sample.features, bayes_coefficients(psi.theta))
    s = psi.xi.xi0 + psi.xi.xi1 * d * d
    m = sample.miss
    # log q for missing rows, log(1 - q) otherwise
    return -float(np.sum(np.logaddexp(0.0, np.where(m == 1, -s, s))))


def loglik_full(sample: PartialSample, psi: FullParams) -> float:
    return loglik_ignore(sample, psi.theta) + loglik_missing(sample, psi)


def loglik_breakdown(sample: PartialSample, psi: FullParams) -> dict[str, LogLikValue]:
    """All component log-likelihoods, tagged with the sample's label counts."""
    nc, nu = sample.n_classified, sample.n_unclassified
    parts = {
        "classified": loglik_classified(sample, psi.theta),
        "unclassified": loglik_unclassified(sample, psi.theta),
        "missing": loglik_missing(sample, psi),
    }
    parts["ignore"] = parts["classified"] + parts["unclassified"]
    parts["full"] = parts["ignore"] + parts["missing"]
    return {k: LogLikValue(v, nc, nu) for k, v in parts.items()}


# --- free parameterization -------------------------------------------------


@lru_cache(maxsize=None)
def _tril(p: int):
    rows, cols = np.tril_indices(p)
    return rows, cols, rows == cols


def n_free(p: int) -> int:
    return 2 * p + p * (p + 1) // 2 + 3


def pack(psi: FullParams) -> np.ndarray:
    """Map ``psi`` to the unconstrained vector."""
    th = psi.theta
    p = th.p
    chol = np.linalg.cholesky(th.sigma)
    rows, cols, diag = _tril(p)
    lc = chol[rows, cols].copy()
    lc[diag] = np.log(lc[diag])
    eta = np.log(th.pi1) - np.log1p(-th.pi1)
    return np.concatenate([th.mu1, th.mu2, lc, [eta, psi.xi.xi0, psi.xi.xi1]])


def _split(x: np.ndarray, p: int):
    x = np.asarray(x, dtype=float)
    if x.size != n_free(p):
        raise DimensionError(f"free vector for p={p} must have length {n_free(p)}")
    k = p * (p + 1) // 2
    mu1, mu2 = x[:p], x[p : 2 * p]
    lc = x[2 * p : 2 * p + k]
    eta, xi0, xi1 = x[2 * p + k :]
    rows, cols, diag = _tril(p)
    chol = np.zeros((p, p))
    chol[rows, cols] = np.where(diag, np.exp(lc), lc)
    return mu1, mu2, chol, eta, xi0, xi1


def unpack(x, p: int) -> FullParams:
    mu1, mu2, chol, eta, xi0, xi1 = _split(x, p)
    theta = GaussianPairModel(mu1, mu2, chol @ chol.T, expit(eta))
    return FullParams(theta, MissingnessParams(xi0, xi1))


def value_and_grad(x, sample: PartialSample, include_missing: bool = True) -> tuple[float, np.ndarray]:
    """Log-likelihood (full, or ignore-mechanism) and its gradient in free coordinates."""
    p = sample.p
    mu1, mu2, chol, eta, xi0, xi1 = _split(x, p)
    y = sample.features
    lab = sample.labels
    m = sample.miss
    n = y.shape[0]

    # p is small: explicit inverses are cheaper than repeated solver calls
    chol_inv = np.linalg.inv(chol)
    sig_inv = chol_inv.T @ chol_inv
    const = -0.5 * p * _LOG_2PI - np.sum(np.log(np.diag(chol)))
    r1 = y - mu1
    r2 = y - mu2
    w1 = r1 @ chol_inv.T
    w2 = r2 @ chol_inv.T
    l1 = -np.logaddexp(0.0, -eta) + const - 0.5 * np.einsum("ij,ij->i", w1, w1)
    l2 = -np.logaddexp(0.0, eta) + const - 0.5 * np.einsum("ij,ij->i", w2, w2)

    # class weights: fixed indicators for labelled rows, posteriors otherwise
    lse = np.logaddexp(l1, l2)
    value = float(np.sum(np.where(m == 1, lse, np.where(lab == 1, l1, l2))))
    t1 = np.where(m == 1, np.exp(l1 - lse), (lab == 1).astype(float))
    t2 = 1.0 - t1

    g_mu1 = sig_inv @ (t1 @ r1)
    g_mu2 = sig_inv @ (t2 @ r2)
    scatter = (r1 * t1[:, None]).T @ r1 + (r2 * t2[:, None]).T @ r2
    g_sigma = 0.5 * sig_inv @ scatter @ sig_inv - 0.5 * n * sig_inv
    g_eta = t1.sum() - n * expit(eta)
    g_xi = np.zeros(2)

    if include_missing:
        beta1 = sig_inv @ (mu1 - mu2)
        beta0 = eta - 0.5 * (mu1 + mu2) @ beta1
        d = beta0 + y @ beta1
        s = xi0 + xi1 * d * d
        value -= float(np.sum(np.logaddexp(0.0, np.where(m == 1, -s, s))))
        gs = m - expit(s)
        g_xi = np.array([gs.sum(), gs @ (d * d)])
        gd = gs * 2.0 * xi1 * d
        a = gd.sum()
        c = gd @ y - 0.5 * a * (mu1 + mu2)
        sc = sig_inv @ c
        g_eta += a
        g_mu1 = g_mu1 - 0.5 * a * beta1 + sc
        g_mu2 = g_mu2 - 0.5 * a * beta1 - sc
        g_sigma = g_sigma - 0.5 * (np.outer(sc, beta1) + np.outer(beta1, sc))

    g_chol = 2.0 * g_sigma @ chol
    rows, cols, diag = _tril(p)
    g_lc = g_chol[rows, cols]
    g_lc[diag] *= chol[rows[diag], cols[diag]]
    grad = np.concatenate([g_mu1, g_mu2, g_lc, [g_eta], g_xi])
    return value, grad


def grad_loglik_full(sample: PartialSample, psi: FullParams) -> np.ndarray:
    """Gradient of the full log-likelihood in the free parameterization."""
    _check(sample, psi.theta)
    return value_and_grad(pack(psi), sample, include_missing=True)[1]
