"""Estimators of the Gaussian pair model from a partially classified sample.

* ``fit_complete``   closed-form ML on a fully labelled sample
* ``fit_ignore_em``  EM on the likelihood that ignores the label mechanism
* ``fit_full_ml``    BFGS on the full likelihood, mechanism included
* ``fit_cml_hard``   hard-assignment (classification ML) iteration
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .errors import DegenerateFitError, FitError, SingularCovarianceError
from .likelihood import loglik_full, loglik_ignore, pack, unpack, value_and_grad
from .model import (
    DiscriminantCoeffs,
    FullParams,
    GaussianPairModel,
    MissingnessParams,
    PartialSample,
    bayes_coefficients,
    log_joint_densities,
    missing_prob,
)

log = logging.getLogger(__name__)

EIG_FLOOR = 1e-8
EM_TOL = 1e-8
QN_TOL = 1e-6
MAX_ITER = 500
EM_MAX_ITER = 5000
# fitted labelling probabilities this close to the indicators mean separation
SEPARATION_TOL = 1e-6


@dataclass(frozen=True)
class FitResult:
    method: str
    theta: GaussianPairModel
    loglik: float
    iterations: int
    converged: bool
    trace: tuple = ()
    xi: Optional[MissingnessParams] = None
    beta_trace: tuple = field(default=(), repr=False)

    @property
    def psi_hat(self) -> FullParams:
        if self.xi is None:
            raise AttributeError(f"{self.method} fit has no missingness parameters")
        return FullParams(self.theta, self.xi)

    @property
    def beta(self) -> DiscriminantCoeffs:
        return bayes_coefficients(self.theta)


def _mstep(y: np.ndarray, w: np.ndarray) -> GaussianPairModel:
    """Weighted Gaussian ML update; ``w`` is an ``(n, 2)`` array of class weights."""
    n = y.shape[0]
    nk = w.sum(axis=0)
    if np.any(nk <= 0):
        raise DegenerateFitError("a class received zero total weight")
    mu1 = w[:, 0] @ y / nk[0]
    mu2 = w[:, 1] @ y / nk[1]
    r1, r2 = y - mu1, y - mu2
    sigma = ((r1 * w[:, :1]).T @ r1 + (r2 * w[:, 1:]).T @ r2) / n
    sigma = 0.5 * (sigma + sigma.T)
    if np.linalg.eigvalsh(sigma)[0] < EIG_FLOOR:
        raise DegenerateFitError("pooled covariance collapsed below eigenvalue floor")
    pi1 = nk[0] / n
    if not 0.0 < pi1 < 1.0:
        raise DegenerateFitError("estimated prior on the boundary")
    try:
        return GaussianPairModel(mu1, mu2, sigma, pi1)
    except SingularCovarianceError as exc:
        raise DegenerateFitError(str(exc)) from exc


def _label_weights(labels: np.ndarray) -> np.ndarray:
    w = np.zeros((labels.size, 2))
    w[labels == 1, 0] = 1.0
    w[labels == 2, 1] = 1.0
    return w


def fit_complete(sample: PartialSample) -> FitResult:
    """Sample proportions, class means and the pooled ML covariance (divisor n)."""
    if sample.n_unclassified:
        raise FitError("fit_complete requires every label to be present")
    n1, n2 = sample.class_counts()
    if min(n1, n2) < 2:
        raise DegenerateFitError("need at least two observations per class")
    if sample.n <= sample.p + 2:
        raise DegenerateFitError("need n > p + 2")
    theta = _mstep(sample.features, _label_weights(sample.labels))
    ll = loglik_ignore(sample, theta)
    return FitResult("cc", theta, ll, 1, True, (ll,))


def default_init(sample: PartialSample) -> GaussianPairModel:
    """Starting values from the labelled rows, falling back to a median split.

    With labelled rows in both classes the class means come from them. The
    covariance is the pooled within-class estimate when that is well
    conditioned, otherwise the total covariance of all rows.
    """
    y = sample.features
    p = sample.p
    n1, n2 = sample.class_counts()
    total = np.atleast_2d(np.cov(y, rowvar=False, bias=True))
    if n1 and n2:
        mu1 = y[sample.labels == 1].mean(axis=0)
        mu2 = y[sample.labels == 2].mean(axis=0)
        pi1 = float(np.clip(n1 / (n1 + n2), 0.1, 0.9))
        sigma = total
        if n1 + n2 >= p + 3:
            lab = sample.labels > 0
            r = y[lab] - np.where((sample.labels[lab] == 1)[:, None], mu1, mu2)
            pooled = r.T @ r / r.shape[0]
            if np.linalg.eigvalsh(pooled)[0] > 1e-3 * np.linalg.eigvalsh(total)[-1]:
                sigma = pooled
    else:
        # split along the leading principal axis
        _, vecs = np.linalg.eigh(total)
        axis = vecs[:, -1]
        proj = (y - y.mean(axis=0)) @ axis
        if n2 and not n1:
            axis = -axis if np.mean(proj[sample.labels == 2]) > 0 else axis
        elif n1 and np.mean(proj[sample.labels == 1]) < 0:
            axis = -axis
        proj = (y - y.mean(axis=0)) @ axis
        upper = proj > np.median(proj)
        if upper.all() or not upper.any():
            raise DegenerateFitError("cannot split sample for initialization")
        mu1, mu2 = y[upper].mean(axis=0), y[~upper].mean(axis=0)
        r = y - np.where(upper[:, None], mu1, mu2)
        sigma = r.T @ r / y.shape[0]
        pi1 = 0.5
    try:
        return GaussianPairModel(mu1, mu2, sigma + 1e-9 * np.eye(p), pi1)
    except (SingularCovarianceError, ValueError) as exc:
        raise DegenerateFitError(f"initialization failed: {exc}") from exc


def fit_ignore_em(
    sample: PartialSample,
    init: Optional[GaussianPairModel] = None,
    tol: float = EM_TOL,
    max_iter: int = EM_MAX_ITER,
) -> FitResult:
    """EM for the ignore-mechanism likelihood.

    Labelled rows keep their 0/1 indicators; unlabelled rows get posterior
    weights. Stops when the log-likelihood increment falls below ``tol``.
    """
    y = sample.features
    unl = sample.miss == 1
    fixed = _label_weights(sample.labels)
    if not unl.any():
        theta = _mstep(y, fixed)
        ll = loglik_ignore(sample, theta)
        return FitResult("ig", theta, ll, 1, True, (ll,))

    lab_col = np.clip(sample.labels - 1, 0, 1)
    rows = np.arange(y.shape[0])

    def estep(th):
        # one density pass gives both the log-likelihood and the weights
        lj = log_joint_densities(y, th)
        lse = np.logaddexp(lj[:, 0], lj[:, 1])
        ll = float(np.sum(np.where(unl, lse, lj[rows, lab_col])))
        w = fixed.copy()
        w[unl] = np.exp(lj[unl] - lse[unl, None])
        return ll, w

    theta = default_init(sample) if init is None else init
    ll, w = estep(theta)
    trace = [ll]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        theta = _mstep(y, w)
        ll_new, w = estep(theta)
        if not np.isfinite(ll_new):
            raise FitError("non-finite log-likelihood during EM")
        trace.append(ll_new)
        if ll_new - ll < tol:
            converged = True
            ll = ll_new
            break
        ll = ll_new
    return FitResult("ig", theta, ll, it, converged, tuple(trace))


def initial_xi(sample: PartialSample) -> MissingnessParams:
    """``(logit of the observed missing fraction, 0)``, fraction kept off 0 and 1."""
    n = sample.n
    frac = np.clip(sample.n_unclassified / n, 0.5 / n, 1.0 - 0.5 / n)
    return MissingnessParams(np.log(frac) - np.log1p(-frac), 0.0)


def fit_full_ml(
    sample: PartialSample,
    init: Optional[FullParams] = None,
    tol: float = QN_TOL,
    max_iter: int = MAX_ITER,
    restarts: int = 2,
) -> FitResult:
    """Quasi-Newton (BFGS) maximization of the full log-likelihood.

    The objective is the per-observation mean log-likelihood, so ``tol`` bounds
    the max-norm of the averaged gradient. Without ``init`` the EM fit of the
    ignore-mechanism likelihood seeds the model parameters.

    If the fitted labelling model separates labelled from unlabelled rows the
    likelihood has no finite maximizer and ``FitError`` is raised.
    """
    if init is None:
        init = FullParams(fit_ignore_em(sample).theta, initial_xi(sample))
    n = sample.n

    def objective(x):
        try:
            v, g = value_and_grad(x, sample)
        except (np.linalg.LinAlgError, FloatingPointError):
            return np.inf, np.zeros_like(x)
        if not np.isfinite(v) or not np.all(np.isfinite(g)):
            return np.inf, np.zeros_like(x)
        return -v / n, -g / n

    x = pack(init)
    f0 = objective(x)[0]
    if not np.isfinite(f0):
        raise FitError("non-finite objective at the starting point")
    trace = [-f0 * n]
    iterations = 0

    def record(intermediate_result):
        trace.append(-intermediate_result.fun * n)

    res = None
    for attempt in range(restarts + 1):
        with np.errstate(over="ignore", under="ignore", divide="ignore", invalid="ignore"):
            res = minimize(
                objective,
                x,
                jac=True,
                method="BFGS",
                callback=record,
                options={"gtol": tol, "maxiter": max_iter - iterations, "norm": np.inf},
            )
        iterations += res.nit
        x = res.x
        if res.success or res.status == 1 or iterations >= max_iter:
            break
        log.debug("BFGS restart %d after: %s", attempt + 1, res.message)

    gmax = float(np.max(np.abs(res.jac)))
    if not np.isfinite(res.fun):
        raise FitError("non-finite objective at the BFGS solution")
    if not res.success and res.status != 1 and gmax > 1e3 * tol:
        raise FitError(f"quasi-Newton failed after {restarts} restarts: {res.message}")
    try:
        psi = unpack(x, sample.p)
    except (SingularCovarianceError, ValueError) as exc:
        raise DegenerateFitError(str(exc)) from exc
    if sample.n_classified and sample.n_unclassified:
        q = missing_prob(sample.features, psi)
        if np.max(np.abs(sample.miss - q)) < SEPARATION_TOL:
            raise FitError("labelling model separates labelled and unlabelled rows; no finite maximizer")
    ll = loglik_full(sample, psi)
    return FitResult("full", psi.theta, ll, iterations, gmax < tol, tuple(trace), xi=psi.xi)


def fit_cml_hard(
    sample: PartialSample,
    init: Optional[GaussianPairModel] = None,
    max_iter: int = 100,
) -> FitResult:
    """Classification ML: hard-assign unlabelled rows, refit, repeat.

    Labelled rows are never reassigned. ``beta_trace[k]`` holds the
    discriminant coefficients after iteration ``k`` (``k = 0`` is the start).
    """
    n1, n2 = sample.class_counts()
    if n1 == 0 or n2 == 0:
        raise DegenerateFitError("CML requires labelled rows in both classes")
    y = sample.features
    unl = sample.miss == 1
    fixed = _label_weights(sample.labels)
    if init is None:
        init = default_init(sample)
    theta = init
    betas = [bayes_coefficients(theta)]
    trace = []
    assign = None
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        lj = log_joint_densities(y[unl], theta)
        new_assign = np.where(lj[:, 0] >= lj[:, 1], 0, 1)
        if assign is not None and np.array_equal(new_assign, assign):
            converged = True
            it -= 1
            break
        assign = new_assign
        w = fixed.copy()
        w[unl] = 0.0
        w[np.flatnonzero(unl), assign] = 1.0
        theta = _mstep(y, w)
        betas.append(bayes_coefficients(theta))
        lj_all = log_joint_densities(y, theta)
        trace.append(float(np.sum(lj_all * w)))
    if not converged:
        lj = log_joint_densities(y[unl], theta)
        converged = np.array_equal(np.where(lj[:, 0] >= lj[:, 1], 0, 1), assign)
    ll = trace[-1] if trace else float(np.sum(log_joint_densities(y, theta) * fixed))
    return FitResult("cml", theta, ll, max(it, 1), bool(converged), tuple(trace), beta_trace=tuple(betas))
