"""Asymptotic relative efficiencies under the entropy-based missing-label model.

With equal priors everything reduces to one-dimensional integrals over the
first canonical coordinate, where the class means sit at ``+-delta/2`` and the
discriminant is ``delta * y``. ``mc_information`` estimates the per-observation
information matrices by simulation, so the decompositions behind the ARE
formulas can be checked independently of the quadrature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import quad
from scipy.optimize import brentq
from scipy.special import expit, log_expit

from .errors import QuadratureError
from .model import FullParams, GaussianPairModel, MissingnessParams

QUAD_EPSABS = 1e-10
QUAD_MAX_ERR = 1e-9
TAIL = 10.0

TABLE1_DELTAS = (1.0, 2.0, 3.0, 4.0)
XI0_GRID = (1.5, 3.0, 5.0)
DELTA_GRID = (1.0, 2.0, 3.0)
XI1_GRID = (-0.1, -0.5, -1.0, -5.0, -10.0)
# all labels missing, none informative: the fully unclassified MCAR limit
MCAR_ALL_MISSING = MissingnessParams(40.0, 0.0)


@dataclass(frozen=True)
class ARESpec:
    delta: float
    xi: MissingnessParams
    pi1: float = 0.5

    def __post_init__(self):
        if not (np.isfinite(self.delta) and self.delta > 0):
            raise ValueError("delta must be positive")
        if not 0.0 < self.pi1 < 1.0:
            raise ValueError("pi1 must lie in (0, 1)")

    def require_equal_priors(self) -> None:
        if self.pi1 != 0.5:
            raise NotImplementedError("closed-form ARE is only available for pi1 = 0.5")


@dataclass(frozen=True)
class AREReport:
    gamma: float
    d0: float
    b0: float
    u0: float
    are_full: float
    are_ignore: float
    are_ratio: float
    quadrature_error_estimate: float


_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)


def _density(y, spec: ARESpec):
    h = 0.5 * spec.delta
    return _INV_SQRT_2PI * (
        spec.pi1 * np.exp(-0.5 * (y - h) ** 2) + (1.0 - spec.pi1) * np.exp(-0.5 * (y + h) ** 2)
    )


def _disc(y, spec: ARESpec):
    return np.log(spec.pi1 / (1.0 - spec.pi1)) + spec.delta * y


def _scaled_q(y, spec: ARESpec):
    # q / expit(xi0): bounded by 1 when xi1 <= 0, so tiny gamma keeps its precision
    x = spec.xi
    d = _disc(y, spec)
    return np.exp(log_expit(x.xi0 + x.xi1 * d * d) - log_expit(x.xi0))


def _integrate(fn, spec: ARESpec, what: str) -> tuple[float, float]:
    lim = 0.5 * spec.delta + TAIL
    centre = -np.log(spec.pi1 / (1.0 - spec.pi1)) / spec.delta
    pts = [centre] if -lim < centre < lim else None
    val, err = quad(fn, -lim, lim, points=pts, epsabs=QUAD_EPSABS, epsrel=1e-12, limit=400)
    if not np.isfinite(val) or err > QUAD_MAX_ERR:
        raise QuadratureError(f"{what}: error estimate {err:.2e} at {spec}")
    return val, err


def _gamma_scaled(spec: ARESpec) -> tuple[float, float]:
    if spec.xi.xi1 == 0.0:
        return 1.0, 0.0
    return _integrate(lambda y: _scaled_q(y, spec) * _density(y, spec), spec, "gamma")


def gamma_expected_missing(spec: ARESpec) -> float:
    """Expected fraction of unlabelled observations."""
    g, _ = _gamma_scaled(spec)
    return float(expit(spec.xi.xi0) * g)


def _tau_prod(y, spec: ARESpec):
    d = _disc(y, spec)
    return expit(d) * expit(-d)


def _parts(spec: ARESpec) -> tuple[float, float, float, float]:
    """``(gamma, d0, b0, abs error of gamma*d0 and b0 combined)``."""
    x = spec.xi
    scale = expit(x.xi0)
    gs, egs = _gamma_scaled(spec)
    num, enum = _integrate(lambda y: _tau_prod(y, spec) * _scaled_q(y, spec) * _density(y, spec), spec, "d0")
    if gs <= 0.0:
        raise QuadratureError(f"expected missing fraction is zero at {spec}")
    d0 = num / gs
    if x.xi1 == 0.0:
        b0, eb0 = 0.0, 0.0
    else:
        c = 4.0 * x.xi1**2 * spec.delta**2

        def bint(y):
            s = x.xi0 + x.xi1 * _disc(y, spec) ** 2
            return c * y * y * expit(s) * expit(-s) * _density(y, spec)

        b0, eb0 = _integrate(bint, spec, "b0")
    gamma = scale * gs
    err = scale * enum + eb0 + scale * num * egs / gs
    return gamma, d0, b0, err


def integrals_b0_d0(spec: ARESpec) -> tuple[float, float]:
    _, d0, b0, _ = _parts(spec)
    return b0, d0


def are_report(spec: ARESpec) -> AREReport:
    spec.require_equal_priors()
    gamma, d0, b0, err = _parts(spec)
    k = 1.0 + spec.delta**2 / 4.0
    base = 1.0 / (4.0 * k)
    u_ig = base - gamma * d0
    u0 = u_ig + b0
    full = 4.0 * k * u0
    ig = 4.0 * k * u_ig
    if full == 0.0:
        raise ZeroDivisionError("full-likelihood ARE is zero")
    return AREReport(gamma, d0, b0, u0, full, ig, ig / full, 4.0 * k * err)


def are_full(spec: ARESpec) -> float:
    """ARE of the full-likelihood rule against the completely labelled rule."""
    return are_report(spec).are_full


def are_ignore(spec: ARESpec) -> float:
    """ARE of the ignore-mechanism rule against the completely labelled rule."""
    return are_report(spec).are_ignore


def are_ratio(spec: ARESpec) -> float:
    return are_report(spec).are_ratio


# --- tables ----------------------------------------------------------------


@dataclass(frozen=True)
class TableCell:
    key: tuple
    value: float
    error_estimate: float
    message: str = ""

    @property
    def ok(self) -> bool:
        return not self.message


@dataclass(frozen=True)
class TableReport:
    which: str
    key_names: tuple
    cells: tuple = field(default=())

    def failed(self) -> list[TableCell]:
        return [c for c in self.cells if not c.ok]

    def lookup(self, key) -> TableCell:
        key = tuple(float(k) for k in key)
        for c in self.cells:
            if c.key == key:
                return c
        raise KeyError(key)


def table_report(which: str) -> TableReport:
    """Recompute one of the ARE tables; failed cells carry a message and NaN."""
    if which == "table1":
        names = ("pi1", "delta")
        jobs = [((0.5, d), ARESpec(d, MCAR_ALL_MISSING), "are_ignore") for d in TABLE1_DELTAS]
    elif which in ("table2", "table3"):
        names = ("xi0", "delta", "xi1")
        attr = "are_full" if which == "table2" else "are_ratio"
        jobs = [
            ((x0, d, x1), ARESpec(d, MissingnessParams(x0, x1)), attr)
            for x0 in XI0_GRID
            for d in DELTA_GRID
            for x1 in XI1_GRID
        ]
    else:
        raise ValueError(f"unknown ARE table {which!r}")
    cells = []
    for key, spec, attr in jobs:
        try:
            rep = are_report(spec)
            err = rep.quadrature_error_estimate
            if attr == "are_ratio":
                err = err * (1.0 + abs(rep.are_ratio)) / abs(rep.are_full)
            cells.append(TableCell(key, getattr(rep, attr), err))
        except (QuadratureError, ZeroDivisionError) as exc:
            cells.append(TableCell(key, float("nan"), float("nan"), str(exc)))
    return TableReport(which, names, tuple(cells))


# --- Monte Carlo information matrices --------------------------------------

INFO_KINDS = ("full", "ignore", "complete", "labels_given_features", "missingness")
FD_STEP = 1e-4


@dataclass(frozen=True)
class InformationEstimate:
    """Mean per-observation negative Hessian and its elementwise Monte Carlo SE.

    Coordinates are the overall mean, the lower triangle of the overall
    covariance, the discriminant coefficients and the missingness parameters.
    """

    kind: str
    matrix: np.ndarray
    se: np.ndarray
    n_used: int
    coords: tuple

    def block(self, names) -> tuple[np.ndarray, np.ndarray]:
        idx = [self.coords.index(n) for n in names]
        return self.matrix[np.ix_(idx, idx)], self.se[np.ix_(idx, idx)]

    def beta_block(self) -> tuple[np.ndarray, np.ndarray]:
        return self.block([c for c in self.coords if c.startswith("beta")])


def _coord_names(p: int) -> tuple:
    rows, cols = np.tril_indices(p)
    return tuple(
        [f"mu{i + 1}" for i in range(p)]
        + [f"lambda{i + 1}{j + 1}" for i, j in zip(rows, cols)]
        + [f"beta{i}" for i in range(p + 1)]
        + ["xi0", "xi1"]
    )


def to_moment_coords(psi: FullParams) -> np.ndarray:
    """Overall mean, overall covariance (lower triangle), beta, xi."""
    th = psi.theta
    p = th.p
    delta = th.mu1 - th.mu2
    mu = th.pi1 * th.mu1 + th.pi2 * th.mu2
    lam = th.sigma + th.pi1 * th.pi2 * np.outer(delta, delta)
    beta1 = np.linalg.solve(th.sigma, delta)
    beta0 = np.log(th.pi1 / th.pi2) - 0.5 * (th.mu1 + th.mu2) @ beta1
    rows, cols = np.tril_indices(p)
    return np.concatenate([mu, lam[rows, cols], [beta0], beta1, [psi.xi.xi0, psi.xi.xi1]])


def from_moment_coords(phi: np.ndarray, p: int, eta_hint: float = 0.0):
    """Inverse of ``to_moment_coords`` as raw ``(mu1, mu2, sigma, pi1, xi0, xi1)``.

    ``c = beta1' lam beta1`` fixes the squared distance given the prior, and
    ``beta0 + mu' beta1`` then pins the prior through a scalar root.
    """
    k = p * (p + 1) // 2
    mu = phi[:p]
    rows, cols = np.tril_indices(p)
    lam = np.zeros((p, p))
    lam[rows, cols] = phi[p : p + k]
    lam = lam + np.tril(lam, -1).T
    beta0 = phi[p + k]
    beta1 = phi[p + k + 1 : p + k + 1 + p]
    xi0, xi1 = phi[-2:]
    lb = lam @ beta1
    c = float(beta1 @ lb)
    target = beta0 + mu @ beta1

    def dist_sq(eta):
        pp = expit(eta) * expit(-eta)
        return c if pp * c < 1e-12 else (np.sqrt(1.0 + 4.0 * pp * c) - 1.0) / (2.0 * pp)

    def g(eta):
        return eta - 0.5 * (1.0 - 2.0 * expit(eta)) * dist_sq(eta) - target

    lo, hi = eta_hint - 1.0, eta_hint + 1.0
    while g(lo) > 0:
        lo -= 2.0
    while g(hi) < 0:
        hi += 2.0
    eta = brentq(g, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps)
    pi1 = expit(eta)
    pp = pi1 * (1.0 - pi1)
    delta = lb / (1.0 + pp * dist_sq(eta))
    sigma = lam - pp * np.outer(delta, delta)
    return mu + (1.0 - pi1) * delta, mu - pi1 * delta, sigma, pi1, xi0, xi1


def _obs_terms(y, z, m, phi, p, eta_hint):
    """Per-observation ``log pi_z f_z``, ``log f`` and ``log pr(m | y)``."""
    mu1, mu2, sigma, pi1, xi0, xi1 = from_moment_coords(phi, p, eta_hint)
    chol = np.linalg.cholesky(sigma)
    const = -0.5 * p * np.log(2.0 * np.pi) - np.sum(np.log(np.diag(chol)))
    w1 = np.linalg.solve(chol, (y - mu1).T)
    w2 = np.linalg.solve(chol, (y - mu2).T)
    l1 = np.log(pi1) + const - 0.5 * np.sum(w1 * w1, axis=0)
    l2 = np.log1p(-pi1) + const - 0.5 * np.sum(w2 * w2, axis=0)
    joint = np.where(z == 1, l1, l2)
    mix = np.logaddexp(l1, l2)
    # the discriminant is read straight off the beta coordinates
    k = p * (p + 1) // 2
    d = phi[p + k] + y @ phi[p + k + 1 : p + k + 1 + p]
    s = xi0 + xi1 * d * d
    lmiss = np.where(m == 1, log_expit(s), log_expit(-s))
    return joint, mix, lmiss


def _loglik_vector(kind, y, z, m, phi, p, eta_hint):
    joint, mix, lmiss = _obs_terms(y, z, m, phi, p, eta_hint)
    if kind == "complete":
        return joint
    if kind == "labels_given_features":
        return joint - mix
    if kind == "missingness":
        return lmiss
    ig = np.where(m == 1, mix, joint)
    return ig if kind == "ignore" else ig + lmiss


def _fd_hessians(fn, x: np.ndarray, h: float) -> np.ndarray:
    """Per-observation Hessians by central differences, shape ``(n, k, k)``."""
    k = x.size
    f0 = fn(x)
    out = np.empty((f0.size, k, k))
    e = np.eye(k) * h
    for i in range(k):
        out[:, i, i] = (fn(x + e[i]) - 2.0 * f0 + fn(x - e[i])) / h**2
        for j in range(i):
            v = (
                fn(x + e[i] + e[j]) - fn(x + e[i] - e[j]) - fn(x - e[i] + e[j]) + fn(x - e[i] - e[j])
            ) / (4.0 * h * h)
            out[:, i, j] = out[:, j, i] = v
    return out


def draw_full(psi: FullParams, n: int, rng: np.random.Generator):
    """Features, labels and missing indicators drawn from ``psi``."""
    th = psi.theta
    z = np.where(rng.random(n) < th.pi1, 1, 2)
    chol = np.linalg.cholesky(th.sigma)
    y = rng.standard_normal((n, th.p)) @ chol.T + np.where((z == 1)[:, None], th.mu1, th.mu2)
    beta1 = np.linalg.solve(th.sigma, th.mu1 - th.mu2)
    beta0 = np.log(th.pi1 / th.pi2) - 0.5 * (th.mu1 + th.mu2) @ beta1
    d = beta0 + y @ beta1
    m = (rng.random(n) < expit(psi.xi.xi0 + psi.xi.xi1 * d * d)).astype(np.int64)
    return y, z, m


def mc_information(
    loglik_kind: str,
    psi: FullParams,
    n_mc: int,
    seed: Optional[int],
    fd_step: float = FD_STEP,
) -> InformationEstimate:
    """Monte Carlo expected negative Hessian per observation.

    Hessians are taken by finite differences of the per-observation
    log-likelihood. ``labels_given_features`` averages over the unlabelled
    draws only, i.e. it is the conditional information of the logistic model
    for the labels under the feature distribution of unlabelled points.
    """
    if seed is None:
        raise ValueError("mc_information requires an explicit seed")
    if loglik_kind not in INFO_KINDS:
        raise ValueError(f"unknown likelihood kind {loglik_kind!r}")
    if n_mc < 10_000:
        raise ValueError("n_mc must be at least 1e4")
    p = psi.theta.p
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    y, z, m = draw_full(psi, n_mc, rng)
    if loglik_kind == "labels_given_features":
        keep = m == 1
        if keep.sum() < 2:
            raise ValueError("too few unlabelled draws for the conditional information")
        y, z, m = y[keep], z[keep], m[keep]
    x0 = to_moment_coords(psi)
    eta = float(np.log(psi.theta.pi1 / psi.theta.pi2))
    hess = _fd_hessians(lambda x: _loglik_vector(loglik_kind, y, z, m, x, p, eta), x0, fd_step)
    n = hess.shape[0]
    mat = -hess.mean(axis=0)
    se = hess.std(axis=0, ddof=1) / np.sqrt(n)
    return InformationEstimate(loglik_kind, mat, se, n, _coord_names(p))


def model_from_moment_coords(phi: np.ndarray, p: int) -> FullParams:
    mu1, mu2, sigma, pi1, xi0, xi1 = from_moment_coords(np.asarray(phi, dtype=float), p)
    return FullParams(GaussianPairModel(mu1, mu2, sigma, pi1), MissingnessParams(xi0, xi1))
