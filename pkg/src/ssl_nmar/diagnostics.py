"""Does the chance of a label being missing track the posterior entropy?

The pipeline fits the two-component normal mixture ignoring the missing-label
mechanism, computes each row's posterior entropy, and compares labelled with
unlabelled rows on the scale of negative log entropy: kernel densities,
empirical CDFs, and a Nadaraya-Watson estimate of P(labelled | -log e).
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import gaussian_kde, ks_2samp, spearmanr

from .errors import DiagnosticError
from .estimate import fit_ignore_em
from .model import GaussianPairModel, PartialSample, posterior, shannon_entropy

ENTROPY_FLOOR = 1e-300
GRID_POINTS = 512
NW_MIN_DENOM = 1e-12
INTERIOR = (0.05, 0.95)


@dataclass(frozen=True)
class Curve:
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class NWCurve:
    """Kernel regression on a grid; ``y`` and ``se`` are NaN where undefined."""

    x: np.ndarray
    y: np.ndarray
    se: np.ndarray
    bandwidth: float

    @property
    def defined(self) -> np.ndarray:
        return np.isfinite(self.y)


@dataclass(frozen=True)
class EntropyDiagnostics:
    neg_log_entropy: np.ndarray
    miss: np.ndarray
    kde_labelled: Curve
    kde_unlabelled: Curve
    ecdf_labelled: Curve
    ecdf_unlabelled: Curve
    nw_curve: NWCurve
    bandwidths: dict = field(default_factory=dict)
    mean_entropy_labelled: float = float("nan")
    mean_entropy_unlabelled: float = float("nan")
    ks_statistic: float = float("nan")
    increasing: bool = False
    flat: bool = False

    def to_dict(self) -> dict:
        def curve(c: Curve) -> dict:
            return {"x": c.x.tolist(), "y": c.y.tolist()}

        nw = self.nw_curve
        # JSON has no NaN: undefined NW points become null
        nw_vals = [None if not np.isfinite(v) else float(v) for v in nw.y]
        nw_se = [None if not np.isfinite(v) else float(v) for v in nw.se]
        return {
            "n": int(self.miss.size),
            "n_labelled": int(np.sum(self.miss == 0)),
            "n_unlabelled": int(np.sum(self.miss == 1)),
            "mean_entropy_labelled": self.mean_entropy_labelled,
            "mean_entropy_unlabelled": self.mean_entropy_unlabelled,
            "ks_statistic": self.ks_statistic,
            "trend_increasing": bool(self.increasing),
            "flat": bool(self.flat),
            "bandwidths": dict(self.bandwidths),
            "kde_labelled": curve(self.kde_labelled),
            "kde_unlabelled": curve(self.kde_unlabelled),
            "ecdf_labelled": curve(self.ecdf_labelled),
            "ecdf_unlabelled": curve(self.ecdf_unlabelled),
            "nw_curve": {"x": nw.x.tolist(), "y": nw_vals, "se": nw_se, "bandwidth": nw.bandwidth},
        }


def per_obs_entropy(sample: PartialSample, theta: GaussianPairModel) -> np.ndarray:
    """Posterior entropy of every row, labelled or not."""
    return shannon_entropy(posterior(sample.features, theta))


def neg_log_entropy(e) -> np.ndarray:
    return -np.log(np.maximum(np.asarray(e, dtype=float), ENTROPY_FLOOR))


def silverman_bandwidth(x) -> float:
    """Silverman's rule as used by ``scipy.stats.gaussian_kde``."""
    x = np.asarray(x, dtype=float)
    return float(np.std(x, ddof=1) * (0.75 * x.size) ** (-0.2))


def _check_group(x: np.ndarray, name: str) -> None:
    if x.size == 0:
        raise DiagnosticError(f"{name} group is empty")
    if x.size < 2:
        raise DiagnosticError(f"{name} group needs at least two observations")
    if np.ptp(x) == 0.0:
        raise DiagnosticError(f"{name} group has zero variance")


def _ecdf(x: np.ndarray, grid: np.ndarray) -> np.ndarray:
    return np.searchsorted(np.sort(x), grid, side="right") / x.size


def _kde(x: np.ndarray, grid: np.ndarray, bandwidth: Optional[float]) -> tuple[np.ndarray, float]:
    sd = np.std(x, ddof=1)
    bw = "silverman" if bandwidth is None else bandwidth / sd
    kde = gaussian_kde(x, bw_method=bw)
    return kde(grid), float(np.sqrt(kde.covariance[0, 0]))


def nadaraya_watson(
    x,
    y,
    bandwidth: Optional[float] = None,
    grid: int = GRID_POINTS,
) -> NWCurve:
    """Gaussian-kernel regression of ``y`` on ``x`` over an even grid spanning ``x``.

    Pointwise standard errors use the binomial variance ``m(1 - m)``, which
    is appropriate for 0/1 responses.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.size < 5 or y.shape != x.shape:
        raise DiagnosticError("need at least 5 paired observations")
    h = silverman_bandwidth(x) if bandwidth is None else float(bandwidth)
    if not h > 0:
        raise DiagnosticError("bandwidth must be positive")
    g = np.linspace(x.min(), x.max(), grid)
    u = (g[:, None] - x[None, :]) / h
    k = np.exp(-0.5 * u * u) / np.sqrt(2.0 * np.pi)
    den = k.sum(axis=1)
    ok = den >= NW_MIN_DENOM
    with np.errstate(invalid="ignore", divide="ignore"):
        if np.all(y == y[0]):
            m = np.full(grid, y[0])
        else:
            m = (k * y).sum(axis=1) / den
        se = np.sqrt(np.clip(m * (1.0 - m), 0.0, None) * (k * k).sum(axis=1)) / den
    m = np.where(ok, m, np.nan)
    se = np.where(ok, se, np.nan)
    return NWCurve(g, m, se, h)


def _interior(curve: NWCurve, x: np.ndarray) -> np.ndarray:
    lo, hi = np.quantile(x, INTERIOR)
    return (curve.x >= lo) & (curve.x <= hi) & curve.defined


def trend_increasing(curve: NWCurve, x: np.ndarray) -> bool:
    """Rank correlation of at least 0.9 on the interior and a rise beyond 3 SEs."""
    idx = np.flatnonzero(_interior(curve, x))
    if idx.size < 3:
        return False
    rho = spearmanr(curve.x[idx], curve.y[idx]).statistic
    a, b = idx[0], idx[-1]
    rise = curve.y[b] - curve.y[a]
    return bool(rho >= 0.9 and rise > 3.0 * np.hypot(curve.se[a], curve.se[b]))


def is_flat(curve: NWCurve, x: np.ndarray, level: float) -> bool:
    """Every interior point within 3 pointwise SEs of ``level``."""
    idx = _interior(curve, x)
    if not idx.any():
        return False
    return bool(np.all(np.abs(curve.y[idx] - level) <= 3.0 * curve.se[idx]))


def compare_distributions(
    entropy,
    miss,
    bandwidth: Optional[float] = None,
    grid_points: int = GRID_POINTS,
) -> EntropyDiagnostics:
    """Labelled vs unlabelled rows on the negative log entropy scale."""
    e = np.asarray(entropy, dtype=float)
    miss = np.asarray(miss, dtype=np.int64)
    if e.shape != miss.shape:
        raise DiagnosticError("entropy and miss must have the same length")
    x = neg_log_entropy(e)
    xl, xu = x[miss == 0], x[miss == 1]
    _check_group(xl, "labelled")
    _check_group(xu, "unlabelled")

    bw_l = silverman_bandwidth(xl) if bandwidth is None else bandwidth
    bw_u = silverman_bandwidth(xu) if bandwidth is None else bandwidth
    pad = 4.0 * max(bw_l, bw_u)
    grid = np.linspace(x.min() - pad, x.max() + pad, grid_points)
    dens_l, bw_l = _kde(xl, grid, bandwidth)
    dens_u, bw_u = _kde(xu, grid, bandwidth)
    labelled = (miss == 0).astype(float)
    nw = nadaraya_watson(x, labelled, bandwidth, grid_points)
    return EntropyDiagnostics(
        neg_log_entropy=x,
        miss=miss,
        kde_labelled=Curve(grid, dens_l),
        kde_unlabelled=Curve(grid, dens_u),
        ecdf_labelled=Curve(grid, _ecdf(xl, grid)),
        ecdf_unlabelled=Curve(grid, _ecdf(xu, grid)),
        nw_curve=nw,
        bandwidths={"kde_labelled": bw_l, "kde_unlabelled": bw_u, "nw": nw.bandwidth},
        mean_entropy_labelled=float(e[miss == 0].mean()),
        mean_entropy_unlabelled=float(e[miss == 1].mean()),
        ks_statistic=float(ks_2samp(xl, xu).statistic),
        increasing=trend_increasing(nw, x),
        flat=is_flat(nw, x, float(labelled.mean())),
    )


def diagnose(sample: PartialSample, bandwidth: Optional[float] = None) -> EntropyDiagnostics:
    """Fit the mixture ignoring the mechanism, then compare entropy distributions."""
    if sample.n_unclassified == 0:
        raise DiagnosticError("unlabelled group is empty")
    if sample.n_classified == 0:
        raise DiagnosticError("labelled group is empty")
    theta = fit_ignore_em(sample).theta
    return compare_distributions(per_obs_entropy(sample, theta), sample.miss, bandwidth)
