"""Seeded Monte Carlo comparison of the full-likelihood and ignore-mechanism rules.

Replication ``b`` of a run draws from its own Philox stream keyed by
``SeedSequence(seed, spawn_key=(0, b))``, so results do not depend on how
replications are scheduled across workers.
"""

from __future__ import annotations

import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.special import expit

from .errors import FitError, SimulationError
from .estimate import fit_full_ml, fit_ignore_em, initial_xi
from .information import DELTA_GRID, XI0_GRID, XI1_GRID
from .model import (
    DiscriminantCoeffs,
    FullParams,
    GaussianPairModel,
    MissingnessParams,
    PartialSample,
    bayes_coefficients,
)
from .risk import excess_error

log = logging.getLogger(__name__)

RNG_ID = f"numpy-{np.__version__}/Philox/SeedSequence(seed, spawn_key=(stream, index))"

TABLE_N = {"table4": 500, "table5": 100}


@dataclass(frozen=True)
class SimConfig:
    n: int
    delta: float
    xi: MissingnessParams
    p: int = 1
    pi1: float = 0.5
    reps: int = 1000
    seed: int = 0
    bootstrap_reps: int = 1000

    def __post_init__(self):
        if self.n < 10:
            raise ValueError("n must be at least 10")
        if self.reps < 2:
            raise ValueError("reps must be at least 2")
        if self.bootstrap_reps < 100:
            raise ValueError("bootstrap_reps must be at least 100")
        if self.p < 1 or not self.delta > 0 or not 0 < self.pi1 < 1:
            raise ValueError("need p >= 1, delta > 0 and 0 < pi1 < 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")

    @property
    def theta(self) -> GaussianPairModel:
        return GaussianPairModel.canonical(self.delta, self.p, self.pi1)

    @property
    def psi(self) -> FullParams:
        return FullParams(self.theta, self.xi)


@dataclass(frozen=True)
class SimReport:
    re_hat: float
    bootstrap_se: float
    mean_excess_full: float
    mean_excess_ignore: float
    failures: int
    reps_used: int
    degenerate: bool = False
    rng: str = RNG_ID
    excess_full: tuple = field(default=(), repr=False)
    excess_ignore: tuple = field(default=(), repr=False)

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("excess_full")
        d.pop("excess_ignore")
        return d


def rng_for(seed: int, index: int, stream: int = 0) -> np.random.Generator:
    ss = np.random.SeedSequence(seed, spawn_key=(stream, index))
    return np.random.Generator(np.random.Philox(ss))


def draw(cfg: SimConfig, rng: np.random.Generator, n: Optional[int] = None):
    """Features, true labels and missing-label indicators for one sample."""
    n = cfg.n if n is None else n
    z = np.where(rng.random(n) < cfg.pi1, 1, 2)
    y = rng.standard_normal((n, cfg.p))
    y[:, 0] += np.where(z == 1, cfg.delta, 0.0)
    beta = bayes_coefficients(cfg.theta)
    d = beta.beta0 + y @ beta.beta1
    m = (rng.random(n) < expit(cfg.xi.xi0 + cfg.xi.xi1 * d * d)).astype(np.int64)
    return y, z, m


def gen_partial_sample(cfg: SimConfig, rep_index: int) -> PartialSample:
    y, z, m = draw(cfg, rng_for(cfg.seed, rep_index))
    return PartialSample(y, np.where(m == 1, 0, z))


Estimators = Callable[[PartialSample, SimConfig], tuple[DiscriminantCoeffs, DiscriminantCoeffs]]


def fit_both(sample: PartialSample, cfg: SimConfig) -> tuple[DiscriminantCoeffs, DiscriminantCoeffs]:
    """``(beta_ignore, beta_full)``; the EM fit seeds the full-likelihood fit."""
    ig = fit_ignore_em(sample)
    full = fit_full_ml(sample, init=FullParams(ig.theta, initial_xi(sample)))
    return ig.beta, full.beta


def _one_rep(args) -> Optional[tuple[float, float]]:
    cfg, b, estimators = args
    sample = gen_partial_sample(cfg, b)
    try:
        with np.errstate(all="ignore"):
            beta_ig, beta_full = (estimators or fit_both)(sample, cfg)
    except (FitError, ValueError, np.linalg.LinAlgError) as exc:
        log.debug("replication %d failed: %s", b, exc)
        return None
    theta = cfg.theta
    return excess_error(beta_full, theta), excess_error(beta_ig, theta)


def resolve_threads(threads: Optional[int]) -> int:
    if threads is None:
        env = os.environ.get("SSL_NMAR_THREADS")
        threads = int(env) if env else (os.cpu_count() or 1)
    return max(1, int(threads))


def _run_reps(cfg: SimConfig, estimators: Optional[Estimators], threads: Optional[int]):
    jobs = [(cfg, b, estimators) for b in range(cfg.reps)]
    workers = resolve_threads(threads)
    if workers == 1:
        return [_one_rep(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_one_rep, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def bootstrap_ratio_se(ex_full: np.ndarray, ex_ig: np.ndarray, reps: int, rng: np.random.Generator) -> float:
    """Bootstrap SE of ``mean(ex_full) / mean(ex_ig)`` over paired replications."""
    b = ex_full.size
    idx = rng.integers(0, b, size=(reps, b))
    num = ex_full[idx].mean(axis=1)
    den = ex_ig[idx].mean(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        ratios = num / den
    ratios = ratios[np.isfinite(ratios)]
    return float(np.std(ratios, ddof=1)) if ratios.size > 1 else float("nan")


def simulate_re(
    cfg: SimConfig,
    threads: Optional[int] = None,
    estimators: Optional[Estimators] = None,
) -> SimReport:
    """Monte Carlo relative efficiency of the ignore-mechanism rule vs the full rule.

    The ratio is mean excess error (full) over mean excess error (ignore).
    Replications whose fits fail are excluded and counted in ``failures``.
    """
    results = _run_reps(cfg, estimators, threads)
    ok = [r for r in results if r is not None]
    failures = len(results) - len(ok)
    if not ok:
        raise SimulationError("all replications failed")
    ex_full = np.array([r[0] for r in ok])
    ex_ig = np.array([r[1] for r in ok])
    mf, mi = float(ex_full.mean()), float(ex_ig.mean())
    degenerate = mi == 0.0
    if degenerate:
        re_hat, se = float("nan"), float("nan")
    else:
        re_hat = mf / mi
        se = bootstrap_ratio_se(ex_full, ex_ig, cfg.bootstrap_reps, rng_for(cfg.seed, 0, stream=1))
    return SimReport(
        re_hat, se, mf, mi, failures, len(ok), degenerate,
        excess_full=tuple(ex_full.tolist()), excess_ignore=tuple(ex_ig.tolist()),
    )


def cell_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence(seed, spawn_key=(2, index)).generate_state(1, np.uint64)[0])


def table_grid() -> list[tuple[float, float, float]]:
    return [(x0, d, x1) for x0 in XI0_GRID for d in DELTA_GRID for x1 in XI1_GRID]


def simulate_tables(
    which: str,
    seed: int = 0,
    reps: int = 1000,
    threads: Optional[int] = None,
    cells: Optional[list[tuple[float, float, float]]] = None,
    bootstrap_reps: int = 1000,
) -> dict[tuple[float, float, float], SimReport]:
    """Sweep the (xi0, delta, xi1) grid at the table's sample size, p = 1, equal priors.

    Cell seeds depend on the cell's position in the full grid, so a subset
    reproduces the corresponding cells of a full sweep. Cells off the grid are
    keyed after it, in the order given.
    """
    if which not in TABLE_N:
        raise ValueError(f"unknown simulation table {which!r}")
    grid = table_grid()
    wanted = grid if cells is None else [tuple(map(float, c)) for c in cells]
    out = {}
    extra = len(grid)
    for cell in wanted:
        if cell in grid:
            index = grid.index(cell)
        else:
            index, extra = extra, extra + 1
        x0, d, x1 = cell
        cfg = SimConfig(
            n=TABLE_N[which], delta=d, xi=MissingnessParams(x0, x1), reps=reps,
            seed=cell_seed(seed, index), bootstrap_reps=bootstrap_reps,
        )
        out[cell] = simulate_re(cfg, threads=threads)
    return out
