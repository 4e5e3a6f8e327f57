"""Acceptance criteria, one test each, at the stated tolerances.

Each test records a PASS/FAIL line that ``conftest.py`` prints in the
terminal summary. Reference values are the published table entries.
"""

import time

import numpy as np
import pytest
from scipy.stats import norm

from ssl_nmar.diagnostics import diagnose
from ssl_nmar.errors import DegenerateFitError
from ssl_nmar.estimate import fit_ignore_em
from ssl_nmar.information import (
    ARESpec,
    DELTA_GRID,
    INFO_KINDS,
    XI0_GRID,
    XI1_GRID,
    are_ignore,
    are_ratio,
    gamma_expected_missing,
    mc_information,
    table_report,
)
from ssl_nmar.likelihood import pack, value_and_grad
from ssl_nmar.model import FullParams, GaussianPairModel, MissingnessParams, PartialSample, bayes_coefficients
from ssl_nmar.risk import CmlExpansionConfig, cml_expected_error, cml_h_coefficients
from ssl_nmar.simulate import SimConfig, draw, gen_partial_sample, rng_for, simulate_re, simulate_tables

pytestmark = pytest.mark.slow

TABLE1_REFERENCE = {1.0: 0.0051, 2.0: 0.1008, 3.0: 0.3592, 4.0: 0.6580}

# rows are (xi0, delta), columns xi1 = -0.1, -0.5, -1, -5, -10
TABLE2_REFERENCE = [
    [0.2, 1.5, 3.6, 15.0, 23.1], [0.8, 3.1, 4.7, 10.3, 14.4], [1.6, 2.9, 3.6, 6.6, 8.9],
    [0.1, 1.0, 3.5, 20.2, 32.5], [0.5, 4.0, 6.4, 14.8, 20.9], [1.9, 4.1, 5.1, 9.4, 12.8],
    [0.01, 0.4, 2.4, 23.4, 40.4], [0.3, 4.4, 7.8, 19.4, 27.5], [1.9, 5.5, 6.9, 12.5, 16.9],
]
TABLE3_REFERENCE = [
    [0.81, 0.18, 0.09, 0.04, 0.03], [0.39, 0.14, 0.12, 0.07, 0.06], [0.32, 0.23, 0.20, 0.13, 0.10],
    [0.78, 0.09, 0.04, 0.02, 0.02], [0.29, 0.07, 0.06, 0.04, 0.04], [0.21, 0.13, 0.12, 0.08, 0.07],
    [0.83, 0.05, 0.02, 0.01, 0.01], [0.41, 0.04, 0.03, 0.03, 0.02], [0.19, 0.08, 0.08, 0.06, 0.05],
]
# (value, bootstrap SE)
TABLE4_REFERENCE = [
    [(0.93, 0.026), (0.18, 0.011), (0.09, 0.005), (0.04, 0.002), (0.03, 0.002)],
    [(0.39, 0.021), (0.16, 0.009), (0.12, 0.007), (0.08, 0.005), (0.06, 0.004)],
    [(0.34, 0.018), (0.22, 0.012), (0.20, 0.011), (0.14, 0.009), (0.12, 0.008)],
    [(0.98, 0.041), (0.09, 0.005), (0.04, 0.002), (0.02, 0.001), (0.02, 0.001)],
    [(0.31, 0.018), (0.08, 0.005), (0.06, 0.003), (0.04, 0.003), (0.03, 0.002)],
    [(0.21, 0.011), (0.13, 0.008), (0.12, 0.008), (0.09, 0.006), (0.08, 0.005)],
    [(0.88, 0.028), (0.14, 0.015), (0.02, 0.001), (0.01, 0.001), (0.01, 0.001)],
    [(0.44, 0.032), (0.03, 0.002), (0.03, 0.002), (0.03, 0.002), (0.02, 0.002)],
    [(0.21, 0.013), (0.08, 0.005), (0.08, 0.005), (0.07, 0.004), (0.06, 0.004)],
]
TABLE5_REFERENCE = [
    [(1.12, 0.037), (0.27, 0.029), (0.10, 0.006), (0.04, 0.003), (0.03, 0.002)],
    [(0.42, 0.020), (0.16, 0.009), (0.13, 0.008), (0.10, 0.007), (0.07, 0.004)],
    [(0.33, 0.018), (0.26, 0.015), (0.25, 0.014), (0.25, 0.015), (0.29, 0.016)],
    [(1.05, 0.018), (0.42, 0.028), (0.09, 0.015), (0.02, 0.002), (0.02, 0.001)],
    [(0.43, 0.046), (0.07, 0.005), (0.06, 0.003), (0.06, 0.004), (0.05, 0.003)],
    [(0.24, 0.015), (0.16, 0.009), (0.15, 0.009), (0.17, 0.009), (0.20, 0.012)],
    [(0.96, 0.019), (0.79, 0.033), (0.28, 0.024), (0.01, 0.001), (0.01, 0.001)],
    [(0.92, 0.073), (0.04, 0.003), (0.04, 0.002), (0.04, 0.003), (0.04, 0.003)],
    [(0.19, 0.012), (0.10, 0.006), (0.10, 0.007), (0.15, 0.009), (0.19, 0.012)],
]

SMOKE_CELLS = [(1.5, 1.0, -0.1), (1.5, 3.0, -10.0), (3.0, 1.0, -5.0), (3.0, 2.0, -1.0), (5.0, 2.0, -0.5), (5.0, 3.0, -10.0)]


def as_grid(rows):
    # flatten a 9x5 reference block into {(xi0, delta, xi1): entry}
    keys = [(x0, d) for x0 in XI0_GRID for d in DELTA_GRID]
    return {(x0, d, x1): v for (x0, d), row in zip(keys, rows) for x1, v in zip(XI1_GRID, row)}


def test_criterion_1_mcar_table(criterion):
    t0 = time.perf_counter()
    rep = table_report("table1")
    elapsed = time.perf_counter() - t0
    gaps = {c.key[1]: abs(c.value - TABLE1_REFERENCE[c.key[1]]) for c in rep.cells}
    bad = [f"Delta={d:g} got {rep.lookup((0.5, d)).value:.6f}" for d, g in gaps.items() if g > 5e-4]
    ok = not bad and elapsed < 1.0
    detail = f"max gap {max(gaps.values()):.2e} (tol 5e-4), {elapsed:.2f}s; " + ("; ".join(bad) or "all cells ok")
    assert criterion(1, "MCAR limit row", ok, detail), detail


def test_criterion_2_full_likelihood_table(criterion):
    t0 = time.perf_counter()
    rep = table_report("table2")
    elapsed = time.perf_counter() - t0
    ref = as_grid(TABLE2_REFERENCE)
    gaps = {c.key: abs(c.value - ref[c.key]) for c in rep.cells}
    bad = [k for k, g in gaps.items() if not g <= 0.05]
    ok = len(gaps) == 45 and not bad and elapsed < 10.0
    detail = f"{45 - len(bad)}/45 within 0.05, max gap {max(gaps.values()):.3f}, {elapsed:.2f}s"
    assert criterion(2, "full-likelihood ARE grid", ok, detail), f"{detail}; off: {bad}"


def test_criterion_3_ratio_table(criterion):
    rep2, rep3 = table_report("table2"), table_report("table3")
    ref = as_grid(TABLE3_REFERENCE)
    gaps = {c.key: abs(c.value - ref[c.key]) for c in rep3.cells}
    bad = [k for k, g in gaps.items() if not g <= 0.005]
    ignore = {k: are_ignore(ARESpec(k[1], MissingnessParams(k[0], k[2]))) for k in ref}
    ident = max(abs(rep3.lookup(k).value * rep2.lookup(k).value - ignore[k]) for k in ref)
    ok = len(gaps) == 45 and not bad and ident <= 1e-8
    detail = f"{45 - len(bad)}/45 within 0.005, max gap {max(gaps.values()):.4f}, identity residual {ident:.1e}"
    assert criterion(3, "ignore vs full ARE grid", ok, detail), f"{detail}; off: {bad}"


def _agreement(reports, reference):
    hits, misses, rounded_hits = 0, [], 0
    for key, (value, se) in reference.items():
        r = reports[key]
        if abs(r.re_hat - value) <= 3 * se:
            hits += 1
        else:
            misses.append(f"{key}: {r.re_hat:.3f} vs {value} ({se})")
        # informational only: the printed value stands for an interval of width 0.01
        rounded_hits += max(abs(r.re_hat - value) - 0.005, 0.0) <= 3 * se
    return hits, misses, rounded_hits


def test_criterion_4_simulated_tables(criterion):
    t0 = time.perf_counter()
    smoke = simulate_tables("table4", seed=0, cells=SMOKE_CELLS)
    smoke_time = time.perf_counter() - t0
    t0 = time.perf_counter()
    t4 = simulate_tables("table4", seed=0)
    t4_time = time.perf_counter() - t0
    t5 = simulate_tables("table5", seed=0)
    hits4, miss4, round4 = _agreement(t4, as_grid(TABLE4_REFERENCE))
    hits5, miss5, round5 = _agreement(t5, as_grid(TABLE5_REFERENCE))
    failure_rate = sum(r.failures for r in t4.values()) / (45 * 1000)
    same = all(smoke[c] == t4[c] for c in SMOKE_CELLS)
    ok = hits4 >= 0.9 * 45 and hits5 >= 0.9 * 45 and t4_time < 1800 and smoke_time < 120 and same
    detail = (
        f"n=500 {hits4}/45, n=100 {hits5}/45 within 3 SEs (need 41); "
        f"n=500 grid {t4_time:.0f}s, 6-cell smoke {smoke_time:.0f}s, failure rate {failure_rate:.2%}; "
        f"allowing for 2-decimal rounding {round4}/45 and {round5}/45 (not the verdict)"
    )
    print("\n".join(["misses n=500:", *miss4, "misses n=100:", *miss5]))
    assert criterion(4, "simulated relative efficiency grids", ok, detail), detail


def test_criterion_5_hard_assignment_expansion(criterion):
    problems = []
    for d in (1.0, 2.0, 3.0, 4.0):
        for p in (1, 3, 5):
            vals = [cml_expected_error(CmlExpansionConfig(d, p, 25, 25, k)) for k in range(201)]
            if any(b > a for a, b in zip(vals, vals[1:])):
                problems.append(f"Delta={d:g} p={p} not monotone")
            gap = abs(vals[200] - norm.cdf(-d / 2))
            if not gap <= 1e-12:
                problems.append(f"Delta={d:g} p={p} k=200 gap {gap:.1e}")
    hmax = max(max(abs(h) for h in cml_h_coefficients(d)) for d in np.linspace(0.25, 6, 200))
    ok = not problems and hmax < 1
    detail = f"max |h| {hmax:.6f} on [0.25, 6]; " + ("; ".join(problems) or "monotone and converged")
    assert criterion(5, "hard-assignment error expansion", ok, detail), detail


def test_criterion_6_information_decompositions(criterion):
    psi = FullParams(GaussianPairModel.canonical(2.0), MissingnessParams(1.5, -1.0))
    gamma = gamma_expected_missing(ARESpec(2.0, MissingnessParams(1.5, -1.0)))
    est = {k: mc_information(k, psi, 10**5, 600 + i) for i, k in enumerate(INFO_KINDS)}
    ig, cc, cl = est["ignore"], est["complete"], est["labels_given_features"]
    fu, mi = est["full"], est["missingness"]
    worst = []
    for res, se in (
        (ig.matrix - cc.matrix + gamma * cl.matrix, np.sqrt(ig.se**2 + cc.se**2 + (gamma * cl.se) ** 2)),
        (
            fu.matrix - cc.matrix + gamma * cl.matrix - mi.matrix,
            np.sqrt(fu.se**2 + cc.se**2 + (gamma * cl.se) ** 2 + mi.se**2),
        ),
    ):
        # entries with no Monte Carlo spread must vanish exactly (to rounding)
        exact = se == 0
        z = np.abs(res[~exact]) / se[~exact]
        worst.append((z.max(), np.abs(res[exact]).max(initial=0.0)))
    ok = all(z < 3 and e <= 1e-10 for z, e in worst)
    detail = f"max |residual|/SE: ignore {worst[0][0]:.2f}, full {worst[1][0]:.2f} (need < 3), all 6x6 entries"
    assert criterion(6, "information decompositions", ok, detail), detail


def test_criterion_7_estimator_properties(criterion):
    # EM ascent on 100 random instances
    rng = np.random.default_rng(7)
    em_bad, em_used = 0, 0
    for i in range(100):
        cfg = SimConfig(
            n=int(rng.integers(50, 400)), delta=float(rng.uniform(0.5, 3.5)), p=int(rng.integers(1, 4)),
            pi1=float(rng.uniform(0.25, 0.75)), xi=MissingnessParams(float(rng.uniform(-1, 4)), float(-rng.uniform(0, 5))),
            seed=1000 + i,
        )
        try:
            fit = fit_ignore_em(gen_partial_sample(cfg, 0))
        except DegenerateFitError:
            continue
        em_used += 1
        em_bad += int(np.any(np.diff(fit.trace) < -1e-10))

    # analytic gradient vs central differences at 10 random points
    worst_grad = 0.0
    for i in range(10):
        r = np.random.default_rng(100 + i)
        p = 1 + i % 3
        a = r.normal(size=(p, p))
        th = GaussianPairModel(r.normal(size=p), r.normal(size=p), a @ a.T + 0.5 * np.eye(p), r.uniform(0.2, 0.8))
        psi = FullParams(th, MissingnessParams(r.normal(), -abs(r.normal())))
        s = PartialSample(r.normal(size=(40, p)), r.choice([0, 1, 2], size=40))
        x = pack(psi)
        g = value_and_grad(x, s)[1]
        fd = np.empty_like(x)
        for j in range(x.size):
            e = np.zeros_like(x)
            e[j] = 1e-6
            fd[j] = (value_and_grad(x + e, s)[0] - value_and_grad(x - e, s)[0]) / 2e-6
        worst_grad = max(worst_grad, np.max(np.abs(g - fd)) / max(np.max(np.abs(fd)), 1.0))

    # root-n error decay under NMAR generation: RMSE halves per fourfold n
    errs = {}
    for n in (2000, 8000, 32000):
        cfg = SimConfig(n=n, delta=2.0, xi=MissingnessParams(1.5, -1.0), seed=900 + n)
        truth = bayes_coefficients(cfg.theta).as_vector()
        e = []
        for b in range(60):
            y, z, m = draw(cfg, rng_for(cfg.seed, b))
            fit = fit_ignore_em(PartialSample(y, np.where(m == 1, 0, z)))
            e.append(fit.beta.as_vector() - truth)
        errs[n] = np.array(e)
    boot_rng = np.random.default_rng(0)
    ratio_ok, ratios = True, []
    for small, big in ((2000, 8000), (8000, 32000)):
        a, b = errs[small], errs[big]
        ratio = np.sqrt(np.mean(b**2) / np.mean(a**2))
        boot = [
            np.sqrt(np.mean(b[boot_rng.integers(0, len(b), len(b))] ** 2) / np.mean(a[boot_rng.integers(0, len(a), len(a))] ** 2))
            for _ in range(500)
        ]
        se = np.std(boot, ddof=1)
        ratios.append(f"{ratio:.2f}+-{se:.2f}")
        ratio_ok &= ratio < 1 and abs(ratio - 0.5) <= 3 * se

    ok = em_bad == 0 and em_used >= 90 and worst_grad < 1e-5 and ratio_ok
    detail = (
        f"EM descents {em_bad}/{em_used}, worst gradient rel err {worst_grad:.1e}, "
        f"RMSE ratios per 4x n {', '.join(ratios)} (target 0.5)"
    )
    assert criterion(7, "estimator properties", ok, detail), detail


def test_criterion_8_large_n_coherence(criterion):
    lines, ok = [], True
    for i, (x0, x1) in enumerate(((1.5, -1.0), (3.0, -5.0))):
        for d in (1.0, 2.0):
            cfg = SimConfig(n=2000, delta=d, xi=MissingnessParams(x0, x1), reps=500, seed=5000 + 10 * i + int(d))
            r = simulate_re(cfg)
            target = are_ratio(ARESpec(d, MissingnessParams(x0, x1)))
            z = abs(r.re_hat - target) / r.bootstrap_se
            ok &= z <= 3
            lines.append(f"({x0:g},{d:g},{x1:g}) {r.re_hat:.3f} vs {target:.3f} ({z:.1f} SE)")
    detail = "; ".join(lines)
    assert criterion(8, "simulation vs asymptotics at n=2000", ok, detail), detail


def test_criterion_9_diagnostics(criterion):
    def sample(xi0, xi1, seed):
        cfg = SimConfig(n=5000, delta=2.0, xi=MissingnessParams(xi0, xi1), seed=seed)
        return gen_partial_sample(cfg, 0)

    nmar = diagnose(sample(1.5, -5.0, 31))
    mcar = diagnose(sample(1.5, 0.0, 32))
    ok = nmar.mean_entropy_unlabelled > nmar.mean_entropy_labelled and nmar.increasing and mcar.flat
    detail = (
        f"NMAR mean entropy unlabelled {nmar.mean_entropy_unlabelled:.3f} vs labelled "
        f"{nmar.mean_entropy_labelled:.3f}, trend increasing {nmar.increasing}; MCAR flat {mcar.flat}"
    )
    assert criterion(9, "entropy diagnostics", ok, detail), detail
