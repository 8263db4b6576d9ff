"""Acceptance criteria 1-11, each at its stated tolerance.

Every test prints one ``CRITERION n: PASS|FAIL`` line.  Run directly with
``python3 tests/test_acceptance.py`` for a plain summary.
"""

import math
import statistics
import subprocess
import sys
import tempfile
import time
from pathlib import Path

import numpy as np
import pytest

from burnout import (
    Constant,
    CoxPH,
    Deterministic,
    Discrete,
    FrailtyFactor,
    Gamma,
    ItoHeterogeneous,
    Lognormal,
    MultivariateLognormal,
    TruncatedNormal,
    VectorConstant,
    burnout_study,
    calibrate_gamma,
    check_monotone_burnout,
    check_selection_identity,
    init_ensemble,
    lognormal_pool_hazard_laplace,
    lognormal_pool_hazard_quadrature,
    make_grid,
    multivariate_burnout_drift,
    pool_sde_study,
    run_deterministic,
    scalar_burnout_drift,
    simulate_common_factor,
    simulate_pool,
    truncated_normal_pool_hazard,
)
from burnout.frailty_analytics import ks_critical_value, weighted_ks_statistic
from burnout.identities import check_burnout_identity, series_derivative
from burnout.weighted_ensemble import (
    advance_survival,
    cov_matrix_from_weights,
    effective_sample_size,
    normalized_weights,
    weighted_cov_matrix,
    weighted_var,
)
from burnout.montecarlo_pool import period_hazard_from_survival

pytestmark = pytest.mark.acceptance

DISTS = {
    "discrete": Discrete((1.0, 3.0), (0.5, 0.5)),
    "gamma": Gamma(2.0, 1.0),
    "lognormal": Lognormal(0.0, 0.5),
    "truncated_normal": TruncatedNormal(1.0, 0.3),
}


def seasonal(scale=0.2):
    return Deterministic(
        lambda t, f: scale * f * (1 + 0.5 * np.sin(t)),
        lambda t, f: scale * f * 0.5 * np.cos(t),
    )


def criterion_1():
    start = time.perf_counter()
    grid = make_grid(10.0, 0.01)
    path = run_deterministic(FrailtyFactor(Constant(0.2)), Gamma(2.0, 1.0), grid, n=256)
    exact = 0.4 / (1 + 0.2 * grid)
    quad_err = float(np.max(np.abs(path.pool_hazard - exact) / exact))

    # simulated pool, quarterly periods, against the exact period-average hazard
    mc_grid = make_grid(10.0, 0.25)
    mc = simulate_pool(FrailtyFactor(Constant(0.2)), Gamma(2.0, 1.0), mc_grid, 200000, seed=1)
    target = period_hazard_from_survival(mc_grid, (1 + 0.2 * mc_grid) ** -2.0)
    mask = mc.survivors > 5000
    rel = np.abs(mc.empirical_hazard[mask] - target[mask]) / target[mask]
    elapsed = time.perf_counter() - start
    ok = quad_err < 1e-4 and bool(np.all(rel < 0.02)) and elapsed < 30
    detail = (f"quadrature max rel err {quad_err:.2e} (<1e-4); MC max rel err {rel.max():.2%} "
              f"over {mask.sum()} periods, {np.sum(rel < 0.02)} within 2%; {elapsed:.1f}s")
    return ok, detail


def criterion_2():
    start = time.perf_counter()
    worst_res, worst_order, fails = 0.0, math.inf, []
    for name, dist in DISTS.items():
        lam = 0.1 if name == "discrete" else 0.2
        for label, spec in (("constant", FrailtyFactor(Constant(lam))), ("seasonal", seasonal(lam))):
            _, rep = burnout_study(spec, dist, 10.0, 0.01, halvings=2, n=256)
            worst_res = max(worst_res, rep.max_abs_residual)
            worst_order = min(worst_order, rep.order_estimate)
            if not (rep.max_abs_residual < 1e-3 and rep.order_estimate >= 1.9):
                fails.append(f"{name}/{label}")
    elapsed = time.perf_counter() - start
    ok = not fails and elapsed < 10
    return ok, (f"8 scenarios, max residual {worst_res:.2e} (<1e-3), min order {worst_order:.3f} (>=1.9), "
                f"{elapsed:.1f}s" + (f"; failing {fails}" if fails else ""))


def _random_poly(seed):
    rng = np.random.default_rng(seed)
    terms = [(i, j) for i in range(4) for j in range(4) if 0 < i + j <= 3]
    coef = rng.standard_normal(len(terms))

    def phi(t, f):
        return sum(c * t**i * f**j for c, (i, j) in zip(coef, terms))

    def phi_dot(t, f):
        return sum(c * i * t ** max(i - 1, 0) * f**j for c, (i, j) in zip(coef, terms) if i > 0)

    return phi, phi_dot


def criterion_3():
    start = time.perf_counter()
    names = list(DISTS)
    worst = 0.0
    for seed in range(20):
        dist = DISTS[names[seed % 4]]
        phi, phi_dot = _random_poly(seed)
        rep = check_selection_identity(seasonal(), dist, phi, phi_dot, make_grid(10.0, 0.01), n=256)
        worst = max(worst, rep.max_abs_residual)
    elapsed = time.perf_counter() - start
    return worst < 1e-3 and elapsed < 10, f"20 seeds, max residual {worst:.2e} (<1e-3), {elapsed:.1f}s"


def criterion_4():
    grid = make_grid(20.0, 0.05)
    specs = {
        "frailty": FrailtyFactor(Constant(0.2)),
        "convex": Deterministic(lambda t, f: 0.05 * f**2, lambda t, f: 0 * f),
        "cox_ph": FrailtyFactor(CoxPH(lambda t: 0.1 + 0 * t, beta=(0.7,), covariates=(1.0,))),
    }
    bad = [f"{d}/{s}" for d, dist in DISTS.items() for s, spec in specs.items()
           if not check_monotone_burnout(run_deterministic(spec, dist, grid, n=128))]
    rising = run_deterministic(Deterministic(lambda t, f: 0.05 * f * (1 + t)), Discrete((1.0,), (1.0,)),
                               grid, n=2)
    control = not check_monotone_burnout(np.linspace(0.1, 0.2, 50)) and not check_monotone_burnout(rising)
    ok = not bad and control
    return ok, (f"{len(DISTS) * len(specs) - len(bad)}/{len(DISTS) * len(specs)} constant-hazard "
                f"scenarios nonincreasing; negative controls rejected: {control}")


def criterion_5():
    start = time.perf_counter()
    two = Discrete((1.0, 3.0), (0.5, 0.5))
    spec = ItoHeterogeneous(lambda t, f: 0 * f, lambda t, f: 0.01 * f, lambda f: 0.1 * f)
    orders = [pool_sde_study(spec, two, 5.0, 0.01, halvings=4, n_nodes=2, seed=s)[1].order_estimate
              for s in range(20)]
    median = statistics.median(orders)

    # sigma = 0: the stochastic runner reproduces the deterministic path and its identity residual
    grid = make_grid(10.0, 0.01)
    flat = ItoHeterogeneous(lambda t, f: 0 * f, lambda t, f: 0 * f, lambda f: 0.2 * f)
    gaps = []
    for dist in DISTS.values():
        sto = simulate_common_factor(flat, dist, grid, n_nodes=256, seed=0).path
        det = run_deterministic(FrailtyFactor(Constant(0.2)), dist, grid, n=256)
        det_res = check_burnout_identity(det).residual_series
        sto_res = series_derivative(grid, sto.pool_hazard) - (sto.extra["mean_mu"] - sto.xvar)
        gaps += [np.max(np.abs(sto.pool_hazard - det.pool_hazard)), np.max(np.abs(sto_res - det_res))]
    gap = float(max(gaps))
    elapsed = time.perf_counter() - start
    ok = 0.8 <= median <= 1.2 and gap <= 1e-10 and elapsed < 60
    return ok, (f"median order {median:.3f} over 20 seeds (range {min(orders):.3f}-{max(orders):.3f}); "
                f"sigma=0 max gap {gap:.1e} (<=1e-10); {elapsed:.1f}s")


def criterion_6():
    ens = init_ensemble(Gamma(2.0, 1.0), 100000, mode="sample", seed=6)
    spec = FrailtyFactor(Constant(0.2))
    for _ in range(500):
        ens = advance_survival(ens, spec, 0.01)
    n_eff = effective_sample_size(ens)
    d = weighted_ks_statistic(ens.nodes, ens.weights, Gamma(2.0, 0.5).cdf)
    crit = ks_critical_value(0.01, n_eff)
    return d < crit, f"t={ens.t:.2f}, KS {d:.4f} vs 1% critical {crit:.4f} (ESS {n_eff:.0f})"


def criterion_7():
    errs = []
    for sigma in (0.2, 0.1, 0.05):
        q = lognormal_pool_hazard_quadrature(0.0, sigma, 0.2, 5.0)
        errs.append(abs(lognormal_pool_hazard_laplace(0.0, sigma, 0.2, 5.0) - q) / q)
    ok = errs[0] > errs[1] > errs[2] and errs[1] < 5e-3
    return ok, "relative errors " + ", ".join(f"{e:.2e}" for e in errs) + " (decreasing, <0.5% at sigma=0.1)"


def criterion_8():
    worst = 0.0
    for t in np.linspace(0.0, 5.0, 101):
        r = truncated_normal_pool_hazard(1.0, 0.1, 0.2, t)
        worst = max(worst, abs(r.exact - r.linear_approx) / r.exact)
    return worst < 0.01, f"max relative gap {worst:.2e} on [0, 5] (<1%)"


def criterion_9():
    lam0 = np.array([0.1, 0.2])
    dist = MultivariateLognormal([0.0, 0.0], [[0.04, 0.01], [0.01, 0.09]])
    grid = make_grid(10.0, 0.01)
    path = run_deterministic(FrailtyFactor(VectorConstant(lam0)), dist, grid, n=20000, mode="sample", seed=9)
    ens = init_ensemble(dist, 20000, mode="sample", seed=9)
    lhs = series_derivative(grid, path.pool_hazard)
    cum = grid[:, None] * (ens.nodes @ lam0)[None, :]
    w = normalized_weights(ens.base_weights, cum)
    rhs = np.array([multivariate_burnout_drift(lam0, cov_matrix_from_weights(w[i], ens.nodes))
                    for i in range(grid.size)])
    worst = float(np.max(np.abs(lhs - rhs)))

    # d = 1: same inputs give the scalar drift bit for bit
    one = init_ensemble(Gamma(2.0, 1.0), 256)
    one = advance_survival(one, FrailtyFactor(Constant(0.2)), 3.0)
    var = weighted_var(one, one.nodes)
    cov = weighted_cov_matrix(one, one.nodes[:, None])
    same = all(
        multivariate_burnout_drift([lam], cov, mld) == scalar_burnout_drift(lam, var, mld)
        for lam in (0.2, 0.37, 1e-3) for mld in (0.0, 0.01)
    ) and cov[0, 0] == var
    return worst < 1e-3 and same, f"d=2 max drift gap {worst:.2e} (<1e-3); d=1 bitwise equal: {same}"


def criterion_10():
    t = make_grid(10.0, 0.25)
    clean = 0.4 / (1 + 0.2 * t)
    fit = calibrate_gamma(t, clean)
    exact = abs(fit.lambda0_bar - 0.4) < 1e-8 and abs(fit.theta_lambda - 0.2) < 1e-8
    hits = 0
    for seed in range(100):
        noisy = clean * (1 + 0.01 * np.random.default_rng(seed).standard_normal(t.size))
        hits += abs(calibrate_gamma(t, noisy).theta_lambda - 0.2) / 0.2 < 0.10
    return exact and hits >= 95, (f"noiseless errors {abs(fit.lambda0_bar - 0.4):.1e}, "
                                  f"{abs(fit.theta_lambda - 0.2):.1e} (<1e-8); noisy {hits}/100 within 10%")


def criterion_11():
    scenarios = ("gamma_burnout", "common_factor_sde", "seasonal_lognormal")
    mismatched = []
    with tempfile.TemporaryDirectory() as tmp:
        for name in scenarios:
            outputs = []
            for k, threads in enumerate(("1", "1", "4")):
                out = Path(tmp) / f"{name}_{k}"
                proc = subprocess.run([sys.executable, "-m", "burnout.cli", "run", name, "--out", str(out),
                                       "--threads", threads, "--quiet"], capture_output=True, text=True)
                if proc.returncode != 0:
                    mismatched.append(f"{name}: exit {proc.returncode} {proc.stderr.strip()}")
                outputs.append({p.name: p.read_bytes() for p in sorted(out.glob("*.csv"))})
            if not outputs[0] or any(o != outputs[0] for o in outputs[1:]):
                mismatched.append(name)
    return not mismatched, (f"{len(scenarios)} scenarios rerun with threads 1, 1, 4: "
                            + ("byte-identical CSVs" if not mismatched else f"mismatch {mismatched}"))


CRITERIA = {n: globals()[f"criterion_{n}"] for n in range(1, 12)}


def _check(n, capsys=None):
    ok, detail = CRITERIA[n]()
    line = f"CRITERION {n}: {'PASS' if ok else 'FAIL'} - {detail}"
    if capsys is None:
        print(line)
    else:
        with capsys.disabled():
            print("\n" + line)
    return ok, line


@pytest.mark.parametrize("n", range(1, 12))
def test_criterion(n, capsys):
    ok, line = _check(n, capsys)
    assert ok, line


if __name__ == "__main__":
    results = [_check(n)[0] for n in CRITERIA]
    print(f"{sum(results)}/{len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
