"""Common-factor Ito hazards on a weighted ensemble.

Every node shares one Brownian path.  Node hazards follow Euler-Maruyama,
survival is integrated with the left-point rule, and the pool hazard is the
survival-weighted mean, exactly as in the deterministic runner.

Pathwise check of the pool-hazard SDE
-------------------------------------
Per step the residual is

    r_j = d(pool) - [(E(mu) - Var(lambda)) dt + E(sigma) dW_j]

whose leading terms are O(dt dW) and O(dt^2).  Summed over [0, T] they give
an O(dt) pathwise error, so :func:`check_pool_sde` reports the running sum
of ``r_j`` and fits its order under dt halving with a shared Brownian path.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ArgumentError, NumericError
from .hazard_model import ItoHeterogeneous
from .identities import IdentityReport, PoolPath, make_grid, order_estimate, validate_grid
from .weighted_ensemble import (
    WeightedEnsemble,
    batch_cov,
    batch_ess,
    batch_mean,
    batch_var,
    init_ensemble,
    normalized_weights,
)

# SeedSequence spawn key of the common Brownian stream; borrower streams use 0.
BROWNIAN_STREAM = 1


@dataclass
class CommonFactorPath:
    grid: np.ndarray
    dW: np.ndarray
    hazard_matrix: np.ndarray
    seed: int


@dataclass
class StochasticRun:
    ensemble: WeightedEnsemble
    factor: CommonFactorPath
    path: PoolPath
    clamp_count: int = 0
    clamp_fraction: float = 0.0
    notes: dict = field(default_factory=dict)


def brownian_increments(seed: int, n_steps: int, dt: float) -> np.ndarray:
    """Increments of the common Brownian motion on a uniform grid."""
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(BROWNIAN_STREAM,)))
    return rng.standard_normal(int(n_steps)) * math.sqrt(dt)


def coarsen_increments(dW, levels: int = 1) -> np.ndarray:
    """Sum adjacent pairs ``levels`` times; coarse paths reuse the fine increments."""
    dW = np.asarray(dW, dtype=float)
    for _ in range(int(levels)):
        if dW.size % 2:
            raise ArgumentError("cannot pair-sum an odd number of increments")
        dW = dW[0::2] + dW[1::2]
    return dW


def refine_increments(dW, dt: float, seed: int, level: int = 1) -> np.ndarray:
    """Split each increment in two by Brownian-bridge sampling.

    The pair sums reproduce ``dW`` exactly up to rounding, so the refined
    path passes through the same points.  ``level`` selects an independent
    stream per refinement depth.
    """
    dW = np.asarray(dW, dtype=float)
    rng = np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(BROWNIAN_STREAM, int(level))))
    first = 0.5 * dW + math.sqrt(dt / 4.0) * rng.standard_normal(dW.size)
    out = np.empty(2 * dW.size)
    out[0::2] = first
    out[1::2] = dW - first
    return out


def refined_paths(seed: int, n_steps: int, dt: float, halvings: int):
    """Seeded increments at step dt, then successive bridge refinements."""
    paths = [brownian_increments(seed, n_steps, dt)]
    for k in range(1, int(halvings) + 1):
        paths.append(refine_increments(paths[-1], dt / 2 ** (k - 1), seed, k))
    return paths


def uniform_step(grid) -> float:
    grid = validate_grid(grid)
    steps = np.diff(grid)
    dt = float(grid[-1] / (grid.size - 1))
    if not np.allclose(steps, dt, rtol=1e-9, atol=0):
        raise ArgumentError("stochastic simulation needs a uniform grid")
    return dt


def euler_paths(lam0, increments):
    """Euler hazard paths from initial values and per-step increments.

    Returns ``(paths, clamp_count)``; values that would go negative are held
    at zero.  Without clamping this equals a cumulative sum exactly.
    """
    stacked = np.vstack([np.asarray(lam0, dtype=float)[None, :], increments])
    paths = np.cumsum(stacked, axis=0)
    if not np.any(paths < 0):
        return paths, 0
    paths = stacked.copy()
    clamps = 0
    for j in range(1, paths.shape[0]):
        row = paths[j - 1] + increments[j - 1]
        neg = row < 0
        clamps += int(np.count_nonzero(neg))
        row[neg] = 0.0
        paths[j] = row
    return paths, clamps


def simulate_common_factor(spec: ItoHeterogeneous, dist, grid, n_nodes: int = 256, mode: str = "quadrature",
                           seed: int = 0, dW=None, max_clamp_fraction: float = 1e-3) -> StochasticRun:
    """Euler-Maruyama node hazards driven by one shared Brownian path.

    ``dW`` overrides the seeded Brownian increments (used for refinement
    studies).  Raises :class:`NumericError` on non-finite hazards or when more
    than ``max_clamp_fraction`` of node-steps had to be clamped at zero.
    """
    if not isinstance(spec, ItoHeterogeneous):
        raise ArgumentError("simulate_common_factor needs an ItoHeterogeneous spec")
    grid = validate_grid(grid)
    dt = uniform_step(grid)
    n_steps = grid.size - 1
    ens0 = init_ensemble(dist, n_nodes, mode, seed)
    nodes, base = ens0.nodes, ens0.base_weights
    if dW is None:
        dW = brownian_increments(seed, n_steps, dt)
    dW = np.asarray(dW, dtype=float)
    if dW.shape != (n_steps,):
        raise ArgumentError(f"dW must have {n_steps} increments, got {dW.shape}")

    lam0 = spec.initial(nodes)
    mu = spec.drift(grid, nodes)
    sigma = spec.vol(grid, nodes)
    increments = mu[:-1] * dt + sigma[:-1] * dW[:, None]
    lam, clamps = euler_paths(lam0, increments)
    if not np.all(np.isfinite(lam)):
        raise NumericError("non-finite hazard in Euler simulation")
    if np.any(lam0 < 0):
        raise NumericError("initial hazards must be >= 0")
    fraction = clamps / float(lam.size - lam.shape[1])
    if fraction > max_clamp_fraction:
        raise NumericError(
            f"{fraction:.3%} of node-steps clamped at zero hazard (limit {max_clamp_fraction:.3%})"
        )

    inc_cum = lam[:-1] * dt
    cum = np.cumsum(np.vstack([np.zeros((1, base.size)), inc_cum]), axis=0)
    w = normalized_weights(base, cum)
    path = PoolPath(
        grid=grid,
        pool_hazard=batch_mean(w, lam),
        pool_survival=np.sum(base * np.exp(-cum), axis=-1),
        xvar=batch_var(w, lam),
        ess=batch_ess(w),
        extra={
            "mean_mu": batch_mean(w, mu),
            "mean_sigma": batch_mean(w, sigma),
            "cov_lambda_sigma": batch_cov(w, lam, sigma),
        },
    )
    final = WeightedEnsemble(nodes, base, cum[-1], float(grid[-1]))
    factor = CommonFactorPath(grid, dW, lam, int(seed))
    return StochasticRun(final, factor, path, clamps, fraction)


def pool_sde_step_residual(run: StochasticRun) -> np.ndarray:
    """Per-step residual of the pool-hazard SDE decomposition."""
    p = run.path
    dW = run.factor.dW
    if dW is None or len(dW) != p.grid.size - 1:
        raise ArgumentError("run carries no Brownian increments")
    dt = np.diff(p.grid)
    drift = (p.extra["mean_mu"][:-1] - p.xvar[:-1]) * dt
    diffusion = p.extra["mean_sigma"][:-1] * dW
    return np.diff(p.pool_hazard) - (drift + diffusion)


def check_pool_sde(run: StochasticRun, tolerance_drift: float, tolerance_diff: float,
                   refinements: Sequence[StochasticRun] = ()) -> IdentityReport:
    """Pathwise check of the pool-hazard SDE.

    The drift check bounds the running sum of per-step residuals.  The
    diffusion check compares the realized covariation of the pool hazard
    with W against sum(E_t(sigma) dW**2 + drift dW) on the same path.  ``refinements`` are the same
    scenario on halved grids driven by the same Brownian path.
    """
    step = pool_sde_step_residual(run)
    running = np.concatenate([[0.0], np.cumsum(step)])
    dt = float(np.diff(run.path.grid)[0])
    dW = run.factor.dW
    drift = (run.path.extra["mean_mu"][:-1] - run.path.xvar[:-1]) * dt
    # realized covariation with W against its pathwise prediction; a wrong
    # diffusion coefficient c*E(sigma) leaves (1 - c) * sum E(sigma) dW^2
    covariation = float(np.sum(np.diff(run.path.pool_hazard) * dW))
    predicted = float(np.sum(run.path.extra["mean_sigma"][:-1] * dW**2 + drift * dW))
    cov_error = abs(covariation - predicted)

    level = [float(np.max(np.abs(running)))]
    steps = [dt]
    for r in refinements:
        level.append(float(np.max(np.abs(np.cumsum(pool_sde_step_residual(r))))))
        steps.append(float(np.diff(r.path.grid)[0]))
    order = order_estimate(steps, level) if len(level) > 1 else math.nan
    passed = level[0] <= tolerance_drift and cov_error <= tolerance_diff
    details = {
        "max_step_residual": float(np.max(np.abs(step))),
        "covariation": covariation,
        "covariation_error": cov_error,
        "tolerance_diff": float(tolerance_diff),
        "clamp_fraction": run.clamp_fraction,
    }
    return IdentityReport("pool_sde", level[0], running, order, float(tolerance_drift), passed,
                          level if len(level) > 1 else [], details)


def pool_sde_study(spec, dist, t_end: float, dt: float, halvings: int = 4, n_nodes: int = 256,
                   mode: str = "quadrature", seed: int = 0, tolerance_drift: float = 1e-3,
                   tolerance_diff: float = 1e-2):
    """Simulate at dt, dt/2, ..., dt/2**halvings and check the pool SDE.

    The coarsest level uses the seeded Brownian path (identical to a plain
    :func:`simulate_common_factor` run); finer levels refine it by bridging.
    """
    halvings = int(halvings)
    grid0 = make_grid(t_end, dt)
    increments = refined_paths(seed, grid0.size - 1, float(grid0[1]), halvings)
    runs = [simulate_common_factor(spec, dist, make_grid(t_end, dt / 2**k), n_nodes, mode, seed, dW=dW)
            for k, dW in enumerate(increments)]
    return runs, check_pool_sde(runs[0], tolerance_drift, tolerance_diff, runs[1:])
