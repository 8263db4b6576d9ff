"""Deterministic pool-hazard paths and numerical residual checks.

The runner integrates every node's cumulative hazard with the midpoint rule
on the supplied grid, so for smooth hazards both the pool-hazard series and
its difference-quotient derivative are second-order accurate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ArgumentError
from .hazard_model import (
    Deterministic,
    FrailtyFactor,
    ItoHeterogeneous,
    check_hazard,
    finite_difference,
)
from .weighted_ensemble import (
    batch_cov,
    batch_ess,
    batch_mean,
    batch_var,
    init_ensemble,
    normalized_weights,
)

# Rows of (time x node) matrices processed at once; bounds peak memory.
_CHUNK_ELEMENTS = 2_000_000


@dataclass
class PoolPath:
    """Pool-level series on a time grid.

    ``extra`` holds named per-time diagnostics such as ``mean_lambda_dot``.
    """

    grid: np.ndarray
    pool_hazard: np.ndarray
    pool_survival: np.ndarray
    xvar: np.ndarray
    ess: np.ndarray
    extra: dict = field(default_factory=dict)

    def columns(self):
        """Ordered column mapping for CSV output."""
        cols = {
            "t": self.grid,
            "pool_hazard": self.pool_hazard,
            "pool_survival": self.pool_survival,
            "xvar": self.xvar,
            "ess": self.ess,
        }
        cols.update(self.extra)
        return cols


@dataclass
class IdentityReport:
    name: str
    max_abs_residual: float
    residual_series: np.ndarray
    order_estimate: float
    tolerance: float
    passed: bool
    level_residuals: list = field(default_factory=list)
    details: dict = field(default_factory=dict)

    def summary(self):
        out = {
            "check": self.name,
            "max_abs_residual": self.max_abs_residual,
            "order_estimate": None if math.isnan(self.order_estimate) else self.order_estimate,
            "tolerance": self.tolerance,
            "pass": self.passed,
        }
        if self.level_residuals:
            out["level_residuals"] = list(self.level_residuals)
        out.update(self.details)
        return out


def make_grid(t_end: float, dt: float) -> np.ndarray:
    """Uniform grid ``i * dt`` for i = 0..t_end/dt; halving dt keeps every old point."""
    t_end, dt = float(t_end), float(dt)
    if not (dt > 0 and t_end > 0):
        raise ArgumentError("t_end and dt must be > 0")
    steps = round(t_end / dt)
    if steps < 1 or abs(steps * dt - t_end) > 1e-9 * max(1.0, t_end):
        raise ArgumentError(f"t_end={t_end!r} is not a whole number of dt={dt!r} steps")
    return np.arange(steps + 1) * dt


def validate_grid(grid) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    if grid.ndim != 1 or grid.size < 2:
        raise ArgumentError("grid needs at least two times")
    if grid[0] != 0.0:
        raise ArgumentError("grid must start at 0")
    if not np.all(np.diff(grid) > 0):
        raise ArgumentError("grid must be strictly increasing")
    return grid


def refine_grid(grid) -> np.ndarray:
    """Insert the midpoint of every interval."""
    grid = np.asarray(grid, dtype=float)
    out = np.empty(2 * grid.size - 1)
    out[::2] = grid
    out[1::2] = grid[:-1] + 0.5 * np.diff(grid)
    return out


def series_derivative(grid, y) -> np.ndarray:
    """d y / d t: central differences inside, one-sided second order at the ends."""
    grid = np.asarray(grid, dtype=float)
    if grid.size < 3:
        raise ArgumentError("need at least 3 grid points to differentiate a series")
    return np.gradient(np.asarray(y, dtype=float), grid, edge_order=2)


def order_estimate(steps, residuals) -> float:
    """Least-squares slope of log(residual) against log(step)."""
    steps = np.asarray(steps, dtype=float)
    res = np.asarray(residuals, dtype=float)
    ok = res > 0
    if ok.sum() < 2:
        return math.nan
    return float(np.polyfit(np.log(steps[ok]), np.log(res[ok]), 1)[0])


def _require_deterministic(spec):
    if isinstance(spec, ItoHeterogeneous) or not isinstance(spec, (Deterministic, FrailtyFactor)):
        raise ArgumentError("deterministic runner needs a Deterministic or FrailtyFactor spec")


def _sweep(spec, nodes, base, grid, per_chunk):
    """Walk the grid in row chunks, carrying cumulative hazards.

    ``per_chunk(rows, times, lam, cum, w)`` receives hazards at grid times,
    cumulative hazards and normalized weights for a contiguous block.
    """
    n = base.shape[0]
    rows_per_chunk = max(2, _CHUNK_ELEMENTS // max(n, 1))
    dts = np.diff(grid)
    mids = grid[:-1] + 0.5 * dts
    carry = np.zeros(n)
    start = 0
    while start < grid.size:
        stop = min(grid.size, start + rows_per_chunk)
        times = grid[start:stop]
        lam = check_hazard(spec.hazard(times, nodes), " on grid")
        # increments for steps start..stop-2 (those ending inside this chunk)
        k0, k1 = start, stop - 1
        if k1 > k0:
            lam_mid = check_hazard(spec.hazard(mids[k0:k1], nodes), " at step midpoints")
            inc = lam_mid * dts[k0:k1, None]
            cum = np.cumsum(np.vstack([carry[None, :], inc]), axis=0)
        else:
            cum = carry[None, :]
        w = normalized_weights(base, cum)
        per_chunk(slice(start, stop), times, lam, cum, w)
        if stop < grid.size:
            carry = cum[-1] + check_hazard(spec.hazard(mids[stop - 1], nodes)) * dts[stop - 1]
        start = stop


def run_deterministic(spec, dist, grid, n: int = 256, mode: str = "quadrature", seed: int = 0) -> PoolPath:
    """Pool hazard, pool survival, cross-sectional variance and E_t(lambda_dot) on ``grid``."""
    _require_deterministic(spec)
    grid = validate_grid(grid)
    ens = init_ensemble(dist, n, mode, seed)
    nodes, base = ens.nodes, ens.base_weights
    size = grid.size
    out = {k: np.empty(size) for k in ("pool_hazard", "pool_survival", "xvar", "ess", "mean_lambda_dot")}
    scalar = nodes.ndim == 1
    if scalar:
        out["mean_f"] = np.empty(size)
        out["var_f"] = np.empty(size)

    def collect(rows, times, lam, cum, w):
        out["pool_hazard"][rows] = batch_mean(w, lam)
        out["pool_survival"][rows] = np.sum(base * np.exp(-cum), axis=-1)
        out["xvar"][rows] = batch_var(w, lam)
        out["ess"][rows] = batch_ess(w)
        out["mean_lambda_dot"][rows] = batch_mean(w, spec.hazard_dot(times, nodes))
        if scalar:
            out["mean_f"][rows] = batch_mean(w, nodes)
            out["var_f"][rows] = batch_var(w, nodes)

    _sweep(spec, nodes, base, grid, collect)
    extra = {k: out[k] for k in out if k not in ("pool_hazard", "pool_survival", "xvar", "ess")}
    return PoolPath(grid, out["pool_hazard"], out["pool_survival"], out["xvar"], out["ess"], extra)


def burnout_residual(path: PoolPath) -> np.ndarray:
    """d(pool hazard)/dt - (E_t(lambda_dot) - Var_t(lambda)) at every grid time."""
    if "mean_lambda_dot" not in path.extra:
        raise ArgumentError("path lacks the mean_lambda_dot series")
    lhs = series_derivative(path.grid, path.pool_hazard)
    return lhs - (path.extra["mean_lambda_dot"] - path.xvar)


def check_burnout_identity(path: PoolPath, tolerance: float = 1e-3,
                           dt_refinements: Sequence[PoolPath] = ()) -> IdentityReport:
    """Residual of the deterministic burnout identity on ``path``.

    ``dt_refinements`` are the same scenario on successively halved grids;
    when given, the empirical convergence order is fitted across all levels.
    """
    residual = burnout_residual(path)
    level = [float(np.max(np.abs(residual)))]
    steps = [float(np.max(np.diff(path.grid)))]
    for p in dt_refinements:
        level.append(float(np.max(np.abs(burnout_residual(p)))))
        steps.append(float(np.max(np.diff(p.grid))))
    order = order_estimate(steps, level) if len(level) > 1 else math.nan
    return IdentityReport("burnout_identity", level[0], residual, order, float(tolerance),
                          level[0] <= tolerance, level if len(level) > 1 else [])


def _phi_values(fn, dot_fn, times, nodes):
    tt = np.asarray(times, dtype=float)[:, None]
    shape = (tt.shape[0], nodes.shape[0])
    phi = np.array(np.broadcast_to(fn(tt, nodes), shape), dtype=float)
    if dot_fn is None:
        dot = finite_difference(lambda s: np.broadcast_to(fn(s, nodes), shape), tt)
    else:
        dot = np.broadcast_to(dot_fn(tt, nodes), shape)
    return phi, np.array(dot, dtype=float)


def selection_residual(spec, dist, phi_fn: Callable, phi_dot_fn: Optional[Callable], grid,
                       n: int = 256, mode: str = "quadrature", seed: int = 0) -> np.ndarray:
    """d E_t(phi)/dt - (E_t(phi_dot) - Cov_t(lambda, phi)) on ``grid``."""
    _require_deterministic(spec)
    grid = validate_grid(grid)
    ens = init_ensemble(dist, n, mode, seed)
    mean_phi = np.empty(grid.size)
    rhs = np.empty(grid.size)

    def collect(rows, times, lam, cum, w):
        phi, phi_dot = _phi_values(phi_fn, phi_dot_fn, times, ens.nodes)
        mean_phi[rows] = batch_mean(w, phi)
        rhs[rows] = batch_mean(w, phi_dot) - batch_cov(w, lam, phi)

    _sweep(spec, ens.nodes, ens.base_weights, grid, collect)
    return series_derivative(grid, mean_phi) - rhs


def check_selection_identity(spec, dist, phi_fn, phi_dot_fn, grid, n: int = 256, mode: str = "quadrature",
                             seed: int = 0, tolerance: float = 1e-3, dt_refinements: int = 0) -> IdentityReport:
    """Residual of the selection identity for a test function phi(t, f).

    ``phi_dot_fn=None`` differentiates phi numerically in time.  With
    ``dt_refinements > 0`` the check is repeated on halved grids and the
    convergence order is reported.
    """
    grid = validate_grid(grid)
    residual = selection_residual(spec, dist, phi_fn, phi_dot_fn, grid, n, mode, seed)
    level = [float(np.max(np.abs(residual)))]
    steps = [float(np.max(np.diff(grid)))]
    g = grid
    for _ in range(int(dt_refinements)):
        g = refine_grid(g)
        r = selection_residual(spec, dist, phi_fn, phi_dot_fn, g, n, mode, seed)
        level.append(float(np.max(np.abs(r))))
        steps.append(float(np.max(np.diff(g))))
    order = order_estimate(steps, level) if len(level) > 1 else math.nan
    return IdentityReport("selection_identity", level[0], residual, order, float(tolerance),
                          level[0] <= tolerance, level if len(level) > 1 else [])


def check_monotone_burnout(path, slack: float = 1e-12) -> bool:
    """True iff the pool hazard never increases by more than ``slack``."""
    series = path.pool_hazard if isinstance(path, PoolPath) else np.asarray(path, dtype=float)
    return bool(np.all(np.diff(series) <= slack))


def burnout_study(spec, dist, t_end: float, dt: float, halvings: int = 2, n: int = 256,
                  mode: str = "quadrature", seed: int = 0, tolerance: float = 1e-3):
    """Run a scenario at dt, dt/2, ... and check the burnout identity across levels."""
    paths = [run_deterministic(spec, dist, make_grid(t_end, dt / 2**k), n, mode, seed)
             for k in range(int(halvings) + 1)]
    return paths[0], check_burnout_identity(paths[0], tolerance, paths[1:])
