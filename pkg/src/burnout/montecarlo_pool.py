"""Borrower-level prepayment simulation and empirical pool hazards.

Each borrower draws a type and a uniform ``u``; the prepayment time is the
first time the borrower's cumulative hazard reaches ``-log u``, found by
linear interpolation of the cumulative hazard on the grid.

Random streams are keyed by ``(seed, block)`` where borrowers are split into
fixed blocks of :data:`BLOCK_SIZE`.  Blocks may run on any number of worker
threads; period counts are integers, so aggregation is order independent and
results never depend on the worker count.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .errors import ArgumentError
from .hazard_model import ItoHeterogeneous, check_hazard
from .identities import validate_grid
from .stochastic_dynamics import brownian_increments, euler_paths, uniform_step

BLOCK_SIZE = 4096
BORROWER_STREAM = 0
# Normal-approximation binomial CIs need at least this many survivors.
MIN_CI_SURVIVORS = 30
_Z95 = 1.959963984540054


@dataclass
class PoolSimResult:
    """Per-period outcome of a simulated pool.

    ``grid`` holds the period boundaries; every per-period array has one
    entry per period, indexed by its start time ``grid[:-1]``.
    """

    n_borrowers: int
    grid: np.ndarray
    survivors: np.ndarray
    events: np.ndarray
    smm: np.ndarray
    empirical_hazard: np.ndarray
    ci_halfwidth: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    event_times: np.ndarray

    @property
    def survivors_end(self):
        """Survivor counts at every grid time, including the final boundary."""
        return np.concatenate([self.survivors, [self.survivors[-1] - self.events[-1]]])

    def columns(self):
        return {
            "t": self.grid[:-1],
            "survivors": self.survivors,
            "smm": self.smm,
            "empirical_hazard": self.empirical_hazard,
            "ci_lo": self.ci_lo,
            "ci_hi": self.ci_hi,
        }


def smm_to_cpr(smm):
    """Annualize a single-monthly-mortality rate: CPR = 1 - (1 - SMM)**12."""
    smm = np.asarray(smm, dtype=float)
    if np.any(~(smm >= 0)) or np.any(smm >= 1):
        raise ArgumentError("smm must lie in [0, 1)")
    out = -np.expm1(12.0 * np.log1p(-smm))
    return float(out) if out.ndim == 0 else out


def cpr_to_smm(cpr):
    """Inverse of :func:`smm_to_cpr`."""
    cpr = np.asarray(cpr, dtype=float)
    if np.any(~(cpr >= 0)) or np.any(cpr >= 1):
        raise ArgumentError("cpr must lie in [0, 1)")
    out = -np.expm1(np.log1p(-cpr) / 12.0)
    return float(out) if out.ndim == 0 else out


def _block_rng(seed, block):
    return np.random.default_rng(np.random.SeedSequence(int(seed), spawn_key=(BORROWER_STREAM, int(block))))


def _cumulative_hazards(spec, types, grid, dW):
    """Cumulative hazard of each borrower at every grid time, shape (m, N+1)."""
    dts = np.diff(grid)
    if isinstance(spec, ItoHeterogeneous):
        mu = spec.drift(grid[:-1], types)
        sigma = spec.vol(grid[:-1], types)
        lam0 = check_hazard(spec.initial(types), " (initial)")
        paths, _ = euler_paths(lam0, mu * dts[:, None] + sigma * dW[:, None])
        lam = paths[:-1]
    else:
        mids = grid[:-1] + 0.5 * dts
        lam = spec.hazard(mids, types)
    lam = check_hazard(lam, " in pool simulation")
    inc = lam * dts[:, None]
    cum = np.cumsum(np.vstack([np.zeros((1, inc.shape[1])), inc]), axis=0)
    return cum.T


def _simulate_block(spec, dist, grid, seed, block, size, dW):
    rng = _block_rng(seed, block)
    types = dist.draw(rng, size)
    u = rng.random(size)
    threshold = -np.log1p(-u)  # -log(1 - u), u in [0, 1)
    cum = _cumulative_hazards(spec, types, grid, dW)
    crossed = cum >= threshold[:, None]
    hit = crossed.any(axis=1)
    j = np.argmax(crossed, axis=1)  # first grid index at or past the threshold
    times = np.full(size, np.inf)
    if np.any(hit):
        rows = np.nonzero(hit)[0]
        jj = j[rows]
        # threshold > 0 = cum[:, 0] almost surely; guard u == 0 anyway
        jj = np.maximum(jj, 1)
        c0 = cum[rows, jj - 1]
        c1 = cum[rows, jj]
        frac = np.where(c1 > c0, (threshold[rows] - c0) / np.where(c1 > c0, c1 - c0, 1.0), 0.0)
        times[rows] = grid[jj - 1] + np.clip(frac, 0.0, 1.0) * (grid[jj] - grid[jj - 1])
        counts = np.bincount(jj - 1, minlength=grid.size - 1)
    else:
        counts = np.zeros(grid.size - 1, dtype=np.int64)
    return block, counts.astype(np.int64), times


def simulate_pool(spec, dist, grid, n_borrowers: int, seed: int = 0, threads: int = 1) -> PoolSimResult:
    """Simulate prepayment times for ``n_borrowers`` and summarize by period.

    Ito specs share one common Brownian path (seeded independently of the
    borrower streams) across all borrowers, so results are conditional on
    that path.
    """
    n_borrowers = int(n_borrowers)
    if n_borrowers < 1:
        raise ArgumentError("n_borrowers must be >= 1")
    grid = np.asarray(grid, dtype=float)
    if grid.size < 2:
        raise ArgumentError("grid needs at least one period")
    grid = validate_grid(grid)
    dW = None
    if isinstance(spec, ItoHeterogeneous):
        dt = uniform_step(grid)
        dW = brownian_increments(seed, grid.size - 1, dt)

    n_blocks = -(-n_borrowers // BLOCK_SIZE)
    sizes = [min(BLOCK_SIZE, n_borrowers - b * BLOCK_SIZE) for b in range(n_blocks)]
    jobs = [(spec, dist, grid, seed, b, sizes[b], dW) for b in range(n_blocks)]
    threads = max(1, int(threads))
    if threads == 1 or n_blocks == 1:
        results = [_simulate_block(*job) for job in jobs]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda job: _simulate_block(*job), jobs))

    events = np.zeros(grid.size - 1, dtype=np.int64)
    event_times = np.empty(n_borrowers)
    for block, counts, times in results:
        events += counts
        start = block * BLOCK_SIZE
        event_times[start:start + times.size] = times
    return summarize_events(n_borrowers, grid, events, event_times)


def summarize_events(n_borrowers, grid, events, event_times=None) -> PoolSimResult:
    """Per-period SMM, empirical hazard and 95% binomial intervals from event counts."""
    grid = np.asarray(grid, dtype=float)
    events = np.asarray(events, dtype=np.int64)
    dts = np.diff(grid)
    survivors = n_borrowers - np.concatenate([[0], np.cumsum(events)[:-1]])
    with np.errstate(divide="ignore", invalid="ignore"):
        smm = np.where(survivors > 0, events / np.maximum(survivors, 1), np.nan)
        hazard = -np.log1p(-smm) / dts
        half = _Z95 * np.sqrt(smm * (1.0 - smm) / survivors)
        ok = survivors >= MIN_CI_SURVIVORS
        half = np.where(ok, half, np.nan)
        lo = np.where(ok, -np.log1p(-np.clip(smm - half, 0.0, 1.0)) / dts, np.nan)
        hi = np.where(ok, -np.log1p(-np.clip(smm + half, 0.0, 1.0)) / dts, np.nan)
    if event_times is None:
        event_times = np.array([])
    return PoolSimResult(n_borrowers, grid, survivors.astype(np.int64), events, smm, hazard,
                         half, lo, hi, np.asarray(event_times, dtype=float))


def binomial_survivor_band(pool_survival, n_borrowers, k: float = 3.0):
    """Half-width of a k-standard-error band for survivor counts given analytic pool survival."""
    s = np.asarray(pool_survival, dtype=float)
    return k * np.sqrt(n_borrowers * s * (1.0 - s))


def hazard_standard_error(result: PoolSimResult) -> np.ndarray:
    """Delta-method standard error of the per-period empirical hazard."""
    dts = np.diff(result.grid)
    p = result.smm
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.sqrt(p / (result.survivors * (1.0 - p))) / dts


def period_hazard_from_survival(grid, pool_survival) -> np.ndarray:
    """Average pool hazard over each period implied by a pool-survival curve."""
    grid = np.asarray(grid, dtype=float)
    s = np.asarray(pool_survival, dtype=float)
    return -np.diff(np.log(s)) / np.diff(grid)

