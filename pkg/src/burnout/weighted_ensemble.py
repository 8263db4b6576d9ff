"""Discretized survival-weighted cross-section of a heterogeneous pool.

A :class:`WeightedEnsemble` holds fixed type nodes with base probabilities
and per-node cumulative hazards.  Normalized weights are
``base * exp(-cum) / sum(base * exp(-cum))``; nodes are never resampled.

The ``batch_*`` helpers take weights with a leading time axis, shape
``(N, n)``, and reduce along the last axis.  All reductions use numpy's
pairwise summation so results do not depend on how work is split.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ArgumentError, NonnegativityError, ParameterError
from .hazard_model import (
    FrailtyDistribution,
    ItoHeterogeneous,
    check_hazard,
    quantile_nodes,
    sample_types,
)


def normalized_weights(base, cum):
    """Survival-weighted probabilities along the last axis.

    The cumulative hazard is shifted by its row minimum before
    exponentiating so long horizons do not underflow to 0/0.
    """
    base = np.asarray(base, dtype=float)
    cum = np.asarray(cum, dtype=float)
    shift = np.min(np.where(base > 0, cum, np.inf), axis=-1, keepdims=True)
    raw = base * np.exp(-(cum - shift))
    return raw / np.sum(raw, axis=-1, keepdims=True)


def batch_mean(w, x):
    return np.sum(w * x, axis=-1)


def batch_cov(w, x, y):
    mx = batch_mean(w, x)[..., None]
    my = batch_mean(w, y)[..., None]
    return np.sum(w * ((x - mx) * (y - my)), axis=-1)


def batch_var(w, x):
    m = batch_mean(w, x)[..., None]
    d = x - m
    return np.sum(w * (d * d), axis=-1)


def batch_ess(w):
    return 1.0 / np.sum(w * w, axis=-1)


@dataclass(frozen=True, eq=False)
class WeightedEnsemble:
    """Survival-weighted measure at time ``t`` on fixed nodes.

    Attributes
    ----------
    nodes : ndarray, shape (n,) or (n, d)
    base_weights : ndarray, shape (n,)
        Initial type probabilities, summing to one.
    cum_hazard : ndarray, shape (n,)
        Integrated hazard of each node since time 0.
    t : float
        Current time in years.
    """

    nodes: np.ndarray
    base_weights: np.ndarray
    cum_hazard: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        for name in ("nodes", "base_weights", "cum_hazard"):
            arr = np.array(getattr(self, name), dtype=float)
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)
        n = self.base_weights.shape[0]
        if self.nodes.shape[0] != n or self.cum_hazard.shape != (n,):
            raise ArgumentError("nodes, base_weights and cum_hazard must have matching length")
        if n < 1:
            raise ArgumentError("ensemble needs at least one node")
        survival = np.exp(-self.cum_hazard)
        survival.setflags(write=False)
        object.__setattr__(self, "survival", survival)

    def __len__(self):
        return self.base_weights.shape[0]

    @property
    def weights(self):
        """Normalized survival weights w_i."""
        return normalized_weights(self.base_weights, self.cum_hazard)

    @property
    def pool_survival(self):
        """Aggregate survival sum_i base_i * S_i."""
        return float(np.sum(self.base_weights * self.survival))


def init_ensemble(dist: FrailtyDistribution, n: int, mode: str = "quadrature", seed: int = 0) -> WeightedEnsemble:
    """Ensemble at t=0 from quadrature nodes or ``n`` equally weighted draws."""
    if int(n) < 2:
        raise ParameterError("ensemble needs n >= 2")
    if mode == "quadrature":
        nodes, w = quantile_nodes(dist, n)
    elif mode == "sample":
        nodes = sample_types(dist, n, seed)
        w = np.full(int(n), 1.0 / int(n))
    else:
        raise ArgumentError(f"mode must be 'quadrature' or 'sample', got {mode!r}")
    return WeightedEnsemble(nodes, w, np.zeros(len(w)), 0.0)


def advance_survival(ens: WeightedEnsemble, spec, dt: float, hazard_values=None) -> WeightedEnsemble:
    """Step the ensemble forward by ``dt`` years.

    Deterministic and frailty-factor specs integrate with the midpoint rule
    (hazard at ``t + dt/2``).  Supplied ``hazard_values`` (required for Ito
    specs, whose hazards live on a simulated path) use the left-point rule.
    """
    dt = float(dt)
    if not dt > 0:
        raise ArgumentError(f"dt must be > 0, got {dt!r}")
    if hazard_values is not None:
        lam = np.asarray(hazard_values, dtype=float)
        if lam.shape != ens.cum_hazard.shape:
            raise ArgumentError("hazard_values must have one entry per node")
    elif spec is None or isinstance(spec, ItoHeterogeneous):
        raise ArgumentError("hazard_values are required for stochastic hazards")
    else:
        lam = spec.hazard(ens.t + 0.5 * dt, ens.nodes)
    check_hazard(lam, f" at t={ens.t!r}")
    return replace(ens, cum_hazard=ens.cum_hazard + lam * dt, t=ens.t + dt)


def _per_node(ens, phi):
    phi = np.asarray(phi, dtype=float)
    if phi.ndim == 0:
        phi = np.full(len(ens), float(phi))
    if phi.shape[0] != len(ens):
        raise ArgumentError(f"expected {len(ens)} per-node values, got {phi.shape[0]}")
    return phi


def weighted_mean(ens: WeightedEnsemble, phi):
    """E_t(phi); componentwise for phi of shape (n, d)."""
    phi = _per_node(ens, phi)
    w = ens.weights
    if phi.ndim == 2:
        return np.sum(w[:, None] * phi, axis=0)
    return float(batch_mean(w, phi))


def weighted_var(ens: WeightedEnsemble, phi) -> float:
    """Var_t(phi), computed in centered form so it is never negative."""
    return float(batch_var(ens.weights, _per_node(ens, phi)))


def weighted_cov(ens: WeightedEnsemble, phi, psi) -> float:
    return float(batch_cov(ens.weights, _per_node(ens, phi), _per_node(ens, psi)))


def weighted_cov_matrix(ens: WeightedEnsemble, phi_vec) -> np.ndarray:
    """Survival-weighted covariance matrix of vector-valued phi, shape (d, d).

    Tiny negative eigenvalues from rounding are clipped to zero so the result
    is positive semidefinite.
    """
    x = _per_node(ens, phi_vec)
    if x.ndim != 2:
        raise ArgumentError("phi_vec must have shape (n, d)")
    return cov_matrix_from_weights(ens.weights, x)


def cov_matrix_from_weights(w, x):
    m = np.sum(w[:, None] * x, axis=0)
    d = x - m
    dim = x.shape[1]
    cov = np.empty((dim, dim))
    for i in range(dim):
        for j in range(i, dim):
            cov[i, j] = cov[j, i] = np.sum(w * (d[:, i] * d[:, j]))
    if dim > 1:
        vals, vecs = np.linalg.eigh(cov)
        if vals.min() < 0:
            vals = np.clip(vals, 0.0, None)
            cov = (vecs * vals) @ vecs.T
            cov = 0.5 * (cov + cov.T)
    return cov


def pool_hazard(ens: WeightedEnsemble, hazard_values) -> float:
    """Observed pool hazard: the survival-weighted mean of node hazards."""
    lam = _per_node(ens, hazard_values)
    if np.any(lam < 0):
        raise NonnegativityError("hazard values must be >= 0")
    return float(batch_mean(ens.weights, lam))


def weighting_factor(ens: WeightedEnsemble) -> np.ndarray:
    """H_i = S_i / sum_j base_j S_j, the density of the tilted measure w.r.t. the base one."""
    return ens.survival / ens.pool_survival


def effective_sample_size(ens: WeightedEnsemble) -> float:
    return float(batch_ess(ens.weights))
