"""Closed forms and approximations for frailty pools with a common hazard.

With hazard ``f * lam`` and constant ``lam`` the survival tilt of the
frailty law at time t is ``exp(-lam * t * f)``.  Gamma frailty stays gamma
under the tilt; lognormal and truncated-normal frailty are integrated
numerically and compared with their small-dispersion approximations.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy import special

from .errors import ArgumentError, ConvergenceError, NumericWarning, ParameterError
from .hazard_model import Gamma, _positive


def _nonneg_time(t):
    t = np.asarray(t, dtype=float)
    if np.any(~np.isfinite(t)) or np.any(t < 0):
        raise ParameterError("t must be finite and >= 0")
    return t


def _as_output(x):
    return float(x) if np.ndim(x) == 0 else x


# ---------------------------------------------------------------------------
# Gamma frailty
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GammaPosterior:
    """Frailty law of survivors at time ``t``: Gamma(k, theta_t)."""

    k: float
    theta_t: float
    t: float
    lambda_common: float
    theta0: float

    @property
    def mean(self):
        return self.k * self.theta_t

    @property
    def distribution(self):
        return Gamma(self.k, self.theta_t)

    def consistent(self, rtol=1e-12):
        expected = self.theta0 / (1.0 + self.theta0 * self.lambda_common * self.t)
        return math.isclose(self.theta_t, expected, rel_tol=rtol)


def gamma_pool_hazard(k, theta, lambda_common, t):
    """Pool hazard lam*k*theta / (1 + theta*lam*t); ``t`` may be an array."""
    k, theta = _positive("k", k), _positive("theta", theta)
    lam = _positive("lambda_common", lambda_common)
    t = _nonneg_time(t)
    return _as_output(lam * k * theta / (1.0 + theta * lam * t))


def gamma_posterior(k, theta, lambda_common, t) -> GammaPosterior:
    k, theta = _positive("k", k), _positive("theta", theta)
    lam = _positive("lambda_common", lambda_common)
    t = float(_nonneg_time(t))
    return GammaPosterior(k, theta / (1.0 + theta * lam * t), t, lam, theta)


# ---------------------------------------------------------------------------
# Lognormal frailty
# ---------------------------------------------------------------------------

_LOGNORMAL_MAX_NODES = 4096


@lru_cache(maxsize=16)
def _hermite(n):
    z, w = special.roots_hermite(n)
    keep = w > 0  # outer weights underflow for large n
    z, w = z[keep], w[keep]
    z.setflags(write=False)
    w.setflags(write=False)
    return z, w


class QuadratureResult(NamedTuple):
    value: float
    delta: float
    n_nodes: int
    converged: bool


def _lognormal_tilted_mean(mu, sigma, a, n):
    """E[f exp(-a f)] / E[exp(-a f)] for f = exp(mu + sigma Z), Gauss-Hermite in Z."""
    z, w = _hermite(n)
    y = mu + math.sqrt(2.0) * sigma * z
    f = np.exp(y)
    logw = np.log(w) - a * f
    logw -= logw.max()
    ww = np.exp(logw)
    return float(np.sum(ww * f) / np.sum(ww))


def lognormal_tilted_quadrature(mu, sigma, lambda_common, t, n_nodes=64,
                                rtol=1e-10, max_nodes=_LOGNORMAL_MAX_NODES) -> QuadratureResult:
    """Tilted lognormal mean frailty by node doubling until successive values agree.

    Stops when the relative change drops below ``rtol`` or ``max_nodes`` is
    reached; ``delta`` is the last successive-refinement change.
    """
    mu = float(mu)
    sigma = _positive("sigma", sigma)
    lam = _positive("lambda_common", lambda_common)
    t = float(_nonneg_time(t))
    n = int(n_nodes)
    if n < 32:
        raise ParameterError("n_nodes must be >= 32")
    a = lam * t
    prev = _lognormal_tilted_mean(mu, sigma, a, n)
    delta = math.inf
    while n < max_nodes:
        n = min(2 * n, max_nodes)
        cur = _lognormal_tilted_mean(mu, sigma, a, n)
        delta = abs(cur - prev) / abs(cur)
        prev = cur
        if delta < rtol:
            break
    return QuadratureResult(lam * prev, delta, n, delta < rtol)


def lognormal_pool_hazard_quadrature(mu, sigma, lambda_common, t, n_nodes=64) -> float:
    """Pool hazard of a lognormal frailty pool by quadrature in log space.

    Emits :class:`NumericWarning` if refinement has not settled below 1e-8 at
    the node cap.
    """
    res = lognormal_tilted_quadrature(mu, sigma, lambda_common, t, n_nodes)
    if not res.delta < 1e-8:
        warnings.warn(f"lognormal quadrature not converged: delta={res.delta:.3g} at {res.n_nodes} nodes",
                      NumericWarning, stacklevel=2)
    return res.value


def lognormal_pool_hazard_laplace(mu, sigma, lambda_common, t):
    """Small-dispersion approximation lam*exp(mu + sigma^2/2)*exp(-sigma^2*lam*t)."""
    mu = float(mu)
    sigma = _positive("sigma", sigma)
    lam = _positive("lambda_common", lambda_common)
    t = _nonneg_time(t)
    return _as_output(lam * math.exp(mu + 0.5 * sigma**2) * np.exp(-(sigma**2) * lam * t))


# ---------------------------------------------------------------------------
# Truncated-normal frailty
# ---------------------------------------------------------------------------


class NormalFrailtyHazard(NamedTuple):
    exact: float
    linear_approx: float


def _tilted_truncnorm_mean(m, s, a, n):
    # exp(-a f) N(f; m, s^2) is proportional to N(f; m - a s^2, s^2)
    shifted = m - a * s * s
    lo = max(0.0, shifted - 12.0 * s)
    hi = max(shifted + 12.0 * s, 60.0 * s * s / max(-shifted, s))
    x, wl = special.roots_legendre(n)
    f = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    logd = -0.5 * ((f - shifted) / s) ** 2
    logd -= logd.max()
    w = wl * np.exp(logd)
    return float(np.sum(w * f) / np.sum(w))


def truncated_normal_pool_hazard(m, s, lambda_common, t, n_nodes=256) -> NormalFrailtyHazard:
    """Pool hazard for N(m, s^2) frailty truncated to f > 0, plus the linear expansion.

    ``exact`` integrates the tilted truncated density with Gauss-Legendre;
    ``linear_approx`` is lam*(m - s^2*lam*t).  Warns when m <= 4s, where the
    untruncated expansion is not meaningful.
    """
    m = float(m)
    s = _positive("s", s)
    lam = _positive("lambda_common", lambda_common)
    t = float(_nonneg_time(t))
    if int(n_nodes) < 16:
        raise ParameterError("n_nodes must be >= 16")
    if not m > 4.0 * s:
        warnings.warn(f"m={m} <= 4s={4 * s}: truncation is not negligible, linear expansion invalid",
                      NumericWarning, stacklevel=2)
    exact = lam * _tilted_truncnorm_mean(m, s, lam * t, int(n_nodes))
    return NormalFrailtyHazard(exact, lam * (m - s * s * lam * t))


# ---------------------------------------------------------------------------
# Multivariate frailty
# ---------------------------------------------------------------------------


def scalar_burnout_drift(lambda0, var_f, mean_lambda_dot=0.0) -> float:
    """Pool-hazard drift for scalar frailty: E_t(lambda_dot) - lambda0^2 Var_t(f)."""
    return mean_lambda_dot - (lambda0 * var_f) * lambda0


def multivariate_burnout_drift(lambda0_vec, cov_matrix, mean_lambda_dot=0.0) -> float:
    """E_t(lambda_dot) - lambda0' Cov_t(f) lambda0 for vector frailty."""
    lam = np.atleast_1d(np.asarray(lambda0_vec, dtype=float))
    cov = np.atleast_2d(np.asarray(cov_matrix, dtype=float))
    if lam.ndim != 1 or cov.shape != (lam.size, lam.size):
        raise ArgumentError(f"cov must be {lam.size}x{lam.size}, got {cov.shape}")
    if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
        raise ArgumentError("cov must be symmetric")
    if lam.size > 1 and np.linalg.eigvalsh(cov).min() < -1e-10:
        raise ArgumentError("cov must be positive semidefinite")
    if lam.size == 1 and cov[0, 0] < -1e-10:
        raise ArgumentError("variance must be >= 0")
    quad = float(np.sum((lam[:, None] * cov) * lam[None, :]))
    return mean_lambda_dot - quad


# ---------------------------------------------------------------------------
# Weighted Kolmogorov-Smirnov
# ---------------------------------------------------------------------------


def _weighted_ecdf(x, w):
    order = np.argsort(x, kind="stable")
    xs = np.asarray(x, dtype=float)[order]
    ws = np.asarray(w, dtype=float)[order]
    ws = ws / np.sum(ws)
    return xs, np.cumsum(ws)


def weighted_ks_statistic(x, w, cdf) -> float:
    """sup |F_w - F| for the weighted empirical CDF of ``x`` against ``cdf``."""
    xs, upper = _weighted_ecdf(x, w)
    lower = np.concatenate([[0.0], upper[:-1]])
    f = cdf(xs)
    return float(max(np.max(upper - f), np.max(f - lower)))


def weighted_ks_2samp(x1, w1, x2, w2) -> float:
    """sup |F_1 - F_2| between two weighted empirical CDFs."""
    a, ca = _weighted_ecdf(x1, w1)
    b, cb = _weighted_ecdf(x2, w2)
    pts = np.concatenate([a, b])
    fa = np.concatenate([[0.0], ca])[np.searchsorted(a, pts, side="right")]
    fb = np.concatenate([[0.0], cb])[np.searchsorted(b, pts, side="right")]
    return float(np.max(np.abs(fa - fb)))


def ks_critical_value(alpha: float, n_eff: float) -> float:
    """Asymptotic one-sample KS critical value sqrt(-log(alpha/2)/2)/sqrt(n)."""
    if not 0.0 < alpha < 1.0:
        raise ArgumentError(f"alpha must lie in (0, 1), got {alpha!r}")
    if not n_eff > 0:
        raise ArgumentError(f"n_eff must be > 0, got {n_eff!r}")
    return math.sqrt(-0.5 * math.log(alpha / 2.0)) / math.sqrt(n_eff)


# ---------------------------------------------------------------------------
# Calibration
# ---------------------------------------------------------------------------

IDENTIFIABILITY_NOTE = (
    "a hyperbolic pool-hazard curve identifies only the initial pool hazard "
    "lambda*k*theta and the decay rate theta*lambda; k, theta and lambda are "
    "not separately recoverable"
)


@dataclass
class GammaCalibration:
    lambda0_bar: float
    theta_lambda: float
    rms_error: float
    iterations: int
    converged: bool
    note: str = IDENTIFIABILITY_NOTE


def _hyperbola(params, t):
    a, c = params
    return a / (1.0 + c * t)


def calibrate_gamma(t, hazard=None, max_iter: int = 100, xtol: float = 1e-14) -> GammaCalibration:
    """Least-squares fit of ``h0 / (1 + c t)`` by Gauss-Newton with backtracking.

    ``t`` may be a :class:`~burnout.identities.PoolPath` (its pool-hazard
    series is fitted).  Starts from the exact fit of ``1/h`` linear in ``t``.
    """
    if hazard is None:
        t, hazard = t.grid, t.pool_hazard
    t = np.asarray(t, dtype=float)
    y = np.asarray(hazard, dtype=float)
    if t.ndim != 1 or t.shape != y.shape or t.size < 3:
        raise ArgumentError("calibration needs >= 3 (t, hazard) points")
    if np.any(~np.isfinite(y)) or np.any(y <= 0) or np.any(~np.isfinite(t)):
        raise ArgumentError("calibration needs finite, positive hazards")

    slope, intercept = np.polyfit(t, 1.0 / y, 1)
    if intercept <= 0:
        intercept = 1.0 / y[np.argmin(t)]
    p = np.array([1.0 / intercept, slope / intercept])
    c_min = -1.0 / np.max(np.abs(t)) if np.any(t != 0) else -np.inf

    def sse(q):
        return float(np.sum((_hyperbola(q, t) - y) ** 2))

    current = sse(p)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        denom = 1.0 + p[1] * t
        r = p[0] / denom - y
        jac = np.column_stack([1.0 / denom, -p[0] * t / denom**2])
        step = np.linalg.lstsq(jac, -r, rcond=None)[0]
        scale = 1.0
        while scale > 1e-12:
            trial = p + scale * step
            if trial[0] > 0 and trial[1] > c_min and sse(trial) <= current:
                break
            scale *= 0.5
        else:
            converged = True  # no descent direction left: at a minimum
            break
        moved = np.max(np.abs(scale * step) / np.maximum(np.abs(p), 1e-300))
        p = trial
        current = sse(p)
        if moved < xtol or current == 0.0:
            converged = True
            break
    result = GammaCalibration(float(p[0]), float(p[1]), math.sqrt(current / t.size), it, converged)
    if not converged:
        raise ConvergenceError(f"Gauss-Newton did not converge in {max_iter} iterations", best=result)
    return result
