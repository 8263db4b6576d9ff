"""Borrower type distributions, common factors and hazard specifications.

Every hazard object follows one broadcasting contract: ``t`` is either a
scalar or a 1-D array of times (years), ``f`` is a node array of shape
``(n,)`` for scalar frailty or ``(n, d)`` for vector frailty.  A scalar ``t``
yields shape ``(n,)``; a 1-D ``t`` of length ``N`` yields ``(N, n)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Union

import numpy as np
from scipy import special, stats
from scipy.interpolate import CubicSpline

from .errors import NonnegativityError, ParameterError, UnsupportedError

# Truncated-normal quadrature covers m +/- this many standard deviations.
_TRUNCNORM_SPAN = 12.0


def _positive(name, value):
    value = float(value)
    if not (math.isfinite(value) and value > 0):
        raise ParameterError(f"{name} must be finite and > 0, got {value!r}")
    return value


def _finite(name, value):
    value = float(value)
    if not math.isfinite(value):
        raise ParameterError(f"{name} must be finite, got {value!r}")
    return value


# ---------------------------------------------------------------------------
# Frailty distributions
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Gamma:
    """Gamma(k, theta) frailty: mean k*theta, variance k*theta**2."""

    k: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "k", _positive("k", self.k))
        object.__setattr__(self, "theta", _positive("theta", self.theta))

    dim = 1

    @property
    def mean(self):
        return self.k * self.theta

    @property
    def variance(self):
        return self.k * self.theta**2

    def cdf(self, x):
        return stats.gamma.cdf(x, a=self.k, scale=self.theta)

    def draw(self, rng, n):
        return rng.gamma(self.k, self.theta, size=n)


@dataclass(frozen=True)
class Lognormal:
    """f = exp(Y) with Y ~ N(mu, sigma**2)."""

    mu: float
    sigma: float

    def __post_init__(self):
        object.__setattr__(self, "mu", _finite("mu", self.mu))
        object.__setattr__(self, "sigma", _positive("sigma", self.sigma))

    dim = 1

    @property
    def mean(self):
        return math.exp(self.mu + 0.5 * self.sigma**2)

    @property
    def variance(self):
        s2 = self.sigma**2
        return math.expm1(s2) * math.exp(2.0 * self.mu + s2)

    def cdf(self, x):
        return stats.lognorm.cdf(x, s=self.sigma, scale=math.exp(self.mu))

    def draw(self, rng, n):
        return rng.lognormal(self.mu, self.sigma, size=n)


@dataclass(frozen=True)
class TruncatedNormal:
    """N(m, s**2) conditioned on f > 0.

    The truncation keeps the frailty a valid hazard multiplier; for
    ``m >> s`` the truncated mass is negligible and the law is
    indistinguishable from the untruncated normal.
    """

    m: float
    s: float

    def __post_init__(self):
        object.__setattr__(self, "m", _finite("m", self.m))
        object.__setattr__(self, "s", _positive("s", self.s))

    dim = 1

    @property
    def _frozen(self):
        return stats.truncnorm(-self.m / self.s, np.inf, loc=self.m, scale=self.s)

    @property
    def mean(self):
        return float(self._frozen.mean())

    @property
    def variance(self):
        return float(self._frozen.var())

    @property
    def truncated_mass(self):
        """Probability the untruncated normal puts on f <= 0."""
        return float(special.ndtr(-self.m / self.s))

    def cdf(self, x):
        return self._frozen.cdf(x)

    def draw(self, rng, n):
        out = self._frozen.rvs(size=n, random_state=rng)
        # ppf rounding can return exactly 0.0 deep in the lower tail
        return np.maximum(out, np.nextafter(0.0, 1.0))


@dataclass(frozen=True)
class Discrete:
    """Finite set of frailty atoms with probabilities."""

    values: tuple
    probs: tuple

    def __post_init__(self):
        values = tuple(float(v) for v in self.values)
        probs = tuple(float(p) for p in self.probs)
        if len(values) == 0 or len(values) != len(probs):
            raise ParameterError("values and probs must be non-empty and of equal length")
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise ParameterError("discrete frailty values must be finite and >= 0")
        if any(not math.isfinite(p) or p < 0 for p in probs):
            raise ParameterError("discrete probabilities must be >= 0")
        if abs(math.fsum(probs) - 1.0) > 1e-12:
            raise ParameterError(f"discrete probabilities sum to {math.fsum(probs)!r}, not 1")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "probs", probs)

    dim = 1

    @property
    def mean(self):
        return math.fsum(v * p for v, p in zip(self.values, self.probs))

    @property
    def variance(self):
        m = self.mean
        return math.fsum(p * (v - m) ** 2 for v, p in zip(self.values, self.probs))

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        v = np.asarray(self.values)
        p = np.asarray(self.probs)
        return np.sum(p * (v <= x[..., None]), axis=-1)

    def draw(self, rng, n):
        idx = rng.choice(len(self.values), size=n, p=np.asarray(self.probs))
        return np.asarray(self.values)[idx]


@dataclass(frozen=True)
class MultivariateLognormal:
    """Vector frailty f = exp(Y), Y ~ N(mu_vec, cov) componentwise."""

    mu_vec: tuple
    cov: tuple

    def __post_init__(self):
        mu = np.asarray(self.mu_vec, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mu.ndim != 1 or mu.size == 0:
            raise ParameterError("mu_vec must be a non-empty vector")
        if cov.shape != (mu.size, mu.size):
            raise ParameterError(f"cov must be {mu.size}x{mu.size}, got {cov.shape}")
        if not (np.all(np.isfinite(mu)) and np.all(np.isfinite(cov))):
            raise ParameterError("mu_vec and cov must be finite")
        if not np.allclose(cov, cov.T, rtol=0, atol=1e-12):
            raise ParameterError("cov must be symmetric")
        if np.linalg.eigvalsh(cov).min() < -1e-12:
            raise ParameterError("cov must be positive semidefinite")
        object.__setattr__(self, "mu_vec", tuple(mu.tolist()))
        object.__setattr__(self, "cov", tuple(tuple(r) for r in cov.tolist()))

    @property
    def dim(self):
        return len(self.mu_vec)

    @property
    def mean(self):
        mu = np.asarray(self.mu_vec)
        return np.exp(mu + 0.5 * np.diag(np.asarray(self.cov)))

    @property
    def covariance(self):
        cov = np.asarray(self.cov)
        m = self.mean
        return np.outer(m, m) * np.expm1(cov)

    def draw(self, rng, n):
        y = rng.multivariate_normal(np.asarray(self.mu_vec), np.asarray(self.cov), size=n, method="eigh")
        return np.exp(y)


FrailtyDistribution = Union[Gamma, Lognormal, TruncatedNormal, Discrete, MultivariateLognormal]
SCALAR_DISTRIBUTIONS = (Gamma, Lognormal, TruncatedNormal, Discrete)


# ---------------------------------------------------------------------------
# Common factors
# ---------------------------------------------------------------------------


def finite_difference(fn, t):
    """Time derivative of ``fn`` by a second-order difference, step 1e-5*max(1, t).

    Central where ``t >= h``; one-sided second order near ``t = 0`` so that
    ``fn`` is never evaluated at negative times.  ``fn`` may append trailing
    axes to the shape of ``t``.
    """
    t = np.asarray(t, dtype=float)
    h = 1e-5 * np.maximum(1.0, np.abs(t))
    central = t >= h
    plus = fn(t + h)
    extra = (1,) * (np.ndim(plus) - t.ndim)
    hb = h.reshape(h.shape + extra)
    if np.all(central):
        return (plus - fn(t - h)) / (2.0 * hb)
    fwd = (-3.0 * fn(t) + 4.0 * plus - fn(t + 2.0 * h)) / (2.0 * hb)
    if not np.any(central):
        return fwd
    ctr = (plus - fn(np.where(central, t - h, t))) / (2.0 * hb)
    return np.where(central.reshape(central.shape + extra), ctr, fwd)


@dataclass(frozen=True)
class Constant:
    """Constant common hazard (per year)."""

    lam: float

    def __post_init__(self):
        lam = _finite("lambda", self.lam)
        if lam < 0:
            raise ParameterError("constant common factor must be >= 0")
        object.__setattr__(self, "lam", lam)

    dim = 1

    def value(self, t):
        return np.full(np.shape(t), self.lam)

    def derivative(self, t):
        return np.zeros(np.shape(t))


@dataclass(frozen=True)
class DeterministicPath:
    """Common hazard given on a time grid, interpolated by a C2 cubic spline."""

    times: tuple
    values: tuple
    _spline: CubicSpline = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.ndim != 1 or times.size < 2 or times.shape != values.shape:
            raise ParameterError("path needs >= 2 times and matching values")
        if np.any(np.diff(times) <= 0):
            raise ParameterError("path times must be strictly increasing")
        if np.any(values < 0) or not np.all(np.isfinite(values)):
            raise ParameterError("path values must be finite and >= 0")
        object.__setattr__(self, "times", tuple(times.tolist()))
        object.__setattr__(self, "values", tuple(values.tolist()))
        bc = "not-a-knot" if times.size >= 4 else "natural"
        object.__setattr__(self, "_spline", CubicSpline(times, values, bc_type=bc))

    dim = 1

    def value(self, t):
        return self._spline(np.asarray(t, dtype=float))

    def derivative(self, t):
        return self._spline(np.asarray(t, dtype=float), 1)


@dataclass(frozen=True)
class CoxPH:
    """Proportional-hazards common factor: base(t) * exp(beta . y)."""

    base_fn: Callable
    beta: tuple = ()
    covariates: tuple = ()
    base_dot_fn: Optional[Callable] = None

    def __post_init__(self):
        beta = tuple(_finite("beta", b) for b in self.beta)
        y = tuple(_finite("covariate", c) for c in self.covariates)
        if len(beta) != len(y):
            raise ParameterError("beta and covariates must have equal length")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "covariates", y)

    dim = 1

    @property
    def multiplier(self):
        return math.exp(math.fsum(b * c for b, c in zip(self.beta, self.covariates)))

    def _base(self, t):
        return np.broadcast_to(self.base_fn(t), np.shape(t)).astype(float)

    def value(self, t):
        return self._base(np.asarray(t, dtype=float)) * self.multiplier

    def derivative(self, t):
        t = np.asarray(t, dtype=float)
        if self.base_dot_fn is not None:
            d = np.broadcast_to(self.base_dot_fn(t), np.shape(t)).astype(float)
        else:
            d = finite_difference(self._base, t)
        return d * self.multiplier


@dataclass(frozen=True)
class VectorConstant:
    """Constant vector of common intensities for multivariate frailty."""

    lam_vec: tuple

    def __post_init__(self):
        lam = tuple(_finite("lambda", v) for v in self.lam_vec)
        if not lam or any(v < 0 for v in lam):
            raise ParameterError("vector common factor needs >= 1 entries, all >= 0")
        object.__setattr__(self, "lam_vec", lam)

    @property
    def dim(self):
        return len(self.lam_vec)

    def value(self, t):
        return np.broadcast_to(np.asarray(self.lam_vec), np.shape(t) + (self.dim,)).copy()

    def derivative(self, t):
        return np.zeros(np.shape(t) + (self.dim,))


CommonFactorSpec = Union[Constant, DeterministicPath, CoxPH, VectorConstant]


# ---------------------------------------------------------------------------
# Hazard specifications
# ---------------------------------------------------------------------------


def _grid(t, f):
    """Broadcast a scalar/1-D time against node-shaped frailty."""
    t = np.asarray(t, dtype=float)
    if t.ndim == 0:
        return t, f
    return t[:, None], f


def _call(fn, t, f):
    tt, ff = _grid(t, f)
    out = fn(tt, ff)
    shape = np.broadcast_shapes(np.shape(tt), np.shape(ff))
    return np.array(np.broadcast_to(out, shape), dtype=float)


@dataclass(frozen=True)
class Deterministic:
    """Arbitrary deterministic hazard lambda(t, f), vectorised over both."""

    lambda_fn: Callable
    lambda_dot_fn: Optional[Callable] = None

    def hazard(self, t, f):
        return _call(self.lambda_fn, t, f)

    def hazard_dot(self, t, f):
        if self.lambda_dot_fn is not None:
            return _call(self.lambda_dot_fn, t, f)
        return finite_difference(lambda s: self.hazard(s, f), t)


@dataclass(frozen=True)
class FrailtyFactor:
    """lambda_t(f) = f * common(t), or f . common(t) for vector frailty."""

    common: CommonFactorSpec

    def _combine(self, lam0, f):
        f = np.asarray(f, dtype=float)
        if isinstance(self.common, VectorConstant):
            if f.ndim != 2 or f.shape[1] != self.common.dim:
                raise ParameterError(
                    f"vector common factor of dim {self.common.dim} needs (n, {self.common.dim}) frailty"
                )
            out = 0.0
            for k in range(self.common.dim):
                out = out + lam0[..., k, None] * f[:, k]
            return np.asarray(out, dtype=float)
        if f.ndim != 1:
            raise ParameterError("scalar common factor needs scalar frailty nodes")
        return np.asarray(lam0)[..., None] * f

    def hazard(self, t, f):
        return self._combine(self.common.value(np.asarray(t, dtype=float)), f)

    def hazard_dot(self, t, f):
        return self._combine(self.common.derivative(np.asarray(t, dtype=float)), f)


@dataclass(frozen=True)
class ItoHeterogeneous:
    """d lambda_t(f) = mu(t, f) dt + sigma(t, f) dW_t with one shared W."""

    mu_fn: Callable
    sigma_fn: Callable
    lambda0_fn: Callable

    def initial(self, f):
        f = np.asarray(f, dtype=float)
        return np.array(np.broadcast_to(self.lambda0_fn(f), f.shape[:1]), dtype=float)

    def drift(self, t, f):
        return _call(self.mu_fn, t, f)

    def vol(self, t, f):
        return _call(self.sigma_fn, t, f)


HazardSpec = Union[Deterministic, FrailtyFactor, ItoHeterogeneous]


def check_hazard(values, where=""):
    """Raise NonnegativityError unless every value is finite and >= 0."""
    values = np.asarray(values, dtype=float)
    bad = ~np.isfinite(values) | (values < 0)
    if np.any(bad):
        first = values[bad].flat[0]
        raise NonnegativityError(f"hazard evaluation{where} gave {first!r}; hazards must be finite and >= 0")
    return values


# ---------------------------------------------------------------------------
# Operations
# ---------------------------------------------------------------------------


def sample_types(dist: FrailtyDistribution, n: int, seed: int) -> np.ndarray:
    """Draw ``n`` i.i.d. types from ``dist``; reproducible for a fixed seed."""
    if int(n) < 1:
        raise ParameterError("n must be >= 1")
    return dist.draw(np.random.default_rng(seed), int(n))


def eval_hazard(spec: HazardSpec, t, f) -> np.ndarray:
    """Hazard per year of each node in ``f`` at time(s) ``t``.

    Ito specs only have a defined hazard at ``t = 0`` without a simulated path.
    """
    if np.any(np.asarray(t) < 0):
        raise ParameterError("t must be >= 0")
    if isinstance(spec, ItoHeterogeneous):
        if np.any(np.asarray(t) != 0):
            raise UnsupportedError("Ito hazards at t > 0 require a simulated common-factor path")
        return check_hazard(spec.initial(f), " (initial Ito hazard)")
    return check_hazard(spec.hazard(t, f))


def quantile_nodes(dist: FrailtyDistribution, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic quadrature nodes and probability weights for a scalar law.

    Gamma uses generalized Gauss-Laguerre, Lognormal uses Gauss-Hermite in
    log space, TruncatedNormal uses Gauss-Legendre against the density on
    ``[max(0, m - 12 s), m + 12 s]``.  Discrete returns its atoms exactly,
    whatever ``n`` is.  Weights are nonnegative and sum to one.
    """
    n = int(n)
    if n < 2:
        raise ParameterError("quantile_nodes needs n >= 2")
    if isinstance(dist, MultivariateLognormal):
        raise UnsupportedError("quadrature nodes are scalar-only; sample multivariate frailty instead")
    if isinstance(dist, Discrete):
        nodes, w = np.asarray(dist.values), np.asarray(dist.probs)
    elif isinstance(dist, Gamma):
        x, w = special.roots_genlaguerre(n, dist.k - 1.0)
        nodes = x * dist.theta
    elif isinstance(dist, Lognormal):
        z, w = special.roots_hermite(n)
        nodes = np.exp(dist.mu + math.sqrt(2.0) * dist.sigma * z)
    elif isinstance(dist, TruncatedNormal):
        lo = max(0.0, dist.m - _TRUNCNORM_SPAN * dist.s)
        hi = dist.m + _TRUNCNORM_SPAN * dist.s
        x, wl = special.roots_legendre(n)
        nodes = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
        w = wl * stats.norm.pdf(nodes, loc=dist.m, scale=dist.s)
    else:
        raise UnsupportedError(f"no quadrature rule for {type(dist).__name__}")
    w = np.maximum(np.asarray(w, dtype=float), 0.0)
    w = w / math.fsum(w)
    return np.asarray(nodes, dtype=float), w
