import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from burnout import Constant, Deterministic, FrailtyFactor, Gamma, ItoHeterogeneous, init_ensemble
from burnout.errors import ArgumentError, NonnegativityError
from burnout.weighted_ensemble import (
    WeightedEnsemble,
    advance_survival,
    effective_sample_size,
    pool_hazard,
    weighted_cov,
    weighted_cov_matrix,
    weighted_mean,
    weighted_var,
    weighting_factor,
)


def test_two_type_pool_at_t10(two_type):
    # weights proportional to e^-1 and e^-3
    ens = init_ensemble(two_type, 2)
    spec = FrailtyFactor(Constant(0.1))
    for _ in range(100):
        ens = advance_survival(ens, spec, 0.1)
    np.testing.assert_allclose(ens.cum_hazard, [1.0, 3.0], rtol=1e-13)
    np.testing.assert_allclose(weighted_mean(ens, ens.nodes), 1.2384058440442, rtol=1e-12)
    np.testing.assert_allclose(pool_hazard(ens, spec.hazard(ens.t, ens.nodes)), 0.12384058440442, rtol=1e-12)
    ess = (1 + math.exp(-2)) ** 2 / (1 + math.exp(-4))  # 1 / sum w_i^2
    np.testing.assert_allclose(effective_sample_size(ens), ess, rtol=1e-12)


def test_initial_ensemble_is_base_measure():
    ens = init_ensemble(Gamma(2.0, 1.0), 64)
    np.testing.assert_array_equal(ens.weights, ens.base_weights)
    assert ens.pool_survival == pytest.approx(1.0)
    np.testing.assert_allclose(weighting_factor(ens), 1.0)


def test_weighting_factor_integrates_to_one():
    ens = WeightedEnsemble(np.array([1.0, 2.0, 4.0]), np.array([0.2, 0.3, 0.5]), np.array([0.1, 0.5, 2.0]), 1.0)
    np.testing.assert_allclose(np.sum(ens.base_weights * weighting_factor(ens)), 1.0, rtol=1e-15)
    np.testing.assert_allclose(ens.base_weights * weighting_factor(ens), ens.weights, rtol=1e-14)


def test_arrays_are_read_only():
    ens = init_ensemble(Gamma(2.0, 1.0), 8)
    with pytest.raises(ValueError):
        ens.cum_hazard[0] = 1.0


def test_variance_and_covariance():
    ens = WeightedEnsemble(np.array([1.0, 3.0]), np.array([0.5, 0.5]), np.zeros(2))
    assert weighted_var(ens, ens.nodes) == pytest.approx(1.0)
    assert weighted_cov(ens, ens.nodes, -ens.nodes) == pytest.approx(-1.0)
    assert weighted_var(ens, np.full(2, 7.0)) == 0.0


def test_cov_matrix_is_psd():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((500, 3))
    x[:, 2] = x[:, 0] + x[:, 1]  # exactly singular
    ens = WeightedEnsemble(x, np.full(500, 1 / 500), rng.random(500))
    cov = weighted_cov_matrix(ens, x)
    assert np.allclose(cov, cov.T)
    assert np.linalg.eigvalsh(cov).min() >= -1e-15


def test_advance_errors():
    ens = init_ensemble(Gamma(2.0, 1.0), 8)
    with pytest.raises(ArgumentError):
        advance_survival(ens, FrailtyFactor(Constant(0.1)), 0.0)
    ito = ItoHeterogeneous(lambda t, f: 0 * f, lambda t, f: 0 * f, lambda f: f)
    with pytest.raises(ArgumentError):
        advance_survival(ens, ito, 0.1)
    with pytest.raises(NonnegativityError):
        advance_survival(ens, Deterministic(lambda t, f: -f), 0.1)
    with pytest.raises(NonnegativityError):
        pool_hazard(ens, -np.ones(8))


def test_mode_validation():
    with pytest.raises(ArgumentError):
        init_ensemble(Gamma(2.0, 1.0), 8, mode="grid")


def test_huge_cumulative_hazard_stays_finite():
    ens = WeightedEnsemble(np.array([1.0, 2.0]), np.array([0.5, 0.5]), np.array([2000.0, 4000.0]))
    np.testing.assert_allclose(ens.weights, [1.0, 0.0], atol=1e-300)
    assert math.isfinite(effective_sample_size(ens))


@given(
    cum=st.lists(st.floats(0.0, 50.0), min_size=2, max_size=30),
    seed=st.integers(0, 2**16),
)
def test_weights_are_a_probability_vector(cum, seed):
    rng = np.random.default_rng(seed)
    n = len(cum)
    base = rng.random(n) + 0.01
    base /= base.sum()
    ens = WeightedEnsemble(rng.random(n) * 3, base, np.array(cum))
    w = ens.weights
    assert np.all(w >= 0)
    assert math.isclose(w.sum(), 1.0, rel_tol=1e-12)
    assert 1.0 - 1e-9 <= effective_sample_size(ens) <= n + 1e-9
    assert weighted_var(ens, ens.nodes) >= 0.0


@given(shift=st.floats(0.0, 100.0))
def test_weights_invariant_to_common_shift(shift):
    base = np.array([0.2, 0.3, 0.5])
    cum = np.array([0.1, 0.7, 1.9])
    a = WeightedEnsemble(np.ones(3), base, cum).weights
    b = WeightedEnsemble(np.ones(3), base, cum + shift).weights
    np.testing.assert_allclose(a, b, rtol=1e-12)
