import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from burnout import (
    Constant,
    Deterministic,
    Discrete,
    FrailtyFactor,
    Gamma,
    ItoHeterogeneous,
    Lognormal,
    TruncatedNormal,
    burnout_study,
    check_burnout_identity,
    check_monotone_burnout,
    check_selection_identity,
    gamma_pool_hazard,
    make_grid,
    run_deterministic,
)
from burnout.errors import ArgumentError
from burnout.identities import order_estimate, refine_grid, series_derivative


def two_type_pool_hazard(t):
    # 0.1 * (e^{-0.1 t} + 3 e^{-0.3 t}) / (e^{-0.1 t} + e^{-0.3 t})
    a, b = np.exp(-0.1 * t), np.exp(-0.3 * t)
    return 0.1 * (a + 3 * b) / (a + b)


def test_make_grid():
    g = make_grid(1.0, 0.25)
    np.testing.assert_array_equal(g, [0.0, 0.25, 0.5, 0.75, 1.0])
    np.testing.assert_array_equal(refine_grid(g)[::2], g)
    for t_end, dt in [(1.0, 0.3), (1.0, -0.1), (0.0, 0.1)]:
        with pytest.raises(ArgumentError):
            make_grid(t_end, dt)


def test_series_derivative_second_order():
    g = make_grid(2.0, 0.1)
    np.testing.assert_allclose(series_derivative(g, g**2), 2 * g, atol=1e-12)


def test_order_estimate():
    assert order_estimate([0.1, 0.05, 0.025], [4e-4, 1e-4, 2.5e-5]) == pytest.approx(2.0)
    assert np.isnan(order_estimate([0.1, 0.05], [0.0, 0.0]))


def test_two_type_brute_force(two_type):
    spec = FrailtyFactor(Constant(0.1))
    path = run_deterministic(spec, two_type, make_grid(10.0, 0.01), n=2)
    np.testing.assert_allclose(path.pool_hazard, two_type_pool_hazard(path.grid), rtol=1e-13)
    np.testing.assert_allclose(path.pool_hazard[-1], 0.12384058440442, rtol=1e-12)
    np.testing.assert_allclose(path.extra["mean_f"][-1], 1.2384058440442, rtol=1e-12)
    # Var_t(lambda) = 0.01 * Var_t(f)
    np.testing.assert_allclose(path.xvar, 0.01 * path.extra["var_f"], rtol=1e-12)


def test_two_type_identity_residual_and_order(two_type):
    spec = FrailtyFactor(Constant(0.1))
    _, report = burnout_study(spec, two_type, 10.0, 0.01, halvings=1, n=2, tolerance=1e-4)
    assert report.passed and report.max_abs_residual < 1e-4
    ratio = report.level_residuals[0] / report.level_residuals[1]
    assert 3.5 < ratio < 4.5


def test_gamma_path_matches_closed_form():
    path = run_deterministic(FrailtyFactor(Constant(0.2)), Gamma(2.0, 1.0), make_grid(10.0, 0.01))
    exact = gamma_pool_hazard(2.0, 1.0, 0.2, path.grid)
    np.testing.assert_allclose(path.pool_hazard, exact, rtol=1e-12)
    np.testing.assert_allclose(path.pool_survival, (1 + 0.2 * path.grid) ** -2.0, rtol=1e-12)


def test_homogeneous_pool_is_exact():
    path = run_deterministic(FrailtyFactor(Constant(0.1)), Discrete((1.0,), (1.0,)), make_grid(5.0, 0.1), n=2)
    np.testing.assert_array_equal(path.pool_hazard, 0.1)
    np.testing.assert_array_equal(path.xvar, 0.0)
    assert check_burnout_identity(path, 1e-14).passed


def test_constant_hazards_decline_at_rate_var():
    # with lambda_dot = 0 the identity reads d pool/dt = -Var_t(lambda)
    path = run_deterministic(Deterministic(lambda t, f: 0.05 * f**2, lambda t, f: 0 * f),
                             Lognormal(0.0, 0.5), make_grid(10.0, 0.01), n=128)
    lhs = series_derivative(path.grid, path.pool_hazard)
    assert np.max(np.abs(lhs + path.xvar)) < 1e-5
    assert check_monotone_burnout(path)


def test_monotone_negative_control():
    assert not check_monotone_burnout(np.linspace(0.1, 0.2, 10))
    assert check_monotone_burnout(np.array([0.2, 0.2 + 1e-13, 0.1]))


def test_selection_identity_cubic():
    spec = FrailtyFactor(Constant(0.2))
    rep = check_selection_identity(spec, Gamma(2.0, 1.0), lambda t, f: f**3 - t * f, lambda t, f: -f,
                                   make_grid(10.0, 0.01), dt_refinements=1)
    assert rep.passed
    assert rep.order_estimate > 1.9


def test_selection_with_phi_equal_lambda_is_burnout(two_type):
    spec = FrailtyFactor(Constant(0.1))
    grid = make_grid(5.0, 0.01)
    rep = check_selection_identity(spec, two_type, lambda t, f: 0.1 * f, lambda t, f: 0 * f, grid, n=2)
    path = run_deterministic(spec, two_type, grid, n=2)
    np.testing.assert_allclose(rep.residual_series, check_burnout_identity(path).residual_series, atol=1e-15)


def test_runner_rejects_ito():
    ito = ItoHeterogeneous(lambda t, f: 0 * f, lambda t, f: 0 * f, lambda f: f)
    with pytest.raises(ArgumentError):
        run_deterministic(ito, Gamma(2.0, 1.0), make_grid(1.0, 0.1))


def test_chunked_sweep_matches_single_chunk(monkeypatch):
    import burnout.identities as ident

    spec = Deterministic(lambda t, f: 0.1 * f * (1 + 0.5 * np.sin(t)))
    grid = make_grid(5.0, 0.01)
    whole = run_deterministic(spec, Gamma(2.0, 1.0), grid, n=64)
    monkeypatch.setattr(ident, "_CHUNK_ELEMENTS", 64 * 7)
    chunked = run_deterministic(spec, Gamma(2.0, 1.0), grid, n=64)
    np.testing.assert_array_equal(whole.pool_hazard, chunked.pool_hazard)
    np.testing.assert_array_equal(whole.pool_survival, chunked.pool_survival)


@pytest.mark.parametrize("dist", [Gamma(2.0, 1.0), Lognormal(0.0, 0.5), TruncatedNormal(1.0, 0.3)])
def test_second_order_convergence(dist):
    spec = FrailtyFactor(Constant(0.2))
    start = time.perf_counter()
    _, rep = burnout_study(spec, dist, 10.0, 0.01, halvings=2)
    assert time.perf_counter() - start < 5.0
    assert rep.passed and rep.order_estimate > 1.9


@given(
    v=st.lists(st.floats(0.1, 5.0), min_size=2, max_size=6, unique=True),
    lam=st.floats(0.01, 0.5),
)
def test_monotone_for_any_discrete_pool(v, lam):
    p = np.full(len(v), 1.0 / len(v))
    p[-1] = 1.0 - p[:-1].sum()
    path = run_deterministic(FrailtyFactor(Constant(lam)), Discrete(tuple(v), tuple(p)), make_grid(5.0, 0.05), n=2)
    assert check_monotone_burnout(path)
    assert np.all(path.xvar >= 0)
