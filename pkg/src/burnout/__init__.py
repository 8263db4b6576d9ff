"""Observed hazard of heterogeneous pools: burnout, selection and frailty."""

__version__ = "0.1.0"

from .errors import (
    ArgumentError,
    BurnoutError,
    ConvergenceError,
    NonnegativityError,
    NumericError,
    NumericWarning,
    ParameterError,
    UnsupportedError,
)
from .frailty_analytics import (
    calibrate_gamma,
    gamma_pool_hazard,
    gamma_posterior,
    lognormal_pool_hazard_laplace,
    lognormal_pool_hazard_quadrature,
    multivariate_burnout_drift,
    scalar_burnout_drift,
    truncated_normal_pool_hazard,
)
from .hazard_model import (
    Constant,
    CoxPH,
    Deterministic,
    DeterministicPath,
    Discrete,
    FrailtyFactor,
    Gamma,
    ItoHeterogeneous,
    Lognormal,
    MultivariateLognormal,
    TruncatedNormal,
    VectorConstant,
)
from .identities import (
    PoolPath,
    burnout_study,
    check_burnout_identity,
    check_monotone_burnout,
    check_selection_identity,
    make_grid,
    run_deterministic,
)
from .montecarlo_pool import simulate_pool
from .stochastic_dynamics import check_pool_sde, pool_sde_study, simulate_common_factor
from .weighted_ensemble import WeightedEnsemble, init_ensemble
