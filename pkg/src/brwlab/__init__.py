"""Branching random walk with a time-varying random environment.

Simulation of the particle system, exact computation of its limit objects
(rate functions, critical temperatures, free-energy limit, CLT
normalizers), and a theorem-by-theorem Monte Carlo verification suite.
"""

from .env_model import (
    ConfigurationError,
    ConstantEnvironment,
    Deterministic,
    EnvRealization,
    EnvState,
    Gaussian,
    IIDEnvironment,
    MarkovEnvironment,
    PointMass,
    PoissonPositive,
    QuenchedMoments,
    ShiftedGeometric,
    TwoPoint,
    laplace_m,
    laplace_m_prime,
    quenched_moments,
    sample_environment,
    sample_point_process,
)
from .analytic import (
    AnnealedParams,
    RateFunctionTable,
    annealed_params,
    critical_temperatures,
    free_energy_limit,
    lambda_of_t,
    lambda_prime_of_t,
    legendre,
    rate_function,
    rate_function_table,
    speeds,
)
from .simulate import (
    GenerationSnapshot,
    PopulationOverflowError,
    SimConfig,
    additive_martingale,
    partition_function,
    run_tree,
)
from .estimators import (
    AggregateReport,
    ReplicaSummary,
    aggregate,
    clt_empirical_cdf,
    fejer_smooth,
    free_energy_curve,
    ks_distance,
    ldp_interval_rates,
    llt_gap,
    quenched_mean_ldp_exact,
    summarize_replica,
)
from .verify import SuiteConfig, SuiteReport, TheoremCheck, default_suite_config, run_suite

__version__ = "0.1.0"
