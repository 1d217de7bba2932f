"""Momentum-family optimization laboratory.

Discrete methods (two-line NAG, its phase-space form, FISTA) and the matching
low/high-resolution continuous models over the momentum family r >= -1,
with Lyapunov-function audits, convergence-rate certificates, and a CLI
experiment runner producing deterministic trajectory CSVs.
"""

from .diagnostics import (
    CSV_COLUMNS,
    Certificate,
    CompareReport,
    TrajectoryRecord,
    certify_gradient_trend,
    certify_objective_rate,
    compare_ode_nag,
    fit_loglog_slope,
    read_csv,
    write_csv,
)
from .lyapunov import (
    AUDIT_KINDS,
    CoefficientTable,
    ContinuousThreshold,
    DiscreteThreshold,
    LyapunovAudit,
    audit,
    coefficient_arrays,
    coefficients,
    continuous_lyapunov,
    continuous_threshold,
    critical_lyapunov_fista,
    critical_lyapunov_nag,
    discrete_lyapunov_fista,
    discrete_lyapunov_nag,
    discrete_threshold,
)
from .ode import OdeConfig, OdeModel, OdeResult, OdeState, integrate, newton_energy, run_model
from .optimizers import (
    Method,
    MomentumParameter,
    RunConfig,
    RunResult,
    RunState,
    fista_step,
    momentum_weight,
    nag_step,
    phase_space_step,
    run,
)
from .problems import (
    CompositeProblem,
    ConfigError,
    DivergenceError,
    SmoothObjective,
    l1_term,
    lasso_problem,
    load_problem,
    make_quadratic,
    reference_quadratic,
    proximal_map,
    random_lasso,
    smooth_composite,
    zero_term,
)

__version__ = "0.1.0"
