"""Average-power / average-delay tradeoff toolkit for slotted fading links."""

from .asymptotics import ExpectedGrowth, RegimeModel, ScalingFit, expected_class, fit_scaling
from .bounds import (
    BoundParams,
    BoundReport,
    SandwichReport,
    service_cost_sandwich,
    verify_drift_tail,
    verify_geometric_tail,
    verify_service_concentration,
)
from .chain import (
    Averages,
    ChainError,
    StationaryDist,
    TransitionKernel,
    averages,
    case1_qbar_analytic,
    queue_kernel,
    stationary_dist,
)
from .mdp import (
    MdpSolution,
    MonotoneReport,
    Policy,
    SolverError,
    TradeoffCurve,
    TradeoffPoint,
    calibrate_theta,
    check_monotone,
    default_beta_grid,
    evaluate_policy,
    probabilistic_admission_baseline,
    serve_cap_policy,
    solve_mdp,
    solve_mdp_u,
    sweep_beta,
    sweep_u,
)
from .mincost import (
    CaseInfo,
    MinPowerCurve,
    breakpoints,
    classify_case,
    min_power_curve,
    min_power_curve_real,
)
from .model import (
    ArrivalLaw,
    FadeLaw,
    Mode,
    ModelSpec,
    PowerTable,
    UtilityConfig,
    ValidationReport,
    arrivals_from_pmf,
    binomial_arrivals,
    example_system,
    fade_law,
    load_model,
    save_model,
    thinned_spec,
    validate,
)
from .sim import SimEstimates, golden_trace, simulate

__version__ = "0.1.0"
