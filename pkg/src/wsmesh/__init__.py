"""Weighted stochastic mesh solver for optimal stopping problems."""

__version__ = "0.1.0"

from .errors import (  # noqa: F401
    CapabilityError,
    ConfigError,
    ContaminationError,
    DegenerateDenominatorError,
    DensityError,
    DomainError,
    EnvelopeError,
    ExpansionRegimeError,
    IntegrationError,
    ParameterSelectionError,
    RewardError,
    SimulationError,
    WsmError,
)
from .rng import SeedRecord  # noqa: F401
from .models import (  # noqa: F401
    AssumptionReport,
    ChainModel,
    EulerChain,
    GbmModel,
    PathSet,
    SdeModel,
    check_assumptions,
    log_density,
    log_multistep_density,
    simulate_paths,
)
from .rewards import RewardFunction, call_reward, hat_reward, put_reward  # noqa: F401
from .mesh import (  # noqa: F401
    FrEstimate,
    MeshParameters,
    MeshValue,
    Truncation,
    WeightRow,
    backward_induction,
    check_mesh_invariants,
    ck_denominators,
    estimate_fr,
    select_parameters,
    weight_row,
)
from .policy import (  # noqa: F401
    ContinuationEstimator,
    LowerBoundEstimate,
    continuation_direct,
    continuation_knn,
    evaluate_lower_bound,
    evaluate_stopping_rule,
)
from .baselines import (  # noqa: F401
    PolyBasis,
    RegressionPolicy,
    binomial_american_put,
    black_scholes_call,
    black_scholes_put,
    evaluate_regression_policy,
    fit_ls,
    fit_vf,
)
from .expansion import (  # noqa: F401
    Diffusion1d,
    ExpansionDensity,
    bar_functions,
    density_pn,
    estimate_ck,
    lamperti_s,
    ratio_decay_check,
    sample_pn,
)
