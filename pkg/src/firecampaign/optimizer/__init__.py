"""Quasi-random and GP-guided search over fire scenarios."""

from .campaign import (
    AcquisitionConfig,
    CampaignResult,
    ContinuousDim,
    InsufficientRuns,
    MissingKey,
    ObjectiveFailure,
    Observation,
    ParameterSpace,
    QuantisedDim,
    TrendModel,
    command_objective,
    fire_feasibility,
    fire_space,
    firesim_objective,
    fit_trend,
    grid_candidates,
    grid_search,
    map_to_space,
    propose_next,
    run_campaign,
    sobol_design,
    summary_record,
    synthetic_objective,
)
from .gp import (
    DegenerateData,
    GpConfig,
    GpModel,
    ei_from_moments,
    expected_improvement,
    fit_gp,
    fixed_gp,
    gp_posterior,
    log_marginal_likelihood,
)
from .sobol import DimensionUnsupported, SobolState, sobol_next, sobol_points
