"""Sparse propensity-score estimation for missing-at-random outcomes.

Estimators for the mean of a partially observed outcome: classical
inverse-probability weighting with full or fixed response models, an
L1-selected baseline, and spike-and-slab Bayesian samplers that select
the response model (and, in the augmented variant, outcome-correlated
covariates) while propagating model uncertainty into the interval.
A simulation harness reproduces the accompanying coverage study.
"""

__version__ = "0.1.0"

from .baseline import (
    EstimateReport,
    default_lambda_grid,
    fit_lasso_logistic,
    fit_propensity_mle,
    ps_point_estimate,
    ps_variance_taylor,
    wald_interval,
)
from .bsps import (
    ChainState,
    OptChainState,
    PosteriorSample,
    draw_model_step,
    draw_phi_step,
    draw_theta_step,
    laplace_covariance,
    model_inclusion_probability,
    penalized_mode,
    run_bsps_chain,
    summarize_posterior,
)
from .data import Dataset, add_intercept, read_dataset_csv, write_dataset_csv
from .estimators import (
    BayesianSparsePSEstimator,
    LassoPropensityScoreEstimator,
    OptimalBayesianSparsePSEstimator,
    PropensityScoreEstimator,
)
from .exceptions import (
    ChainFailure,
    DataFormatError,
    NoConvergence,
    NoRespondents,
    SingularInformation,
    SingularWeight,
    SparsePSError,
)
from .model import (
    PriorConfig,
    fisher_info,
    link_logistic,
    log_likelihood,
    propensity,
    score,
)
from .obsps import (
    GmmSolution,
    OptSystem,
    WorkingModelState,
    build_u_opt,
    draw_beta_sigma,
    draw_u_step,
    draw_zeta,
    gmm_solve,
    run_obsps_chain,
    working_inclusion_probability,
)
from .simulation import (
    METHODS,
    MetricsRow,
    RepRecord,
    ScenarioConfig,
    compute_metrics,
    gen_covariates,
    gen_outcome,
    gen_response,
    generate_dataset,
    metrics_to_csv,
    run_monte_carlo,
    run_replication,
    true_response_support,
    true_theta,
    true_working_support,
)
