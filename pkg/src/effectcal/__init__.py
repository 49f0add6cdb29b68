"""Calibrated outcome regression for transported treatment effects.

A small experimental dataset of effect measurements calibrates a
treatment-control contrast learned from a large observational dataset; the
calibrated predictions averaged over the observational covariates estimate a
projected transported effect that stays identified without covariate overlap.
The package also ships the weighting baselines this approach is compared
against, an analytic oracle for simulation targets, data-generating-process
samplers, and a Monte Carlo harness with file outputs for plotting.
"""

from .baselines import (
    BaselineConfig,
    BaselineInputs,
    build_baseline_inputs,
    estimate_aipsw,
    estimate_collab,
)
from .calibrate import (
    CalibrationFit,
    EstimateReport,
    PipelineConfig,
    calibrate_ols,
    confidence_interval,
    estimate_tau_bar,
    out_of_fold_predictions,
    run_tau_bar_pipeline,
    variance_tau_bar,
)
from .core import (
    BasisExpansion,
    ExperimentalData,
    ExperimentalSample,
    FoldAssignment,
    ObservationalData,
    ObservationalSample,
    RngStream,
    convert_unpaired,
    make_basis,
    normal_quantile,
    partition_folds,
    read_experimental_csv,
    read_observational_csv,
    write_experimental_csv,
    write_observational_csv,
)
from .dgp import SimulatedPair, sample_multivariate, sample_pair, sample_univariate
from .errors import (
    CollinearityError,
    ConfigError,
    DegenerateArmError,
    EffectcalError,
    InsufficientDataError,
    InvalidArgumentError,
    NumericalRankError,
    PipelineError,
    QuadratureDegeneracyError,
    SchemaError,
)
from .harness import ScenarioConfig, ScenarioResult, coverage_table, run_scenario
from .nuisance import (
    CateFit,
    ContrastFit,
    ContrastLearnerSpec,
    OddsFit,
    SmootherFit,
    fit_cate,
    fit_contrast_crossfit,
    fit_odds,
    fit_smoother,
    parse_contrast_learner,
)
from .oracle import (
    DgpSpec,
    GaussianProductLaw,
    MinVarWeights,
    NestedNuisances,
    OracleEstimands,
    QuadratureSpec,
    e1_quadrature,
    efficiency_limit_check,
    eif_eval,
    eif_known_delta,
    make_multivariate_dgp,
    make_nested_nuisances,
    make_univariate_dgp,
    oracle_estimands,
    sample_nested,
    sampling_propensity,
    v_eff_monte_carlo,
    weight_checks,
    weight_function,
    weight_gamma_minvar,
)

__version__ = "0.1.0"
