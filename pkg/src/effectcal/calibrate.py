"""Calibrated outcome regression for the projected transported effect.

Pipeline: partition the observational rows into folds, cross-fit the
treatment-control contrast, calibrate the basis-expanded contrast to the
experimental effect measurements by OLS, average the out-of-fold calibrated
predictions over the observational covariates, and attach a plug-in variance
and normal confidence interval.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .core import (
    BasisExpansion,
    ExperimentalData,
    FoldAssignment,
    ObservationalData,
    RngStream,
    make_basis,
    normal_quantile,
    partition_folds,
)
from .errors import (
    CollinearityError,
    InsufficientDataError,
    InvalidArgumentError,
    PipelineError,
)
from .nuisance import ContrastFit, ContrastLearnerSpec, fit_contrast_crossfit

__all__ = [
    "CalibrationFit",
    "EstimateReport",
    "PipelineConfig",
    "calibrate_ols",
    "out_of_fold_predictions",
    "estimate_tau_bar",
    "variance_tau_bar",
    "confidence_interval",
    "run_tau_bar_pipeline",
]


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimateReport:
    """Point estimate with variance, normal CI and run diagnostics."""

    estimator: str
    point: float
    variance: float
    ci_lower: float
    ci_upper: float
    alpha: float
    n: int
    n_obs: int
    k_folds: int
    diagnostics: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.variance < 0:
            raise InvalidArgumentError("variance must be nonnegative")
        if not (self.ci_lower <= self.point <= self.ci_upper):
            raise InvalidArgumentError("point estimate must lie inside its CI")

    def to_dict(self) -> dict:
        return {
            "estimator": self.estimator,
            "point": self.point,
            "variance": self.variance,
            "ci": [self.ci_lower, self.ci_upper],
            "alpha": self.alpha,
            "n": self.n,
            "n_obs": self.n_obs,
            "k_folds": self.k_folds,
            "diagnostics": self.diagnostics,
        }

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)


# ---------------------------------------------------------------------------
# calibration OLS
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CalibrationFit:
    """OLS calibration products.

    gram is the experimental-sample basis Gram matrix (averaged contrast);
    residual_vectors stacks (d_i - fitted_i) * psi_i rows; a_hat maps the
    Gram inverse onto the observational mean of the out-of-fold basis values
    (present only when the observational side was supplied).
    """

    beta_hat: np.ndarray
    gram: np.ndarray
    residual_vectors: np.ndarray
    a_hat: np.ndarray | None
    cond_number: float
    residual_kurtosis: float

    @property
    def p(self) -> int:
        return self.beta_hat.shape[0]


def _solve_spd(gram: np.ndarray, rhs: np.ndarray, cond: float) -> np.ndarray:
    """Cholesky solve, falling back to an eigendecomposition when
    conditioning is poor (p is tiny, stability beats speed)."""
    if cond <= 1e8:
        try:
            c = np.linalg.cholesky(gram)
            return np.linalg.solve(c.T, np.linalg.solve(c, rhs))
        except np.linalg.LinAlgError:
            pass
    w, v = np.linalg.eigh(gram)
    return v @ ((v.T @ rhs) / w)


def calibrate_ols(
    exp: ExperimentalData,
    contrast: ContrastFit,
    psi: BasisExpansion,
    obs: ObservationalData | None = None,
    folds: FoldAssignment | None = None,
) -> CalibrationFit:
    """OLS of the effect measurements on the basis-expanded contrast.

    Uses the averaged contrast on the experimental rows. When the
    observational rows and folds are supplied, also forms a_hat from the
    out-of-fold basis values averaged over the observational sample (needed
    by the variance estimator).
    """
    n = exp.n
    if n < psi.p:
        raise InsufficientDataError(f"need n >= p: n={n}, p={psi.p}")
    psi_exp = psi.eval(contrast.averaged(exp.x))
    gram = psi_exp.T @ psi_exp / n
    ev = np.linalg.eigvalsh(gram)
    if ev[0] <= 1e-12 * max(ev[-1], 0.0) or ev[0] <= 0.0:
        raise CollinearityError(
            "calibration features are collinear (is the estimated contrast "
            "constant?); try a smaller basis"
        )
    cond = float(ev[-1] / ev[0])
    if cond > 1e12:
        raise CollinearityError(
            f"calibration Gram condition number {cond:.3g} exceeds 1e12; "
            "try a smaller basis"
        )
    beta = _solve_spd(gram, psi_exp.T @ exp.d / n, cond)
    fitted = psi_exp @ beta
    resid = exp.d - fitted
    residual_vectors = resid[:, None] * psi_exp
    a_hat = None
    if obs is not None:
        if folds is None:
            raise InvalidArgumentError("folds are required alongside obs")
        psi_oof = psi.eval(contrast.out_of_fold(obs.x, folds))
        a_hat = _solve_spd(gram, psi_oof.mean(axis=0), cond)
    m2 = float(np.mean(resid**2))
    kurt = float(np.mean(resid**4) / m2**2) if m2 > 0 else float("nan")
    return CalibrationFit(
        beta_hat=beta,
        gram=gram,
        residual_vectors=residual_vectors,
        a_hat=a_hat,
        cond_number=cond,
        residual_kurtosis=kurt,
    )


def out_of_fold_predictions(
    obs: ObservationalData,
    folds: FoldAssignment,
    contrast: ContrastFit,
    fit: CalibrationFit,
    psi: BasisExpansion,
) -> np.ndarray:
    """Calibrated out-of-fold predictions on every observational row."""
    return psi.eval(contrast.out_of_fold(obs.x, folds)) @ fit.beta_hat


def estimate_tau_bar(
    obs: ObservationalData,
    folds: FoldAssignment,
    contrast: ContrastFit,
    fit: CalibrationFit,
    psi: BasisExpansion,
) -> float:
    """Average of the calibrated out-of-fold predictions over the target rows."""
    return float(out_of_fold_predictions(obs, folds, contrast, fit, psi).mean())


def variance_tau_bar(
    fit: CalibrationFit,
    obs_predictions: np.ndarray,
    tau_bar_hat: float,
    n: int,
    n_obs: int,
) -> float:
    """Two-term plug-in variance; no degrees-of-freedom correction.

    First term: a_hat' (n^-2 sum r_i r_i') a_hat, the calibration error.
    Second term: N^-2 sum (prediction_i - point)^2, the target-sample spread
    of the out-of-fold predictions.
    """
    if fit.a_hat is None:
        raise InvalidArgumentError("calibration fit lacks a_hat (fit with obs+folds)")
    obs_predictions = np.asarray(obs_predictions, dtype=float)
    if obs_predictions.shape[0] != n_obs:
        raise InvalidArgumentError("obs_predictions length must equal n_obs")
    r = fit.residual_vectors
    if r.shape[0] != n:
        raise InvalidArgumentError("residual count must equal n")
    middle = r.T @ r / n**2
    term1 = float(fit.a_hat @ middle @ fit.a_hat)
    term2 = float(np.sum((obs_predictions - tau_bar_hat) ** 2) / n_obs**2)
    return term1 + term2


def confidence_interval(point: float, variance: float, alpha: float) -> tuple[float, float]:
    """Normal interval point +/- z_{1-alpha/2} sqrt(variance)."""
    if variance < 0:
        raise InvalidArgumentError(f"variance must be nonnegative, got {variance}")
    if not (0.0 < alpha < 1.0):
        raise InvalidArgumentError(f"alpha must lie in (0,1), got {alpha}")
    half = normal_quantile(1.0 - alpha / 2.0) * float(np.sqrt(variance))
    return point - half, point + half


# ---------------------------------------------------------------------------
# full pipeline
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PipelineConfig:
    """Settings for the calibrated-regression pipeline."""

    contrast_learner: ContrastLearnerSpec
    k_folds: int = 5
    basis: str = "poly1"
    alpha: float = 0.05
    rng: RngStream = RngStream(0)


def run_tau_bar_pipeline(
    exp: ExperimentalData,
    obs: ObservationalData,
    config: PipelineConfig,
) -> EstimateReport:
    """Execute fold partitioning, contrast cross-fitting, OLS calibration,
    target averaging, variance and CI; errors carry their stage label."""
    if exp.p_x != obs.p_x:
        raise InvalidArgumentError(
            f"covariate dimensions differ: experimental {exp.p_x}, observational {obs.p_x}"
        )
    psi = make_basis(config.basis)

    def stage(name: str, fn: Callable):
        try:
            return fn()
        except Exception as e:  # noqa: BLE001 - annotate and re-raise
            raise PipelineError(name, e) from e

    folds = stage("partition_folds", lambda: partition_folds(obs.n, config.k_folds, config.rng))
    contrast = stage(
        "fit_contrast_crossfit",
        lambda: fit_contrast_crossfit(obs, folds, config.contrast_learner),
    )
    fit = stage("calibrate_ols", lambda: calibrate_ols(exp, contrast, psi, obs, folds))
    preds = stage(
        "estimate_tau_bar",
        lambda: out_of_fold_predictions(obs, folds, contrast, fit, psi),
    )
    point = float(preds.mean())
    variance = stage(
        "variance_tau_bar",
        lambda: variance_tau_bar(fit, preds, point, exp.n, obs.n),
    )
    lo, hi = stage("confidence_interval", lambda: confidence_interval(point, variance, config.alpha))
    return EstimateReport(
        estimator="tau_bar",
        point=point,
        variance=variance,
        ci_lower=lo,
        ci_upper=hi,
        alpha=config.alpha,
        n=exp.n,
        n_obs=obs.n,
        k_folds=config.k_folds,
        diagnostics={
            "gram_cond_number": fit.cond_number,
            "residual_kurtosis": fit.residual_kurtosis,
            "contrast_learner": contrast.learner_tag,
            "basis": config.basis,
        },
    )
