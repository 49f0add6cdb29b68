"""Comparison estimators: inverse-propensity-of-sampling weighting with
augmentation (AIPSW) and the collaborative variant that swaps the covariate
odds for odds of a scalar effect summary, plus the shared nuisance wiring.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .calibrate import EstimateReport, confidence_interval
from .core import ExperimentalData, ObservationalData, RngStream
from .errors import InvalidArgumentError
from .nuisance import (
    CateFit,
    ContrastFit,
    OddsFit,
    SmootherFit,
    fit_cate,
    fit_odds,
    fit_smoother,
    poly_features,
)

__all__ = [
    "BaselineInputs",
    "BaselineConfig",
    "estimate_aipsw",
    "estimate_collab",
    "build_baseline_inputs",
]


@dataclass(frozen=True)
class BaselineInputs:
    """Nuisances shared by the two baselines.

    q_hat models odds of observational membership from covariates; g_hat the
    same odds from the scalar effect estimate; k_hat smooths the effect
    estimate against the fitted g odds over the combined sample. The cached
    arrays are the evaluations on the datasets the inputs were built from.
    """

    mu_hat: CateFit
    q_hat: OddsFit
    g_hat: OddsFit | None
    k_hat: SmootherFit | None
    mu_exp: np.ndarray
    mu_obs: np.ndarray
    q_exp: np.ndarray
    q_obs: np.ndarray
    g_exp: np.ndarray
    g_obs: np.ndarray
    k_exp: np.ndarray
    k_obs: np.ndarray
    diagnostics: dict


@dataclass(frozen=True)
class BaselineConfig:
    folds_exp: int = 5
    q_feature_degree: int = 1  # 1: linear covariates; 2: adds squares/interactions
    prob_clip: float = 1e-6
    alpha: float = 0.05
    rng: RngStream = RngStream(0)


def _aipsw_point(d, mu_exp, q_exp, mu_obs) -> float:
    n, n_obs = d.shape[0], mu_obs.shape[0]
    correction = np.sum((n / n_obs) * (d - mu_exp) * q_exp) / n
    return float(correction + mu_obs.mean())


def estimate_aipsw(
    exp: ExperimentalData,
    obs: ObservationalData,
    mu_hat: CateFit,
    q_hat: OddsFit,
    alpha: float = 0.05,
    mu_exp: np.ndarray | None = None,
    q_exp: np.ndarray | None = None,
    mu_obs: np.ndarray | None = None,
) -> EstimateReport:
    """Augmented inverse-propensity-of-sampling estimate of the transported
    effect, with its influence-function variance.

    Experimental-row effect predictions are the cross-fit values carried by
    the effect fit; the precomputed arrays can be passed to avoid re-eval.
    """
    if exp.n == 0 or obs.n == 0:
        raise InvalidArgumentError("both datasets must be nonempty")
    mu_exp = mu_hat.exp_predictions if mu_exp is None else np.asarray(mu_exp, dtype=float)
    mu_obs = mu_hat.predict(obs.x) if mu_obs is None else np.asarray(mu_obs, dtype=float)
    q_exp = q_hat.odds_of(exp.x) if q_exp is None else np.asarray(q_exp, dtype=float)
    if mu_exp.shape[0] != exp.n:
        raise InvalidArgumentError("experimental effect predictions do not match the dataset")
    point = _aipsw_point(exp.d, mu_exp, q_exp, mu_obs)
    variance = (
        float(np.sum(q_exp**2 * (exp.d - mu_exp) ** 2))
        + float(np.sum((mu_obs - point) ** 2))
    ) / obs.n**2
    lo, hi = confidence_interval(point, variance, alpha)
    return EstimateReport(
        estimator="aipsw",
        point=point,
        variance=variance,
        ci_lower=lo,
        ci_upper=hi,
        alpha=alpha,
        n=exp.n,
        n_obs=obs.n,
        k_folds=mu_hat.folds_exp,
        diagnostics={
            "max_odds": float(q_exp.max()),
            "clip_count": q_hat.clip_count(q_hat.feature_fn(exp.x)) if q_hat.feature_fn else 0,
            "separation_flag": q_hat.separation,
            "exp_mu_predictions": "cross_fit" if mu_hat.folds_exp > 1 else "in_sample",
        },
    )


def estimate_collab(
    exp: ExperimentalData,
    obs: ObservationalData,
    inputs: BaselineInputs,
    alpha: float = 0.05,
) -> EstimateReport:
    """Collaborative estimate: odds from the scalar effect summary, plus a
    projection correction toward its conditional mean given those odds."""
    if exp.n == 0 or obs.n == 0:
        raise InvalidArgumentError("both datasets must be nonempty")
    if inputs.k_hat is None or inputs.k_exp.shape[0] != exp.n:
        raise InvalidArgumentError("baseline inputs were built without the scalar-odds pieces")
    n, n_obs = exp.n, obs.n
    d = exp.d
    mu_e, mu_o = inputs.mu_exp, inputs.mu_obs
    q_e, q_o = inputs.q_exp, inputs.q_obs
    g_e = inputs.g_exp
    k_e, k_o = inputs.k_exp, inputs.k_obs
    exp_summand = (d - mu_e) * g_e + q_e / (1.0 + q_e) * (mu_e - k_e)
    obs_summand = (q_o * mu_o + k_o) / (1.0 + q_o)
    point = float(np.sum((n / n_obs) * exp_summand) / n + obs_summand.mean())
    variance = (
        float(np.sum(exp_summand**2)) + float(np.sum((obs_summand - point) ** 2))
    ) / n_obs**2
    lo, hi = confidence_interval(point, variance, alpha)
    return EstimateReport(
        estimator="collab",
        point=point,
        variance=variance,
        ci_lower=lo,
        ci_upper=hi,
        alpha=alpha,
        n=n,
        n_obs=n_obs,
        k_folds=inputs.mu_hat.folds_exp,
        diagnostics={
            "max_odds": float(q_e.max()),
            "max_g_odds": float(g_e.max()),
            "separation_flag": inputs.q_hat.separation or inputs.g_hat.separation,
            "smoother_degenerate": inputs.k_hat.degenerate,
            "exp_mu_predictions": "cross_fit" if inputs.mu_hat.folds_exp > 1 else "in_sample",
        },
    )


def build_baseline_inputs(
    exp: ExperimentalData,
    obs: ObservationalData,
    contrast: ContrastFit,
    config: BaselineConfig = BaselineConfig(),
    include_scalar_odds: bool = True,
) -> BaselineInputs:
    """Fit every nuisance the baselines need, on the combined sample.

    Effect fit: prognostic-adjusted ridge (cross-fit on the experimental rows
    when folds_exp > 1). Covariate odds: logistic regression on linear (or
    degree-2 polynomial) covariate features. Scalar odds: logistic regression
    on the effect predictions. Smoother: effect predictions against the
    fitted scalar odds, over the combined sample. Passing
    include_scalar_odds=False skips the scalar-odds/smoother pieces (the
    expensive part) when only the covariate-odds estimator will run.
    """
    mu_hat = fit_cate(exp, contrast, folds_exp=config.folds_exp, rng=config.rng)
    mu_exp = mu_hat.exp_predictions
    mu_obs = mu_hat.predict(obs.x)

    deg = config.q_feature_degree
    if deg not in (1, 2):
        raise InvalidArgumentError("q_feature_degree must be 1 or 2")
    feature_fn = (lambda x: np.atleast_2d(x)) if deg == 1 else (lambda x: poly_features(x, 2))
    x_all = np.vstack([exp.x, obs.x])
    labels = np.concatenate([np.ones(exp.n), np.zeros(obs.n)])
    q_hat = fit_odds(
        feature_fn(x_all), labels, clip=config.prob_clip,
        feature_fn=feature_fn, feature_tag=f"poly{deg}",
    )
    q_exp, q_obs = q_hat.odds_of(exp.x), q_hat.odds_of(obs.x)
    diagnostics = {
        "n_exp": exp.n,
        "n_obs": obs.n,
        "q_separation": q_hat.separation,
        "q_converged": q_hat.converged,
    }
    if not include_scalar_odds:
        empty = np.empty(0)
        return BaselineInputs(
            mu_hat=mu_hat, q_hat=q_hat, g_hat=None, k_hat=None,
            mu_exp=mu_exp, mu_obs=mu_obs, q_exp=q_exp, q_obs=q_obs,
            g_exp=empty, g_obs=empty, k_exp=empty, k_obs=empty,
            diagnostics=diagnostics,
        )
    mu_all = np.concatenate([mu_exp, mu_obs])
    g_feature = lambda m: np.asarray(m, dtype=float).reshape(-1, 1)
    g_hat = fit_odds(
        g_feature(mu_all), labels, clip=config.prob_clip,
        feature_fn=g_feature, feature_tag="scalar_mu",
    )
    g_all = g_hat.odds(g_feature(mu_all))
    k_hat = fit_smoother(g_all, mu_all)
    k_all = k_hat.predict(g_all)
    diagnostics.update(g_separation=g_hat.separation, g_converged=g_hat.converged)
    return BaselineInputs(
        mu_hat=mu_hat,
        q_hat=q_hat,
        g_hat=g_hat,
        k_hat=k_hat,
        mu_exp=mu_exp,
        mu_obs=mu_obs,
        q_exp=q_exp,
        q_obs=q_obs,
        g_exp=g_all[: exp.n],
        g_obs=g_all[exp.n:],
        k_exp=k_all[: exp.n],
        k_obs=k_all[exp.n:],
        diagnostics=diagnostics,
    )
