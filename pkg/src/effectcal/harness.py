"""Monte Carlo experiment driver.

Runs the calibrated estimator and the baselines over independent
replications, scores each against its own population target (projected
effect for the calibrated estimator, plain transported effect for the
baselines), and writes the per-replication and summary files consumed by the
plotting component.

Seeds bind to replication indices, never to execution order, so aggregates
are identical however the replications are scheduled.
"""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .baselines import BaselineConfig, build_baseline_inputs, estimate_aipsw, estimate_collab
from .calibrate import (
    EstimateReport,
    calibrate_ols,
    confidence_interval,
    out_of_fold_predictions,
    variance_tau_bar,
)
from .core import RngStream, compose_stream_id, make_basis, partition_folds
from .dgp import sample_pair
from .errors import EffectcalError, InvalidArgumentError
from .nuisance import fit_contrast_crossfit, parse_contrast_learner
from .oracle import (
    DEFAULT_QUAD,
    DgpSpec,
    OracleEstimands,
    make_multivariate_dgp,
    make_univariate_dgp,
    oracle_estimands,
)

__all__ = [
    "ScenarioConfig",
    "ScenarioResult",
    "run_scenario",
    "coverage_table",
    "write_reps_csv",
    "write_summary_json",
    "write_coverage_table",
]

ESTIMATOR_TARGETS = {"tau_bar": "tau_bar", "aipsw": "tau", "collab": "tau"}


@dataclass(frozen=True)
class ScenarioConfig:
    """One simulation scenario: a DGP, sample sizes, and estimator settings."""

    scenario_id: str
    family: str  # univariate | multivariate
    params: dict  # theta | eta, sigma0_sq
    n: int = 100
    n_obs: int = 10_000
    replications: int = 1000
    estimators: tuple[str, ...] = ("tau_bar", "aipsw", "collab")
    contrast_learner: str = "oracle"
    k_folds: int = 1
    folds_exp: int = 5
    q_feature_degree: int = 1
    basis: str = "poly1"
    alpha: float = 0.05
    sigma_d: float = 1.0
    sigma_y: float = 1.0
    master_seed: int = 0
    scenario_index: int = 0

    def __post_init__(self):
        if self.replications < 1:
            raise InvalidArgumentError("replications must be >= 1")
        unknown = set(self.estimators) - set(ESTIMATOR_TARGETS)
        if unknown:
            raise InvalidArgumentError(f"unknown estimators: {sorted(unknown)}")

    def dgp(self) -> DgpSpec:
        if self.family == "univariate":
            return make_univariate_dgp(self.params["theta"], self.sigma_d, self.sigma_y)
        if self.family == "multivariate":
            return make_multivariate_dgp(
                self.params["eta"], self.params["sigma0_sq"], self.sigma_d, self.sigma_y
            )
        raise InvalidArgumentError(f"unknown DGP family {self.family!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        return d


@dataclass(frozen=True)
class ScenarioResult:
    config: ScenarioConfig
    targets: OracleEstimands
    rows: list[dict]
    aggregates: dict

    def summary_dict(self) -> dict:
        return {
            "scenario_id": self.config.scenario_id,
            "config": self.config.to_dict(),
            "targets": {"tau": self.targets.tau, "tau_bar": self.targets.tau_bar},
            "estimators": self.aggregates,
        }


def _replication_reports(
    config: ScenarioConfig, rep: int
) -> dict[str, EstimateReport]:
    """All requested estimators on one fresh draw (shared folds and contrast)."""
    dgp = config.dgp()
    sample_stream = RngStream(
        config.master_seed, compose_stream_id(config.scenario_index, rep, 0)
    )
    pair = sample_pair(dgp, config.n, config.n_obs, sample_stream)
    fold_gen = RngStream(
        config.master_seed, compose_stream_id(config.scenario_index, rep, 1)
    ).generator()
    folds = partition_folds(config.n_obs, config.k_folds, fold_gen)
    learner = parse_contrast_learner(config.contrast_learner, dgp=dgp)
    contrast = fit_contrast_crossfit(pair.obs, folds, learner)
    reports: dict[str, EstimateReport] = {}
    if "tau_bar" in config.estimators:
        psi = make_basis(config.basis)
        fit = calibrate_ols(pair.exp, contrast, psi, pair.obs, folds)
        preds = out_of_fold_predictions(pair.obs, folds, contrast, fit, psi)
        point = float(preds.mean())
        variance = variance_tau_bar(fit, preds, point, config.n, config.n_obs)
        lo, hi = confidence_interval(point, variance, config.alpha)
        reports["tau_bar"] = EstimateReport(
            estimator="tau_bar", point=point, variance=variance,
            ci_lower=lo, ci_upper=hi, alpha=config.alpha,
            n=config.n, n_obs=config.n_obs, k_folds=config.k_folds,
            diagnostics={"gram_cond_number": fit.cond_number},
        )
    if "aipsw" in config.estimators or "collab" in config.estimators:
        bc = BaselineConfig(
            folds_exp=config.folds_exp,
            q_feature_degree=config.q_feature_degree,
            alpha=config.alpha,
            rng=RngStream(
                config.master_seed, compose_stream_id(config.scenario_index, rep, 2)
            ),
        )
        inputs = build_baseline_inputs(
            pair.exp, pair.obs, contrast, bc,
            include_scalar_odds="collab" in config.estimators,
        )
        if "aipsw" in config.estimators:
            reports["aipsw"] = estimate_aipsw(
                pair.exp, pair.obs, inputs.mu_hat, inputs.q_hat, alpha=config.alpha,
                mu_exp=inputs.mu_exp, q_exp=inputs.q_exp, mu_obs=inputs.mu_obs,
            )
        if "collab" in config.estimators:
            reports["collab"] = estimate_collab(pair.exp, pair.obs, inputs, alpha=config.alpha)
    return reports


def _rows_for_rep(config: ScenarioConfig, rep: int, targets: dict[str, float]) -> list[dict]:
    rows = []
    try:
        reports = _replication_reports(config, rep)
    except EffectcalError as err:
        for name in config.estimators:
            rows.append(
                {"rep": rep, "estimator": name, "point": math.nan, "variance": math.nan,
                 "ci_lo": math.nan, "ci_hi": math.nan, "covered": 0, "failed": 1,
                 "error": str(err)}
            )
        return rows
    for name in config.estimators:
        rep_report = reports[name]
        target = targets[ESTIMATOR_TARGETS[name]]
        rows.append(
            {"rep": rep, "estimator": name, "point": rep_report.point,
             "variance": rep_report.variance, "ci_lo": rep_report.ci_lower,
             "ci_hi": rep_report.ci_upper,
             "covered": int(rep_report.ci_lower <= target <= rep_report.ci_upper),
             "failed": 0, "error": ""}
        )
    return rows


def _worker(args) -> list[dict]:
    config, rep, targets = args
    return _rows_for_rep(config, rep, targets)


def _aggregate(config: ScenarioConfig, targets: dict[str, float], rows: list[dict]) -> dict:
    out = {}
    for name in config.estimators:
        sub = [r for r in rows if r["estimator"] == name]
        ok = [r for r in sub if not r["failed"]]
        n_failed = len(sub) - len(ok)
        target = targets[ESTIMATOR_TARGETS[name]]
        agg = {
            "target": ESTIMATOR_TARGETS[name],
            "target_value": target,
            "n_reps": len(sub),
            "n_failed": n_failed,
            "unreliable": bool(n_failed > 0.1 * len(sub)),
        }
        if ok:
            pts = np.array([r["point"] for r in ok])
            widths = np.array([r["ci_hi"] - r["ci_lo"] for r in ok])
            agg.update(
                mean=float(pts.mean()),
                bias=float(pts.mean() - target),
                variance=float(pts.var()),
                mse=float(np.mean((pts - target) ** 2)),
                coverage=float(np.mean([r["covered"] for r in ok])),
                mean_ci_width=float(widths.mean()),
            )
        out[name] = agg
    return out


def run_scenario(
    config: ScenarioConfig,
    threads: int = 1,
    estimator_overrides: dict[str, tuple[Callable, str]] | None = None,
    quad=DEFAULT_QUAD,
    _rep_order: Sequence[int] | None = None,
) -> ScenarioResult:
    """Run every replication of a scenario and aggregate.

    A replication that raises a package error is recorded as a failure row
    and the run continues; a scenario with more than 10% failures is marked
    unreliable. `estimator_overrides` maps an estimator tag to a
    (callable(exp, obs) -> EstimateReport, target_key) pair, used by tests to
    inject stubs; overrides force serial execution.
    """
    targets_obj = oracle_estimands(config.dgp(), make_basis(config.basis), quad)
    targets = {"tau": targets_obj.tau, "tau_bar": targets_obj.tau_bar}
    order = list(_rep_order) if _rep_order is not None else list(range(config.replications))
    if sorted(order) != list(range(config.replications)):
        raise InvalidArgumentError("_rep_order must be a permutation of the replications")

    if estimator_overrides:
        rows = []
        for rep in order:
            rows.extend(_rows_with_overrides(config, rep, targets, estimator_overrides))
    elif threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            chunks = pool.map(_worker, [(config, rep, targets) for rep in order])
            rows = [row for chunk in chunks for row in chunk]
    else:
        rows = []
        for rep in order:
            rows.extend(_rows_for_rep(config, rep, targets))
    rows.sort(key=lambda r: (r["rep"], r["estimator"]))
    return ScenarioResult(
        config=config,
        targets=targets_obj,
        rows=rows,
        aggregates=_aggregate(config, targets, rows),
    )


def _rows_with_overrides(config, rep, targets, overrides) -> list[dict]:
    from dataclasses import replace

    rows = []
    plain = tuple(e for e in config.estimators if e not in overrides)
    if plain:
        rows.extend(_rows_for_rep(replace(config, estimators=plain), rep, targets))
    dgp = config.dgp()
    stream = RngStream(config.master_seed, compose_stream_id(config.scenario_index, rep, 0))
    pair = sample_pair(dgp, config.n, config.n_obs, stream)
    for name in config.estimators:
        if name not in overrides:
            continue
        fn, target_key = overrides[name]
        rep_report = fn(pair.exp, pair.obs)
        target = targets[target_key]
        rows.append(
            {"rep": rep, "estimator": name, "point": rep_report.point,
             "variance": rep_report.variance, "ci_lo": rep_report.ci_lower,
             "ci_hi": rep_report.ci_upper,
             "covered": int(rep_report.ci_lower <= target <= rep_report.ci_upper),
             "failed": 0, "error": ""}
        )
    return rows


# ---------------------------------------------------------------------------
# emission
# ---------------------------------------------------------------------------

REPS_CSV_COLUMNS = ["rep", "estimator", "point", "variance", "ci_lo", "ci_hi", "covered", "failed"]


def write_reps_csv(path: str | Path, result: ScenarioResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(REPS_CSV_COLUMNS)
        for r in result.rows:
            writer.writerow([
                r["rep"], r["estimator"],
                repr(float(r["point"])), repr(float(r["variance"])),
                repr(float(r["ci_lo"])), repr(float(r["ci_hi"])),
                r["covered"], r["failed"],
            ])


def write_summary_json(path: str | Path, result: ScenarioResult) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(result.summary_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def coverage_table(results: Sequence[ScenarioResult]) -> list[dict]:
    """Long-form coverage/width table: one row per (scenario, estimator)."""
    if not results:
        raise InvalidArgumentError("no scenario results")
    table = []
    for res in results:
        for name, agg in res.aggregates.items():
            table.append({
                "scenario": res.config.scenario_id,
                "estimator": name,
                "coverage": agg.get("coverage", math.nan),
                "mean_ci_width": agg.get("mean_ci_width", math.nan),
            })
    return table


def write_coverage_table(
    csv_path: str | Path | None, json_path: str | Path | None, table: list[dict]
) -> None:
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["scenario", "estimator", "coverage", "mean_ci_width"])
            writer.writeheader()
            writer.writerows(table)
    if json_path is not None:
        nested: dict = {}
        for row in table:
            nested.setdefault(row["scenario"], {})[row["estimator"]] = {
                "coverage": row["coverage"],
                "mean_ci_width": row["mean_ci_width"],
            }
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(nested, fh, indent=2, sort_keys=True)
            fh.write("\n")
