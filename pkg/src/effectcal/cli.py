"""Command-line interface.

Subcommands: estimate (CSV datasets -> estimator reports), simulate (Monte
Carlo scenario grids), generate (write simulated CSV datasets), oracle
(estimand/weight artifacts for a known DGP). Settings come from a JSON config
file with flag overrides; unknown config keys are rejected. All randomness
flows from a single master seed; stream ids derive from (subcommand, scenario
index, replication index). Exit codes: 0 success, 2 config/parse error, 3
numerical or estimator error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .baselines import BaselineConfig, build_baseline_inputs, estimate_aipsw, estimate_collab
from .calibrate import PipelineConfig, run_tau_bar_pipeline
from .core import (
    RngStream,
    make_basis,
    read_experimental_csv,
    read_observational_csv,
    write_experimental_csv,
    write_observational_csv,
)
from .dgp import sample_pair
from .errors import ConfigError, EffectcalError, SchemaError
from .harness import (
    ScenarioConfig,
    coverage_table,
    run_scenario,
    write_coverage_table,
    write_reps_csv,
    write_summary_json,
)
from .nuisance import parse_contrast_learner
from .oracle import (
    QuadratureSpec,
    make_multivariate_dgp,
    make_univariate_dgp,
    oracle_estimands,
    sampling_propensity,
    weight_function,
    weight_gamma_minvar,
)

_ESTIMATE_KEYS = {
    "estimators", "k_folds", "folds_exp", "q_feature_degree", "basis",
    "contrast_learner", "alpha", "prob_clip", "seed",
}
_SIMULATE_KEYS = {
    "family", "grid", "n", "n_obs", "replications", "estimators",
    "contrast_learner", "k_folds", "folds_exp", "q_feature_degree", "basis",
    "alpha", "sigma_d", "sigma_y", "seed",
}
_GENERATE_KEYS = {"family", "theta", "eta", "sigma0_sq", "n", "n_obs", "sigma_d", "sigma_y", "seed"}
_ORACLE_KEYS = {
    "family", "theta", "eta", "sigma0_sq", "basis", "quad_nodes", "rho2",
    "weight_grid", "sigma_d", "sigma_y",
}


def _load_config(path: str | None, allowed: set[str]) -> dict:
    if path is None:
        return {}
    try:
        with open(path, encoding="utf-8") as fh:
            cfg = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(cfg, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    unknown = set(cfg) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)} (allowed: {sorted(allowed)})")
    return cfg


def _parse_grid(family: str, grid) -> list[dict]:
    """Expand a grid spec into per-scenario parameter dicts.

    Accepts either a dict of lists ({"theta": [0, 0.3]}) or the compact string
    form "theta=0,0.1,0.2" (multivariate: "eta=0,0.5;sigma0_sq=1,2").
    """
    if isinstance(grid, str):
        parsed: dict[str, list[float]] = {}
        for token in grid.split(";"):
            token = token.strip()
            if "=" not in token:
                raise ConfigError(f"invalid grid token {token!r}: expected name=v1,v2,...")
            name, _, values = token.partition("=")
            name = name.strip()
            try:
                parsed[name] = [float(v) for v in values.split(",") if v.strip() != ""]
            except ValueError:
                raise ConfigError(f"invalid grid token {token!r}: values must be numeric") from None
            if not parsed[name]:
                raise ConfigError(f"invalid grid token {token!r}: no values")
        grid = parsed
    if not isinstance(grid, dict) or not grid:
        raise ConfigError("grid must be a non-empty mapping or 'name=v1,v2' string")
    expected = {"univariate": ["theta"], "multivariate": ["eta", "sigma0_sq"]}.get(family)
    if expected is None:
        raise ConfigError(f"unknown family {family!r}")
    if set(grid) != set(expected):
        raise ConfigError(f"{family} grid must set exactly {expected}, got {sorted(grid)}")
    scenarios = [{}]
    for name in expected:
        values = grid[name]
        if not isinstance(values, (list, tuple)) or not values:
            raise ConfigError(f"grid entry {name!r} must be a non-empty list")
        scenarios = [dict(s, **{name: float(v)}) for s in scenarios for v in values]
    return scenarios


def _dgp_from_params(family: str, params: dict, sigma_d: float, sigma_y: float):
    if family == "univariate":
        return make_univariate_dgp(params["theta"], sigma_d, sigma_y)
    if family == "multivariate":
        return make_multivariate_dgp(params["eta"], params["sigma0_sq"], sigma_d, sigma_y)
    raise ConfigError(f"unknown family {family!r}")


def _scenario_tag(family: str, params: dict) -> str:
    if family == "univariate":
        return f"univariate_theta{params['theta']:g}"
    return f"multivariate_eta{params['eta']:g}_s0sq{params['sigma0_sq']:g}"


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_estimate(args) -> int:
    cfg = _load_config(args.config, _ESTIMATE_KEYS)
    exp = read_experimental_csv(args.exp_csv)
    obs = read_observational_csv(args.obs_csv)
    if exp.p_x != obs.p_x:
        raise EffectcalError(
            f"covariate dimension mismatch: {args.exp_csv} has p={exp.p_x}, "
            f"{args.obs_csv} has p={obs.p_x}"
        )
    estimators = args.estimators.split(",") if args.estimators else cfg.get("estimators", ["tau_bar"])
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    alpha = args.alpha if args.alpha is not None else cfg.get("alpha", 0.05)
    learner_name = cfg.get("contrast_learner", "ridge_poly2")
    if learner_name == "oracle":
        raise ConfigError("the oracle contrast learner needs a simulated DGP; use simulate")
    learner = parse_contrast_learner(learner_name)
    k_folds = int(cfg.get("k_folds", 5))
    effective = {
        "estimators": estimators, "k_folds": k_folds,
        "folds_exp": int(cfg.get("folds_exp", 5)),
        "q_feature_degree": int(cfg.get("q_feature_degree", 1)),
        "basis": cfg.get("basis", "poly1"),
        "contrast_learner": learner_name, "alpha": alpha,
        "prob_clip": float(cfg.get("prob_clip", 1e-6)), "seed": seed,
    }
    reports = {}
    pipe_cfg = PipelineConfig(
        contrast_learner=learner, k_folds=k_folds, basis=effective["basis"],
        alpha=alpha, rng=RngStream(seed, 0),
    )
    if "tau_bar" in estimators:
        reports["tau_bar"] = run_tau_bar_pipeline(exp, obs, pipe_cfg).to_dict()
    if "aipsw" in estimators or "collab" in estimators:
        from .core import partition_folds
        from .nuisance import fit_contrast_crossfit

        folds = partition_folds(obs.n, k_folds, RngStream(seed, 0))
        contrast = fit_contrast_crossfit(obs, folds, learner)
        inputs = build_baseline_inputs(
            exp, obs, contrast,
            BaselineConfig(
                folds_exp=effective["folds_exp"],
                q_feature_degree=effective["q_feature_degree"],
                prob_clip=effective["prob_clip"],
                alpha=alpha, rng=RngStream(seed, 1),
            ),
        )
        if "aipsw" in estimators:
            reports["aipsw"] = estimate_aipsw(
                exp, obs, inputs.mu_hat, inputs.q_hat, alpha=alpha,
                mu_exp=inputs.mu_exp, q_exp=inputs.q_exp, mu_obs=inputs.mu_obs,
            ).to_dict()
        if "collab" in estimators:
            reports["collab"] = estimate_collab(exp, obs, inputs, alpha=alpha).to_dict()
    unknown = set(estimators) - {"tau_bar", "aipsw", "collab"}
    if unknown:
        raise ConfigError(f"unknown estimators: {sorted(unknown)}")
    payload = {"config": effective, "reports": reports}
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "estimates.json").write_text(text + "\n", encoding="utf-8")
    print(text)
    return 0


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config, _SIMULATE_KEYS)
    if "family" not in cfg or "grid" not in cfg:
        raise ConfigError("simulate config must set 'family' and 'grid'")
    family = cfg["family"]
    scenarios = _parse_grid(family, cfg["grid"])
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    alpha = args.alpha if args.alpha is not None else cfg.get("alpha", 0.05)
    estimators = tuple(
        args.estimators.split(",") if args.estimators else cfg.get("estimators", ["tau_bar", "aipsw", "collab"])
    )
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    results = []
    for idx, params in enumerate(scenarios):
        config = ScenarioConfig(
            scenario_id=_scenario_tag(family, params),
            family=family,
            params=params,
            n=int(cfg.get("n", 100)),
            n_obs=int(cfg.get("n_obs", 10_000)),
            replications=int(cfg.get("replications", 1000)),
            estimators=estimators,
            contrast_learner=cfg.get("contrast_learner", "oracle"),
            k_folds=int(cfg.get("k_folds", 1)),
            folds_exp=int(cfg.get("folds_exp", 5)),
            q_feature_degree=int(cfg.get("q_feature_degree", 1)),
            basis=cfg.get("basis", "poly1"),
            alpha=alpha,
            sigma_d=float(cfg.get("sigma_d", 1.0)),
            sigma_y=float(cfg.get("sigma_y", 1.0)),
            master_seed=seed,
            scenario_index=idx,
        )
        result = run_scenario(config, threads=args.threads)
        write_reps_csv(out_dir / f"scenario_{config.scenario_id}_reps.csv", result)
        write_summary_json(out_dir / f"scenario_{config.scenario_id}_summary.json", result)
        results.append(result)
        print(f"scenario {config.scenario_id}: done ({config.replications} replications)")
    table = coverage_table(results)
    write_coverage_table(out_dir / "coverage_table.csv", out_dir / "coverage_table.json", table)
    return 0


def cmd_generate(args) -> int:
    cfg = _load_config(args.config, _GENERATE_KEYS)
    family = cfg.get("family", "univariate")
    params = (
        {"theta": float(cfg.get("theta", 0.0))}
        if family == "univariate"
        else {"eta": float(cfg.get("eta", 0.0)), "sigma0_sq": float(cfg.get("sigma0_sq", 1.0))}
    )
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    dgp = _dgp_from_params(family, params, float(cfg.get("sigma_d", 1.0)), float(cfg.get("sigma_y", 1.0)))
    pair = sample_pair(dgp, int(cfg.get("n", 100)), int(cfg.get("n_obs", 10_000)), RngStream(seed, 0))
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    write_experimental_csv(out_dir / "experimental.csv", pair.exp)
    write_observational_csv(out_dir / "observational.csv", pair.obs)
    manifest = {
        "config": {"family": family, **params, "n": pair.exp.n, "n_obs": pair.obs.n,
                   "sigma_d": dgp.sigma_d, "sigma_y": dgp.sigma_y, "seed": seed},
        "files": ["experimental.csv", "observational.csv"],
    }
    (out_dir / "generate_manifest.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    print(f"wrote experimental.csv ({pair.exp.n} rows) and observational.csv ({pair.obs.n} rows) to {out_dir}")
    return 0


def cmd_oracle(args) -> int:
    cfg = _load_config(args.config, _ORACLE_KEYS)
    family = cfg.get("family", "univariate")
    params = (
        {"theta": float(cfg.get("theta", 0.0))}
        if family == "univariate"
        else {"eta": float(cfg.get("eta", 0.0)), "sigma0_sq": float(cfg.get("sigma0_sq", 1.0))}
    )
    dgp = _dgp_from_params(family, params, float(cfg.get("sigma_d", 1.0)), float(cfg.get("sigma_y", 1.0)))
    psi = make_basis(cfg.get("basis", "poly1"))
    quad = QuadratureSpec(nodes=int(cfg.get("quad_nodes", 64)))
    est = oracle_estimands(dgp, psi, quad)
    out_dir = Path(args.out or ".")
    out_dir.mkdir(parents=True, exist_ok=True)
    payload = {
        "config": {"family": family, **params, "basis": psi.name, "quad_nodes": quad.nodes,
                   "sigma_d": dgp.sigma_d, "sigma_y": dgp.sigma_y},
        "estimands": est.to_dict(),
    }
    (out_dir / "oracle_estimands.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    if family == "univariate":
        weights = weight_gamma_minvar(dgp, psi, est, quad)
        grid_cfg = cfg.get("weight_grid", {}) or {}
        unknown = set(grid_cfg) - {"lo", "hi", "num"}
        if unknown:
            raise ConfigError(f"unknown weight_grid keys: {sorted(unknown)}")
        lo = float(grid_cfg.get("lo", -4.0))
        hi = float(grid_cfg.get("hi", 4.0))
        num = int(grid_cfg.get("num", 161))
        rho2 = float(cfg.get("rho2", 0.01))
        xs = np.linspace(lo, hi, num)
        xmat = xs[:, None]
        w = weight_function(xmat, dgp, psi, est, weights.gamma)
        lam = dgp.lambda_ratio(xmat)
        pi = sampling_propensity(xmat, rho2, dgp)
        import csv as _csv

        with open(out_dir / "weight_grid.csv", "w", newline="", encoding="utf-8") as fh:
            writer = _csv.writer(fh)
            writer.writerow(["x", "w", "lambda", "pi"])
            for row in zip(xs, w, lam, pi):
                writer.writerow([repr(float(v)) for v in row])
        print(f"wrote oracle_estimands.json and weight_grid.csv to {out_dir}")
    else:
        # weight grids are defined for the univariate family only
        print(f"wrote oracle_estimands.json to {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="effectcal",
        description="Calibrated outcome regression for transported treatment effects",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--seed", type=int, default=None, help="master seed (overrides config)")
        p.add_argument("--threads", type=int, default=1, help="worker cap for replications")
        p.add_argument("--out", help="output directory")
        p.add_argument("--alpha", type=float, default=None, help="CI level (overrides config)")

    p_est = sub.add_parser("estimate", help="run estimators on CSV datasets")
    p_est.add_argument("exp_csv", help="experimental CSV (d,x1,...,xp)")
    p_est.add_argument("obs_csv", help="observational CSV (y,z,x1,...,xp)")
    p_est.add_argument("--estimators", help="comma list: tau_bar,aipsw,collab")
    common(p_est)
    p_est.set_defaults(fn=cmd_estimate)

    p_sim = sub.add_parser("simulate", help="run Monte Carlo scenario grids")
    p_sim.add_argument("--estimators", help="comma list: tau_bar,aipsw,collab")
    common(p_sim)
    p_sim.set_defaults(fn=cmd_simulate)

    p_gen = sub.add_parser("generate", help="write simulated CSV datasets")
    common(p_gen)
    p_gen.set_defaults(fn=cmd_generate)

    p_orc = sub.add_parser("oracle", help="emit estimand and weight artifacts")
    common(p_orc)
    p_orc.set_defaults(fn=cmd_oracle)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, SchemaError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except EffectcalError as err:
        print(f"error: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
