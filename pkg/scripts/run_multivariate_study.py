#!/usr/bin/env python3
"""Ten-covariate study over the four (interaction, target-variance) scenarios."""

import argparse
from pathlib import Path

from effectcal import ScenarioConfig, coverage_table, run_scenario
from effectcal.harness import write_coverage_table, write_reps_csv, write_summary_json

SCENARIOS = [(0.0, 1.0), (0.0, 2.0), (0.5, 1.0), (0.5, 2.0)]


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--replications", type=int, default=100)
    ap.add_argument("--n", type=int, default=100)
    ap.add_argument("--n-obs", type=int, default=10_000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--contrast", default="oracle", help="oracle | knn_t | ridge_poly<d>")
    ap.add_argument("--with-collab", action="store_true",
                    help="include the collaborative estimator (slower)")
    ap.add_argument("--out", default="results/multivariate")
    args = ap.parse_args()

    estimators = ("tau_bar", "aipsw", "collab") if args.with_collab else ("tau_bar", "aipsw")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    results = []
    for idx, (eta, s0sq) in enumerate(SCENARIOS):
        cfg = ScenarioConfig(
            scenario_id=f"eta{eta:g}_s0sq{s0sq:g}",
            family="multivariate",
            params={"eta": eta, "sigma0_sq": s0sq},
            n=args.n,
            n_obs=args.n_obs,
            replications=args.replications,
            estimators=estimators,
            contrast_learner=args.contrast,
            k_folds=1,
            folds_exp=5,
            q_feature_degree=1,
            master_seed=args.seed,
            scenario_index=idx,
        )
        res = run_scenario(cfg, threads=args.threads)
        write_reps_csv(out / f"scenario_{cfg.scenario_id}_reps.csv", res)
        write_summary_json(out / f"scenario_{cfg.scenario_id}_summary.json", res)
        results.append(res)
        parts = [
            f"{name} cov={agg['coverage']:.3f} mse={agg['mse']:.4f}"
            for name, agg in res.aggregates.items()
        ]
        print(f"eta={eta:g} s0sq={s0sq:g}: " + " | ".join(parts))
    write_coverage_table(out / "coverage_table.csv", out / "coverage_table.json",
                         coverage_table(results))
    print(f"outputs in {out}")


if __name__ == "__main__":
    main()
