import json
from pathlib import Path

import numpy as np
import pytest

from effectcal import RngStream, sample_univariate, write_experimental_csv, write_observational_csv
from effectcal.cli import main


def _write_pair(tmp_path, n=10, n_obs=50, theta=0.0, seed=3):
    pair = sample_univariate(theta, n, n_obs, RngStream(seed))
    pe = tmp_path / "exp.csv"
    po = tmp_path / "obs.csv"
    write_experimental_csv(pe, pair.exp)
    write_observational_csv(po, pair.obs)
    return pe, po


def test_estimate_smoke(tmp_path, capsys):
    pe, po = _write_pair(tmp_path)
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"contrast_learner": "ridge_poly1", "k_folds": 2}))
    code = main(["estimate", str(pe), str(po), "--estimators", "tau_bar",
                 "--config", str(cfg), "--seed", "1"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    report = payload["reports"]["tau_bar"]
    assert np.isfinite(report["point"]) and np.isfinite(report["variance"])
    assert report["ci"][0] <= report["point"] <= report["ci"][1]


def test_estimate_all_estimators(tmp_path, capsys):
    pe, po = _write_pair(tmp_path, n=40, n_obs=300)
    code = main(["estimate", str(pe), str(po), "--estimators", "tau_bar,aipsw,collab",
                 "--seed", "2"])
    assert code == 0
    payload = json.loads(capsys.readouterr().out)
    assert set(payload["reports"]) == {"tau_bar", "aipsw", "collab"}


def test_estimate_schema_violation_exit2(tmp_path, capsys):
    pe, po = _write_pair(tmp_path)
    po.write_text("y,z,x1\n1.0,2,0.5\n", encoding="utf-8")
    code = main(["estimate", str(pe), str(po)])
    assert code == 2
    assert "row 2" in capsys.readouterr().err


def test_estimate_insufficient_data_exit3(tmp_path, capsys):
    pe, po = _write_pair(tmp_path, n=1)
    code = main(["estimate", str(pe), str(po), "--estimators", "tau_bar"])
    assert code == 3
    assert "calibrate_ols" in capsys.readouterr().err


def test_estimate_dimension_mismatch(tmp_path, capsys):
    pe, po = _write_pair(tmp_path)
    po.write_text("y,z,x1,x2\n1.0,0,0.5,0.2\n2.0,1,0.1,0.3\n", encoding="utf-8")
    code = main(["estimate", str(pe), str(po)])
    assert code == 3
    assert "dimension" in capsys.readouterr().err


def test_simulate_univariate_grid(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({
        "family": "univariate",
        "grid": "theta=0,0.1,0.2,0.3,0.4,0.5,0.6,0.7",
        "n": 20, "n_obs": 100, "replications": 2,
        "estimators": ["tau_bar"], "contrast_learner": "oracle", "k_folds": 1,
    }))
    out = tmp_path / "out"
    code = main(["simulate", "--config", str(cfg), "--seed", "4", "--out", str(out)])
    assert code == 0
    summaries = sorted(out.glob("scenario_*_summary.json"))
    assert len(summaries) == 8
    assert len(sorted(out.glob("scenario_*_reps.csv"))) == 8
    assert (out / "coverage_table.csv").exists()


def test_simulate_multivariate_grid(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({
        "family": "multivariate",
        "grid": {"eta": [0, 0.5], "sigma0_sq": [1, 2]},
        "n": 20, "n_obs": 100, "replications": 2,
        "estimators": ["tau_bar"], "contrast_learner": "oracle", "k_folds": 1,
    }))
    out = tmp_path / "out"
    code = main(["simulate", "--config", str(cfg), "--seed", "4", "--out", str(out)])
    assert code == 0
    assert len(sorted(out.glob("scenario_*_summary.json"))) == 4


def test_simulate_invalid_grid_token_fails_fast(tmp_path, capsys):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"family": "univariate", "grid": "theta=0,abc"}))
    out = tmp_path / "out"
    code = main(["simulate", "--config", str(cfg), "--out", str(out)])
    assert code == 2
    assert not list(out.glob("*.json")) if out.exists() else True
    assert "grid token" in capsys.readouterr().err


def test_simulate_unknown_config_key(tmp_path, capsys):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({"family": "univariate", "grid": "theta=0", "bogus": 1}))
    code = main(["simulate", "--config", str(cfg)])
    assert code == 2
    assert "unknown config keys" in capsys.readouterr().err


def test_simulate_reproducible_bytes(tmp_path):
    cfg = tmp_path / "sim.json"
    cfg.write_text(json.dumps({
        "family": "univariate", "grid": "theta=0.3",
        "n": 15, "n_obs": 80, "replications": 2,
        "estimators": ["tau_bar"], "contrast_learner": "oracle", "k_folds": 1,
    }))
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        assert main(["simulate", "--config", str(cfg), "--seed", "9", "--out", str(out)]) == 0
        outs.append((out / "scenario_univariate_theta0.3_summary.json").read_bytes())
    assert outs[0] == outs[1]


def test_generate_roundtrip(tmp_path):
    cfg = tmp_path / "gen.json"
    cfg.write_text(json.dumps({"family": "univariate", "theta": 0.2, "n": 12, "n_obs": 30}))
    out = tmp_path / "data"
    code = main(["generate", "--config", str(cfg), "--seed", "5", "--out", str(out)])
    assert code == 0
    from effectcal import read_experimental_csv, read_observational_csv

    exp = read_experimental_csv(out / "experimental.csv")
    obs = read_observational_csv(out / "observational.csv")
    assert exp.n == 12 and obs.n == 30
    manifest = json.loads((out / "generate_manifest.json").read_text())
    assert manifest["config"]["theta"] == 0.2


def test_oracle_univariate_outputs(tmp_path):
    cfg = tmp_path / "orc.json"
    cfg.write_text(json.dumps({"family": "univariate", "theta": 0.0}))
    out = tmp_path / "orc"
    code = main(["oracle", "--config", str(cfg), "--out", str(out)])
    assert code == 0
    payload = json.loads((out / "oracle_estimands.json").read_text())
    assert payload["estimands"]["tau"] == pytest.approx(1.75, abs=1e-9)
    grid = (out / "weight_grid.csv").read_text().strip().splitlines()
    assert grid[0] == "x,w,lambda,pi"
    w = np.array([float(line.split(",")[1]) for line in grid[1:]])
    assert np.all(w > 0.0) and np.all(w < 2.0)


def test_oracle_strong_shift_weight_bounds(tmp_path):
    cfg = tmp_path / "orc.json"
    cfg.write_text(json.dumps({"family": "univariate", "theta": 0.7}))
    out = tmp_path / "orc"
    assert main(["oracle", "--config", str(cfg), "--out", str(out)]) == 0
    grid = (out / "weight_grid.csv").read_text().strip().splitlines()
    w = np.array([float(line.split(",")[1]) for line in grid[1:]])
    assert np.all(w > 0.0) and np.all(w < 2.0)


def test_oracle_multivariate_estimands(tmp_path):
    cfg = tmp_path / "orc.json"
    cfg.write_text(json.dumps({"family": "multivariate", "eta": 0.5, "sigma0_sq": 1.0}))
    out = tmp_path / "orc"
    assert main(["oracle", "--config", str(cfg), "--out", str(out)]) == 0
    payload = json.loads((out / "oracle_estimands.json").read_text())
    assert payload["estimands"]["tau"] == pytest.approx(1.18, abs=0.02)
    assert payload["estimands"]["tau_bar"] == pytest.approx(1.79, abs=0.02)


def test_config_file_missing(tmp_path, capsys):
    code = main(["simulate", "--config", str(tmp_path / "nope.json")])
    assert code == 2
