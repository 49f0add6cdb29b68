#!/usr/bin/env python3
"""Batch figure renderer for simulation-harness outputs.

Consumes only the file contracts of the estimation package (scenario summary
JSON, per-replication CSV, weight-grid CSV) and renders one of four figure
kinds, always with a sidecar CSV holding exactly the plotted numbers:

  mse_bars       stacked bars per scenario/estimator: shaded variance below,
                 unshaded squared bias on top (bar height = MSE)
  weight_curves  weight functions w(x) overlaid across configurations
  histograms     per-estimator histograms of point estimates, dashed vertical
                 line at the matching population target
  coverage_table CI coverage / mean width table as a figure

Usage: render.py --job job.json
Job schema: {"kind": <above>, "inputs": {...}, "out": "figure.png"}
  mse_bars / coverage_table inputs: {"summaries": [<summary.json>, ...]}
  weight_curves inputs: {"grids": [{"label": str, "path": <grid.csv>}, ...]}
  histograms inputs: {"reps": <reps.csv>, "summary": <summary.json>},
  optional "bins" (default 30)

Rendering is deterministic: fixed figure geometry, no timestamps. Failed
replications are never silently dropped; their count is carried into the
sidecar and the figure caption.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np


class JobError(Exception):
    """Invalid job or malformed input; the message names offending fields."""


REPS_COLUMNS = ["rep", "estimator", "point", "variance", "ci_lo", "ci_hi", "covered", "failed"]
GRID_COLUMNS = ["x", "w", "lambda", "pi"]
_FIGSIZE = (8.0, 4.5)
_DPI = 120


# ---------------------------------------------------------------------------
# input readers (strict)
# ---------------------------------------------------------------------------


def _require(mapping: dict, keys: list[str], where: str) -> None:
    missing = [k for k in keys if k not in mapping]
    if missing:
        raise JobError(f"{where}: missing fields {missing}")


def read_summary(path: str) -> dict:
    p = Path(path)
    if not p.exists():
        raise JobError(f"summary file not found: {path}")
    try:
        payload = json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise JobError(f"{path}: not valid JSON: {e}") from None
    _require(payload, ["scenario_id", "targets", "estimators"], path)
    _require(payload["targets"], ["tau", "tau_bar"], f"{path}: targets")
    for name, agg in payload["estimators"].items():
        _require(agg, ["target", "target_value", "n_failed"], f"{path}: estimators.{name}")
    return payload


def read_reps(path: str) -> list[dict]:
    p = Path(path)
    if not p.exists():
        raise JobError(f"replication file not found: {path}")
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != REPS_COLUMNS:
            raise JobError(
                f"{path}: expected columns {REPS_COLUMNS}, got {reader.fieldnames}"
            )
        rows = []
        for line_no, row in enumerate(reader, start=2):
            try:
                rows.append({
                    "rep": int(row["rep"]),
                    "estimator": row["estimator"],
                    "point": float(row["point"]),
                    "covered": int(row["covered"]),
                    "failed": int(row["failed"]),
                })
            except (TypeError, ValueError):
                raise JobError(f"{path}: row {line_no}: malformed fields") from None
    if not rows:
        raise JobError(f"{path}: no replication rows")
    return rows


def read_weight_grid(path: str) -> dict[str, np.ndarray]:
    p = Path(path)
    if not p.exists():
        raise JobError(f"weight grid not found: {path}")
    with open(p, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != GRID_COLUMNS:
            raise JobError(f"{path}: expected columns {GRID_COLUMNS}, got {reader.fieldnames}")
        cols = {c: [] for c in GRID_COLUMNS}
        for line_no, row in enumerate(reader, start=2):
            for c in GRID_COLUMNS:
                try:
                    cols[c].append(float(row[c]))
                except (TypeError, ValueError):
                    raise JobError(f"{path}: row {line_no}, column {c!r}: not numeric") from None
    if not cols["x"]:
        raise JobError(f"{path}: no grid rows")
    return {c: np.asarray(v) for c, v in cols.items()}


def _write_sidecar(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([v if isinstance(v, str) else repr(float(v)) for v in row])


def sidecar_path(out: str) -> Path:
    p = Path(out)
    return p.with_name(p.stem + "_data.csv")


# ---------------------------------------------------------------------------
# figure kinds
# ---------------------------------------------------------------------------


def render_mse_bars(inputs: dict, out: str) -> Path:
    _require(inputs, ["summaries"], "mse_bars inputs")
    summaries = [read_summary(s) for s in inputs["summaries"]]
    rows = []
    for payload in summaries:
        for name, agg in payload["estimators"].items():
            _require(agg, ["bias", "variance", "mse"], f"{payload['scenario_id']}: {name}")
            rows.append([payload["scenario_id"], name,
                         agg["bias"] ** 2, agg["variance"], agg["mse"]])
    scenarios = sorted({r[0] for r in rows})
    estimators = sorted({r[1] for r in rows})
    fig, axes = plt.subplots(
        1, len(scenarios), figsize=_FIGSIZE, dpi=_DPI, sharey=False, squeeze=False
    )
    for ax, scenario in zip(axes[0], scenarios):
        sub = {r[1]: r for r in rows if r[0] == scenario}
        xs = np.arange(len(estimators))
        var = [sub[e][3] if e in sub else 0.0 for e in estimators]
        bias_sq = [sub[e][2] if e in sub else 0.0 for e in estimators]
        ax.bar(xs, var, color="0.6", label="variance")
        ax.bar(xs, bias_sq, bottom=var, color="white", edgecolor="black", label="bias$^2$")
        ax.set_xticks(xs)
        ax.set_xticklabels(estimators, rotation=45, ha="right", fontsize=8)
        ax.set_title(scenario, fontsize=9)
    axes[0][0].set_ylabel("MSE")
    axes[0][-1].legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    side = sidecar_path(out)
    _write_sidecar(side, ["scenario", "estimator", "bias_sq", "variance", "mse"], rows)
    return side


def render_weight_curves(inputs: dict, out: str) -> Path:
    _require(inputs, ["grids"], "weight_curves inputs")
    if not inputs["grids"]:
        raise JobError("weight_curves inputs: 'grids' is empty")
    series = []
    for entry in inputs["grids"]:
        _require(entry, ["label", "path"], "weight_curves grid entry")
        grid = read_weight_grid(entry["path"])
        series.append((entry["label"], grid["x"], grid["w"]))
    fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=_DPI)
    for label, x, w in series:
        ax.plot(x, w, label=label, linewidth=1.4)
    ax.axhline(1.0, color="0.7", linewidth=0.8, linestyle=":")
    ax.set_xlabel("x")
    ax.set_ylabel("weight")
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    rows = [[label, xi, wi] for label, x, w in series for xi, wi in zip(x, w)]
    side = sidecar_path(out)
    _write_sidecar(side, ["label", "x", "w"], rows)
    return side


def render_histograms(inputs: dict, out: str, bins: int = 30) -> Path:
    _require(inputs, ["reps", "summary"], "histograms inputs")
    reps = read_reps(inputs["reps"])
    summary = read_summary(inputs["summary"])
    estimators = sorted({r["estimator"] for r in reps})
    unknown = [e for e in estimators if e not in summary["estimators"]]
    if unknown:
        raise JobError(f"replication estimators {unknown} absent from the summary JSON")
    fig, axes = plt.subplots(1, len(estimators), figsize=_FIGSIZE, dpi=_DPI, squeeze=False)
    side_rows = []
    for ax, name in zip(axes[0], estimators):
        sub = [r for r in reps if r["estimator"] == name]
        failed = [r for r in sub if r["failed"]]
        points = np.array([r["point"] for r in sub if not r["failed"]])
        target = float(summary["estimators"][name]["target_value"])
        if points.size == 0:
            raise JobError(f"estimator {name}: every replication failed; nothing to plot")
        counts, edges = np.histogram(points, bins=bins)
        ax.stairs(counts, edges, fill=True, color="0.7")
        ax.axvline(target, color="black", linestyle="--", linewidth=1.2)
        label = f"{name} (n_failed={len(failed)})" if failed else name
        ax.set_title(label, fontsize=9)
        for lo, hi, c in zip(edges[:-1], edges[1:], counts):
            side_rows.append([name, lo, hi, float(c), target, float(len(failed))])
    axes[0][0].set_ylabel("replications")
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    side = sidecar_path(out)
    _write_sidecar(
        side, ["estimator", "bin_lo", "bin_hi", "count", "target", "n_failed"], side_rows
    )
    return side


def render_coverage_table(inputs: dict, out: str) -> Path:
    _require(inputs, ["summaries"], "coverage_table inputs")
    summaries = [read_summary(s) for s in inputs["summaries"]]
    rows = []
    for payload in summaries:
        for name, agg in payload["estimators"].items():
            _require(agg, ["coverage", "mean_ci_width"], f"{payload['scenario_id']}: {name}")
            rows.append([payload["scenario_id"], name, agg["coverage"], agg["mean_ci_width"]])
    estimators = sorted({r[1] for r in rows})
    scenarios = sorted({r[0] for r in rows})
    cell_text = []
    for scenario in scenarios:
        sub = {r[1]: r for r in rows if r[0] == scenario}
        cell_text.append([
            f"{sub[e][2] * 100:.1f}% / {sub[e][3]:.3f}" if e in sub else "-"
            for e in estimators
        ])
    fig, ax = plt.subplots(figsize=_FIGSIZE, dpi=_DPI)
    ax.axis("off")
    table = ax.table(
        cellText=cell_text, rowLabels=scenarios, colLabels=estimators, loc="center"
    )
    table.scale(1.0, 1.4)
    ax.set_title("coverage / mean CI width", fontsize=10)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    side = sidecar_path(out)
    _write_sidecar(side, ["scenario", "estimator", "coverage", "mean_ci_width"], rows)
    return side


# ---------------------------------------------------------------------------
# job driver
# ---------------------------------------------------------------------------

KINDS = {
    "mse_bars": render_mse_bars,
    "weight_curves": render_weight_curves,
    "histograms": render_histograms,
    "coverage_table": render_coverage_table,
}


def render(job: dict) -> Path:
    """Render one job; returns the sidecar CSV path."""
    _require(job, ["kind", "inputs", "out"], "job")
    kind = job["kind"]
    if kind not in KINDS:
        raise JobError(f"job: unknown kind {kind!r}; choose from {sorted(KINDS)}")
    unknown = set(job) - {"kind", "inputs", "out", "bins"}
    if unknown:
        raise JobError(f"job: unknown fields {sorted(unknown)}")
    Path(job["out"]).parent.mkdir(parents=True, exist_ok=True)
    if kind == "histograms":
        bins = job.get("bins", 30)
        if not isinstance(bins, int) or bins < 1:
            raise JobError("job: 'bins' must be a positive integer")
        return KINDS[kind](job["inputs"], job["out"], bins=bins)
    if "bins" in job:
        raise JobError(f"job: 'bins' only applies to histograms, not {kind!r}")
    return KINDS[kind](job["inputs"], job["out"])


def main(argv: list[str] | None = None) -> int:
    parser = argparse.ArgumentParser(description="render harness outputs into figures")
    parser.add_argument("--job", required=True, help="job JSON file")
    args = parser.parse_args(argv)
    try:
        with open(args.job, encoding="utf-8") as fh:
            job = json.load(fh)
    except FileNotFoundError:
        print(f"error: job file not found: {args.job}", file=sys.stderr)
        return 2
    except json.JSONDecodeError as e:
        print(f"error: job file is not valid JSON: {e}", file=sys.stderr)
        return 2
    try:
        side = render(job)
    except JobError as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    print(f"wrote {job['out']} and {side}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
