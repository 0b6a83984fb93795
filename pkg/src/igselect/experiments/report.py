"""Tables, figures and a hashed manifest for an experiment report."""

from __future__ import annotations

import csv
import hashlib
import json
from pathlib import Path

import numpy as np

from ..attribution import scale_to_range, write_importance_csv
from ..data import write_ground_truth
from ..selection import FeatureSubset, write_subsets_csv
from . import figures
from .pipeline import ExperimentReport


def _num(v):
    if v is None:
        return ""
    return f"{float(v):.6f}"


def _k_column(row):
    ks = [p for p in row.provenance if isinstance(p, int)]
    return ",".join(str(k) for k in ks) if ks else "-"


def write_subset_table(report: ExperimentReport, path) -> Path:
    """One row per evaluated feature set: n, k, fold MSEs, mean, SD, test MSE."""
    path = Path(path)
    n_folds = max(len(r.cv.fold_mses) for r in report.rows)
    rows = sorted(report.rows, key=lambda r: (-r.n_features, r.label))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["n_features", "k_cluster", *[f"fold_{i + 1}_mse" for i in range(n_folds)],
                    "mean_mse", "sd_mse", "test_mse", "flags"])
        for r in rows:
            w.writerow([r.n_features, _k_column(r), *[_num(v) for v in r.cv.fold_mses],
                        _num(r.cv.mean_mse), _num(r.cv.sd_mse), _num(r.cv.test_mse),
                        "; ".join(r.flags)])
    return path


def write_validation_table(report: ExperimentReport, path) -> Path:
    path = Path(path)
    n_folds = max(len(r.cv.fold_mses) for r in report.rows)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["experiment", "n_features", *[f"fold_{i + 1}_mse" for i in range(n_folds)],
                    "mean_mse", "sd_mse", "test_mse", "flags"])
        for r in report.rows:
            w.writerow([r.label, r.n_features, *[_num(v) for v in r.cv.fold_mses],
                        _num(r.cv.mean_mse), _num(r.cv.sd_mse), _num(r.cv.test_mse),
                        "; ".join(r.flags)])
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _truth_categories(truth, n):
    if truth is None:
        return None
    c = truth.coefficients
    return ["positive" if c[i] > 0 else "negative" if c[i] < 0 else "zero" for i in range(n)]


def emit_report(report: ExperimentReport, out_dir) -> dict:
    """Write all tables and figures; return (and save) the manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    names = report.column_names
    files: list[Path] = []

    if report.kind == "pipeline":
        files.append(write_subset_table(report, out / "table_subsets.csv"))
        subsets = [FeatureSubset(r.indices, r.provenance) for r in report.subset_rows]
        if subsets:
            files.append(write_subsets_csv(subsets, names, out / "subsets.csv"))
        labels = [str(r.n_features) for r in sorted(report.rows, key=lambda r: -r.n_features)]
        ordered = sorted(report.rows, key=lambda r: -r.n_features)
        files.append(figures.mse_whiskers(labels, [r.cv.fold_mses for r in ordered],
                                          [r.cv.mean_mse for r in ordered],
                                          [r.cv.sd_mse for r in ordered], out / "fig_mse.svg"))
    else:
        files.append(write_validation_table(report, out / "table_validation.csv"))
        files.append(figures.mse_whiskers([r.label.split(" (")[0] for r in report.rows],
                                          [r.cv.fold_mses for r in report.rows],
                                          [r.cv.mean_mse for r in report.rows],
                                          [r.cv.sd_mse for r in report.rows],
                                          out / "fig_validation_mse.svg",
                                          title="Validation experiments"))

    if report.importance is not None:
        scores = report.importance.scores
        files.append(write_importance_csv(report.importance, names, out / "importance.csv"))
        truth = report.truth
        if truth is not None and np.ptp(scores) > 0:
            mag = np.abs(truth.coefficients)
            shown = scale_to_range(scores, float(mag.min()), float(mag.max()))
            files.append(figures.attribution_bars(
                shown, out / "fig_attribution.svg", coefficients=mag,
                categories=_truth_categories(truth, len(scores)),
                title="Scaled attribution vs |ground-truth coefficient|"))
        else:
            files.append(figures.attribution_bars(scores, out / "fig_attribution.svg"))
        for k, cl in sorted(report.clusterings.items()):
            low = scores[cl.assignments == cl.lowest_cluster]
            files.append(figures.cluster_scatter(scores, cl.assignments, float(low.max()),
                                                 out / f"fig_clusters_k{k}.svg", k))
    if report.truth is not None:
        files.append(write_ground_truth(report.truth, out / "ground_truth.csv"))

    if report.validation is not None:
        sub = emit_report(report.validation, out / "validation")
        files.extend(out / "validation" / f for f in sub["files"])

    manifest = {"files": {str(p.relative_to(out)): _sha256(p) for p in sorted(files)}}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n",
                                       encoding="utf-8")
    return manifest
