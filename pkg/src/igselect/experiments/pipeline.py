"""End-to-end feature-selection experiment.

Stages, each leaving artifacts under ``<out_dir>/stages``:

1. tune on all features
2. cross-validate the tuned configuration
3. train the tuned network on the training rows; IG attribution + aggregation
4. k-means elimination for every k, deduplicated
5. re-tune and cross-validate every distinct subset
6. assemble the report

``run_validation`` adds the comparison runs (complement, Pearson, Lasso,
KernelSHAP) for a chosen subset size.
"""

from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .. import nn
from ..attribution import (GlobalImportance, IgConfig, aggregate, attribute_dataset,
                           attribute_dataset_shap, write_importance_csv)
from ..data import (Dataset, GroundTruth, clean, fit_scaler, generate_dummy, no_nan,
                    ordinal_encode, read_csv, read_ground_truth, split, transform,
                    write_ground_truth)
from ..errors import ConfigError, SpecificationError, StageError
from ..seeding import derive_seed
from ..selection import (ClusterResult, FeatureSubset, complement, eliminate_lowest_detailed,
                         lasso_select, pearson_top_n, top_n_by_score, write_subsets_csv)
from ..tuning import CvReport, cross_validate, network_settings, tune, write_tuning_csv
from .config import PipelineConfig, dump_config

log = logging.getLogger(__name__)


@dataclass
class Prepared:
    cfg: PipelineConfig
    data: Dataset
    train: np.ndarray
    test: np.ndarray
    truth: GroundTruth | None = None


def prepare(cfg: PipelineConfig) -> Prepared:
    """Load or generate data, clean, encode, and scale on the training rows."""
    truth = None
    if cfg.data_source == "dummy":
        raw, truth = generate_dummy(cfg.dummy_spec)
    else:
        path = Path(cfg.data_source)
        if not path.exists():
            raise ConfigError(f"data_source {path} does not exist")
        raw = read_csv(path, cfg.target_column, cfg.categorical_columns)
        if raw.categorical_columns:
            raw = ordinal_encode(raw, raw.categorical_columns)
        raw = clean(raw, [no_nan])
        gt = path.with_name(path.stem + "_ground_truth.csv")
        if gt.exists():
            truth = read_ground_truth(gt)
    if raw.n_samples == 0:
        raise SpecificationError("no rows left after cleaning")
    sp = split(raw, cfg.split_plan)
    scaler = fit_scaler(raw, sp.train)
    data = transform(scaler, raw, scale_target=cfg.scale_target)
    return Prepared(cfg, data, sp.train, sp.test, truth)


@dataclass
class ReportRow:
    label: str
    provenance: tuple
    indices: tuple[int, ...]
    cv: CvReport
    best_point: dict
    tuning_value: float
    flags: tuple[str, ...] = ()

    @property
    def n_features(self) -> int:
        return len(self.indices)

    def to_dict(self):
        return {"label": self.label, "provenance": list(self.provenance),
                "indices": list(self.indices), "cv": asdict(self.cv),
                "best_point": self.best_point, "tuning_value": self.tuning_value,
                "flags": list(self.flags)}

    @classmethod
    def from_dict(cls, d):
        cv = d["cv"]
        return cls(d["label"], tuple(d["provenance"]), tuple(d["indices"]),
                   CvReport(tuple(cv["fold_mses"]), cv["mean_mse"], cv["sd_mse"],
                            tuple(cv["flags"]), cv["test_mse"]),
                   d["best_point"], d["tuning_value"], tuple(d["flags"]))


@dataclass
class ExperimentReport:
    kind: str
    rows: list[ReportRow]
    column_names: tuple[str, ...]
    config: dict
    importance: GlobalImportance | None = None
    clusterings: dict[int, ClusterResult] = field(default_factory=dict)
    truth: GroundTruth | None = None
    skipped: list[str] = field(default_factory=list)
    validation: "ExperimentReport | None" = None
    model: nn.Network | None = None

    @property
    def full_row(self) -> ReportRow | None:
        return next((r for r in self.rows if r.label == "all"), None)

    @property
    def subset_rows(self) -> list[ReportRow]:
        return [r for r in self.rows if r.label != "all"]

    @property
    def best_subset(self) -> FeatureSubset | None:
        rows = self.subset_rows
        if not rows:
            return None
        best = min(rows, key=lambda r: (r.cv.mean_mse, r.n_features))
        return FeatureSubset(best.indices, best.provenance)

    def to_dict(self) -> dict:
        d = {"kind": self.kind, "rows": [r.to_dict() for r in self.rows],
             "column_names": list(self.column_names), "config": self.config,
             "skipped": list(self.skipped)}
        if self.importance is not None:
            d["importance"] = {"scores": self.importance.scores.tolist(),
                               "aggregation": self.importance.aggregation}
        d["clusterings"] = {str(k): {"assignments": c.assignments.tolist(),
                                     "centroids": c.centroids.tolist(),
                                     "lowest_cluster": c.lowest_cluster, "inertia": c.inertia}
                            for k, c in self.clusterings.items()}
        if self.truth is not None:
            d["truth"] = self.truth.coefficients.tolist()
        if self.validation is not None:
            d["validation"] = self.validation.to_dict()
        return d

    @classmethod
    def from_dict(cls, d) -> "ExperimentReport":
        imp = d.get("importance")
        truth = d.get("truth")
        return cls(
            d["kind"], [ReportRow.from_dict(r) for r in d["rows"]], tuple(d["column_names"]),
            d["config"],
            GlobalImportance(imp["scores"], imp["aggregation"]) if imp else None,
            {int(k): ClusterResult(int(k), np.array(c["assignments"]), np.array(c["centroids"]),
                                   c["lowest_cluster"], c["inertia"])
             for k, c in d.get("clusterings", {}).items()},
            GroundTruth(truth, [i for i, v in enumerate(truth) if v == 0]) if truth else None,
            list(d.get("skipped", [])),
            cls.from_dict(d["validation"]) if d.get("validation") else None,
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n",
                        encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "ExperimentReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _tag(method, indices):
    return f"{method}:" + ",".join(str(i) for i in indices)


def evaluate_subset(prep: Prepared, subset: FeatureSubset, method: str, label: str,
                    tuning_csv: Path | None = None) -> ReportRow:
    """Tune on ``subset`` and cross-validate the winning configuration."""
    cfg = prep.cfg
    tag = _tag(method, subset.indices)
    run = tune(prep.data, subset, cfg.space, cfg.budget, derive_seed(cfg.seed, "tune", tag),
               cfg.split_plan, cfg.objective)
    if tuning_csv is not None:
        write_tuning_csv(run, tuning_csv)
    best_obs = run.observations[run.best_index]
    if best_obs.cv is not None:
        rep = best_obs.cv
        if rep.test_mse is None:
            rep = cross_validate(prep.data, subset, run.best, cfg.split_plan, cfg.space,
                                 derive_seed(cfg.seed, "cv", tag), with_test=True)
    else:
        rep = cross_validate(prep.data, subset, run.best, cfg.split_plan, cfg.space,
                             derive_seed(cfg.seed, "cv", tag), with_test=True)
    return ReportRow(label, subset.provenance, subset.indices, rep, run.best, run.best_value,
                     subset.flags + rep.flags)


def _evaluate_job(args):
    return evaluate_subset(*args)


def _map(cfg: PipelineConfig, jobs):
    if cfg.workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            return list(ex.map(_evaluate_job, jobs))
    return [_evaluate_job(j) for j in jobs]


def stage_dir(cfg: PipelineConfig) -> Path:
    d = Path(cfg.out_dir) / "stages"
    d.mkdir(parents=True, exist_ok=True)
    return d


def train_final_model(prep: Prepared, point: dict, subset: FeatureSubset | None = None) -> nn.Network:
    cfg = prep.cfg
    view = prep.data if subset is None else prep.data.columns(subset.indices)
    seed = derive_seed(cfg.seed, "final-model")
    arch, tcfg = network_settings(cfg.space, point, view.n_features, seed)
    return nn.train(nn.build(arch, derive_seed(seed, "init")), view, prep.train, tcfg)


def attribute(prep: Prepared, model: nn.Network) -> GlobalImportance:
    cfg = prep.cfg
    rows = prep.train if cfg.ig_rows == "train" else np.arange(prep.data.n_samples)
    ig = IgConfig(np.zeros(prep.data.n_features), cfg.ig_steps, cfg.ig_quadrature)
    return aggregate(attribute_dataset(model, prep.data, rows, ig), cfg.aggregation)


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except StageError:
        raise
    except Exception as exc:  # noqa: BLE001 - re-raised with the stage name attached
        raise StageError(name, exc) from exc


def run_pipeline(cfg: PipelineConfig, prep: Prepared | None = None) -> ExperimentReport:
    prep = prep or prepare(cfg)
    sd = stage_dir(cfg)
    dump_config(cfg, sd / "config.yaml")
    names = prep.data.column_names
    if prep.truth is not None:
        write_ground_truth(prep.truth, sd / "ground_truth.csv")

    all_feats = FeatureSubset(range(prep.data.n_features), ("all",))
    log.info("stage 1-2: tuning on all %d features", prep.data.n_features)
    full = _stage("tune-full", evaluate_subset, prep, all_feats, "all", "all",
                  sd / "tuning_all.csv")
    (sd / "full_row.json").write_text(json.dumps(full.to_dict(), indent=1, sort_keys=True) + "\n")

    log.info("stage 3: attribution")
    model = _stage("train-final", train_final_model, prep, full.best_point)
    nn.save(model, sd / "full_model.npz")
    importance = _stage("attribute", attribute, prep, model)
    write_importance_csv(importance, names, sd / "importance.csv")

    log.info("stage 4: elimination over k=%s", list(cfg.k_values))
    elim = _stage("select", eliminate_lowest_detailed, importance, cfg.k_values,
                  derive_seed(cfg.seed, "elimination"))
    save_subsets(elim.subsets, sd / "subsets.json")
    write_subsets_csv(elim.subsets, names, sd / "subsets.csv")

    log.info("stage 5: re-tuning %d subsets", len(elim.subsets))
    rows = _stage("retune", retune_subsets, prep, elim.subsets)

    report = ExperimentReport("pipeline", [full, *rows], names, cfg.to_dict(), importance,
                              elim.clusterings, prep.truth, elim.skipped, model=model)
    report.save(sd / "pipeline_report.json")
    return report


def retune_subsets(prep: Prepared, subsets) -> list[ReportRow]:
    sd = stage_dir(prep.cfg)
    jobs = [(prep, s, "ig", s.label, sd / f"tuning_ig_{len(s)}_{'_'.join(map(str, s.provenance))}.csv")
            for s in subsets]
    return _map(prep.cfg, jobs)


def save_subsets(subsets, path) -> Path:
    path = Path(path)
    payload = [{"indices": list(s.indices), "provenance": list(s.provenance),
                "flags": list(s.flags)} for s in subsets]
    path.write_text(json.dumps(payload, indent=1) + "\n", encoding="utf-8")
    return path


def load_subsets(path) -> list[FeatureSubset]:
    payload = json.loads(Path(path).read_text(encoding="utf-8"))
    return [FeatureSubset(p["indices"], tuple(p["provenance"]), tuple(p["flags"])) for p in payload]


def shap_importance(prep: Prepared, model: nn.Network) -> GlobalImportance:
    cfg = prep.cfg
    rng = np.random.default_rng(derive_seed(cfg.seed, "shap-rows"))
    bg_rows = rng.choice(prep.train, size=min(cfg.shap_background, prep.train.size), replace=False)
    ex_rows = np.sort(rng.choice(prep.train, size=min(cfg.shap_samples, prep.train.size),
                                 replace=False))
    background = prep.data.features[bg_rows]
    attr = attribute_dataset_shap(model, prep.data, ex_rows, background, cfg.shap_budget,
                                  derive_seed(cfg.seed, "shap"))
    return aggregate(attr, "MeanAbsolute")


VALIDATION_LABELS = {
    "cross-check": "IG + k-means (least informative features)",
    "pearson": "Pearson (most correlating features)",
    "lasso": "Lasso regression",
    "kernelshap": "KernelSHAP (most relevant features)",
}


def run_validation(cfg: PipelineConfig, best: FeatureSubset, pipeline: ExperimentReport | None = None,
                   prep: Prepared | None = None) -> ExperimentReport:
    """Comparison runs at n = |best| features, each re-tuned and cross-validated."""
    prep = prep or prepare(cfg)
    sd = stage_dir(cfg)
    n = len(best)
    n_all = prep.data.n_features
    model = pipeline.model if pipeline is not None and pipeline.model is not None else None
    if model is None and "kernelshap" in cfg.selectors:
        ckpt = sd / "full_model.npz"
        if not ckpt.exists():
            raise StageError("validate", FileNotFoundError(f"{ckpt} (run the pipeline first)"))
        model = nn.load(ckpt)

    subsets: list[tuple[str, FeatureSubset]] = []
    for sel in cfg.selectors:
        if sel == "cross-check":
            subsets.append((sel, _stage("validate:cross-check", complement, best, n_all)))
        elif sel == "pearson":
            subsets.append((sel, _stage("validate:pearson", pearson_top_n, prep.data, prep.train, n)))
        elif sel == "lasso":
            subsets.append((sel, _stage("validate:lasso", lasso_select, prep.data, prep.train, n)))
        elif sel == "kernelshap":
            imp = _stage("validate:kernelshap", shap_importance, prep, model)
            write_importance_csv(imp, prep.data.column_names, sd / "importance_kernelshap.csv")
            subsets.append((sel, top_n_by_score(imp, n)))
    save_subsets([s for _, s in subsets], sd / "validation_subsets.json")

    jobs = [(prep, s, sel, VALIDATION_LABELS[sel], sd / f"tuning_{sel}.csv") for sel, s in subsets]
    rows = _stage("validate:retune", _map, cfg, jobs)

    best_row = None
    if pipeline is not None:
        best_row = next((r for r in pipeline.subset_rows if r.indices == best.indices), None)
    if best_row is None:
        best_row = evaluate_subset(prep, best, "ig", "")
    best_row = ReportRow("IG + k-means (most relevant features)", best_row.provenance,
                         best_row.indices, best_row.cv, best_row.best_point,
                         best_row.tuning_value, best_row.flags)
    report = ExperimentReport("validation", [best_row, *rows], prep.data.column_names,
                              cfg.to_dict(), truth=prep.truth)
    report.save(sd / "validation_report.json")
    return report
