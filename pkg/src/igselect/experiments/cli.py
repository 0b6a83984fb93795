"""Command line entry point: ``igselect <command> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .. import nn
from ..attribution import GlobalImportance, write_importance_csv
from ..data import generate_dummy, write_csv, write_ground_truth
from ..errors import IgSelectError
from ..seeding import derive_seed
from ..selection import FeatureSubset, eliminate_lowest_detailed, write_subsets_csv
from ..tuning import tune, write_tuning_csv
from .config import load_config
from .pipeline import (ExperimentReport, attribute, load_subsets, prepare, run_pipeline,
                       run_validation, save_subsets, stage_dir, train_final_model)
from .report import emit_report

def _read_importance(path) -> GlobalImportance:
    import csv
    with open(path, newline="", encoding="utf-8") as fh:
        return GlobalImportance([float(r["score"]) for r in csv.DictReader(fh)])

def cmd_generate(cfg, args):
    ds, truth = generate_dummy(cfg.dummy_spec)
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(ds, out / "dummy.csv", cfg.target_column)
    write_ground_truth(truth, out / "dummy_ground_truth.csv")
    print(out / "dummy.csv")

def cmd_tune(cfg, args):
    prep = prepare(cfg)
    subset = None
    if args.subset:
        subset = load_subsets(args.subset)[args.subset_index]
    run = tune(prep.data, subset, cfg.space, cfg.budget, derive_seed(cfg.seed, "tune-cli"),
               cfg.split_plan, cfg.objective)
    path = write_tuning_csv(run, stage_dir(cfg) / "tuning_cli.csv")
    print(json.dumps({"best": run.best, "value": run.best_value, "csv": str(path)}, sort_keys=True))

def cmd_attribute(cfg, args):
    prep = prepare(cfg)
    sd = stage_dir(cfg)
    ckpt = Path(args.model) if args.model else sd / "full_model.npz"
    if ckpt.exists():
        model = nn.load(ckpt)
    else:
        best = json.loads(Path(args.point).read_text())["best_point"]
        model = train_final_model(prep, best)
        nn.save(model, ckpt)
    imp = attribute(prep, model)
    print(write_importance_csv(imp, prep.data.column_names, sd / "importance.csv"))

def cmd_select(cfg, args):
    sd = stage_dir(cfg)
    imp = _read_importance(args.importance or sd / "importance.csv")
    elim = eliminate_lowest_detailed(imp, cfg.k_values, derive_seed(cfg.seed, "elimination"))
    names = [f"x{i}" for i in range(len(imp))]
    save_subsets(elim.subsets, sd / "subsets.json")
    write_subsets_csv(elim.subsets, names, sd / "subsets.csv")
    for s in elim.subsets:
        print(f"{s.label}\t{len(s)} features")

def cmd_pipeline(cfg, args):
    report = run_pipeline(cfg)
    if cfg.run_validation:
        report.validation = run_validation(cfg, report.best_subset, report)
        report.save(stage_dir(cfg) / "pipeline_report.json")
    manifest = emit_report(report, cfg.out_dir)
    print(json.dumps(manifest, indent=1, sort_keys=True))

def cmd_validate(cfg, args):
    sd = stage_dir(cfg)
    pipeline = ExperimentReport.load(sd / "pipeline_report.json")
    best = pipeline.best_subset
    if args.best:
        best = FeatureSubset(json.loads(Path(args.best).read_text())["indices"])
    val = run_validation(cfg, best, pipeline)
    manifest = emit_report(val, Path(cfg.out_dir) / "validation")
    print(json.dumps(manifest, indent=1, sort_keys=True))

def cmd_report(cfg, args):
    sd = stage_dir(cfg)
    report = ExperimentReport.load(args.report or sd / "pipeline_report.json")
    val = sd / "validation_report.json"
    if report.validation is None and val.exists():
        report.validation = ExperimentReport.load(val)
    print(json.dumps(emit_report(report, cfg.out_dir), indent=1, sort_keys=True))

COMMANDS = {
    "generate": cmd_generate, "tune": cmd_tune, "attribute": cmd_attribute,
    "select": cmd_select, "pipeline": cmd_pipeline, "validate": cmd_validate,
    "report": cmd_report,
}

def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand's unset flags from clobbering ones given before it
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="flat YAML config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--out", help="output directory")
    common.add_argument("--profile", choices=("desk", "full"), help="built-in preset")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="igselect", parents=[common],
                                description="Attribution-driven feature selection for MLP regression.")
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[common], help="write the synthetic dataset as CSV")
    t = sub.add_parser("tune", parents=[common], help="tune the network on a feature set")
    t.add_argument("--subset", help="subsets.json to take the feature set from")
    t.add_argument("--subset-index", type=int, default=0)
    a = sub.add_parser("attribute", parents=[common], help="IG importance for a trained model")
    a.add_argument("--model", help="model checkpoint (.npz)")
    a.add_argument("--point", help="tuning summary JSON to train from if no checkpoint exists")
    s = sub.add_parser("select", parents=[common], help="k-means elimination over k values")
    s.add_argument("--importance", help="importance CSV (feature,score)")
    sub.add_parser("pipeline", parents=[common], help="run the full selection experiment")
    v = sub.add_parser("validate", parents=[common], help="run the comparison experiments")
    v.add_argument("--best", help="JSON file with an 'indices' list overriding the best subset")
    r = sub.add_parser("report", parents=[common], help="re-emit tables and figures")
    r.add_argument("--report", help="pipeline_report.json")
    return p

def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    opt = lambda name: getattr(args, name, None)  # noqa: E731
    logging.basicConfig(level=logging.INFO if opt("verbose") else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(opt("config"), opt("profile"), seed=opt("seed"), out_dir=opt("out"))
        COMMANDS[args.command](cfg, args)
    except IgSelectError as exc:
        print(f"igselect: error: {exc}", file=sys.stderr)
        return 2
    return 0

if __name__ == "__main__":
    sys.exit(main())
