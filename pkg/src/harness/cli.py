"""Command-line entry point: ``harness {simulate,fit,predict,evaluate,replicate}``.

Exit codes: 0 success, 2 config error, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import replace

from .data import SplitSpec, read_dataset_csv, temporal_split, write_dataset_csv
from .errors import ConfigError, DataError, HarnessError
from .experiment import ExperimentConfig, apply_overrides, run_experiment
from .io import read_scores_csv, write_scores_csv
from .metrics import reports_to_csv, stratified_report
from .model import HarnessModel, file_sha256
from .simulate import SimConfig, generate_dataset

log = logging.getLogger("harness")


def _variant(args) -> str:
    if args.no_group:
        return "no_group"
    return "no_order" if args.no_order else "harness"


def _config_tree(args) -> dict:
    tree = {"seed": 0}
    if getattr(args, "config", None):
        try:
            with open(args.config) as fh:
                tree = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{args.config}: invalid JSON ({exc})") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
    tree = apply_overrides(tree, args.set or ())
    if getattr(args, "seed", None) is not None:
        tree["seed"] = args.seed
    return tree


def cmd_simulate(args) -> int:
    cfg = SimConfig(n=args.n, p=args.p, groups=args.groups, years=args.years)
    sim = generate_dataset(cfg, args.setting, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    write_dataset_csv(sim.dataset, os.path.join(args.out_dir, "data.csv"))
    sim.write_sidecar(os.path.join(args.out_dir, "simulation.json"))
    if args.split:
        parts = temporal_split(sim.dataset, SplitSpec(args.train_fraction, args.prospective_years, args.seed))
        for name, part in zip(("train", "retro", "prospective"), parts):
            write_dataset_csv(part, os.path.join(args.out_dir, f"{name}.csv"))
    log.info("wrote simulated data to %s", args.out_dir)
    return 0


def cmd_fit(args) -> int:
    tree = _config_tree(args)
    tree.pop("sim", None)
    tree.setdefault("paths", {})["data_in"] = args.data
    config = ExperimentConfig.from_dict(tree)
    train = read_dataset_csv(args.data)
    optimizer = replace(config.optimizer, seed=config.seed)
    model = HarnessModel(optimizer, config.solver, replace(config.dnr, seed=config.seed), _variant(args))
    model.fit(train)
    model.train_source = {"path": os.path.abspath(args.data), "sha256": file_sha256(args.data)}
    model.save(args.model)
    if args.trace:
        model.trace.write_jsonl(args.trace)
    log.info("final single-draw loss %.6g", model.trace.losses[-1] if model.trace.losses else float("nan"))
    return 0


def cmd_predict(args) -> int:
    model = HarnessModel.load(args.model)
    src = model.train_source
    train_path = args.train or src.get("path")
    if not train_path or not os.path.exists(train_path):
        raise DataError(f"training data {train_path!r} not found; pass --train")
    if src.get("sha256") and file_sha256(train_path) != src["sha256"]:
        raise DataError(f"{train_path} does not match the training data recorded in the model")
    model.attach_training_data(read_dataset_csv(train_path, model.hierarchy))
    test = read_dataset_csv(args.data, model.hierarchy)
    write_scores_csv(args.out, test.ids, model.decision_function(test))
    return 0


def cmd_evaluate(args) -> int:
    data = read_dataset_csv(args.data)
    ids, scores = read_scores_csv(args.scores)
    pos = {int(i): k for k, i in enumerate(data.ids)}
    missing = [i for i in ids if i not in pos]
    if missing or len(ids) != data.n:
        raise DataError("scores and data do not cover the same sample ids")
    order = [pos[int(i)] for i in ids]
    sub = data.subset(order)
    reports = stratified_report(scores, sub.y, sub.group_labels, args.min_group_size)
    with open(args.out, "w") as fh:
        json.dump([r.to_dict() for r in reports], fh, indent=1, sort_keys=True)
    if args.csv:
        reports_to_csv(reports, args.csv)
    overall = reports[0]
    print(f"overall n={overall.n} auroc={overall.auroc:.4f} prauc={overall.prauc:.4f}")
    return 0


def cmd_replicate(args) -> int:
    tree = _config_tree(args)
    if args.no_group or args.no_order:
        tree["variants"] = [_variant(args)]
    config = ExperimentConfig.from_dict(tree)
    report = run_experiment(config, args.replicates, args.out_dir, args.workers)
    for variant, splits in report["summary"].items():
        for split in ("retro", "prospective"):
            auc = splits.get(split, {}).get("overall", {}).get("auroc", {})
            if auc.get("mean") is not None:
                print(f"{variant:9s} {split:11s} auroc mean={auc['mean']:.4f} sd={auc['sd']:.4f}")
    for f in report["failures"]:
        print(f"failed: replicate {f['replicate']} stage {f['stage']}: {f['error']}: {f['message']}", file=sys.stderr)
    return report["failures"][0]["exit_code"] if report["failures"] else 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="harness", description="Heterogeneity-aware kernel logistic regression.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="write a simulated dataset as CSV")
    s.add_argument("--setting", type=int, default=1, choices=(1, 2, 3, 4))
    s.add_argument("--n", type=int, default=5000)
    s.add_argument("--p", type=int, default=100)
    s.add_argument("--groups", type=int, default=5)
    s.add_argument("--years", type=int, default=10)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out-dir", required=True)
    s.add_argument("--split", action="store_true", help="also write train/retro/prospective CSVs")
    s.add_argument("--train-fraction", type=float, default=0.7)
    s.add_argument("--prospective-years", type=int, default=1)
    s.set_defaults(func=cmd_simulate)

    def common(sp):
        sp.add_argument("--config", help="JSON experiment config")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override, e.g. optimizer.iterations=50")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--no-group", action="store_true", help="freeze the group multiplier off (and tie orders)")
        sp.add_argument("--no-order", action="store_true", help="tie order-specific importances to 1")

    f = sub.add_parser("fit", help="optimize kernel parameters on a training CSV")
    common(f)
    f.add_argument("--data", required=True)
    f.add_argument("--model", required=True, help="output model JSON")
    f.add_argument("--trace", help="optional JSON-lines training trace")
    f.set_defaults(func=cmd_fit)

    pr = sub.add_parser("predict", help="score a CSV with a fitted model (D&R)")
    pr.add_argument("--model", required=True)
    pr.add_argument("--data", required=True)
    pr.add_argument("--train", help="training CSV, if not at the path recorded in the model")
    pr.add_argument("--out", required=True)
    pr.set_defaults(func=cmd_predict)

    e = sub.add_parser("evaluate", help="overall and per-group AUROC/PRAUC")
    e.add_argument("--scores", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", required=True, help="metrics JSON")
    e.add_argument("--csv", help="optional metrics CSV")
    e.add_argument("--min-group-size", type=int, default=100)
    e.set_defaults(func=cmd_evaluate)

    r = sub.add_parser("replicate", help="full pipeline over seeded replicates")
    common(r)
    r.add_argument("--replicates", type=int, default=1)
    r.add_argument("--out-dir")
    r.add_argument("--workers", type=int, default=1)
    r.set_defaults(func=cmd_replicate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except HarnessError as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return exc.exit_code


if __name__ == "__main__":
    sys.exit(main())
