"""Declarative experiment configs and the replicate pipeline.

A config is a JSON tree with the sections below; every key is optional
except ``seed``. Unknown keys are rejected so typos fail loudly.

::

    {
      "seed": 0,
      "paths": {"data_in": null, "out_dir": "runs/example"},
      "sim": {"setting": 1, "n": 5000, "p": 100, "groups": 5, "years": 10,
              "base_var": 0.1, "group_var": 5.0, "year_var": 0.1, "first_year": 1},
      "split": {"train_fraction": 0.7, "prospective_years": 1},
      "kernel": {"kind": "auto", "Q": 2, "Q_g": null, "jitter": 1e-8},
      "solver": {"max_iter": 50, "tol": 1e-8, "damping": 0.5, "lam": 1.0},
      "optimizer": {"iterations": 200, "batch_size": 256, "holdout_size": null,
                    "learning_rate": 0.01, "method": "unrolled_newton",
                    "unrolled_steps": 10, "fd_step": 1e-4, "snapshot_every": 50},
      "dnr": {"D": null, "n_jobs": 1},
      "metrics": {"min_group_size": 100},
      "variants": ["harness"],
      "outputs": {"heatmap": false, "heatmap_size": 250, "models": true, "traces": true}
    }

``sim`` and ``paths.data_in`` are mutually exclusive. Replicate ``r`` uses
seed ``seed + r`` for simulation, splitting, SGD draws and D&R partitions.
"""

from __future__ import annotations

import copy
import json
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Optional

import numpy as np

from .baseline import LinearLogisticBaseline
from .data import ScalingSpec, SplitSpec, read_dataset_csv, scale_split, temporal_split
from .dnr import DnrConfig, dnr_predict
from .errors import ConfigError, HarnessError
from .hyperopt import OptimizerConfig, train_sgd
from .kernel import KINDS
from .klr import SolverConfig
from .metrics import (heterogeneity_report, importance_matrix, kernel_heatmap, reports_to_csv,
                      stratified_report)
from .model import VARIANTS, file_sha256, variant_optimizer
from .simulate import SimConfig, generate_dataset

ALL_VARIANTS = tuple(VARIANTS) + ("baseline",)
_SCORE_KEYS = ("auroc", "prauc")


@dataclass(frozen=True)
class KernelConfig:
    kind: str = "auto"  # "auto" or a univariate kernel for all non-binary columns
    Q: int = 2
    Q_g: Optional[int] = None
    jitter: float = 1e-8

    def __post_init__(self):
        if self.kind != "auto" and self.kind not in KINDS:
            raise ConfigError(f"kernel.kind must be 'auto' or one of {KINDS}")
        if self.jitter < 0:
            raise ConfigError("kernel.jitter must be non-negative")

    def kinds(self, scaling: ScalingSpec) -> tuple:
        auto = scaling.kinds()
        if self.kind == "auto":
            return auto
        return tuple(k if k == "centered_linear" and (b or c) else self.kind
                     for k, b, c in zip(auto, scaling.binary, scaling.constant))


@dataclass(frozen=True)
class OutputConfig:
    heatmap: bool = False
    heatmap_size: int = 250
    models: bool = True
    traces: bool = True


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int
    data_in: Optional[str] = None
    out_dir: str = "runs/experiment"
    sim: Optional[dict] = None  # SimConfig fields plus "setting"
    split: SplitSpec = SplitSpec()
    kernel: KernelConfig = KernelConfig()
    solver: SolverConfig = SolverConfig()
    optimizer: OptimizerConfig = OptimizerConfig()
    dnr: DnrConfig = DnrConfig()
    min_group_size: int = 100
    variants: tuple = ("harness",)
    outputs: OutputConfig = field(default_factory=OutputConfig)

    def __post_init__(self):
        if (self.sim is None) == (self.data_in is None):
            raise ConfigError("exactly one of 'sim' and 'paths.data_in' must be given")
        if self.data_in is not None and not os.path.exists(self.data_in):
            raise ConfigError(f"data file not found: {self.data_in}")
        bad = [v for v in self.variants if v not in ALL_VARIANTS]
        if bad or not self.variants:
            raise ConfigError(f"variants must be a non-empty subset of {ALL_VARIANTS}, got {list(self.variants)}")
        if self.sim is not None:
            self.sim_config()  # validate eagerly
        if self.min_group_size < 1:
            raise ConfigError("metrics.min_group_size must be positive")

    def sim_config(self) -> tuple:
        sim = dict(self.sim)
        setting = sim.pop("setting", 1)
        if setting not in (1, 2, 3, 4):
            raise ConfigError(f"unknown simulation setting {setting}; expected 1-4")
        try:
            return SimConfig(**sim), setting
        except TypeError as exc:
            raise ConfigError(f"bad sim config: {exc}") from exc

    # -- (de)serialization --------------------------------------------------
    @classmethod
    def from_dict(cls, tree: dict) -> "ExperimentConfig":
        tree = copy.deepcopy(tree)
        known = {"seed", "paths", "sim", "split", "kernel", "solver", "optimizer", "dnr", "metrics", "variants",
                 "outputs"}
        unknown = set(tree) - known
        if unknown:
            raise ConfigError(f"unknown config sections: {sorted(unknown)}")
        if "seed" not in tree or not isinstance(tree["seed"], int):
            raise ConfigError("config needs an integer 'seed'")
        paths = _section(tree, "paths", {"data_in", "out_dir"})
        kernel = _build(KernelConfig, _section(tree, "kernel"))
        opt_keys = {"iterations", "batch_size", "holdout_size", "learning_rate", "method", "unrolled_steps",
                    "fd_step", "snapshot_every"}
        opt = _section(tree, "optimizer", opt_keys)
        optimizer = _build(OptimizerConfig, dict(opt, Q=kernel.Q, Q_g=kernel.Q_g, jitter=kernel.jitter))
        solver = _build(SolverConfig, _section(tree, "solver"))
        dnr = _section(tree, "dnr", {"D", "n_jobs"})
        metrics = _section(tree, "metrics", {"min_group_size"})
        return cls(
            seed=tree["seed"],
            data_in=paths.get("data_in"),
            out_dir=paths.get("out_dir", "runs/experiment"),
            sim=tree.get("sim"),
            split=_build(SplitSpec, _section(tree, "split", {"train_fraction", "prospective_years"})),
            kernel=kernel,
            solver=solver,
            optimizer=optimizer,
            dnr=_build(DnrConfig, dict(dnr, solver=solver, jitter=kernel.jitter)),
            min_group_size=metrics.get("min_group_size", 100),
            variants=tuple(tree.get("variants", ("harness",))),
            outputs=_build(OutputConfig, _section(tree, "outputs")),
        )

    def to_dict(self) -> dict:
        opt = asdict(self.optimizer)
        for k in ("seed", "Q", "Q_g", "jitter", "freeze_group", "tie_order"):
            opt.pop(k)
        tree = {
            "seed": self.seed,
            "paths": {"data_in": self.data_in, "out_dir": self.out_dir},
            "split": {"train_fraction": self.split.train_fraction, "prospective_years": self.split.prospective_years},
            "kernel": asdict(self.kernel),
            "solver": asdict(self.solver),
            "optimizer": opt,
            "dnr": {"D": self.dnr.D, "n_jobs": self.dnr.n_jobs},
            "metrics": {"min_group_size": self.min_group_size},
            "variants": list(self.variants),
            "outputs": asdict(self.outputs),
        }
        if self.sim is not None:
            tree["sim"] = dict(self.sim)
        return tree

    @classmethod
    def load(cls, path, overrides=()) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                tree = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
        except OSError as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(apply_overrides(tree, overrides))


def _section(tree: dict, name: str, allowed=None) -> dict:
    sec = tree.get(name) or {}
    if not isinstance(sec, dict):
        raise ConfigError(f"section {name!r} must be an object")
    if allowed is not None and set(sec) - set(allowed):
        raise ConfigError(f"unknown keys in {name!r}: {sorted(set(sec) - set(allowed))}")
    return sec


def _build(cls, values: dict):
    names = {f.name for f in fields(cls)}
    unknown = set(values) - names
    if unknown:
        raise ConfigError(f"unknown keys for {cls.__name__}: {sorted(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def apply_overrides(tree: dict, overrides) -> dict:
    """Apply ``section.key=value`` overrides; values are parsed as JSON when possible."""
    tree = copy.deepcopy(tree)
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not of the form key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = tree
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(f"override {key!r} descends into a non-object")
        node[parts[-1]] = value
    return tree


# -- pipeline ---------------------------------------------------------------

class StageFailure(Exception):
    def __init__(self, stage, exc):
        super().__init__(f"{stage}: {exc}")
        self.stage = stage
        self.exc = exc


def _stage(name, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except Exception as exc:  # recorded, never swallowed silently
        raise StageFailure(name, exc) from exc


def _failure(replicate, stage, exc) -> dict:
    code = exc.exit_code if isinstance(exc, HarnessError) else 1
    return {"replicate": replicate, "stage": stage, "error": type(exc).__name__, "message": str(exc),
            "exit_code": code}


def load_replicate_data(config: ExperimentConfig, seed: int):
    """Return ``(dataset, sim_result_or_None)`` for one replicate."""
    if config.sim is not None:
        sim_cfg, setting = config.sim_config()
        sim = generate_dataset(sim_cfg, setting, seed)
        return sim.dataset, sim
    return read_dataset_csv(config.data_in), None


def _score_blocks(scores: dict, parts: dict, min_size: int) -> dict:
    return {name: [r.to_dict() for r in stratified_report(scores[name], parts[name].y, parts[name].group_labels,
                                                           min_size)]
            for name in ("retro", "prospective")}


def run_replicate(config: ExperimentConfig, replicate: int, out_dir: Optional[str] = None) -> dict:
    """One replicate of the full pipeline; returns metrics and recorded failures."""
    seed = config.seed + replicate
    rdir = os.path.join(out_dir, f"rep{replicate:03d}") if out_dir else None
    if rdir:
        os.makedirs(rdir, exist_ok=True)
    result = {"replicate": replicate, "seed": seed, "variants": {}, "failures": []}
    try:
        stage = "simulate" if config.sim is not None else "load"
        data, sim = _stage(stage, load_replicate_data, config, seed)
        if rdir and sim is not None:
            sim.write_sidecar(os.path.join(rdir, "simulation.json"))
        train, retro, pro = _stage("split", temporal_split, data, replace(config.split, seed=seed))
        train, retro, pro, scaling = _stage("scale", scale_split, train, retro, pro)
    except StageFailure as f:
        result["failures"].append(_failure(replicate, f.stage, f.exc))
        return result
    result["sizes"] = {"train": train.n, "retro": retro.n, "prospective": pro.n}
    kinds = config.kernel.kinds(scaling)
    parts = {"retro": retro, "prospective": pro}
    for variant in config.variants:
        vdir = os.path.join(rdir, variant) if rdir else None
        if vdir:
            os.makedirs(vdir, exist_ok=True)
        try:
            result["variants"][variant] = _run_variant(config, variant, seed, train, parts, scaling, kinds, vdir)
        except StageFailure as f:
            result["failures"].append(_failure(replicate, f"{f.stage}:{variant}", f.exc))
    return result


def _run_variant(config, variant, seed, train, parts, scaling, kinds, vdir) -> dict:
    if variant == "baseline":
        model = _stage("train", LinearLogisticBaseline(seed=seed).fit, train)
        scores = {k: _stage("predict", model.decision_function, d) for k, d in parts.items()}
        blocks = _stage("evaluate", _score_blocks, scores, parts, config.min_group_size)
        if vdir:
            _write_scores(vdir, scores, parts)
            _write_reports(vdir, blocks)
        return blocks

    opt = replace(variant_optimizer(config.optimizer, variant), seed=seed)
    trace = _stage("train", train_sgd, train, opt, config.solver, kinds)
    params, params_g = trace.params
    dnr = replace(config.dnr, seed=seed)
    scores = {k: _stage("predict", dnr_predict, train, d, params, params_g, dnr, kinds) for k, d in parts.items()}
    blocks = _stage("evaluate", _score_blocks, scores, parts, config.min_group_size)
    if vdir:
        _stage("report", _write_variant_outputs, config, variant, opt, trace, train, scaling, kinds, scores, parts,
               blocks, vdir, seed)
    return blocks


def _write_scores(vdir, scores, parts):
    from .io import write_scores_csv

    for k, d in parts.items():
        write_scores_csv(os.path.join(vdir, f"scores_{k}.csv"), d.ids, scores[k])


def _write_reports(vdir, blocks):
    from .metrics import MetricReport

    for k, rows in blocks.items():
        reports_to_csv([MetricReport(**r) for r in rows], os.path.join(vdir, f"metrics_{k}.csv"))


def _write_variant_outputs(config, variant, opt, trace, train, scaling, kinds, scores, parts, blocks, vdir, seed):
    from .io import save_model_dict

    params, params_g = trace.params
    _write_scores(vdir, scores, parts)
    _write_reports(vdir, blocks)
    if config.outputs.traces:
        trace.write_jsonl(os.path.join(vdir, "trace.jsonl"))
    if config.outputs.models:
        save_model_dict(os.path.join(vdir, "model.json"), variant=variant, params=params, params_g=params_g,
                        unconstrained=trace.final, scaling=scaling, hierarchy=train.hierarchy, optimizer=opt,
                        solver=config.solver, dnr=replace(config.dnr, seed=seed),
                        train_source={"replicate_seed": seed, "split": "train"})
    names = [f"x{j + 1}" for j in range(train.p)]
    importance_matrix(params, names).to_csv(os.path.join(vdir, "importance.csv"))
    het = heterogeneity_report(params_g, train.design.column_names())
    with open(os.path.join(vdir, "heterogeneity.json"), "w") as fh:
        json.dump(het, fh, indent=1, sort_keys=True)
    if config.outputs.heatmap:
        size = min(config.outputs.heatmap_size, train.n)
        pick = np.sort(np.random.default_rng(np.random.SeedSequence([seed, 3])).choice(train.n, size, replace=False))
        kernel_heatmap(train.subset(pick), params, params_g, kinds, os.path.join(vdir, "heatmap.csv"))


def _mean_sd(values) -> dict:
    v = np.asarray([x for x in values if x is not None], dtype=float)
    if v.size == 0:
        return {"mean": None, "sd": None, "count": 0}
    sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
    return {"mean": float(np.mean(v)), "sd": sd, "count": int(v.size)}


def summarize(replicates: list) -> dict:
    """Mean and sd across replicates of every (variant, split, scope, metric)."""
    pool: dict = {}
    for rep in replicates:
        for variant, blocks in rep["variants"].items():
            for split, rows in blocks.items():
                for row in rows:
                    for key in _SCORE_KEYS:
                        pool.setdefault(variant, {}).setdefault(split, {}).setdefault(row["scope"], {}) \
                            .setdefault(key, []).append(row[key])
    return {v: {s: {scope: {k: _mean_sd(vals) for k, vals in m.items()} for scope, m in sc.items()}
                for s, sc in splits.items()} for v, splits in pool.items()}


def run_experiment(config: ExperimentConfig, replicates: int = 1, out_dir: Optional[str] = None,
                   workers: int = 1) -> dict:
    """Run ``replicates`` independent replicates and write the report bundle.

    Writes ``config.json`` (resolved config), ``metrics.json`` (per-replicate
    and aggregate metrics, no timings) and per-replicate artifacts under
    ``out_dir``. Returns the metrics dict.
    """
    if replicates < 1:
        raise ConfigError("replicates must be at least 1")
    out_dir = out_dir if out_dir is not None else config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    resolved = config.to_dict()
    with open(os.path.join(out_dir, "config.json"), "w") as fh:
        json.dump(resolved, fh, indent=1, sort_keys=True)
    if workers > 1:
        with ProcessPoolExecutor(workers) as pool:
            reps = list(pool.map(run_replicate, [config] * replicates, range(replicates), [out_dir] * replicates))
    else:
        reps = [run_replicate(config, r, out_dir) for r in range(replicates)]
    report = {
        "config": resolved,
        "seed": config.seed,
        "replicates": reps,
        "summary": summarize(reps),
        "failures": [f for r in reps for f in r["failures"]],
    }
    if config.data_in is not None:
        report["data_sha256"] = file_sha256(config.data_in)
    with open(os.path.join(out_dir, "metrics.json"), "w") as fh:
        json.dump(report, fh, indent=1, sort_keys=True)
    return report
