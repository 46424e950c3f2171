"""Fit/predict wrapper tying scaling, SGD training and D&R prediction together."""

from __future__ import annotations

import hashlib
import json
from dataclasses import replace
from typing import Optional

import numpy as np

from .data import Dataset, GroupHierarchy, ScalingSpec, scale_covariates
from .dnr import DnrConfig, dnr_predict
from .errors import ConfigError
from .io import MODEL_FORMAT, model_dict
from .hyperopt import OptimizerConfig, TrainTrace, UnconstrainedParams, train_sgd
from .kernel import GroupKernelParams, KernelParams
from .klr import SolverConfig

VARIANTS = {
    "harness": {},
    "no_order": {"tie_order": True},
    "no_group": {"freeze_group": True, "tie_order": True},
}


def variant_optimizer(config: OptimizerConfig, variant: str) -> OptimizerConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown variant {variant!r}; expected one of {sorted(VARIANTS)}")
    return replace(config, **VARIANTS[variant])


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class HarnessModel:
    """Trained kernel parameters plus everything needed to score new data.

    ``fit`` takes raw (unscaled) covariates; the scaling is fitted on the
    training data and reused unchanged for every later ``decision_function``.
    """

    def __init__(self, optimizer: OptimizerConfig = OptimizerConfig(), solver: SolverConfig = SolverConfig(),
                 dnr: DnrConfig = DnrConfig(), variant: str = "harness"):
        self.optimizer = variant_optimizer(optimizer, variant)
        self.solver = solver
        self.dnr = replace(dnr, solver=solver, jitter=optimizer.jitter)
        self.variant = variant
        self.scaling: Optional[ScalingSpec] = None
        self.params: Optional[KernelParams] = None
        self.params_g: Optional[GroupKernelParams] = None
        self.unconstrained: Optional[UnconstrainedParams] = None
        self.hierarchy: Optional[GroupHierarchy] = None
        self.trace: Optional[TrainTrace] = None
        self.train_: Optional[Dataset] = None
        self.train_source: dict = {}

    @property
    def kinds(self):
        return self.scaling.kinds()

    def fit(self, train: Dataset, scaled: bool = False, scaling: Optional[ScalingSpec] = None) -> "HarnessModel":
        if scaled:
            if scaling is None:
                raise ConfigError("pass the ScalingSpec used for pre-scaled training data")
            self.scaling = scaling
        else:
            X, self.scaling = scale_covariates(train.X)
            train = train.with_X(X)
        self.hierarchy = train.hierarchy
        self.trace = train_sgd(train, self.optimizer, self.solver, self.kinds)
        self.unconstrained = self.trace.final
        self.params, self.params_g = self.trace.params
        self.train_ = train
        return self

    def _scaled(self, data: Dataset) -> Dataset:
        return data.with_X(self.scaling.apply(data.X))

    def decision_function(self, test: Dataset, scaled: bool = False) -> np.ndarray:
        if self.params is None or self.train_ is None:
            raise ConfigError("model is not fitted (or training data not attached)")
        test = test if scaled else self._scaled(test)
        return dnr_predict(self.train_, test, self.params, self.params_g, self.dnr, self.kinds)

    def predict_proba(self, test: Dataset, scaled: bool = False) -> np.ndarray:
        from scipy.special import expit

        return expit(self.decision_function(test, scaled))

    def attach_training_data(self, raw_train: Dataset) -> None:
        self.train_ = self._scaled(raw_train)

    def to_dict(self) -> dict:
        return model_dict(variant=self.variant, params=self.params, params_g=self.params_g,
                          unconstrained=self.unconstrained, scaling=self.scaling, hierarchy=self.hierarchy,
                          optimizer=self.optimizer, solver=self.solver, dnr=self.dnr, train_source=self.train_source)

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)

    @classmethod
    def from_dict(cls, d: dict) -> "HarnessModel":
        if d.get("format") != MODEL_FORMAT:
            raise ConfigError("unrecognized model file format")
        solver = SolverConfig(**d["solver"])
        opt = OptimizerConfig(**d["optimizer"])
        model = cls(opt, solver, DnrConfig(**d["dnr"]), d["variant"])
        model.params = KernelParams.from_dict(d["params"])
        model.params_g = GroupKernelParams.from_dict(d["params_g"])
        model.unconstrained = UnconstrainedParams.from_dict(d["unconstrained"])
        model.scaling = ScalingSpec.from_dict(d["scaling"])
        model.hierarchy = GroupHierarchy.from_dict(d["hierarchy"])
        model.train_source = d.get("train_source", {})
        return model

    @classmethod
    def load(cls, path) -> "HarnessModel":
        try:
            with open(path) as fh:
                return cls.from_dict(json.load(fh))
        except (OSError, json.JSONDecodeError, KeyError) as exc:
            raise ConfigError(f"cannot load model {path}: {exc}") from exc
