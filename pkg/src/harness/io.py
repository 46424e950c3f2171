"""File formats: model JSON and score CSVs."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict

import numpy as np
from scipy.special import expit

MODEL_FORMAT = "harness-model/1"


def model_dict(*, variant, params, params_g, unconstrained, scaling, hierarchy, optimizer, solver, dnr,
               train_source=None) -> dict:
    return {
        "format": MODEL_FORMAT,
        "variant": variant,
        "params": params.to_dict(),
        "params_g": params_g.to_dict(),
        "unconstrained": unconstrained.to_dict(),
        "scaling": scaling.to_dict(),
        "hierarchy": hierarchy.to_dict(),
        "optimizer": asdict(optimizer),
        "solver": asdict(solver),
        "dnr": {"D": dnr.D, "seed": dnr.seed, "n_jobs": dnr.n_jobs},
        "train_source": train_source or {},
    }


def save_model_dict(path, **kwargs) -> None:
    with open(path, "w") as fh:
        json.dump(model_dict(**kwargs), fh, indent=1)


def write_scores_csv(path, ids, scores) -> None:
    """One row per sample: id, latent score, probability."""
    scores = np.asarray(scores, dtype=float)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "score", "probability"])
        for i, s, pr in zip(ids, scores, expit(scores)):
            w.writerow([int(i), repr(float(s)), repr(float(pr))])


def read_scores_csv(path) -> tuple:
    """Return ``(ids, scores)`` from a file written by :func:`write_scores_csv`."""
    ids, scores = [], []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            ids.append(int(row["id"]))
            scores.append(float(row["score"]))
    return np.asarray(ids, dtype=int), np.asarray(scores)
