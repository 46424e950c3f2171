"""Ranking metrics, stratified reports, importance summaries and kernel heatmap export."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass
from typing import Optional, Sequence

import numpy as np
from scipy.stats import rankdata

from .data import Dataset
from .errors import ShapeError, UndefinedMetricError
from .kernel import HarnessGram, KernelParams


def _aligned(scores, labels):
    scores = np.asarray(scores, dtype=float).ravel()
    labels = np.asarray(labels, dtype=float).ravel()
    if scores.shape != labels.shape:
        raise ShapeError("scores and labels must have the same length")
    return scores, labels


def auroc(scores, labels) -> float:
    """Mann-Whitney AUROC for +-1 labels, ties counted one half."""
    scores, labels = _aligned(scores, labels)
    pos = labels > 0
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUROC needs at least one positive and one negative label")
    ranks = rankdata(scores)
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def prauc(scores, labels) -> float:
    """Average precision; ties broken by descending score, then ascending index."""
    scores, labels = _aligned(scores, labels)
    pos = labels > 0
    n_pos = int(pos.sum())
    if n_pos == 0:
        raise UndefinedMetricError("PRAUC needs at least one positive label")
    order = np.lexsort((np.arange(scores.size), -scores))
    hits = pos[order]
    tp = np.cumsum(hits)
    precision = tp / np.arange(1, scores.size + 1)
    return float(np.sum(precision[hits]) / n_pos)


@dataclass
class MetricReport:
    scope: str
    n: int
    auroc: Optional[float]
    prauc: Optional[float]
    positive_rate: Optional[float]
    skipped: Optional[str] = None

    def to_dict(self) -> dict:
        return asdict(self)


def _report(scope, scores, labels, min_size=0) -> MetricReport:
    n = int(len(labels))
    rate = float(np.mean(labels > 0)) if n else None
    if n < min_size:
        return MetricReport(scope, n, None, None, rate, skipped="below minimum size")
    try:
        return MetricReport(scope, n, auroc(scores, labels), prauc(scores, labels), rate)
    except UndefinedMetricError:
        return MetricReport(scope, n, None, None, rate, skipped="single class")


def stratified_report(scores, labels, group_labels, min_group_size: int = 100) -> list:
    """Overall metrics plus one entry per level-1 and level-2 group.

    Level-k groups are the joint (level-1, ..., level-k) label tuples. Groups
    smaller than ``min_group_size`` or with a single outcome class are listed
    with a ``skipped`` reason instead of metrics.
    """
    scores, labels = _aligned(scores, labels)
    groups = np.asarray(group_labels)
    if groups.ndim == 1:
        groups = groups[:, None]
    if groups.shape[0] != scores.size:
        raise ShapeError("group labels must align with scores")
    out = [_report("overall", scores, labels)]
    for level in range(1, min(groups.shape[1], 2) + 1):
        keys = groups[:, :level]
        for key in np.unique(keys, axis=0):
            mask = np.all(keys == key, axis=1)
            scope = f"level{level}:g" + "-".join(str(int(v) + 1) for v in key)
            out.append(_report(scope, scores[mask], labels[mask], min_group_size))
    return out


def reports_to_csv(reports: Sequence[MetricReport], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["scope", "n", "auroc", "prauc", "positive_rate", "skipped"])
        for r in reports:
            w.writerow([r.scope, r.n, r.auroc, r.prauc, r.positive_rate, r.skipped or ""])


@dataclass
class ImportanceMatrix:
    values: np.ndarray
    names: tuple

    def to_csv(self, path) -> None:
        write_matrix_csv(path, self.values, self.names, self.names)


def importance_matrix(params: KernelParams, names=None) -> ImportanceMatrix:
    """One-way importance on the diagonal, two-way importance off it."""
    w = params.order_weights()
    eta2 = params.eta ** 2
    diag = eta2[1] * w[:, 0]
    if params.Q >= 2:
        M = eta2[2] * np.outer(w[:, 1], w[:, 1])
    else:
        M = np.zeros((params.p, params.p))
    np.fill_diagonal(M, diag)
    names = tuple(names) if names is not None else tuple(f"x{j + 1}" for j in range(params.p))
    return ImportanceMatrix(M, names)


def heterogeneity_report(params_g: KernelParams, column_names=None) -> dict:
    """Per-group-column heterogeneity and the global per-order shares."""
    w = params_g.order_weights()
    eta2 = params_g.eta ** 2
    names = column_names if column_names is not None else [f"z{j + 1}" for j in range(params_g.p)]
    rows = []
    for j in range(params_g.p):
        row = {"column": names[j], "kappa": float(params_g.kappa[j])}
        for q in range(1, params_g.Q + 1):
            row[f"order{q}"] = float(eta2[q] * w[j, q - 1])
        rows.append(row)
    return {"rows": rows, "global": {f"eta{q}_sq": float(eta2[q]) for q in range(params_g.Q + 1)}}


def write_matrix_csv(path, values, row_names, col_names) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([""] + [str(c) for c in col_names])
        for name, row in zip(row_names, np.asarray(values)):
            w.writerow([str(name)] + [repr(float(v)) for v in row])


def heatmap_order(dataset: Dataset) -> np.ndarray:
    """Sample order by level-1 group, then level-2 group, then id."""
    g = dataset.group_labels
    keys = [dataset.ids] + [g[:, k] for k in range(min(g.shape[1], 2) - 1, -1, -1)]
    return np.lexsort(keys)


def kernel_heatmap(dataset: Dataset, params: KernelParams, params_g: KernelParams, kinds=None, path=None,
                   jitter: float = 0.0):
    """Self-Gram of ``dataset`` in heatmap order; optionally written as CSV.

    Returns ``(K_sorted, order)``.
    """
    order = heatmap_order(dataset)
    ds = dataset.subset(order)
    K = HarnessGram(ds.X, ds.Z, params, params_g, kinds, jitter=jitter).values
    if path is not None:
        ids = [int(i) for i in ds.ids]
        write_matrix_csv(path, K, ids, ids)
        meta = {"order": ids, "group_labels": ds.group_labels.tolist(), "sorted_by": ["level1", "level2", "id"]}
        with open(str(path) + ".json", "w") as fh:
            json.dump(meta, fh)
    return K, order


def block_means(K, labels) -> tuple:
    """Mean off-diagonal kernel value within and across groups of ``labels``."""
    K = np.asarray(K)
    labels = np.asarray(labels).ravel()
    same = labels[:, None] == labels[None, :]
    off = ~np.eye(K.shape[0], dtype=bool)
    return float(K[same & off].mean()), float(K[~same].mean())
