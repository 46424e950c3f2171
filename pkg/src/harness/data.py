"""Datasets, hierarchical group design matrices, covariate scaling and temporal splits."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, replace
from functools import cached_property
from typing import Optional

import numpy as np

from .errors import ConfigError, DataError, InvalidLabelError, NestingError, ShapeError, SplitError


@dataclass(frozen=True)
class GroupHierarchy:
    """Nested categorical structure of the groups.

    ``counts[k]`` is the number of label codes at level ``k`` (0-based codes).
    ``parents[k - 1]`` maps each level-``k`` code onto its level-``k-1`` code.
    ``None`` means codes at that level are local to their parent, so the
    category is the joint tuple (level-1, ..., level-k) and nesting holds by
    construction. A ``-1`` entry leaves that code unconstrained (e.g. a code
    never observed when the hierarchy was inferred).
    """

    counts: tuple
    parents: tuple = ()

    def __post_init__(self):
        counts = tuple(int(c) for c in self.counts)
        if len(counts) < 1:
            raise ConfigError("hierarchy needs at least one level")
        if any(c < 1 for c in counts):
            raise ConfigError(f"category counts must be positive, got {counts}")
        parents = tuple(self.parents) if self.parents else (None,) * (len(counts) - 1)
        if len(parents) != len(counts) - 1:
            raise ConfigError("need one parent map per level below the first")
        fixed = []
        for k, par in enumerate(parents, start=1):
            if par is None:
                fixed.append(None)
                continue
            par = tuple(int(v) for v in par)
            if len(par) != counts[k]:
                raise ConfigError(f"parent map for level {k + 1} has {len(par)} entries, expected {counts[k]}")
            if any(v < -1 or v >= counts[k - 1] for v in par):
                raise ConfigError(f"parent map for level {k + 1} points outside level {k}")
            fixed.append(par)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "parents", tuple(fixed))

    @property
    def levels(self) -> int:
        return len(self.counts)

    @property
    def block_sizes(self) -> list:
        return [math.prod(self.counts[: k + 1]) for k in range(self.levels)]

    @property
    def p_g(self) -> int:
        return sum(self.block_sizes)

    @classmethod
    def infer(cls, labels) -> "GroupHierarchy":
        """Smallest hierarchy consistent with observed 0-based labels.

        A level uses global codes (with a parent map) when every observed code
        has a single parent; otherwise codes are treated as parent-local.
        """
        labels = np.asarray(labels)
        if labels.ndim == 1:
            labels = labels[:, None]
        if labels.size == 0 or labels.min() < 0:
            raise InvalidLabelError("group labels must be non-negative integer codes")
        counts = tuple(int(labels[:, k].max()) + 1 for k in range(labels.shape[1]))
        parents = []
        for k in range(1, labels.shape[1]):
            par = -np.ones(counts[k], dtype=int)
            ok = True
            for code in range(counts[k]):
                seen = np.unique(labels[labels[:, k] == code, k - 1])
                if len(seen) > 1:
                    ok = False
                    break
                if len(seen) == 1:
                    par[code] = seen[0]
            parents.append(tuple(par) if ok else None)
        return cls(counts, tuple(parents))

    def to_dict(self) -> dict:
        return {"counts": list(self.counts), "parents": [None if p is None else list(p) for p in self.parents]}

    @classmethod
    def from_dict(cls, d: dict) -> "GroupHierarchy":
        return cls(tuple(d["counts"]), tuple(None if p is None else tuple(p) for p in d.get("parents", [])))


@dataclass(frozen=True)
class GroupDesign:
    Z: np.ndarray
    offsets: tuple
    hierarchy: GroupHierarchy

    @property
    def p_g(self) -> int:
        return self.Z.shape[1]

    def block(self, level: int) -> np.ndarray:
        """Columns of the 1-based ``level`` block."""
        lo = self.offsets[level - 1]
        hi = self.offsets[level] if level < len(self.offsets) else self.p_g
        return self.Z[:, lo:hi]

    def column_names(self) -> list:
        names = []
        for k, size in enumerate(self.hierarchy.block_sizes):
            for col in range(size):
                codes = np.unravel_index(col, self.hierarchy.counts[: k + 1])
                names.append("g" + "-".join(str(int(c) + 1) for c in codes))
        return names


def build_group_design(labels, hierarchy: GroupHierarchy) -> GroupDesign:
    """Indicator expansion of nested group labels.

    Block ``k`` is the row-wise Kronecker product of the one-hot codes of
    levels 1..k, so column ``(c1 * p2 + c2) * p3 + c3 ...`` of block 3 is set
    for a sample with codes (c1, c2, c3). Unrealized combinations stay as
    all-zero columns.
    """
    labels = np.asarray(labels)
    if labels.ndim == 1:
        labels = labels[:, None]
    if labels.ndim != 2 or labels.shape[1] != hierarchy.levels:
        raise ShapeError(f"labels must be n x {hierarchy.levels}, got shape {labels.shape}")
    if not np.issubdtype(labels.dtype, np.integer):
        if not np.all(np.equal(np.mod(labels, 1), 0)):
            raise InvalidLabelError("group labels must be integers")
        labels = labels.astype(np.int64)
    n = labels.shape[0]
    for k, count in enumerate(hierarchy.counts):
        bad = (labels[:, k] < 0) | (labels[:, k] >= count)
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise InvalidLabelError(f"sample {i}: level-{k + 1} label {labels[i, k]} outside [0, {count})")
    for k, par in enumerate(hierarchy.parents, start=1):
        if par is None:
            continue
        expected = np.asarray(par)[labels[:, k]]
        bad = (expected >= 0) & (expected != labels[:, k - 1])
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise NestingError(
                f"sample {i}: level-{k + 1} label {labels[i, k]} belongs to level-{k} "
                f"group {expected[i]}, not {labels[i, k - 1]}"
            )

    sizes = hierarchy.block_sizes
    offsets = tuple(int(o) for o in np.concatenate([[0], np.cumsum(sizes)[:-1]]))
    Z = np.zeros((n, sum(sizes)))
    joint = np.zeros(n, dtype=np.int64)
    for k, count in enumerate(hierarchy.counts):
        joint = joint * count + labels[:, k]
        Z[np.arange(n), offsets[k] + joint] = 1.0
    return GroupDesign(Z, offsets, hierarchy)


@dataclass(frozen=True)
class Dataset:
    """Covariates, group labels, year stamps and +-1 outcomes.

    ``ids`` are stable sample identifiers that survive subsetting.
    """

    X: np.ndarray
    group_labels: np.ndarray
    year: np.ndarray
    y: np.ndarray
    hierarchy: Optional[GroupHierarchy] = None
    ids: Optional[np.ndarray] = None
    feature_names: Optional[tuple] = None

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        if X.ndim != 2:
            raise ShapeError(f"X must be 2-d, got shape {X.shape}")
        n = X.shape[0]
        labels = np.asarray(self.group_labels)
        if labels.ndim == 1:
            labels = labels[:, None]
        labels = labels.astype(np.int64)
        year = np.asarray(self.year).astype(np.int64)
        y = np.array(self.y, dtype=float)
        if labels.shape[0] != n or year.shape != (n,) or y.shape != (n,):
            raise ShapeError("X, group_labels, year and y must share the sample dimension")
        if not np.all(np.isfinite(X)):
            raise DataError("covariates contain missing or non-finite values")
        if not np.all(np.isin(y, (-1.0, 1.0))):
            raise DataError("outcomes must be coded -1/+1")
        hierarchy = self.hierarchy
        if hierarchy is None:
            hierarchy = GroupHierarchy.infer(labels) if n else GroupHierarchy((1,) * labels.shape[1])
        if labels.shape[1] != hierarchy.levels:
            raise ShapeError("group_labels columns must match hierarchy levels")
        ids = np.arange(n) if self.ids is None else np.asarray(self.ids).astype(np.int64)
        if ids.shape != (n,):
            raise ShapeError("ids must have one entry per sample")
        names = tuple(self.feature_names) if self.feature_names is not None else tuple(f"x{j + 1}" for j in range(X.shape[1]))
        if len(names) != X.shape[1]:
            raise ShapeError("feature_names must have one entry per covariate")
        for name, val in (("X", X), ("group_labels", labels), ("year", year), ("y", y), ("hierarchy", hierarchy), ("ids", ids), ("feature_names", names)):
            object.__setattr__(self, name, val)
        for arr in (X, labels, year, y, ids):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @cached_property
    def design(self) -> GroupDesign:
        return build_group_design(self.group_labels, self.hierarchy)

    @property
    def Z(self) -> np.ndarray:
        return self.design.Z

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=np.int64)
        return Dataset(self.X[idx], self.group_labels[idx], self.year[idx], self.y[idx], self.hierarchy, self.ids[idx], self.feature_names)

    def with_X(self, X) -> "Dataset":
        return replace(self, X=np.asarray(X, dtype=float))


@dataclass(frozen=True)
class ScalingSpec:
    """Per-column min-max map onto [-1, 1]. Constant columns map to 0."""

    min: np.ndarray
    max: np.ndarray
    binary: np.ndarray
    constant: np.ndarray

    def apply(self, raw) -> np.ndarray:
        raw = np.asarray(raw, dtype=float)
        if raw.ndim != 2 or raw.shape[1] != self.min.shape[0]:
            raise ShapeError(f"expected {self.min.shape[0]} columns, got shape {raw.shape}")
        if not np.all(np.isfinite(raw)):
            raise DataError("covariates contain missing or non-finite values")
        half = (self.max - self.min) / 2.0
        mid = (self.max + self.min) / 2.0
        safe = np.where(self.constant, 1.0, half)
        out = (raw - mid) / safe
        # values inside the fitted range must land in [-1, 1] despite rounding
        inside = (raw >= self.min) & (raw <= self.max)
        out = np.where(inside, np.clip(out, -1.0, 1.0), out)
        out[:, self.constant] = 0.0
        return out

    def inverse(self, scaled) -> np.ndarray:
        scaled = np.asarray(scaled, dtype=float)
        half = (self.max - self.min) / 2.0
        mid = (self.max + self.min) / 2.0
        return scaled * half + mid

    def kinds(self) -> tuple:
        """Univariate kernel per column: binary and constant columns get the linear kernel."""
        return tuple("centered_linear" if (b or c) else "orthogonal_poly2" for b, c in zip(self.binary, self.constant))

    def to_dict(self) -> dict:
        return {"min": self.min.tolist(), "max": self.max.tolist(), "binary": self.binary.tolist(), "constant": self.constant.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingSpec":
        return cls(np.asarray(d["min"], float), np.asarray(d["max"], float), np.asarray(d["binary"], bool), np.asarray(d["constant"], bool))


def scale_covariates(raw) -> tuple:
    """Fit a :class:`ScalingSpec` on ``raw`` and return ``(scaled, spec)``."""
    raw = np.asarray(raw, dtype=float)
    if raw.ndim != 2 or raw.shape[0] < 1:
        raise ShapeError("need a non-empty 2-d covariate matrix")
    if not np.all(np.isfinite(raw)):
        raise DataError("covariates contain missing or non-finite values")
    lo = raw.min(axis=0)
    hi = raw.max(axis=0)
    constant = hi == lo
    binary = np.array([len(np.unique(raw[:, j])) == 2 for j in range(raw.shape[1])])
    spec = ScalingSpec(lo, hi, binary, constant)
    return spec.apply(raw), spec


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.7
    prospective_years: int = 1
    seed: int = 0

    def __post_init__(self):
        if not (0.0 < self.train_fraction <= 1.0):
            raise ConfigError(f"train_fraction must lie in (0, 1], got {self.train_fraction}")
        if self.prospective_years < 0:
            raise ConfigError("prospective_years must be non-negative")


def temporal_split(dataset: Dataset, spec: SplitSpec) -> tuple:
    """Hold out the trailing years, then split the rest at random.

    Returns ``(train, retro_test, prospective_test)``; each part keeps the
    original sample order.
    """
    years = np.unique(dataset.year)
    if len(years) < spec.prospective_years + 1:
        raise SplitError(f"need at least {spec.prospective_years + 1} distinct years, got {len(years)}")
    future = years[len(years) - spec.prospective_years:] if spec.prospective_years else years[:0]
    is_future = np.isin(dataset.year, future)
    hist = np.flatnonzero(~is_future)
    n_train = int(round(spec.train_fraction * len(hist)))
    perm = np.random.default_rng(spec.seed).permutation(hist)
    train_idx = np.sort(perm[:n_train])
    retro_idx = np.sort(perm[n_train:])
    return dataset.subset(train_idx), dataset.subset(retro_idx), dataset.subset(np.flatnonzero(is_future))


def scale_split(train: Dataset, *others: Dataset) -> tuple:
    """Scale ``train`` on its own ranges and apply the same map to ``others``."""
    scaled, spec = scale_covariates(train.X)
    out = [train.with_X(scaled)] + [d.with_X(spec.apply(d.X)) for d in others]
    return (*out, spec)


# CSV ingestion ----------------------------------------------------------------

def read_dataset_csv(path, hierarchy: Optional[GroupHierarchy] = None) -> Dataset:
    """Read ``y``, ``year``, ``g1..gQ`` and numeric covariate columns.

    Outcomes coded 0/1 are remapped to -1/+1. An optional ``id`` column
    becomes the sample ids.
    """
    try:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            rows = [row for row in reader if row]
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if header is None:
        raise DataError(f"{path}: empty file")
    header = [h.strip() for h in header]
    for required in ("y", "year", "g1"):
        if required not in header:
            raise DataError(f"{path}: missing required column {required!r}")
    gcols = []
    q = 1
    while f"g{q}" in header:
        gcols.append(header.index(f"g{q}"))
        q += 1
    special = {"y", "year", "id"} | {f"g{k}" for k in range(1, q)}
    xcols = [i for i, h in enumerate(header) if h not in special]
    try:
        table = np.array([[float(v) if v.strip() != "" else np.nan for v in row] for row in rows], dtype=float)
    except ValueError as exc:
        raise DataError(f"{path}: non-numeric entry ({exc})") from None
    if table.size and table.shape[1] != len(header):
        raise DataError(f"{path}: ragged rows")
    table = table.reshape(len(rows), len(header))
    if np.isnan(table).any():
        raise DataError(f"{path}: missing values are not supported")
    y = table[:, header.index("y")]
    if np.all(np.isin(y, (0.0, 1.0))):
        y = 2.0 * y - 1.0
    ids = table[:, header.index("id")].astype(np.int64) if "id" in header else None
    return Dataset(
        X=table[:, xcols],
        group_labels=table[:, gcols].astype(np.int64),
        year=table[:, header.index("year")].astype(np.int64),
        y=y,
        hierarchy=hierarchy,
        ids=ids,
        feature_names=tuple(header[i] for i in xcols),
    )


def write_dataset_csv(dataset: Dataset, path) -> None:
    cols = ["id", "y", "year"] + [f"g{k + 1}" for k in range(dataset.group_labels.shape[1])] + list(dataset.feature_names)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for i in range(dataset.n):
            row = [int(dataset.ids[i]), int(dataset.y[i]), int(dataset.year[i])]
            row += [int(v) for v in dataset.group_labels[i]]
            row += [repr(float(v)) for v in dataset.X[i]]
            w.writerow(row)
