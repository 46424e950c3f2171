"""Divide-and-recombine prediction with fixed kernel parameters."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .data import Dataset
from .errors import ConfigError, SolverError
from .kernel import HarnessGram, KernelParams
from .klr import SolverConfig, fit_klr, predict_out_of_sample


@dataclass(frozen=True)
class DnrConfig:
    D: Optional[int] = None  # default: ceil(n / 1000)
    seed: int = 0
    solver: SolverConfig = SolverConfig()
    jitter: float = 1e-8
    n_jobs: int = 1

    def resolve_D(self, n: int) -> int:
        D = self.D if self.D is not None else max(1, math.ceil(n / 1000))
        if not (1 <= D <= n):
            raise ConfigError(f"need 1 <= D <= n, got D={D}, n={n}")
        return D


def partition_subsets(n: int, D: int, seed: int = 0) -> list:
    """Split ``range(n)`` uniformly at random into ``D`` near-equal disjoint sets."""
    if not (1 <= D <= n):
        raise ConfigError(f"need 1 <= D <= n, got D={D}, n={n}")
    perm = np.random.default_rng(seed).permutation(n)
    return [np.sort(part) for part in np.array_split(perm, D)]


def _pairwise_sum(parts):
    if len(parts) == 1:
        return parts[0]
    mid = len(parts) // 2
    return _pairwise_sum(parts[:mid]) + _pairwise_sum(parts[mid:])


def local_predictions(train: Dataset, test: Dataset, params: KernelParams, params_g: KernelParams,
                      config: DnrConfig = DnrConfig(), kinds=None) -> list:
    """Per-subset latent scores on ``test``, in subset order."""
    D = config.resolve_D(train.n)
    subsets = partition_subsets(train.n, D, config.seed)
    if min(len(s) for s in subsets) < 2:
        raise ConfigError("every D&R subset needs at least 2 samples")

    def one(d):
        idx = subsets[d]
        K = HarnessGram(train.X[idx], train.Z[idx], params, params_g, kinds, jitter=config.jitter).values
        try:
            model = fit_klr(K, train.y[idx], config.solver)
        except Exception as exc:
            raise SolverError(f"D&R subset {d} failed: {exc}", draw=d) from exc
        Ks = HarnessGram(test.X, test.Z, params, params_g, kinds, X_tilde=train.X[idx], Z_tilde=train.Z[idx]).values
        return predict_out_of_sample(model, Ks)

    if config.n_jobs > 1:
        with ThreadPoolExecutor(config.n_jobs) as pool:
            return list(pool.map(one, range(D)))
    return [one(d) for d in range(D)]


def dnr_predict(train: Dataset, test: Dataset, params: KernelParams, params_g: KernelParams,
                config: DnrConfig = DnrConfig(), kinds=None) -> np.ndarray:
    """Average of the local out-of-sample scores over the D subsets."""
    preds = local_predictions(train, test, params, params_g, config, kinds)
    return _pairwise_sum(preds) / len(preds)
