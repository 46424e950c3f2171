"""Simulation benchmark: group- and year-dispersed coefficients, Bernoulli outcomes.

The latent function combines a linear block on x1..x6, a nonlinear block
(sin on x7..x13, quadratic on x14..x20) and a block of pairwise products.
Every coefficient is drawn around a base value, dispersed by group, then by
year within group. Normal parameters are (mean, variance).
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from itertools import combinations

import numpy as np
from scipy.special import expit

from .data import Dataset, GroupHierarchy
from .errors import ConfigError

LINEAR = np.arange(0, 6)
SINE = np.arange(6, 13)
QUADRATIC = np.arange(13, 20)
N_PAIRS = 15
BASE_MEANS = {"alpha": 1.0, "beta": 5.0, "gamma": 1.0, "zeta": 1.0}
BLOCK_SIZES = {"alpha": 6, "beta": 7, "gamma": 7, "zeta": N_PAIRS}

_PAIRS = {
    1: list(combinations(range(1, 7), 2)),
    2: [(1, j) for j in range(2, 11)] + [(2, j) for j in range(3, 9)],
    3: [(1, j) for j in range(2, 17)],
    4: [],
}


def interaction_set(setting: int) -> list:
    """1-based covariate pairs entering the two-way block of ``setting``."""
    if setting not in _PAIRS:
        raise ConfigError(f"unknown simulation setting {setting}; expected 1-4")
    return list(_PAIRS[setting])


@dataclass(frozen=True)
class SimSetting:
    id: int
    pairs: tuple
    nonlinear: bool
    equalize: bool

    @classmethod
    def from_id(cls, setting: int) -> "SimSetting":
        pairs = tuple(interaction_set(setting))
        return cls(setting, pairs, nonlinear=setting != 4, equalize=setting != 4)


@dataclass(frozen=True)
class SimConfig:
    n: int = 5000
    p: int = 100
    groups: int = 5
    years: int = 10
    base_var: float = 0.1
    group_var: float = 5.0
    year_var: float = 0.1
    first_year: int = 1

    def __post_init__(self):
        if self.p < 20:
            raise ConfigError("p must be at least 20")
        if self.n < 1 or self.groups < 1 or self.years < 1:
            raise ConfigError("n, groups and years must be positive")
        if self.n % (self.groups * self.years):
            raise ConfigError(f"n={self.n} must be divisible by groups x years = {self.groups * self.years}")
        if min(self.base_var, self.group_var, self.year_var) < 0:
            raise ConfigError("variances must be non-negative")


@dataclass
class SimCoefficients:
    """``base[k]`` (size,), ``group[k]`` (G, size), ``cell[k]`` (G, years, size) per block key."""

    base: dict
    group: dict
    cell: dict

    def to_dict(self) -> dict:
        return {part: {k: v.tolist() for k, v in getattr(self, part).items()} for part in ("base", "group", "cell")}


def draw_coefficients(config: SimConfig, setting: SimSetting, seed: int) -> SimCoefficients:
    """Base draws, then group dispersion around base, then year dispersion around group."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 1]))
    base, group, cell = {}, {}, {}
    for key in ("alpha", "beta", "gamma", "zeta"):
        size = BLOCK_SIZES[key]
        base[key] = rng.normal(BASE_MEANS[key], np.sqrt(config.base_var), size)
        group[key] = rng.normal(base[key], np.sqrt(config.group_var), (config.groups, size))
        cell[key] = rng.normal(group[key][:, None, :], np.sqrt(config.year_var), (config.groups, config.years, size))
    return SimCoefficients(base, group, cell)


@dataclass
class SimResult:
    dataset: Dataset
    latent: np.ndarray
    blocks: dict  # block name -> (n,) contribution after rescaling
    coefficients: SimCoefficients
    setting: SimSetting
    config: SimConfig
    seed: int

    def sidecar(self) -> dict:
        return {
            "seed": self.seed,
            "setting": self.setting.id,
            "pairs": [list(p) for p in self.setting.pairs],
            "config": asdict(self.config),
            "coefficients": self.coefficients.to_dict(),
            "latent": self.latent.tolist(),
            "blocks": {k: v.tolist() for k, v in self.blocks.items()},
        }

    def write_sidecar(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.sidecar(), fh)


def latent_blocks(X, cell_of_sample, coefficients: SimCoefficients, setting: SimSetting) -> dict:
    """Raw (un-equalized) block contributions for rows of ``X``.

    ``cell_of_sample`` is an (n, 2) array of 0-based (group, year) indices.
    """
    g, t = cell_of_sample[:, 0], cell_of_sample[:, 1]
    c = {k: v[g, t] for k, v in coefficients.cell.items()}
    blocks = {"linear": np.sum(c["alpha"] * X[:, LINEAR], axis=1)}
    if setting.nonlinear:
        blocks["nonlinear"] = (np.sum(np.sin(c["beta"] * X[:, SINE]), axis=1)
                               + np.sum(c["gamma"] * X[:, QUADRATIC] ** 2, axis=1))
        if setting.pairs:
            left = np.array([a - 1 for a, _ in setting.pairs])
            right = np.array([b - 1 for _, b in setting.pairs])
            zeta = c["zeta"][:, :len(setting.pairs)]
            blocks["interaction"] = np.sum(zeta * X[:, left] * X[:, right], axis=1)
    return blocks


def generate_dataset(config: SimConfig = SimConfig(), setting=1, seed: int = 0) -> SimResult:
    """Simulate one dataset. Rows are ordered by group, then year."""
    if not isinstance(setting, SimSetting):
        setting = SimSetting.from_id(setting)
    coef = draw_coefficients(config, setting, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2]))
    per_cell = config.n // (config.groups * config.years)
    g_idx = np.repeat(np.arange(config.groups), config.years * per_cell)
    t_idx = np.tile(np.repeat(np.arange(config.years), per_cell), config.groups)
    X = rng.uniform(-1.0, 1.0, (config.n, config.p))
    raw = latent_blocks(X, np.c_[g_idx, t_idx], coef, setting)
    scales = {k: 1.0 for k in raw}
    if setting.equalize and len(raw) > 1:
        variances = {k: np.var(v) for k, v in raw.items()}
        target = np.mean(list(variances.values()))
        scales = {k: np.sqrt(target / variances[k]) if variances[k] > 0 else 1.0 for k in raw}
    blocks = {k: scales[k] * v for k, v in raw.items()}
    latent = np.sum(list(blocks.values()), axis=0)
    y = np.where(rng.uniform(size=config.n) < expit(latent), 1.0, -1.0)
    ds = Dataset(X, g_idx[:, None], config.first_year + t_idx, y, hierarchy=GroupHierarchy((config.groups,)))
    return SimResult(ds, latent, blocks, coef, setting, config, seed)
