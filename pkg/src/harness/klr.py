"""Kernel logistic regression at the mode.

Maximizes ``Psi(f) = sum_i log sigmoid(y_i f_i) - lam * f' K^-1 f`` by damped
Newton iteration. The penalty is that of a Gaussian prior with covariance
``K / (2 lam)``, so each step uses the stable ``B = I + W^1/2 K' W^1/2``
Cholesky form and never forms ``K^-1``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import LinAlgError, cho_factor, cho_solve, cholesky
from scipy.special import expit

from .errors import ConditioningError, ConfigError, ShapeError


@dataclass(frozen=True)
class SolverConfig:
    max_iter: int = 50
    tol: float = 1e-8
    damping: float = 0.5
    lam: float = 1.0

    def __post_init__(self):
        if self.max_iter < 1:
            raise ConfigError("max_iter must be positive")
        if self.tol <= 0:
            raise ConfigError("tol must be positive")
        if not (0.0 < self.damping < 1.0):
            raise ConfigError("damping must lie in (0, 1)")
        if self.lam <= 0:
            raise ConfigError("lam must be positive")


@dataclass
class FittedLocalModel:
    """Mode ``f_hat`` on the training points and ``dual = K^-1 f_hat``."""

    f_hat: np.ndarray
    dual: np.ndarray
    lam: float
    converged: bool
    iterations: int
    grad_norm: float
    psi_path: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "f_hat": self.f_hat.tolist(),
            "dual": self.dual.tolist(),
            "lambda": self.lam,
            "converged": self.converged,
            "iterations": self.iterations,
            "grad_norm": self.grad_norm,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FittedLocalModel":
        return cls(np.asarray(d["f_hat"], float), np.asarray(d["dual"], float), float(d["lambda"]),
                   bool(d["converged"]), int(d["iterations"]), float(d["grad_norm"]))

    def to_json(self) -> str:
        return json.dumps(self.to_dict())


def log_sigmoid(t):
    return -np.logaddexp(0.0, -t)


def klr_objective(f, K, y, lam) -> float:
    """``Psi`` evaluated with an explicit solve; used for checks, not by the solver."""
    f = np.asarray(f, dtype=float)
    return float(np.sum(log_sigmoid(y * f)) - lam * f @ np.linalg.solve(np.asarray(K), f))


def _as_square(K):
    K = np.asarray(K, dtype=float)
    if K.ndim != 2 or K.shape[0] != K.shape[1]:
        raise ShapeError(f"kernel matrix must be square, got {K.shape}")
    return K


def fit_klr(K, y, config: SolverConfig = SolverConfig()) -> FittedLocalModel:
    """Newton mode-finding for kernel logistic regression on a fixed Gram matrix."""
    K = _as_square(K)
    y = np.asarray(y, dtype=float)
    n = K.shape[0]
    if y.shape != (n,):
        raise ShapeError(f"y must have {n} entries")
    try:
        cholesky(K, lower=True)
    except LinAlgError:
        raise ConditioningError("kernel matrix is not positive definite at the applied jitter") from None

    c = 2.0 * config.lam
    Kp = K / c
    t = (y + 1.0) / 2.0
    # a = (K/c)^-1 f = c * K^-1 f, so the penalty lam f'K^-1 f equals a'f / 2
    a = np.zeros(n)
    f = np.zeros(n)

    def psi_of(f, a):
        return float(np.sum(log_sigmoid(y * f)) - 0.5 * a @ f)

    psi = psi_of(f, a)
    path = [psi]
    converged = False
    it = 0
    gnorm = np.inf
    for it in range(config.max_iter + 1):
        p = expit(f)
        grad = t - p - a
        gnorm = float(np.max(np.abs(grad))) if n else 0.0
        if gnorm <= config.tol:
            converged = True
            break
        if it == config.max_iter:
            break
        W = p * (1.0 - p)
        sW = np.sqrt(W)
        B = np.eye(n) + sW[:, None] * Kp * sW[None, :]
        L = cho_factor(B, lower=True)
        b = W * f + (t - p)
        a_new = b - sW * cho_solve(L, sW * (Kp @ b))
        da = a_new - a
        df = Kp @ a_new - f
        step = 1.0
        accepted = False
        for _ in range(60):
            f_try = f + step * df
            a_try = a + step * da
            psi_try = psi_of(f_try, a_try)
            if psi_try >= psi:
                accepted = True
                break
            # at the rounding floor the objective cannot resolve the ascent
            if psi - psi_try <= 1e-12 * (1.0 + abs(psi)):
                g_try = np.max(np.abs(t - expit(f_try) - a_try))
                if g_try < gnorm:
                    accepted = True
                    break
            step *= config.damping
        if not accepted:
            break
        f, a, psi = f_try, a_try, psi_try
        path.append(psi)

    return FittedLocalModel(f_hat=f, dual=a / c, lam=config.lam, converged=converged,
                            iterations=it, grad_norm=gnorm, psi_path=path)


def predict_out_of_sample(model: FittedLocalModel, k_star) -> np.ndarray:
    """Latent scores ``k_star @ K^-1 f_hat`` for ``k_star`` of shape (m, n)."""
    k_star = np.asarray(k_star, dtype=float)
    if k_star.ndim != 2 or k_star.shape[1] != model.dual.shape[0]:
        raise ShapeError(f"cross-Gram must have {model.dual.shape[0]} columns, got {k_star.shape}")
    return k_star @ model.dual
