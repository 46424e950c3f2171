"""HARNESS kernel evaluation.

The kernel is the product of a group multiplier and a base kernel, both of the
order-weighted form

    sum_{q=0}^{Q} eta_q^2 * e_q(w^(q)),    w^(q)_j = (kappa_j * tau_{j,q})^2 * k_j

where ``e_q`` is the q-th elementary symmetric polynomial and ``k_j`` the
univariate kernel of coordinate ``j`` (``z_j * z~_j`` for the group part).
``e_q`` is obtained from power sums through the Newton-Girard recursion, which
keeps the cost linear in the number of coordinates for every order.

Univariate kernels are separable, ``k(x, x~) = a(x) a(x~) + b(x) b(x~)``, so
every power sum over a batch of inputs reduces to a handful of matrix products.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, OracleSizeError, ShapeError

KINDS = ("centered_linear", "orthogonal_poly2")
# E[X^2] for X ~ Uniform(-1, 1)
_SECOND_MOMENT = 1.0 / 3.0
_DOMAIN_EPS = 1e-9


def _check_kind(kind):
    if kind not in KINDS:
        raise ConfigError(f"unknown univariate kernel {kind!r}; expected one of {KINDS}")


def univariate_features(x, kind: str):
    """Return ``(a(x), b(x))`` with ``k(x, x~) = a(x) a(x~) + b(x) b(x~)``."""
    _check_kind(kind)
    x = np.asarray(x, dtype=float)
    if kind == "centered_linear":
        return x, np.zeros_like(x)
    return x, x * x - _SECOND_MOMENT


def univariate_kernel_eval(kind: str, x: float, x_tilde: float) -> float:
    """Zero-mean univariate kernel on [-1, 1].

    ``centered_linear`` is ``x * x~``; ``orthogonal_poly2`` adds the product of
    the centred quadratic ``x^2 - 1/3``. Both integrate to zero in ``x`` under
    the uniform measure.
    """
    _check_kind(kind)
    for v in (x, x_tilde):
        if not (-1.0 - _DOMAIN_EPS <= v <= 1.0 + _DOMAIN_EPS):
            raise DomainError(f"input {v} outside [-1, 1]")
    a, b = univariate_features(x, kind)
    at, bt = univariate_features(x_tilde, kind)
    return float(a * at + b * bt)


def _resolve_kinds(kinds, p):
    if kinds is None:
        return ("orthogonal_poly2",) * p
    if isinstance(kinds, str):
        _check_kind(kinds)
        return (kinds,) * p
    kinds = tuple(kinds)
    if len(kinds) != p:
        raise ShapeError(f"got {len(kinds)} kernel kinds for {p} covariates")
    for k in kinds:
        _check_kind(k)
    return kinds


def elementary_symmetric(w, order: int) -> np.ndarray:
    """``[e_0, ..., e_order]`` of the weights ``w`` via Newton-Girard.

    ``e_k = (1/k) sum_{s=1}^{k} (-1)^{s+1} p_s e_{k-s}`` with power sums
    ``p_s = sum_i w_i^s``.
    """
    w = np.asarray(w, dtype=float)
    power = [None] + [np.sum(w ** s) for s in range(1, order + 1)]
    e = np.zeros(order + 1)
    e[0] = 1.0
    for k in range(1, order + 1):
        acc = 0.0
        for s in range(1, k + 1):
            acc += (-1.0) ** (s + 1) * power[s] * e[k - s]
        e[k] = acc / k
    return e


@dataclass(frozen=True)
class KernelParams:
    """Importance and strength parameters of an order-weighted kernel.

    ``kappa`` (p,) overall importance, ``tau`` (p, Q) importance per order 1..Q,
    ``eta`` (Q + 1,) strength per order 0..Q.
    """

    kappa: np.ndarray
    tau: np.ndarray
    eta: np.ndarray

    def __post_init__(self):
        kappa = np.array(self.kappa, dtype=float).reshape(-1)
        tau = np.array(self.tau, dtype=float)
        eta = np.array(self.eta, dtype=float).reshape(-1)
        if tau.ndim == 1:
            tau = tau[:, None]
        if tau.ndim != 2 or tau.shape[0] != kappa.shape[0]:
            raise ShapeError(f"tau must be ({kappa.shape[0]}, Q), got {tau.shape}")
        if tau.shape[1] < 1:
            raise ConfigError("maximum interaction order Q must be at least 1")
        if eta.shape[0] != tau.shape[1] + 1:
            raise ShapeError(f"eta must have Q + 1 = {tau.shape[1] + 1} entries, got {eta.shape[0]}")
        for name, arr in (("kappa", kappa), ("tau", tau), ("eta", eta)):
            if not np.all(np.isfinite(arr)):
                raise ConfigError(f"{name} has non-finite entries")
        if np.any(kappa < 0) or np.any(tau < 0):
            raise ConfigError("kappa and tau must be non-negative")
        for arr in (kappa, tau, eta):
            arr.setflags(write=False)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "tau", tau)
        object.__setattr__(self, "eta", eta)

    @property
    def p(self) -> int:
        return self.kappa.shape[0]

    @property
    def Q(self) -> int:
        return self.tau.shape[1]

    def order_weights(self) -> np.ndarray:
        """(p, Q) matrix of ``(kappa_j * tau_{j,q})^2``."""
        return (self.kappa[:, None] * self.tau) ** 2

    @classmethod
    def constant(cls, p: int, Q: int = 2, kappa=1.0, tau=1.0, eta=1.0):
        return cls(np.full(p, kappa, float), np.full((p, Q), tau, float), np.full(Q + 1, eta, float))

    def to_dict(self) -> dict:
        return {"kappa": self.kappa.tolist(), "tau": self.tau.tolist(), "eta": self.eta.tolist()}

    @classmethod
    def from_dict(cls, d: dict):
        return cls(np.asarray(d["kappa"], float), np.asarray(d["tau"], float).reshape(len(d["kappa"]), -1), np.asarray(d["eta"], float))


class GroupKernelParams(KernelParams):
    """Same layout as :class:`KernelParams`, dimensioned by the group design (p_g, Q_g)."""


def _order_weighted(w_by_order: np.ndarray, eta: np.ndarray) -> float:
    # w_by_order: (p, Q) coordinate-wise weights already multiplied by k_j
    total = eta[0] ** 2
    for q in range(1, len(eta)):
        total += eta[q] ** 2 * elementary_symmetric(w_by_order[:, q - 1], q)[q]
    return float(total)


def base_kernel_pair(x, x_tilde, params: KernelParams, kinds=None) -> float:
    """Covariate part of the kernel for a single pair of inputs."""
    x = np.asarray(x, dtype=float).reshape(-1)
    x_tilde = np.asarray(x_tilde, dtype=float).reshape(-1)
    if x.shape != x_tilde.shape or x.shape[0] != params.p:
        raise ShapeError(f"inputs must both have {params.p} coordinates")
    kinds = _resolve_kinds(kinds, params.p)
    k = np.array([univariate_kernel_eval(kind, a, b) for kind, a, b in zip(kinds, x, x_tilde)])
    return _order_weighted(params.order_weights() * k[:, None], params.eta)


def group_multiplier(z, z_tilde, params_g: KernelParams) -> float:
    """Group-heterogeneity factor for a single pair of group-design rows."""
    z = np.asarray(z, dtype=float).reshape(-1)
    z_tilde = np.asarray(z_tilde, dtype=float).reshape(-1)
    if z.shape != z_tilde.shape or z.shape[0] != params_g.p:
        raise ShapeError(f"group rows must both have {params_g.p} entries")
    return _order_weighted(params_g.order_weights() * (z * z_tilde)[:, None], params_g.eta)


def harness_kernel_pair(x, x_tilde, z, z_tilde, params, params_g, kinds=None) -> float:
    return group_multiplier(z, z_tilde, params_g) * base_kernel_pair(x, x_tilde, params, kinds)


# Batched evaluation -------------------------------------------------------------


class _Side:
    """Separable features of one argument of the kernel: ``k_j = a_j a~_j + b_j b~_j``."""

    __slots__ = ("A", "B")

    def __init__(self, A, B=None):
        self.A = A
        self.B = B

    def powers(self, s):
        """``[(binom(s, r), A^r * B^(s-r)) for r]``; with no B only the r = s term survives."""
        if self.B is None:
            return [(1.0, self.A if s == 1 else self.A ** s)]
        return [(float(math.comb(s, r)), self.A ** r * self.B ** (s - r)) for r in range(s + 1)]


def covariate_side(X, kinds=None) -> _Side:
    X = np.asarray(X, dtype=float)
    kinds = _resolve_kinds(kinds, X.shape[1])
    A = X
    B = np.where(np.array([k == "orthogonal_poly2" for k in kinds])[None, :], X * X - _SECOND_MOMENT, 0.0)
    if not np.any(B):
        return _Side(A, None)
    return _Side(A, B)


def group_side(Z) -> _Side:
    return _Side(np.asarray(Z, dtype=float), None)


class OrderSum:
    """Batched ``sum_q eta_q^2 e_q(w^(q))`` over all pairs of two input sets.

    Keeps the intermediate power sums and elementary symmetric polynomials so
    that :meth:`backward` can return gradients with respect to the per-order
    weights and ``eta``.
    """

    def __init__(self, left: _Side, right: _Side, weights: np.ndarray, eta: np.ndarray, symmetric=False):
        self.left = left
        self.right = right
        self.weights = np.asarray(weights, dtype=float)
        self.eta = np.asarray(eta, dtype=float)
        self.symmetric = symmetric
        Q = self.weights.shape[1]
        n, m = left.A.shape[0], right.A.shape[0]
        self.power = {}  # (q, s) -> P_{q,s}
        self.esym = {}  # q -> [e_0..e_q] for order-q weights
        value = np.full((n, m), self.eta[0] ** 2)
        for q in range(1, Q + 1):
            wq = self.weights[:, q - 1]
            for s in range(1, q + 1):
                ws = wq ** s
                acc = np.zeros((n, m))
                for (c, F), (_, G) in zip(left.powers(s), right.powers(s)):
                    acc += c * ((F * ws) @ G.T)
                self.power[q, s] = acc
            e = [np.ones((n, m))]
            for k in range(1, q + 1):
                acc = np.zeros((n, m))
                for s in range(1, k + 1):
                    acc += (-1.0) ** (s + 1) * self.power[q, s] * e[k - s]
                e.append(acc / k)
            self.esym[q] = e
            value += self.eta[q] ** 2 * e[q]
        if symmetric:
            value = 0.5 * (value + value.T)
        self.value = value

    def backward(self, grad: np.ndarray):
        """Return ``(d_weights (p, Q), d_eta (Q + 1,))`` for upstream gradient ``grad``."""
        grad = np.asarray(grad, dtype=float)
        if self.symmetric:
            grad = 0.5 * (grad + grad.T)
        Q = self.weights.shape[1]
        d_eta = np.zeros_like(self.eta)
        d_w = np.zeros_like(self.weights)
        d_eta[0] = 2.0 * self.eta[0] * grad.sum()
        for q in range(1, Q + 1):
            e = self.esym[q]
            d_eta[q] = 2.0 * self.eta[q] * np.sum(grad * e[q])
            e_bar = [None] * (q + 1)
            e_bar[q] = self.eta[q] ** 2 * grad
            p_bar = {s: np.zeros_like(grad) for s in range(1, q + 1)}
            for k in range(q, 0, -1):
                if e_bar[k] is None:
                    continue
                scaled = e_bar[k] / k
                for s in range(1, k + 1):
                    sign = (-1.0) ** (s + 1)
                    p_bar[s] += sign * scaled * e[k - s]
                    if k - s > 0:
                        contrib = sign * scaled * self.power[q, s]
                        e_bar[k - s] = contrib if e_bar[k - s] is None else e_bar[k - s] + contrib
            wq = self.weights[:, q - 1]
            for s in range(1, q + 1):
                inner = np.zeros(wq.shape[0])
                for (c, F), (_, G) in zip(self.left.powers(s), self.right.powers(s)):
                    inner += c * np.sum(F * (p_bar[s] @ G), axis=0)
                d_w[:, q - 1] += s * wq ** (s - 1) * inner
        return d_w, d_eta


def weights_backward(params: KernelParams, d_weights: np.ndarray):
    """Chain ``d/d(kappa_j tau_jq)^2`` onto ``(d_kappa, d_tau)``."""
    kappa, tau = params.kappa, params.tau
    d_kappa = np.sum(d_weights * 2.0 * kappa[:, None] * tau ** 2, axis=1)
    d_tau = d_weights * 2.0 * kappa[:, None] ** 2 * tau
    return d_kappa, d_tau


@dataclass(frozen=True)
class GramMatrix:
    values: np.ndarray
    symmetric: bool = False
    jitter: float = 0.0

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)

    @property
    def shape(self):
        return self.values.shape


class HarnessGram:
    """Full kernel matrix ``M * B (+ jitter I)`` with the pieces needed for backprop."""

    def __init__(self, X, Z, params, params_g, kinds=None, X_tilde=None, Z_tilde=None, jitter=0.0):
        X = np.asarray(X, dtype=float)
        Z = np.asarray(Z, dtype=float)
        self_gram = X_tilde is None and Z_tilde is None
        Xt = X if X_tilde is None else np.asarray(X_tilde, dtype=float)
        Zt = Z if Z_tilde is None else np.asarray(Z_tilde, dtype=float)
        if X.ndim != 2 or Xt.ndim != 2 or Z.ndim != 2 or Zt.ndim != 2:
            raise ShapeError("X and Z inputs must be 2-d")
        if X.shape[1] != params.p or Xt.shape[1] != params.p:
            raise ShapeError(f"covariate matrices need {params.p} columns")
        if Z.shape[1] != params_g.p or Zt.shape[1] != params_g.p:
            raise ShapeError(f"group design matrices need {params_g.p} columns")
        if X.shape[0] != Z.shape[0] or Xt.shape[0] != Zt.shape[0]:
            raise ShapeError("X and Z row counts differ")
        if jitter < 0:
            raise ConfigError("jitter must be non-negative")
        self.params = params
        self.params_g = params_g
        self.self_gram = self_gram
        self.jitter = float(jitter) if self_gram else 0.0
        left = covariate_side(X, kinds)
        right = left if self_gram else covariate_side(Xt, kinds)
        self.base = OrderSum(left, right, params.order_weights(), params.eta, symmetric=self_gram)
        gl = group_side(Z)
        gr = gl if self_gram else group_side(Zt)
        self.group = OrderSum(gl, gr, params_g.order_weights(), params_g.eta, symmetric=self_gram)
        values = self.group.value * self.base.value
        if self.jitter:
            values[np.diag_indices_from(values)] += self.jitter
        self.values = values

    def backward(self, grad):
        """Gradients of ``sum(grad * K)`` with respect to both parameter sets.

        Returns ``((d_kappa, d_tau, d_eta), (d_kappa_g, d_tau_g, d_eta_g))``.
        """
        dw, deta = self.base.backward(grad * self.group.value)
        dwg, detag = self.group.backward(grad * self.base.value)
        dk, dt = weights_backward(self.params, dw)
        dkg, dtg = weights_backward(self.params_g, dwg)
        return (dk, dt, deta), (dkg, dtg, detag)


def harness_kernel_matrix(X, Z, X_tilde=None, Z_tilde=None, params: KernelParams = None,
                          params_g: KernelParams = None, kinds=None, jitter: float = 1e-8) -> GramMatrix:
    """Kernel matrix between ``(X, Z)`` and ``(X_tilde, Z_tilde)``.

    Omitting the second pair gives the self-Gram, which is exactly symmetric
    and carries ``jitter`` on its diagonal.
    """
    if params is None or params_g is None:
        raise ConfigError("params and params_g are required")
    g = HarnessGram(X, Z, params, params_g, kinds, X_tilde, Z_tilde, jitter)
    return GramMatrix(g.values, symmetric=g.self_gram, jitter=g.jitter)


# Oracle -------------------------------------------------------------------------

_ORACLE_LIMIT = 12


def _subset_sum(k, weights, eta):
    # explicit sum over all subsets V with |V| <= Q
    p, Q = weights.shape
    total = 0.0
    for size in range(0, Q + 1):
        for V in itertools.combinations(range(p), size):
            term = eta[size] ** 2
            for j in V:
                term *= weights[j, size - 1] * k[j]
            total += term
    return total


def brute_force_kernel_oracle(x, x_tilde, z, z_tilde, params: KernelParams, params_g: KernelParams, kinds=None) -> float:
    """Kernel value by explicit enumeration of all interaction subsets.

    Exponential in the dimension; intended only as a test oracle.
    """
    if params.p > _ORACLE_LIMIT or params_g.p > _ORACLE_LIMIT:
        raise OracleSizeError(f"enumeration limited to {_ORACLE_LIMIT} coordinates per part")
    kinds = _resolve_kinds(kinds, params.p)
    k = [univariate_kernel_eval(kind, a, b) for kind, a, b in zip(kinds, np.ravel(x), np.ravel(x_tilde))]
    kg = [float(a) * float(b) for a, b in zip(np.ravel(z), np.ravel(z_tilde))]
    if len(k) != params.p or len(kg) != params_g.p:
        raise ShapeError("input dimensions do not match the parameters")
    base = _subset_sum(k, params.order_weights(), params.eta)
    group = _subset_sum(kg, params_g.order_weights(), params_g.eta)
    return group * base
