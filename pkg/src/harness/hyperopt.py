"""Kernel hyperparameter search by SGD on a single-draw cross-validation loss.

Each iteration draws a holdout set and a mini-batch from the remaining
samples, fits kernel logistic regression on the batch, scores the holdout and
steps the unconstrained parameters against the gradient of the holdout
negative log-likelihood.

Two gradient engines are provided. ``finite_difference`` perturbs every
coordinate and refits (slow; used as the reference). ``unrolled_newton``
differentiates a fixed number of Newton steps in reverse mode through the
kernel construction.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.linalg import lu_factor, lu_solve
from scipy.special import expit

from .data import Dataset
from .errors import ConfigError, DivergenceError, GradientError, SolverError
from .kernel import GroupKernelParams, HarnessGram, KernelParams
from .klr import SolverConfig, fit_klr, predict_out_of_sample

METHODS = ("finite_difference", "unrolled_newton")
_FIELDS = ("u_kappa", "u_tau", "u_eta", "u_kappa_g", "u_tau_g", "u_eta_g")


@dataclass(frozen=True)
class UnconstrainedParams:
    """Raw optimizer variables; ``kappa = max(0, u_kappa)`` and likewise for tau.

    ``eta`` is used as is, since it only enters the kernel squared.
    """

    u_kappa: np.ndarray
    u_tau: np.ndarray
    u_eta: np.ndarray
    u_kappa_g: np.ndarray
    u_tau_g: np.ndarray
    u_eta_g: np.ndarray

    def __post_init__(self):
        for name in _FIELDS:
            arr = np.array(getattr(self, name), dtype=float)
            if name.startswith("u_tau") and arr.ndim == 1:
                arr = arr[:, None]
            object.__setattr__(self, name, arr)

    @classmethod
    def initial(cls, p, p_g, Q=2, Q_g=1, tie_order=False, freeze_group=False):
        def eta0(order):
            return np.array([1.0 if q <= 1 else 0.5 for q in range(order + 1)])

        tau = 1.0 if tie_order else 0.5
        return cls(
            u_kappa=np.full(p, 0.5),
            u_tau=np.full((p, Q), tau),
            u_eta=eta0(Q),
            u_kappa_g=np.zeros(p_g) if freeze_group else np.full(p_g, 0.5),
            u_tau_g=np.full((p_g, Q_g), tau),
            u_eta_g=eta0(Q_g),
        )

    def to_params(self):
        kp = KernelParams(np.maximum(self.u_kappa, 0.0), np.maximum(self.u_tau, 0.0), self.u_eta)
        gp = GroupKernelParams(np.maximum(self.u_kappa_g, 0.0), np.maximum(self.u_tau_g, 0.0), self.u_eta_g)
        return kp, gp

    def flatten(self) -> np.ndarray:
        return np.concatenate([getattr(self, name).ravel() for name in _FIELDS])

    def unflatten(self, vec) -> "UnconstrainedParams":
        vec = np.asarray(vec, dtype=float)
        out, i = {}, 0
        for name in _FIELDS:
            shape = getattr(self, name).shape
            size = int(np.prod(shape))
            out[name] = vec[i:i + size].reshape(shape)
            i += size
        if i != vec.size:
            raise ConfigError(f"flat vector has {vec.size} entries, expected {i}")
        return UnconstrainedParams(**out)

    def coordinate_names(self) -> list:
        names = []
        for name in _FIELDS:
            for idx in np.ndindex(getattr(self, name).shape):
                names.append(f"{name}[{','.join(map(str, idx))}]")
        return names

    def to_dict(self) -> dict:
        return {name: getattr(self, name).tolist() for name in _FIELDS}

    @classmethod
    def from_dict(cls, d) -> "UnconstrainedParams":
        return cls(**{name: np.asarray(d[name], float) for name in _FIELDS})


@dataclass(frozen=True)
class OptimizerConfig:
    iterations: int = 200
    batch_size: int = 256
    holdout_size: Optional[int] = None  # default: 20% of n
    learning_rate: float = 0.01
    method: str = "unrolled_newton"
    unrolled_steps: int = 10
    fd_step: float = 1e-4
    seed: int = 0
    Q: int = 2
    Q_g: Optional[int] = None  # default: number of hierarchy levels
    jitter: float = 1e-8
    freeze_group: bool = False
    tie_order: bool = False
    snapshot_every: int = 50

    def __post_init__(self):
        if self.iterations < 0:
            raise ConfigError("iterations must be non-negative")
        if self.batch_size < 1:
            raise ConfigError("batch_size must be positive")
        if self.learning_rate <= 0:
            raise ConfigError("learning_rate must be positive")
        if self.method not in METHODS:
            raise ConfigError(f"method must be one of {METHODS}")
        if self.unrolled_steps < 1:
            raise ConfigError("unrolled_steps must be positive")
        if self.Q < 1 or (self.Q_g is not None and self.Q_g < 1):
            raise ConfigError("interaction orders must be at least 1")
        if self.holdout_size is not None and self.holdout_size < 1:
            raise ConfigError("holdout_size must be positive")

    def sizes(self, n: int) -> tuple:
        """Resolve ``(batch, holdout)`` for ``n`` samples."""
        m = self.holdout_size if self.holdout_size is not None else max(1, int(round(0.2 * n)))
        if m >= n:
            raise ConfigError(f"holdout size {m} leaves no training samples out of {n}")
        b = min(self.batch_size, n - m)
        return b, m


@dataclass(frozen=True)
class Draw:
    batch: np.ndarray
    holdout: np.ndarray
    id: int = 0


def sample_draw(n: int, b: int, m: int, seed: int, t: int) -> Draw:
    """Holdout of size ``m`` uniformly from ``[n]``, then a batch of ``b`` from the rest."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, t]))
    perm = rng.permutation(n)
    return Draw(batch=np.sort(perm[m:m + b]), holdout=np.sort(perm[:m]), id=t)


def holdout_nll(scores, y) -> float:
    """``-sum log sigmoid(y * score)``."""
    return float(np.sum(np.logaddexp(0.0, -np.asarray(y) * np.asarray(scores))))


def _check_draw(draw: Draw, n: int):
    if len(draw.holdout) == 0:
        raise ConfigError("holdout set is empty")
    if len(draw.batch) == 0:
        raise ConfigError("training batch is empty")
    if np.intersect1d(draw.batch, draw.holdout).size:
        raise ConfigError("training batch and holdout overlap")
    if max(draw.batch.max(), draw.holdout.max()) >= n:
        raise ConfigError("draw indices exceed the dataset")


def cv_loss_single_draw(params: KernelParams, params_g: KernelParams, dataset: Dataset, draw: Draw,
                        solver: SolverConfig = SolverConfig(), kinds=None, jitter: float = 1e-8) -> float:
    """Holdout negative log-likelihood of a KLR fit on the draw's batch."""
    _check_draw(draw, dataset.n)
    X, Z, y = dataset.X, dataset.Z, dataset.y
    B, H = draw.batch, draw.holdout
    K = HarnessGram(X[B], Z[B], params, params_g, kinds, jitter=jitter).values
    try:
        model = fit_klr(K, y[B], solver)
    except Exception as exc:
        raise SolverError(f"draw {draw.id}: KLR fit failed ({exc})", draw=draw.id) from exc
    Ks = HarnessGram(X[H], Z[H], params, params_g, kinds, X_tilde=X[B], Z_tilde=Z[B]).values
    return holdout_nll(predict_out_of_sample(model, Ks), y[H])


def _mask(grad: UnconstrainedParams, u: UnconstrainedParams, freeze_group=False, tie_order=False) -> UnconstrainedParams:
    out = {name: np.array(getattr(grad, name)) for name in _FIELDS}
    # rectified coordinates: zero gradient on the flat side (u <= 0)
    for name in ("u_kappa", "u_tau", "u_kappa_g", "u_tau_g"):
        out[name] = np.where(getattr(u, name) > 0.0, out[name], 0.0)
    if tie_order:
        out["u_tau"][:] = 0.0
        out["u_tau_g"][:] = 0.0
    if freeze_group:
        for name in ("u_kappa_g", "u_tau_g", "u_eta_g"):
            out[name][:] = 0.0
    return UnconstrainedParams(**out)


def _fd_gradient(u, dataset, draw, solver, kinds, jitter, h, freeze_group, tie_order):
    flat = u.flatten()
    frozen = _mask(u.unflatten(np.ones_like(flat)), u.unflatten(np.ones_like(flat)), freeze_group, tie_order).flatten() == 0
    names = u.coordinate_names()

    def loss_at(vec):
        return cv_loss_single_draw(*u.unflatten(vec).to_params(), dataset, draw, solver, kinds, jitter)

    loss = loss_at(flat)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        if frozen[i]:
            continue
        up, dn = flat.copy(), flat.copy()
        up[i] += h
        dn[i] -= h
        lu, ld = loss_at(up), loss_at(dn)
        if not (np.isfinite(lu) and np.isfinite(ld)):
            raise GradientError(f"non-finite loss when perturbing {names[i]}", coordinate=names[i])
        grad[i] = (lu - ld) / (2.0 * h)
    return loss, u.unflatten(grad)


def _unrolled_gradient(u, dataset, draw, solver, kinds, jitter, steps, freeze_group, tie_order):
    params, params_g = u.to_params()
    X, Z, y = dataset.X, dataset.Z, dataset.y
    B, H = draw.batch, draw.holdout
    yb, yh = y[B], y[H]
    gram = HarnessGram(X[B], Z[B], params, params_g, kinds, jitter=jitter)
    cross = HarnessGram(X[H], Z[H], params, params_g, kinds, X_tilde=X[B], Z_tilde=Z[B])
    K, S = gram.values, cross.values
    n = K.shape[0]
    c = 2.0 * solver.lam
    t = (yb + 1.0) / 2.0

    # forward: alpha_{k+1} = (W K + cI)^-1 (W K alpha_k + g),  f_k = K alpha_k
    alpha = np.zeros(n)
    tape = []
    for _ in range(steps):
        f = K @ alpha
        p = expit(f)
        W = p * (1.0 - p)
        r = W * f + (t - p)
        lu = lu_factor(W[:, None] * K + c * np.eye(n))
        new = lu_solve(lu, r)
        tape.append((alpha, f, p, W, lu, new))
        alpha = new
    fstar = S @ alpha
    if not np.all(np.isfinite(fstar)):
        raise SolverError(f"draw {draw.id}: unrolled Newton produced non-finite scores", draw=draw.id)
    loss = holdout_nll(fstar, yh)

    # reverse pass
    fstar_bar = -yh * expit(-yh * fstar)
    S_bar = np.outer(fstar_bar, alpha)
    alpha_bar = S.T @ fstar_bar
    K_bar = np.zeros_like(K)
    for alpha_k, f, p, W, lu, new in reversed(tape):
        v = lu_solve(lu, alpha_bar, trans=1)
        # A = W K + cI,  alpha_new = A^-1 r
        A_bar = -np.outer(v, new)
        W_bar = np.sum(A_bar * K, axis=1) + v * f
        K_bar += W[:, None] * A_bar
        f_bar = W * v
        p_bar = -v + W_bar * (1.0 - 2.0 * p)
        f_bar = f_bar + p_bar * W
        K_bar += np.outer(f_bar, alpha_k)
        alpha_bar = K.T @ f_bar

    (dk, dt, de), (dkg, dtg, deg) = gram.backward(K_bar)
    (dk2, dt2, de2), (dkg2, dtg2, deg2) = cross.backward(S_bar)
    grad = UnconstrainedParams(dk + dk2, dt + dt2, de + de2, dkg + dkg2, dtg + dtg2, deg + deg2)
    return loss, _mask(grad, u, freeze_group, tie_order)


def hypergradient(u: UnconstrainedParams, dataset: Dataset, draw: Draw, method: str = "unrolled_newton",
                  solver: SolverConfig = SolverConfig(), kinds=None, jitter: float = 1e-8, steps: int = 10,
                  h: float = 1e-4, freeze_group: bool = False, tie_order: bool = False):
    """Gradient of the draw's holdout loss with respect to the unconstrained parameters.

    Returns ``(loss, gradient)`` with the gradient shaped like ``u``. Frozen
    coordinates (``freeze_group``, ``tie_order``) get a zero gradient.
    """
    _check_draw(draw, dataset.n)
    if method == "finite_difference":
        return _fd_gradient(u, dataset, draw, solver, kinds, jitter, h, freeze_group, tie_order)
    if method == "unrolled_newton":
        return _unrolled_gradient(u, dataset, draw, solver, kinds, jitter, steps, freeze_group, tie_order)
    raise ConfigError(f"unknown gradient method {method!r}")


@dataclass
class TrainTrace:
    losses: list = field(default_factory=list)
    wall_times: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    final: Optional[UnconstrainedParams] = None
    seed: int = 0

    @property
    def params(self):
        return self.final.to_params()

    def jsonl_lines(self) -> list:
        return [json.dumps({"iteration": i, "loss": loss, "seed": self.seed, "wall_time": wt})
                for i, (loss, wt) in enumerate(zip(self.losses, self.wall_times))]

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for line in self.jsonl_lines():
                fh.write(line + "\n")


def train_sgd(dataset: Dataset, config: OptimizerConfig = OptimizerConfig(), solver: SolverConfig = SolverConfig(),
              kinds=None, init: Optional[UnconstrainedParams] = None) -> TrainTrace:
    """Run the SGD loop and return the trace with the final parameters."""
    Q_g = config.Q_g if config.Q_g is not None else dataset.hierarchy.levels
    u = init if init is not None else UnconstrainedParams.initial(
        dataset.p, dataset.design.p_g, config.Q, Q_g, config.tie_order, config.freeze_group)
    b, m = config.sizes(dataset.n)
    trace = TrainTrace(seed=config.seed)
    trace.snapshots[0] = u.flatten().tolist()
    for t in range(config.iterations):
        start = time.perf_counter()
        draw = sample_draw(dataset.n, b, m, config.seed, t)
        loss, grad = hypergradient(u, dataset, draw, config.method, solver, kinds, config.jitter,
                                   config.unrolled_steps, config.fd_step, config.freeze_group, config.tie_order)
        trace.losses.append(loss)
        if not np.isfinite(loss) or loss > 1e10:
            trace.final = u
            raise DivergenceError(f"loss diverged at iteration {t}: {loss}", trace=trace)
        new_flat = u.flatten() - config.learning_rate * grad.flatten()
        if not np.all(np.isfinite(new_flat)):
            trace.final = u
            raise DivergenceError(f"non-finite parameters after iteration {t}", trace=trace)
        u = u.unflatten(new_flat)
        trace.wall_times.append(time.perf_counter() - start)
        if config.snapshot_every and (t + 1) % config.snapshot_every == 0:
            trace.snapshots[t + 1] = new_flat.tolist()
    trace.final = u
    return trace
