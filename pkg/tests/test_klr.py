import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq, minimize
from scipy.special import expit

from harness.errors import ConditioningError, ConfigError, ShapeError
from harness.klr import FittedLocalModel, SolverConfig, fit_klr, klr_objective, predict_out_of_sample


def random_instance(rng, n):
    A = rng.normal(size=(n, max(1, n // 2)))
    K = A @ A.T + 0.1 * np.eye(n)
    y = np.where(rng.uniform(size=n) < 0.5, 1.0, -1.0)
    return K, y


def floor(psi):
    return 1e-12 * (1.0 + abs(psi))


def test_scalar_case_matches_bisection():
    m = fit_klr(np.array([[1.0]]), np.array([1.0]), SolverConfig(lam=1.0))
    # stationarity: sigma(-f) = 2 lam f / K
    root = brentq(lambda f: expit(-f) - 2.0 * f, 0.0, 1.0, xtol=1e-14)
    assert root == pytest.approx(0.2223235, abs=1e-7)
    assert m.f_hat[0] == pytest.approx(root, abs=1e-6)


def test_heavy_penalty_shrinks_to_zero(rng):
    K, y = random_instance(rng, 10)
    m = fit_klr(K, y, SolverConfig(lam=1e6))
    assert np.max(np.abs(m.f_hat)) <= 1e-3


def test_label_flip_negates_mode(rng):
    K, y = random_instance(rng, 12)
    a = fit_klr(K, y).f_hat
    b = fit_klr(K, -y).f_hat
    np.testing.assert_allclose(b, -a, rtol=0, atol=1e-12)


@given(st.integers(0, 10_000), st.integers(2, 40), st.floats(0.01, 10.0))
@settings(max_examples=40, deadline=None)
def test_monotone_ascent_and_convergence(seed, n, lam):
    rng = np.random.default_rng(seed)
    K, y = random_instance(rng, n)
    m = fit_klr(K, y, SolverConfig(lam=lam))
    assert m.converged and m.grad_norm <= 1e-8
    path = np.array(m.psi_path)
    assert np.all(np.diff(path) >= -floor(path[:-1]))


def test_objective_agrees_with_solver_and_generic_maximizer(rng):
    K, y = random_instance(rng, 15)
    m = fit_klr(K, y, SolverConfig(lam=0.7))
    Kinv = np.linalg.inv(K)
    res = minimize(lambda f: -klr_objective(f, K, y, 0.7), np.zeros(15),
                   jac=lambda f: -((y + 1) / 2 - expit(f) - 1.4 * Kinv @ f), method="BFGS", options={"gtol": 1e-11})
    np.testing.assert_allclose(m.f_hat, res.x, atol=1e-6)
    assert m.psi_path[-1] == pytest.approx(klr_objective(m.f_hat, K, y, 0.7), rel=1e-10)


def test_predictions(rng):
    K, y = random_instance(rng, 8)
    m = fit_klr(K, y)
    np.testing.assert_allclose(predict_out_of_sample(m, K), m.f_hat, atol=1e-8)
    A = rng.normal(size=(3, 3))
    K3 = A @ A.T + 0.5 * np.eye(3)
    m3 = fit_klr(K3, np.array([1.0, -1.0, 1.0]))
    ks = rng.normal(size=(2, 3))
    np.testing.assert_allclose(predict_out_of_sample(m3, ks), ks @ np.linalg.solve(K3, m3.f_hat), rtol=1e-9)


def test_constant_kernel_gives_constant_predictions():
    K = np.full((4, 4), 2.0) + 1e-8 * np.eye(4)
    m = fit_klr(K, np.array([1.0, 1.0, -1.0, 1.0]))
    pred = predict_out_of_sample(m, np.full((5, 4), 2.0))
    assert np.ptp(pred) <= 1e-9 * max(1.0, np.abs(pred).max())


def test_errors():
    with pytest.raises(ShapeError):
        fit_klr(np.eye(3), np.ones(2))
    with pytest.raises(ConditioningError):
        fit_klr(np.array([[1.0, 2.0], [2.0, 1.0]]), np.ones(2))
    with pytest.raises(ConfigError):
        SolverConfig(damping=1.5)


def test_model_serialization(rng):
    K, y = random_instance(rng, 5)
    m = fit_klr(K, y)
    back = FittedLocalModel.from_dict(m.to_dict())
    np.testing.assert_array_equal(back.dual, m.dual)
    assert back.converged == m.converged
