import numpy as np
import pytest

from harness.data import Dataset, GroupHierarchy
from harness.kernel import GroupKernelParams, KernelParams


def random_params(rng, p, Q, cls=KernelParams, zero_prob=0.0):
    kappa = rng.uniform(0.1, 1.5, p)
    if zero_prob:
        kappa[rng.uniform(size=p) < zero_prob] = 0.0
    tau = rng.uniform(0.1, 1.5, (p, Q))
    eta = rng.uniform(0.2, 1.5, Q + 1)
    return cls(kappa, tau, eta)


def random_group_params(rng, p_g, Q_g):
    return random_params(rng, p_g, Q_g, cls=GroupKernelParams)


def small_dataset(rng, n=40, p=4, counts=(2, 2), years=3):
    """Random scaled covariates, nested labels, +-1 outcomes with some signal."""
    X = rng.uniform(-1, 1, (n, p))
    labels = np.column_stack([rng.integers(0, c, n) for c in counts])
    year = rng.integers(1, years + 1, n)
    f = 1.5 * X[:, 0] - X[:, 1] * X[:, 2] + 0.8 * (labels[:, 0] - 0.5)
    y = np.where(rng.uniform(size=n) < 1 / (1 + np.exp(-f)), 1.0, -1.0)
    return Dataset(X, labels, year, y, hierarchy=GroupHierarchy(counts))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# Acceptance criteria register a one-line verdict here; printed at the end of the run.
ACCEPTANCE = {}


def record_criterion(number, passed, detail):
    line = f"criterion {number}: {'PASS' if passed else 'FAIL'} - {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[key])
