# %% [markdown]
# # Kernel logistic regression and the hypergradient
#
# For a fixed Gram matrix the latent function is the Newton mode of the
# penalized log-likelihood. The kernel parameters are then tuned by gradient
# descent on a held-out log-loss, differentiated through a fixed number of
# Newton steps. We check that gradient against central finite differences.

# %%
import numpy as np
from scipy.special import expit

from harness.data import Dataset, GroupHierarchy
from harness.hyperopt import UnconstrainedParams, hypergradient, sample_draw
from harness.klr import SolverConfig, fit_klr, klr_objective

# %% [markdown]
# A one-point problem: with K = [[1]] and y = +1 the mode solves
# sigmoid(-f) = 2f.

# %%
m = fit_klr(np.array([[1.0]]), np.array([1.0]), SolverConfig(lam=1.0))
print(m.f_hat[0], expit(-m.f_hat[0]) - 2 * m.f_hat[0], m.iterations)

# %% [markdown]
# A random problem: the objective path never decreases.

# %%
rng = np.random.default_rng(1)
A = rng.normal(size=(30, 5))
K = A @ A.T + 0.1 * np.eye(30)
y = np.where(rng.uniform(size=30) < 0.5, 1.0, -1.0)
m = fit_klr(K, y)
print(np.round(m.psi_path, 4), klr_objective(m.f_hat, K, y, 1.0))

# %% [markdown]
# Hypergradient: unrolled reverse pass vs finite differences.

# %%
n = 40
X = rng.uniform(-1, 1, (n, 3))
labels = rng.integers(0, 2, (n, 1))
y = np.where(rng.uniform(size=n) < expit(2 * X[:, 0] + labels[:, 0]), 1.0, -1.0)
ds = Dataset(X, labels, np.ones(n, int), y, hierarchy=GroupHierarchy((2,)))
u = UnconstrainedParams.initial(3, ds.design.p_g, Q=2, Q_g=1)
draw = sample_draw(n, 30, 10, seed=0, t=0)
loss, g_unrolled = hypergradient(u, ds, draw, "unrolled_newton")
_, g_fd = hypergradient(u, ds, draw, "finite_difference")
print("holdout loss", loss)
print(np.c_[g_unrolled.flatten(), g_fd.flatten()][:8])
print("relative error", np.linalg.norm(g_unrolled.flatten() - g_fd.flatten()) / np.linalg.norm(g_fd.flatten()))
