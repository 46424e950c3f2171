# %% [markdown]
# # Importance, heterogeneity and the kernel heatmap
#
# After training, the covariate parameters give one-way (diagonal) and two-way
# (off-diagonal) importances, the group parameters say how much each group
# column moves the kernel, and the group-sorted Gram matrix shows the block
# structure the group multiplier induces.

# %%
import os
import tempfile

import numpy as np

from harness.data import scale_covariates
from harness.hyperopt import OptimizerConfig, train_sgd
from harness.metrics import block_means, heterogeneity_report, importance_matrix, kernel_heatmap
from harness.simulate import SimConfig, generate_dataset

sim = generate_dataset(SimConfig(n=1000, p=25), setting=1, seed=2)
X, scaling = scale_covariates(sim.dataset.X)
ds = sim.dataset.with_X(X)
trace = train_sgd(ds, OptimizerConfig(iterations=50, batch_size=128, holdout_size=128, seed=2),
                  kinds=scaling.kinds())
params, params_g = trace.params

# %%
imp = importance_matrix(params)
top = np.argsort(-np.diag(imp.values))[:8]
print("top one-way:", [imp.names[j] for j in top])
print(heterogeneity_report(params_g, ds.design.column_names()))

# %%
pick = np.sort(np.random.default_rng(0).choice(ds.n, 200, replace=False))
sub = ds.subset(pick)
out = os.path.join(tempfile.mkdtemp(), "heatmap.csv")
K, order = kernel_heatmap(sub, params, params_g, scaling.kinds(), out)
print("written", out, K.shape)
print("within / across group mean:", block_means(K, sub.group_labels[order, 0]))
