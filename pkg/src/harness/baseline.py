"""L2-regularized linear logistic baseline on the group-augmented design.

Features are ``[X, Z, X (x) Z]`` (row-wise Kronecker product), so each group
column carries its own intercept and slopes. The penalty is chosen by
stratified 5-fold cross-validation on log-loss.
"""

from __future__ import annotations

import numpy as np
from sklearn.linear_model import LogisticRegressionCV

from .data import Dataset


def group_augmented_features(X, Z) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    Z = np.asarray(Z, dtype=float)
    inter = (X[:, :, None] * Z[:, None, :]).reshape(X.shape[0], -1)
    return np.hstack([X, Z, inter])


class LinearLogisticBaseline:
    def __init__(self, Cs=10, folds=5, seed=0, max_iter=2000):
        self.Cs = Cs
        self.folds = folds
        self.seed = seed
        self.max_iter = max_iter
        self.model_ = None

    def fit(self, train: Dataset) -> "LinearLogisticBaseline":
        from sklearn.model_selection import StratifiedKFold

        cv = StratifiedKFold(self.folds, shuffle=True, random_state=self.seed)
        self.model_ = LogisticRegressionCV(Cs=self.Cs, cv=cv, penalty="l2", scoring="neg_log_loss",
                                           max_iter=self.max_iter)
        self.model_.fit(group_augmented_features(train.X, train.Z), train.y)
        return self

    def decision_function(self, test: Dataset) -> np.ndarray:
        return self.model_.decision_function(group_augmented_features(test.X, test.Z))
