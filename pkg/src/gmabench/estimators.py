"""Scikit-learn style classifier facade over the temporal CNN.

The estimator accepts feature tensors of shape (n_samples, 250, channels)
as produced by :class:`gmabench.features.PoseFeatureTransformer`, so the
two compose in a standard pipeline and work with the usual model-selection
utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.exceptions import NotFittedError

from .evaluation import best_of_repeats
from .neural import NetworkSpec, TrainConfig, train
from ._validation import check_binary_labels, check_feature_tensor


class TemporalConvNetClassifier(BaseEstimator, ClassifierMixin):
    """Binary movement classifier with early-stopped from-scratch training."""

    def __init__(
        self,
        filters: int = 64,
        filter_len: int = 7,
        fc_sizes: tuple[int, ...] = (200, 100),
        dropout: float = 0.1,
        learning_rate: float = 1e-3,
        batch_size: int = 32,
        val_fraction: float = 0.125,
        patience: int = 10,
        max_epochs: int = 500,
        repeats: int = 1,
        seed: int = 0,
    ):
        self.filters = filters
        self.filter_len = filter_len
        self.fc_sizes = fc_sizes
        self.dropout = dropout
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.val_fraction = val_fraction
        self.patience = patience
        self.max_epochs = max_epochs
        self.repeats = repeats
        self.seed = seed

    def _spec(self, channels: int, frames: int) -> NetworkSpec:
        return NetworkSpec(
            channels=channels,
            frames=frames,
            filters=self.filters,
            filter_len=self.filter_len,
            fc_sizes=tuple(self.fc_sizes),
            dropout=self.dropout,
        )

    def _config(self, seed: int) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            val_fraction=self.val_fraction,
            patience=self.patience,
            max_epochs=self.max_epochs,
            seed=seed,
        )

    def fit(self, X, y):
        X = check_feature_tensor(X)
        y = check_binary_labels(y, n=X.shape[0])
        spec = self._spec(channels=X.shape[2], frames=X.shape[1])

        if self.repeats <= 1:
            net, history = train(X, y, spec, self._config(self.seed))
            self.net_, self.history_ = net, history
        else:
            histories = {}

            def run(run_seed: int):
                net, history = train(X, y, spec, self._config(run_seed))
                histories[run_seed] = history
                return net, history.best_val_acc

            net, selection = best_of_repeats(run, repeats=self.repeats, seed=self.seed)
            self.net_ = net
            self.history_ = histories[self.seed + selection.chosen]
            self.selection_ = selection
        self.classes_ = np.array([0, 1])
        return self

    def _require_fitted(self):
        if not hasattr(self, "net_"):
            raise NotFittedError("call fit before predicting")

    def predict_proba(self, X):
        self._require_fitted()
        X = check_feature_tensor(X)
        p = self.net_.predict_proba(X)
        return np.column_stack([1.0 - p, p])

    def predict(self, X):
        self._require_fitted()
        return (self.predict_proba(X)[:, 1] > 0.5).astype(np.int64)

    def score(self, X, y):
        y = check_binary_labels(y)
        return float(np.mean(self.predict(X) == y))
