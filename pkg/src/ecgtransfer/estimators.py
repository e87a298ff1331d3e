"""sklearn-compatible wrappers around the networks and the training loop.

>>> reg = EcgRegressor(parameter="QRS", max_epochs=40).fit(X_a, qrs_a)
>>> clf = EcgClassifier(init_from=reg, freeze_layers=7).fit(X_b, labels_b)
>>> clf.predict_proba(X_test)
"""
from __future__ import annotations

from pathlib import Path

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .dataset import N_CLASSES, Task, split_counts
from .model import DEFAULT_BACKBONE, EcgNet, predict, registry_build, softmax
from .training import TrainConfig, fit, load_checkpoint, model_from_checkpoint
from .transfer import freeze_prefix, swap_head
from .validation import check_signals, check_targets


class _EcgNetEstimator(BaseEstimator):
    def __init__(self, model="1dcnn", architecture=None, lr=0.01, gamma=0.99, patience=50,
                 max_epochs=500, batch_size=32, validation_fraction=0.125, stop_at=None,
                 random_state=0):
        self.model = model
        self.architecture = architecture
        self.lr = lr
        self.gamma = gamma
        self.patience = patience
        self.max_epochs = max_epochs
        self.batch_size = batch_size
        self.validation_fraction = validation_fraction
        self.stop_at = stop_at
        self.random_state = random_state

    def _train_config(self) -> TrainConfig:
        return TrainConfig(lr=self.lr, gamma=self.gamma, patience=self.patience,
                           max_epochs=self.max_epochs, batch_size=self.batch_size,
                           stop_at=self.stop_at)

    def _input_shape(self):
        arch = self.architecture or DEFAULT_BACKBONE
        return arch.n_leads, arch.n_samples

    def _check_X(self, X):
        return check_signals(X, *self._input_shape())

    def _holdout(self, X, y, eval_set):
        if eval_set is not None:
            X_val, y_val = eval_set
            return (X, y), (self._check_X(X_val), self._check_y(y_val, len(X_val)))
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1) when eval_set is absent")
        order = np.random.default_rng(self.random_state).permutation(len(X))
        n_val = max(1, int(round(self.validation_fraction * len(X))))
        val, tr = order[:n_val], order[n_val:]
        return (X[tr], y[tr]), (X[val], y[val])

    def _fit_network(self, net: EcgNet, X, y, eval_set, task: Task):
        X = self._check_X(X)
        y = self._check_y(y, len(X))
        train, val = self._holdout(X, y, eval_set)
        result = fit(net, train, val, task, self._train_config(), seed=self.random_state)
        self.model_ = net
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.best_score_ = result.best_metric
        self.checkpoint_ = result.checkpoint
        self.n_features_in_ = X.shape[1]
        return self


class EcgRegressor(RegressorMixin, _EcgNetEstimator):
    """Predict one ECG interval or heart rate from ``[n, 8, 5000]`` signals."""

    def __init__(self, parameter="HR", model="1dcnn", architecture=None, lr=0.01, gamma=0.99,
                 patience=50, max_epochs=500, batch_size=32, validation_fraction=0.125,
                 stop_at=None, random_state=0):
        super().__init__(model, architecture, lr, gamma, patience, max_epochs, batch_size,
                         validation_fraction, stop_at, random_state)
        self.parameter = parameter

    def _check_y(self, y, n):
        return check_targets(y, n)

    def fit(self, X, y, eval_set=None):
        net = registry_build(self.model, "regression", self.random_state, self.architecture)
        return self._fit_network(net, X, y, eval_set, Task("regression", self.parameter))

    def predict(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, self._check_X(X))[:, 0]


class EcgClassifier(ClassifierMixin, _EcgNetEstimator):
    """Five-class diagnostic classifier.

    ``init_from`` accepts a fitted :class:`EcgRegressor`, a regression network,
    or a path to a regression checkpoint; its weights seed every layer but the
    output layer. ``freeze_layers`` then fixes that many leading layers.
    """

    def __init__(self, init_from=None, freeze_layers=0, n_classes=N_CLASSES, model="1dcnn",
                 architecture=None, lr=0.01, gamma=0.99, patience=50, max_epochs=500,
                 batch_size=32, validation_fraction=0.125, stop_at=None, random_state=0):
        super().__init__(model, architecture, lr, gamma, patience, max_epochs, batch_size,
                         validation_fraction, stop_at, random_state)
        self.init_from = init_from
        self.freeze_layers = freeze_layers
        self.n_classes = n_classes

    def _check_y(self, y, n):
        y = check_targets(y, n, integer=True)
        if y.min() < 0 or y.max() >= self.n_classes:
            raise ValueError(f"labels must lie in [0, {self.n_classes})")
        return y

    def _input_shape(self):
        source = self._source_network()
        if source is not None:
            return source.n_leads, source.n_samples
        return super()._input_shape()

    def _source_network(self):
        src = self.init_from
        if src is None:
            return None
        if isinstance(src, EcgRegressor):
            check_is_fitted(src, "model_")
            return src.model_
        if isinstance(src, (str, Path)):
            return model_from_checkpoint(load_checkpoint(src))
        return src

    def fit(self, X, y, eval_set=None):
        source = self._source_network()
        if source is None:
            net = registry_build(self.model, "classification", self.random_state,
                                 self.architecture, self.n_classes)
        else:
            net = swap_head(source, seed=self.random_state, n_classes=self.n_classes)
        freeze_prefix(net, self.freeze_layers)
        self.classes_ = np.arange(self.n_classes)
        return self._fit_network(net, X, y, eval_set, Task("classification"))

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return predict(self.model_, self._check_X(X))

    def predict_proba(self, X):
        return softmax(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
