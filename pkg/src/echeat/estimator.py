"""scikit-learn style wrapper around the behaviour networks."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import check_classification_targets
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .encoding import N_FEATURES
from .harness import TrainConfig, train
from .models import ARCHITECTURES, Network, build, predict_proba


class BehaviorClassifier(ClassifierMixin, BaseEstimator):
    """Classify 23-bit behaviour vectors as Normal (0) or Abnormal (1).

    Parameters mirror the training protocol: Adam at ``learning_rate`` with L2
    ``weight_decay``, mini-batches of ``batch_size`` for ``epochs`` passes.
    ``random_state`` seeds both the weight initialisation and the shuffling.

    >>> clf = BehaviorClassifier(arch="dnn", epochs=1).fit(X, y)  # doctest: +SKIP
    >>> clf.predict(X[:3])  # doctest: +SKIP
    """

    def __init__(
        self,
        arch: str = "denselstm",
        growth_rate: int = 32,
        keep_prob: float = 0.8,
        learning_rate: float = 1e-5,
        batch_size: int = 32,
        epochs: int = 250,
        weight_decay: float = 1e-4,
        beta1: float = 0.9,
        beta2: float = 0.999,
        random_state: int = 0,
        dtype: str = "float32",
    ):
        self.arch = arch
        self.growth_rate = growth_rate
        self.keep_prob = keep_prob
        self.learning_rate = learning_rate
        self.batch_size = batch_size
        self.epochs = epochs
        self.weight_decay = weight_decay
        self.beta1 = beta1
        self.beta2 = beta2
        self.random_state = random_state
        self.dtype = dtype

    def _build(self, n_classes: int) -> Network:
        if self.arch not in ARCHITECTURES:
            raise ValueError(f"arch must be one of {ARCHITECTURES}, got {self.arch!r}")
        kwargs = dict(n_classes=n_classes, seed=self.random_state)
        if self.arch == "denselstm":
            kwargs.update(growth=self.growth_rate, keep_prob=self.keep_prob)
        return build(self.arch, dtype=np.dtype(self.dtype), **kwargs)

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        check_classification_targets(y)
        if X.shape[1] != N_FEATURES:
            raise ValueError(f"expected {N_FEATURES} features, got {X.shape[1]}")
        self.classes_, y_idx = np.unique(y, return_inverse=True)
        # the network always has at least two outputs
        n_classes = max(2, len(self.classes_))
        self.network_ = self._build(n_classes)
        config = TrainConfig(
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            weight_decay=self.weight_decay,
            beta1=self.beta1,
            beta2=self.beta2,
            seed=self.random_state,
        )
        result = train(self.network_, X, y_idx, config)
        self.loss_history_ = result.loss_history
        self.n_iter_ = result.steps
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X) -> np.ndarray:
        check_is_fitted(self, "network_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {X.shape[1]}")
        return predict_proba(self.network_, X)[:, : len(self.classes_)]

    def predict(self, X) -> np.ndarray:
        proba = self.predict_proba(X)
        return self.classes_[np.argmax(proba, axis=1)]

    def save(self, path) -> None:
        check_is_fitted(self, "network_")
        self.network_.save(path)

    @classmethod
    def load(cls, path, **params) -> "BehaviorClassifier":
        """Rebuild a fitted classifier from a checkpoint (classes assumed 0..C-1)."""
        net = Network.load(path, dtype=np.dtype(params.get("dtype", "float32")))
        clf = cls(arch=net.arch, **params)
        clf.network_ = net
        clf.classes_ = np.arange(net.n_classes)
        clf.n_features_in_ = N_FEATURES
        clf.loss_history_ = []
        clf.n_iter_ = 0
        return clf
