"""scikit-learn style wrapper around training and inference."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.metrics import r2_score
from sklearn.utils import check_array, check_consistent_length
from sklearn.utils.validation import check_is_fitted

from .linop import LinearOperator
from .solver import infer, predict
from .unroll import TrainConfig, init_params, train

__all__ = ["MLCSCRegressor"]


def _check_samples(a, name):
    a = check_array(a, dtype=np.float64, allow_nd=True, ensure_2d=False)
    if a.ndim < 2:
        raise ValueError(f"{name} needs a leading sample axis and at least one more axis")
    return a


def _operators(operators, n):
    if operators is None or isinstance(operators, LinearOperator):
        return [operators] * n
    operators = list(operators)
    if len(operators) != n:
        raise ValueError(f"got {len(operators)} operators for {n} samples")
    return operators


class MLCSCRegressor(RegressorMixin, BaseEstimator):
    """Learned multi-layer convolutional sparse coding restoration model.

    ``X`` holds observations ``y_k = M_k z_k`` with samples on the first
    axis and ``y`` holds the clean signals, shape ``(n, C, *spatial)``.
    ``operators`` is ``None`` (identity), one shared operator, or one per
    sample. Signals must carry a channel axis; 1-D signals are
    ``(n, C, length)``.

    Parameters
    ----------
    filters : tuple of int
        Atoms per layer.
    kernel_sizes : tuple of int
        Odd kernel extent per layer, applied along every spatial axis.
    n_sweeps : int
        Unrolled solver sweeps used in training and prediction.
    init : {"random", "delta"}
        ``"delta"`` starts from a model that passes ``M^T y`` through.
    """

    def __init__(self, filters=(8, 4), kernel_sizes=(5, 3), n_sweeps=10, bias=0.01,
                 init="random", noise=0.1, learning_rate=1e-2, epochs=10, batch_size=8,
                 optimizer="adam", clip=1.0, random_state=0):
        self.filters = filters
        self.kernel_sizes = kernel_sizes
        self.n_sweeps = n_sweeps
        self.bias = bias
        self.init = init
        self.noise = noise
        self.learning_rate = learning_rate
        self.epochs = epochs
        self.batch_size = batch_size
        self.optimizer = optimizer
        self.clip = clip
        self.random_state = random_state

    def fit(self, X, y, operators=None):
        X = _check_samples(X, "X")
        y = _check_samples(y, "y")
        check_consistent_length(X, y)
        if y.ndim < 3:
            raise ValueError("y must be shaped (n_samples, channels, *spatial)")
        if len(self.filters) != len(self.kernel_sizes):
            raise ValueError("filters and kernel_sizes need one entry per layer")
        if self.init not in ("random", "delta"):
            raise ValueError(f"init must be 'random' or 'delta', got {self.init!r}")
        ops = _operators(operators, len(X))
        signal_shape = y.shape[1:]
        sd = len(signal_shape) - 1
        kernels = [(int(k),) * sd for k in self.kernel_sizes]
        seed = int(self.random_state or 0)
        gains = np.ones(signal_shape[0]) if self.init == "delta" else None
        start = init_params([signal_shape[0], *self.filters], kernels, signal_shape, ops[0],
                            self.n_sweeps, self.bias, seed, delta_gains=gains, noise=self.noise)
        config = TrainConfig(learning_rate=self.learning_rate, batch_size=self.batch_size,
                             epochs=self.epochs, seed=seed, optimizer=self.optimizer,
                             clip=self.clip)
        result = train(list(zip(X, ops, y)), start, config)
        self.params_ = result.params
        self.train_loss_ = list(result.epoch_loss)
        self.signal_shape_ = signal_shape
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _solve(self, X, operators):
        check_is_fitted(self, "params_")
        X = _check_samples(X, "X")
        return [infer(self.params_, obs, op) for obs, op in zip(X, _operators(operators, len(X)))]

    def predict(self, X, operators=None):
        """Restored signals, shape ``(n, C, *spatial)``."""
        return np.stack([predict(self.params_, s) for s in self._solve(X, operators)])

    def transform(self, X, operators=None):
        """Top-layer codes after inference, shape ``(n, K_N, *spatial)``."""
        return np.stack([s.codes[-1] for s in self._solve(X, operators)])

    def score(self, X, y, operators=None, sample_weight=None):
        """Coefficient of determination over flattened signals."""
        pred = self.predict(X, operators)
        y = _check_samples(y, "y")
        weights = None
        if sample_weight is not None:
            weights = np.repeat(np.asarray(sample_weight, dtype=float), pred[0].size)
        return r2_score(y.ravel(), pred.ravel(), sample_weight=weights)
