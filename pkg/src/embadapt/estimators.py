"""scikit-learn style estimators wrapping the functional core.

Each classifier takes the frozen per-class weight rows as a constructor
parameter (the same way a vectorizer accepts a fixed vocabulary), fits on
plain (X, y) arrays, and predicts integer class indices aligned with
those rows. All heavy lifting stays in the core modules; these wrappers
exist so the method composes with pipelines, grid search, and
cross-validation utilities.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from .adapters import (
    Variant,
    check_scale,
    forward_batch,
    initial_ratio_mode,
    normalize_rows,
    softmax_rows,
)
from .errors import ArgumentError
from .evaluation import ProbeConfig, train_probe_on_arrays
from .training import TrainConfig, train_on_arrays


def _validated_weights(classifier_weights, dim: int) -> np.ndarray:
    if classifier_weights is None:
        raise ArgumentError("classifier_weights must be provided at construction")
    weights = check_array(classifier_weights, dtype=np.float64)
    if weights.shape[0] < 2:
        raise ArgumentError(f"need at least 2 classifier rows, got {weights.shape[0]}")
    if weights.shape[1] != dim:
        raise ArgumentError(
            f"classifier rows have width {weights.shape[1]}, data has width {dim}"
        )
    return weights


class ZeroShotClassifier(ClassifierMixin, BaseEstimator):
    """Cosine-similarity classification against fixed class weight rows.

    Parameters
    ----------
    classifier_weights : array of shape (n_classes, n_features)
        One frozen weight row per class.
    scale : float, default 100.0
        Multiplier applied to cosine similarities before the softmax.
    """

    def __init__(self, classifier_weights=None, scale=100.0):
        self.classifier_weights = classifier_weights
        self.scale = scale

    def fit(self, X, y=None):
        """No training happens; this validates shapes and freezes state."""
        X = check_array(X, dtype=np.float64)
        check_scale(self.scale)
        weights = _validated_weights(self.classifier_weights, X.shape[1])
        self.weights_ = weights
        self.classes_ = np.arange(weights.shape[0])
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "weights_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ArgumentError(f"X has width {X.shape[1]}, fitted on {self.n_features_in_}")
        unit_x, _ = normalize_rows(X)
        unit_w, _ = normalize_rows(self.weights_)
        return self.scale * (unit_x @ unit_w.T)

    def predict(self, X):
        return np.argmax(self.decision_function(X), axis=1)

    def predict_proba(self, X):
        return softmax_rows(self.decision_function(X))


class ResidualAdapterClassifier(ClassifierMixin, BaseEstimator):
    """Few-shot classifier with trainable residual bottleneck adapters.

    ``alpha`` and ``beta`` are the initial residual ratios under every
    ratio mode: the fixed mode keeps them constant, the learnable mode
    trains their logits, and the hypernet mode starts its bias at those
    logits with zero mixing weights.

    Parameters
    ----------
    classifier_weights : array of shape (n_classes, n_features)
        Frozen per-class weight rows; labels index into these rows.
    variant : {"visual", "text", "both"}, default "visual"
        Which side of the similarity gets an adapter.
    ratio_mode : {"fixed", "learnable", "hypernet"}, default "fixed"
    """

    def __init__(
        self,
        classifier_weights=None,
        variant="visual",
        ratio_mode="fixed",
        alpha=0.2,
        beta=0.5,
        bottleneck_ratio=4,
        epochs=200,
        batch_size=32,
        learning_rate=1e-5,
        momentum=0.9,
        schedule="cosine",
        weight_decay=0.0,
        renormalize=True,
        logit_scale=100.0,
        seed=0,
    ):
        self.classifier_weights = classifier_weights
        self.variant = variant
        self.ratio_mode = ratio_mode
        self.alpha = alpha
        self.beta = beta
        self.bottleneck_ratio = bottleneck_ratio
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.momentum = momentum
        self.schedule = schedule
        self.weight_decay = weight_decay
        self.renormalize = renormalize
        self.logit_scale = logit_scale
        self.seed = seed

    def _train_config(self, dim: int, shots: int) -> TrainConfig:
        return TrainConfig(
            shots=shots,
            seed=self.seed,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            momentum=self.momentum,
            schedule=self.schedule,
            variant=Variant(self.variant),
            ratio_mode=initial_ratio_mode(self.ratio_mode, self.alpha, self.beta, dim),
            bottleneck_ratio=self.bottleneck_ratio,
            weight_decay=self.weight_decay,
            renormalize=self.renormalize,
            logit_scale=self.logit_scale,
        )

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        weights = _validated_weights(self.classifier_weights, X.shape[1])
        num_classes = weights.shape[0]
        y = np.asarray(y)
        if not np.issubdtype(y.dtype, np.integer):
            raise ArgumentError("labels must be integer indices into classifier_weights rows")
        if y.min() < 0 or y.max() >= num_classes:
            raise ArgumentError(f"labels must lie in [0, {num_classes})")

        counts = np.bincount(y, minlength=num_classes)
        shots = max(1, int(counts[counts > 0].min()))
        config = self._train_config(X.shape[1], shots)
        result = train_on_arrays(X, y, weights, config)

        self.weights_ = weights
        self.params_ = result.params
        self.ratio_mode_ = result.ratio_mode
        self.loss_curve_ = result.loss_curve
        self.train_accuracy_curve_ = result.train_accuracy_curve
        self.final_alpha_ = result.final_alpha
        self.final_beta_ = result.final_beta
        self.classes_ = np.arange(num_classes)
        self.n_features_in_ = X.shape[1]
        return self

    def predict_proba(self, X):
        check_is_fitted(self, "params_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ArgumentError(f"X has width {X.shape[1]}, fitted on {self.n_features_in_}")
        probs, _ = forward_batch(
            X, self.weights_, self.params_, self.ratio_mode_, Variant(self.variant),
            scale=self.logit_scale, renormalize=self.renormalize,
        )
        return probs

    def predict(self, X):
        return np.argmax(self.predict_proba(X), axis=1)


class LinearProbeClassifier(ClassifierMixin, BaseEstimator):
    """L2-penalized multinomial logistic regression on frozen features.

    Solved by full-batch gradient descent with a backtracking line search
    until the gradient norm certifies the optimum. ``classes_`` follows
    the usual convention of sorted unique labels.
    """

    def __init__(self, l2=1.0, max_iters=10000, tolerance=1e-6, fixed_step=None):
        self.l2 = l2
        self.max_iters = max_iters
        self.tolerance = tolerance
        self.fixed_step = fixed_step

    def fit(self, X, y):
        X, y = check_X_y(X, y, dtype=np.float64)
        self.classes_, encoded = np.unique(y, return_inverse=True)
        if self.classes_.shape[0] < 2:
            raise ArgumentError("need at least 2 distinct classes")
        config = ProbeConfig(
            l2=self.l2,
            max_iters=self.max_iters,
            tolerance=self.tolerance,
            fixed_step=self.fixed_step,
        )
        result = train_probe_on_arrays(X, encoded, self.classes_.shape[0], config)
        self.coef_ = result.weights
        self.intercept_ = result.bias
        self.n_iter_ = result.iterations
        self.gradient_norm_ = result.gradient_norm
        self.objective_ = result.objective
        self.converged_ = result.converged
        self.n_features_in_ = X.shape[1]
        return self

    def decision_function(self, X):
        check_is_fitted(self, "coef_")
        X = check_array(X, dtype=np.float64)
        if X.shape[1] != self.n_features_in_:
            raise ArgumentError(f"X has width {X.shape[1]}, fitted on {self.n_features_in_}")
        return X @ self.coef_.T + self.intercept_

    def predict_proba(self, X):
        return softmax_rows(self.decision_function(X))

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]
