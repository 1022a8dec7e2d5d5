"""The scikit-learn estimator layer over the functional core."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from embadapt import (
    ArgumentError,
    LinearProbeClassifier,
    ResidualAdapterClassifier,
    ZeroShotClassifier,
    eval_zero_shot,
)


@pytest.fixture
def fixture_arrays(fixture_cache, fixture_episode):
    train_rows = fixture_episode.indices
    test_rows = fixture_cache.split_indices("test")
    return {
        "weights": fixture_cache.classifier_weights.astype(np.float64),
        "X_train": fixture_cache.image_features[train_rows].astype(np.float64),
        "y_train": fixture_cache.labels[train_rows],
        "X_test": fixture_cache.image_features[test_rows].astype(np.float64),
        "y_test": fixture_cache.labels[test_rows],
    }


class TestZeroShotClassifier:
    def test_score_matches_report(self, fixture_cache, fixture_arrays):
        model = ZeroShotClassifier(classifier_weights=fixture_arrays["weights"])
        model.fit(fixture_arrays["X_train"])
        score = model.score(fixture_arrays["X_test"], fixture_arrays["y_test"])
        assert score == eval_zero_shot(fixture_cache).overall_accuracy

    def test_predict_proba_rows_sum_to_one(self, fixture_arrays):
        model = ZeroShotClassifier(classifier_weights=fixture_arrays["weights"]).fit(
            fixture_arrays["X_train"]
        )
        probs = model.predict_proba(fixture_arrays["X_test"][:7])
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(7), atol=1e-9)

    def test_requires_weights(self, fixture_arrays):
        with pytest.raises(ArgumentError):
            ZeroShotClassifier().fit(fixture_arrays["X_train"])

    def test_width_mismatch(self, fixture_arrays):
        model = ZeroShotClassifier(classifier_weights=fixture_arrays["weights"][:, :32])
        with pytest.raises(ArgumentError):
            model.fit(fixture_arrays["X_train"])

    def test_unfitted_predict_raises(self, fixture_arrays):
        model = ZeroShotClassifier(classifier_weights=fixture_arrays["weights"])
        with pytest.raises(NotFittedError):
            model.predict(fixture_arrays["X_test"])


class TestResidualAdapterClassifier:
    def make(self, fixture_arrays, **overrides):
        kwargs = dict(
            classifier_weights=fixture_arrays["weights"],
            alpha=0.6,
            epochs=20,
            learning_rate=1e-3,
            seed=0,
        )
        kwargs.update(overrides)
        return ResidualAdapterClassifier(**kwargs)

    def test_fit_learns_beyond_zero_shot(self, fixture_cache, fixture_arrays):
        model = self.make(fixture_arrays).fit(
            fixture_arrays["X_train"], fixture_arrays["y_train"]
        )
        score = model.score(fixture_arrays["X_test"], fixture_arrays["y_test"])
        assert score > eval_zero_shot(fixture_cache).overall_accuracy
        assert len(model.loss_curve_) == 20
        assert model.loss_curve_[-1] < model.loss_curve_[0]
        assert model.final_alpha_ == 0.6

    def test_clone_preserves_params(self, fixture_arrays):
        model = self.make(fixture_arrays, ratio_mode="learnable", beta=0.4)
        cloned = clone(model)
        assert cloned.get_params()["ratio_mode"] == "learnable"
        assert cloned.get_params()["beta"] == 0.4
        assert cloned.get_params()["epochs"] == 20

    def test_deterministic_across_fits(self, fixture_arrays):
        a = self.make(fixture_arrays).fit(fixture_arrays["X_train"], fixture_arrays["y_train"])
        b = self.make(fixture_arrays).fit(fixture_arrays["X_train"], fixture_arrays["y_train"])
        np.testing.assert_array_equal(a.params_.w1_visual, b.params_.w1_visual)
        assert a.loss_curve_ == b.loss_curve_

    def test_label_validation(self, fixture_arrays):
        bad = fixture_arrays["y_train"].astype(np.float64) + 0.5
        with pytest.raises((ArgumentError, ValueError)):
            self.make(fixture_arrays).fit(fixture_arrays["X_train"], bad)
        out_of_range = fixture_arrays["y_train"].copy()
        out_of_range[0] = 10
        with pytest.raises(ArgumentError):
            self.make(fixture_arrays).fit(fixture_arrays["X_train"], out_of_range)

    def test_predict_proba_shape(self, fixture_arrays):
        model = self.make(fixture_arrays, epochs=2).fit(
            fixture_arrays["X_train"], fixture_arrays["y_train"]
        )
        probs = model.predict_proba(fixture_arrays["X_test"][:5])
        assert probs.shape == (5, 10)
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(5), atol=1e-9)

    def test_unfitted_predict_raises(self, fixture_arrays):
        with pytest.raises(NotFittedError):
            self.make(fixture_arrays).predict(fixture_arrays["X_test"])


class TestLinearProbeClassifier:
    def test_separable_data(self):
        rng = np.random.default_rng(0)
        X = np.vstack([
            rng.normal((3.0, 3.0), 0.3, size=(15, 2)),
            rng.normal((-3.0, -3.0), 0.3, size=(15, 2)),
        ])
        y = np.array([0] * 15 + [1] * 15)
        model = LinearProbeClassifier(l2=0.01).fit(X, y)
        assert model.score(X, y) == 1.0
        assert model.converged_
        assert model.gradient_norm_ < 1e-6

    def test_non_contiguous_labels_round_trip(self):
        rng = np.random.default_rng(1)
        X = np.vstack([
            rng.normal((3.0, 0.0), 0.3, size=(10, 2)),
            rng.normal((-3.0, 0.0), 0.3, size=(10, 2)),
        ])
        y = np.array([30] * 10 + [77] * 10)
        model = LinearProbeClassifier().fit(X, y)
        np.testing.assert_array_equal(model.classes_, [30, 77])
        assert set(model.predict(X)) <= {30, 77}
        assert model.score(X, y) == 1.0

    def test_probe_on_fixture(self, fixture_arrays):
        model = LinearProbeClassifier().fit(
            fixture_arrays["X_train"], fixture_arrays["y_train"]
        )
        assert model.converged_
        assert model.score(fixture_arrays["X_test"], fixture_arrays["y_test"]) > 0.9

    def test_single_class_rejected(self):
        X = np.ones((4, 3))
        with pytest.raises(ArgumentError):
            LinearProbeClassifier().fit(X, np.zeros(4, dtype=int))

    def test_clone(self):
        model = LinearProbeClassifier(l2=0.5, max_iters=50)
        cloned = clone(model)
        assert cloned.get_params() == {
            "l2": 0.5,
            "max_iters": 50,
            "tolerance": 1e-6,
            "fixed_step": None,
        }
