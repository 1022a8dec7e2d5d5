"""Adapter forward pass, residual blending, ratio modes and serialization."""

import math

import numpy as np
import pytest

from embadapt import (
    AdapterParams,
    ArgumentError,
    DegenerateFeatureError,
    FixedRatio,
    FormatError,
    HypernetRatio,
    LearnableRatio,
    ShapeError,
    Variant,
    adapter_forward,
    blend,
    effective_ratios,
    forward_batch,
    init_params,
    initial_ratio_mode,
    load_adapter,
    normalize_rows,
    save_adapter,
    sigmoid,
    softmax_rows,
)


def unit_rows(rng, rows, dim):
    x = rng.standard_normal((rows, dim))
    return x / np.linalg.norm(x, axis=1, keepdims=True)


class TestAdapterForward:
    # hand arithmetic oracle: w1 routes x[0]-x[1] through one hidden unit
    W1 = np.array([[1.0], [-1.0]])
    W2 = np.array([[1.0, 0.0]])

    def test_negative_preactivation_clamps_to_zero(self):
        out = adapter_forward(np.array([0.6, 0.8]), self.W1, self.W2)
        np.testing.assert_array_equal(out, [0.0, 0.0])

    def test_positive_preactivation_passes_through(self):
        out = adapter_forward(np.array([0.8, 0.6]), self.W1, self.W2)
        np.testing.assert_allclose(out, [0.2, 0.0], rtol=0, atol=1e-15)

    def test_zero_first_layer_gives_zero_output(self):
        rng = np.random.default_rng(0)
        for _ in range(5):
            x = rng.standard_normal(6)
            w2 = rng.standard_normal((3, 6))
            out = adapter_forward(x, np.zeros((6, 3)), w2)
            np.testing.assert_array_equal(out, np.zeros(6))

    def test_linear_in_second_layer(self):
        rng = np.random.default_rng(1)
        x = rng.standard_normal(5)
        w1 = rng.standard_normal((5, 2))
        w2 = rng.standard_normal((2, 5))
        np.testing.assert_allclose(
            adapter_forward(x, w1, 3.0 * w2), 3.0 * adapter_forward(x, w1, w2), rtol=1e-12
        )

    def test_matrix_input_rows_transform_independently(self):
        rng = np.random.default_rng(2)
        xs = rng.standard_normal((4, 5))
        w1 = rng.standard_normal((5, 2))
        w2 = rng.standard_normal((2, 5))
        batched = adapter_forward(xs, w1, w2)
        for i, row in enumerate(xs):
            np.testing.assert_allclose(batched[i], adapter_forward(row, w1, w2), rtol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            adapter_forward(np.zeros(3), np.zeros((4, 2)), np.zeros((2, 4)))
        with pytest.raises(ShapeError):
            adapter_forward(np.zeros(4), np.zeros((4, 2)), np.zeros((3, 4)))


class TestBlend:
    def test_hand_oracle_with_renormalization(self):
        out = blend(np.array([0.8, 0.6]), np.array([0.2, 0.0]), 0.5, renormalize=True)
        np.testing.assert_allclose(out, [0.8575, 0.5145], atol=1e-4)

    def test_exact_endpoints(self):
        rng = np.random.default_rng(3)
        original = rng.standard_normal(8)
        adapted = rng.standard_normal(8)
        np.testing.assert_array_equal(blend(original, adapted, 0.0), original)
        np.testing.assert_array_equal(blend(original, adapted, 1.0), adapted)

    def test_ratio_bounds(self):
        with pytest.raises(ArgumentError):
            blend(np.ones(2), np.ones(2), 1.5)
        with pytest.raises(ArgumentError):
            blend(np.ones(2), np.ones(2), -0.1)

    def test_zero_result_under_renormalize(self):
        v = np.array([1.0, -1.0])
        with pytest.raises(DegenerateFeatureError):
            blend(v, -v, 0.5, renormalize=True)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            blend(np.ones(3), np.ones(4), 0.5)


class TestRatioModes:
    def test_fixed_is_identity(self):
        assert effective_ratios(FixedRatio(0.2, 0.6), np.zeros(4)) == (0.2, 0.6)

    def test_learnable_zero_theta_is_half(self):
        assert effective_ratios(LearnableRatio(0.0, 0.0), np.zeros(4)) == (0.5, 0.5)

    def test_hypernet_zero_map_is_half(self):
        rng = np.random.default_rng(4)
        mode = HypernetRatio.zeros(6)
        for _ in range(3):
            assert effective_ratios(mode, rng.standard_normal(6)) == (0.5, 0.5)

    def test_hypernet_responds_to_feature(self):
        mode = HypernetRatio(weights=np.zeros((2, 2)), bias=np.zeros(2))
        mode.weights[0, 0] = 2.0
        alpha, beta = effective_ratios(mode, np.array([1.0, 0.0]))
        assert alpha == pytest.approx(sigmoid(2.0))
        assert beta == 0.5

    def test_fixed_range_validated(self):
        with pytest.raises(ArgumentError):
            effective_ratios(FixedRatio(1.2, 0.5), np.zeros(2))

    def test_initial_mode_matches_requested_ratios(self):
        feature = np.random.default_rng(5).standard_normal(7)
        for kind in ("fixed", "learnable", "hypernet"):
            mode = initial_ratio_mode(kind, 0.3, 0.7, dim=7)
            alpha, beta = effective_ratios(mode, feature)
            assert alpha == pytest.approx(0.3, abs=1e-12)
            assert beta == pytest.approx(0.7, abs=1e-12)

    def test_initial_mode_rejects_boundary_for_trainable_kinds(self):
        initial_ratio_mode("fixed", 0.0, 1.0, dim=4)  # fine for constants
        for kind in ("learnable", "hypernet"):
            with pytest.raises(ArgumentError):
                initial_ratio_mode(kind, 0.0, 0.5, dim=4)
        with pytest.raises(ArgumentError):
            initial_ratio_mode("nonsense", 0.5, 0.5, dim=4)

    def test_sigmoid_stable_at_extremes(self):
        assert sigmoid(1000.0) == 1.0
        assert sigmoid(-1000.0) == 0.0
        assert sigmoid(0.0) == 0.5


class TestForwardBatch:
    def test_two_class_softmax_oracle(self):
        # unit feature aligned with row 0 and orthogonal to row 1 at scale 100
        params = AdapterParams(bottleneck_ratio=2, w1_visual=np.zeros((2, 1)), w2_visual=np.zeros((1, 2)))
        probs, _ = forward_batch(
            np.array([[1.0, 0.0]]),
            np.array([[1.0, 0.0], [0.0, 1.0]]),
            params,
            FixedRatio(0.0, 0.0),
            Variant.VISUAL,
            scale=100.0,
        )
        expected_minor = math.exp(-100.0) / (1.0 + math.exp(-100.0))
        np.testing.assert_allclose(probs[0], [1.0 - expected_minor, expected_minor], rtol=1e-12)
        assert probs[0, 1] == pytest.approx(3.7e-44, rel=1e-2)

    def test_rows_sum_to_one(self):
        rng = np.random.default_rng(6)
        params = init_params(16, 4, Variant.BOTH, seed=1)
        probs, _ = forward_batch(
            unit_rows(rng, 9, 16), unit_rows(rng, 5, 16), params,
            FixedRatio(0.4, 0.3), Variant.BOTH, scale=37.0,
        )
        np.testing.assert_allclose(probs.sum(axis=1), np.ones(9), atol=1e-9)
        assert probs.min() >= 0.0 and probs.max() <= 1.0

    def test_small_scale_approaches_uniform(self):
        rng = np.random.default_rng(7)
        params = init_params(8, 2, Variant.VISUAL, seed=2)
        probs, _ = forward_batch(
            unit_rows(rng, 4, 8), unit_rows(rng, 5, 8), params,
            FixedRatio(0.5, 0.5), Variant.VISUAL, scale=1e-9,
        )
        np.testing.assert_allclose(probs, np.full((4, 5), 0.2), atol=1e-9)

    def test_zero_adapter_matches_plain_cosine_scores(self):
        # blending a zero adapter output scales rows by (1 - ratio);
        # renormalization restores the direction, so probabilities agree
        # up to rounding and predictions agree exactly
        rng = np.random.default_rng(8)
        feats = unit_rows(rng, 6, 8)
        classifier = unit_rows(rng, 3, 8)
        params = AdapterParams(bottleneck_ratio=4, w1_visual=np.zeros((8, 2)), w2_visual=np.zeros((2, 8)))
        probs, _ = forward_batch(feats, classifier, params, FixedRatio(0.7, 0.7), Variant.VISUAL)
        direct = softmax_rows(100.0 * normalize_rows(feats)[0] @ normalize_rows(classifier)[0].T)
        np.testing.assert_allclose(probs, direct, atol=1e-12)
        np.testing.assert_array_equal(probs.argmax(axis=1), direct.argmax(axis=1))

    def test_alpha_zero_argmax_matches_zero_shot_for_any_weights(self):
        rng = np.random.default_rng(9)
        for trial in range(10):
            feats = unit_rows(rng, 12, 10)
            classifier = unit_rows(rng, 4, 10)
            params = init_params(10, 2, Variant.BOTH, seed=trial)
            probs, _ = forward_batch(
                feats, classifier, params, FixedRatio(0.0, 0.0), Variant.BOTH
            )
            baseline = softmax_rows(100.0 * feats @ classifier.T)
            np.testing.assert_array_equal(probs.argmax(axis=1), baseline.argmax(axis=1))

    def test_scale_monotonicity(self):
        rng = np.random.default_rng(10)
        feats = unit_rows(rng, 8, 6)
        classifier = unit_rows(rng, 5, 6)
        params = init_params(6, 2, Variant.VISUAL, seed=3)
        tops = []
        for scale in (0.5, 5.0, 50.0, 500.0):
            probs, _ = forward_batch(
                feats, classifier, params, FixedRatio(0.3, 0.5), Variant.VISUAL, scale=scale
            )
            tops.append(probs.max(axis=1))
        for lo, hi in zip(tops, tops[1:]):
            assert np.all(hi >= lo - 1e-15)

    def test_variant_is_bitwise_independent_of_inactive_branch(self):
        rng = np.random.default_rng(11)
        feats = unit_rows(rng, 7, 8)
        classifier = unit_rows(rng, 3, 8)
        a = init_params(8, 2, Variant.BOTH, seed=4)
        b = init_params(8, 2, Variant.BOTH, seed=4)
        b.w1_text = rng.standard_normal(b.w1_text.shape)
        b.w2_text = rng.standard_normal(b.w2_text.shape)
        pa, _ = forward_batch(feats, classifier, a, FixedRatio(0.4, 0.4), Variant.VISUAL)
        pb, _ = forward_batch(feats, classifier, b, FixedRatio(0.4, 0.4), Variant.VISUAL)
        np.testing.assert_array_equal(pa, pb)
        c = init_params(8, 2, Variant.BOTH, seed=4)
        c.w1_visual = rng.standard_normal(c.w1_visual.shape)
        c.w2_visual = rng.standard_normal(c.w2_visual.shape)
        ta, _ = forward_batch(feats, classifier, a, FixedRatio(0.4, 0.4), Variant.TEXT)
        tc, _ = forward_batch(feats, classifier, c, FixedRatio(0.4, 0.4), Variant.TEXT)
        np.testing.assert_array_equal(ta, tc)

    def test_batch_partitioning_does_not_change_probs(self):
        rng = np.random.default_rng(12)
        feats = unit_rows(rng, 10, 8)
        classifier = unit_rows(rng, 4, 8)
        params = init_params(8, 2, Variant.VISUAL, seed=5)
        whole, _ = forward_batch(feats, classifier, params, FixedRatio(0.6, 0.5), Variant.VISUAL)
        parts = [
            forward_batch(feats[i : i + 5], classifier, params, FixedRatio(0.6, 0.5), Variant.VISUAL)[0]
            for i in (0, 5)
        ]
        np.testing.assert_array_equal(whole, np.vstack(parts))

    def test_tape_records_intermediates(self):
        rng = np.random.default_rng(13)
        feats = unit_rows(rng, 5, 8)
        classifier = unit_rows(rng, 3, 8)
        params = init_params(8, 2, Variant.VISUAL, seed=6)
        _, tape = forward_batch(feats, classifier, params, FixedRatio(0.3, 0.5), Variant.VISUAL)
        assert tape.pre_visual.shape == (5, 4)
        assert tape.hidden_visual.min() >= 0.0
        assert tape.blended_visual.shape == feats.shape
        assert tape.pre_text is None
        assert tape.feature_norms.shape == (5,)
        assert tape.alpha == 0.3

    def test_dimension_mismatch(self):
        params = init_params(8, 2, Variant.VISUAL, seed=0)
        with pytest.raises(ShapeError):
            forward_batch(np.ones((2, 8)), np.ones((3, 9)), params, FixedRatio(), Variant.VISUAL)
        with pytest.raises(ShapeError):
            forward_batch(np.ones((2, 6)), np.ones((3, 6)), params, FixedRatio(), Variant.VISUAL)

    def test_zero_feature_row_degenerate(self):
        params = AdapterParams(bottleneck_ratio=2, w1_visual=np.zeros((4, 2)), w2_visual=np.zeros((2, 4)))
        feats = np.zeros((2, 4))
        with pytest.raises(DegenerateFeatureError):
            forward_batch(feats, np.eye(4)[:2], params, FixedRatio(0.0, 0.0), Variant.VISUAL)


class TestNormalizeRows:
    def test_unit_norm_and_norms_returned(self):
        rng = np.random.default_rng(14)
        rows = rng.standard_normal((6, 5)) * 3.0
        unit, norms = normalize_rows(rows)
        np.testing.assert_allclose(np.linalg.norm(unit, axis=1), np.ones(6), atol=1e-12)
        np.testing.assert_allclose(unit * norms[:, None], rows, rtol=1e-12)

    def test_zero_row_raises(self):
        rows = np.array([[1.0, 0.0], [0.0, 0.0]])
        with pytest.raises(DegenerateFeatureError):
            normalize_rows(rows)


class TestAdapterSerialization:
    def roundtrip(self, tmp_path, params, mode, variant):
        path = tmp_path / "adapter.adpt"
        save_adapter(path, params, mode, variant)
        return load_adapter(path), path

    def test_round_trip_all_variants_and_modes(self, tmp_path):
        modes = [FixedRatio(0.2, 0.6), LearnableRatio(-0.3, 1.7), None]
        for i, variant in enumerate(Variant):
            params = init_params(12, 3, variant, seed=i)
            mode = modes[i] if modes[i] is not None else HypernetRatio(
                weights=np.random.default_rng(i).standard_normal((12, 2)),
                bias=np.array([0.1, -0.2]),
            )
            (loaded_params, loaded_mode, loaded_variant), _ = self.roundtrip(
                tmp_path, params, mode, variant
            )
            assert loaded_variant == variant
            assert type(loaded_mode) is type(mode)
            assert loaded_params.bottleneck_ratio == params.bottleneck_ratio
            for name, m in params.matrices().items():
                np.testing.assert_array_equal(getattr(loaded_params, name), m)
            for name in ("w1_visual", "w2_visual", "w1_text", "w2_text"):
                assert (getattr(loaded_params, name) is None) == (getattr(params, name) is None)
            if isinstance(mode, HypernetRatio):
                np.testing.assert_array_equal(loaded_mode.weights, mode.weights)
                np.testing.assert_array_equal(loaded_mode.bias, mode.bias)
            elif isinstance(mode, LearnableRatio):
                assert (loaded_mode.theta_alpha, loaded_mode.theta_beta) == (-0.3, 1.7)
            else:
                assert (loaded_mode.alpha, loaded_mode.beta) == (0.2, 0.6)

    def test_save_is_deterministic(self, tmp_path):
        params = init_params(8, 2, Variant.BOTH, seed=9)
        a, b = tmp_path / "a.adpt", tmp_path / "b.adpt"
        save_adapter(a, params, FixedRatio(0.1, 0.9), Variant.BOTH)
        save_adapter(b, params, FixedRatio(0.1, 0.9), Variant.BOTH)
        assert a.read_bytes() == b.read_bytes()

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.adpt"
        path.write_bytes(b"JUNKstuff")
        with pytest.raises(FormatError, match="magic"):
            load_adapter(path)

    def test_truncation(self, tmp_path):
        params = init_params(8, 2, Variant.VISUAL, seed=0)
        path = tmp_path / "a.adpt"
        save_adapter(path, params, FixedRatio(), Variant.VISUAL)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 5])
        with pytest.raises(FormatError, match="truncated"):
            load_adapter(path)

    def test_trailing_bytes(self, tmp_path):
        params = init_params(8, 2, Variant.VISUAL, seed=0)
        path = tmp_path / "a.adpt"
        save_adapter(path, params, FixedRatio(), Variant.VISUAL)
        path.write_bytes(path.read_bytes() + b"\x01")
        with pytest.raises(FormatError, match="trailing"):
            load_adapter(path)

    def test_unknown_codes(self, tmp_path):
        params = init_params(8, 2, Variant.VISUAL, seed=0)
        path = tmp_path / "a.adpt"
        save_adapter(path, params, FixedRatio(), Variant.VISUAL)
        blob = bytearray(path.read_bytes())
        blob[8] = 7  # variant code
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError, match="variant"):
            load_adapter(path)
