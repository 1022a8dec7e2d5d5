"""Shared fixtures and randomized-input helpers."""

import numpy as np
import pytest

from embadapt import (
    EmbeddingCache,
    FixedRatio,
    TrainConfig,
    Variant,
    make_synthetic_cache,
    sample_episode,
)

# the standing synthetic regression fixture used across the suite
FIXTURE_SPEC = dict(classes=10, per_class=40, dim=64, text_noise=0.6, feature_noise=0.2, seed=0)


@pytest.fixture(scope="session")
def fixture_cache():
    return make_synthetic_cache(**FIXTURE_SPEC)


@pytest.fixture(scope="session")
def fixture_episode(fixture_cache):
    return sample_episode(fixture_cache, 16, 0)


@pytest.fixture
def small_cache():
    return make_synthetic_cache(4, 10, 16, 0.4, 0.2, 3)


def fixture_train_config(**overrides) -> TrainConfig:
    """The short training recipe that demonstrably learns on the fixture."""
    base = dict(
        shots=16,
        seed=0,
        epochs=50,
        learning_rate=1e-3,
        variant=Variant.VISUAL,
        ratio_mode=FixedRatio(0.6, 0.5),
        bottleneck_ratio=4,
    )
    base.update(overrides)
    return TrainConfig(**base)


def make_random_cache(rng: np.random.Generator) -> EmbeddingCache:
    """A structurally valid cache with randomized shapes and content."""
    k = int(rng.integers(2, 7))
    dim = int(rng.integers(2, 17))
    n = int(rng.integers(k, 40))
    normalized = bool(rng.integers(0, 2))

    feats = rng.standard_normal((n, dim))
    weights = rng.standard_normal((k, dim))
    if normalized:
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        weights /= np.linalg.norm(weights, axis=1, keepdims=True)
    names = [f"label {i} é{rng.integers(0, 1000)}" for i in range(k)]
    cache = EmbeddingCache(
        dim=dim,
        image_features=feats.astype(np.float32),
        labels=rng.integers(0, k, size=n).astype(np.int64),
        class_names=names,
        classifier_weights=weights.astype(np.float32),
        split_tags=rng.integers(0, 3, size=n).astype(np.uint8),
        normalized_flag=normalized,
    )
    cache.validate()
    return cache
