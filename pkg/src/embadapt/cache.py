"""Embedding cache files, split handling and few-shot episode sampling.

A cache bundles everything the training engine needs: frozen image
features, the matching classifier weight rows produced upstream from
prompted class names, integer labels, class names and train/val/test
split tags. The engine never sees an image or a token; the cache file is
the only data boundary.

Binary layout (little-endian, no compression)::

    magic               4 bytes   b"EMBC"
    format_version      u32       currently 1
    dim                 u32       embedding width D
    num_images          u64
    num_classes         u32       K
    normalized_flag     u8        1 if all rows are unit L2 norm
    reserved            7 bytes   zeros
    image_features      num_images * dim  f32
    labels              num_images        u32
    split_tags          num_images        u8   (0=train, 1=val, 2=test)
    class_names         per class: u16 byte length + UTF-8 bytes
    classifier_weights  num_classes * dim f32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from . import seeding
from .errors import (
    ArgumentError,
    FormatError,
    InsufficientShotsError,
    ValidationError,
)

MAGIC = b"EMBC"
FORMAT_VERSION = 1
HEADER = struct.Struct("<4sIIQIB7s")

SPLIT_TRAIN = 0
SPLIT_VAL = 1
SPLIT_TEST = 2
SPLIT_NAMES = {"train": SPLIT_TRAIN, "val": SPLIT_VAL, "test": SPLIT_TEST}

UNIT_NORM_TOL = 1e-3


@dataclass(frozen=True)
class EmbeddingCache:
    """Immutable bundle of frozen features and classifier weights."""

    dim: int
    image_features: np.ndarray   # (num_images, dim) float32
    labels: np.ndarray           # (num_images,) int64, values in [0, K)
    class_names: list[str]
    classifier_weights: np.ndarray  # (K, dim) float32
    split_tags: np.ndarray       # (num_images,) uint8
    normalized_flag: bool = True

    @property
    def num_images(self) -> int:
        return self.image_features.shape[0]

    @property
    def num_classes(self) -> int:
        return len(self.class_names)

    def split_indices(self, split: str) -> np.ndarray:
        """Indices of images carrying the given split tag."""
        if split not in SPLIT_NAMES:
            raise ArgumentError(f"unknown split {split!r}; expected one of {sorted(SPLIT_NAMES)}")
        return np.flatnonzero(self.split_tags == SPLIT_NAMES[split])

    def validate(self) -> None:
        """Raise ValidationError unless every cache invariant holds."""
        k = self.num_classes
        if k < 2:
            raise ValidationError(f"need at least 2 classes, got {k}")
        if self.dim < 2:
            raise ValidationError(f"need dim >= 2, got {self.dim}")
        feats = self.image_features
        if feats.ndim != 2 or feats.shape[1] != self.dim:
            raise ValidationError(f"image_features shape {feats.shape} inconsistent with dim {self.dim}")
        n = feats.shape[0]
        if n < k:
            raise ValidationError(f"need at least one image per class ({k}), got {n}")
        if feats.dtype != np.float32 or self.classifier_weights.dtype != np.float32:
            raise ValidationError("feature and classifier matrices must be float32")
        if self.classifier_weights.shape != (k, self.dim):
            raise ValidationError(
                f"classifier_weights shape {self.classifier_weights.shape} != ({k}, {self.dim})"
            )
        if self.labels.shape != (n,):
            raise ValidationError(f"labels shape {self.labels.shape} != ({n},)")
        if self.labels.min(initial=0) < 0 or (n > 0 and self.labels.max() >= k):
            raise ValidationError(f"labels must lie in [0, {k})")
        if self.split_tags.shape != (n,):
            raise ValidationError(f"split_tags shape {self.split_tags.shape} != ({n},)")
        if self.split_tags.max(initial=0) > SPLIT_TEST:
            raise ValidationError("split_tags must be 0 (train), 1 (val) or 2 (test)")
        if len(set(self.class_names)) != k or any(not name for name in self.class_names):
            raise ValidationError("class names must be unique and non-empty")
        if not np.isfinite(feats).all() or not np.isfinite(self.classifier_weights).all():
            raise ValidationError("features and classifier weights must be finite")
        if self.normalized_flag:
            for tag, rows in (("image_features", feats), ("classifier_weights", self.classifier_weights)):
                norms = np.linalg.norm(rows.astype(np.float64), axis=1)
                worst = float(np.abs(norms - 1.0).max(initial=0.0))
                if worst > UNIT_NORM_TOL:
                    raise ValidationError(
                        f"normalized_flag is set but a {tag} row deviates from unit norm by {worst:.2e}"
                    )

    def _freeze(self) -> "EmbeddingCache":
        for arr in (self.image_features, self.labels, self.classifier_weights, self.split_tags):
            arr.setflags(write=False)
        return self


@dataclass(frozen=True)
class Episode:
    """Seeded K-shot index selection over a cache's train split.

    ``indices`` is flat but grouped by class: the first ``shots`` entries
    belong to class 0, the next ``shots`` to class 1, and so on.
    """

    shots: int
    seed: int
    indices: np.ndarray = field(repr=False)

    def per_class(self) -> np.ndarray:
        return self.indices.reshape(-1, self.shots)


def save_cache(cache: EmbeddingCache, path) -> None:
    """Write a cache in the binary layout above; deterministic bytes."""
    cache.validate()
    blob = cache_to_bytes(cache)
    with open(path, "wb") as fh:
        fh.write(blob)


def cache_to_bytes(cache: EmbeddingCache) -> bytes:
    parts = [
        HEADER.pack(
            MAGIC,
            FORMAT_VERSION,
            cache.dim,
            cache.num_images,
            cache.num_classes,
            1 if cache.normalized_flag else 0,
            b"\x00" * 7,
        ),
        np.ascontiguousarray(cache.image_features, dtype="<f4").tobytes(),
        np.ascontiguousarray(cache.labels, dtype="<u4").tobytes(),
        np.ascontiguousarray(cache.split_tags, dtype="u1").tobytes(),
    ]
    for name in cache.class_names:
        encoded = name.encode("utf-8")
        if len(encoded) > 0xFFFF:
            raise ValidationError(f"class name too long to encode: {name[:32]}...")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
    parts.append(np.ascontiguousarray(cache.classifier_weights, dtype="<f4").tobytes())
    return b"".join(parts)


def load_cache(path) -> EmbeddingCache:
    """Read and validate a cache file."""
    with open(path, "rb") as fh:
        blob = fh.read()
    return cache_from_bytes(blob)


def cache_from_bytes(blob: bytes) -> EmbeddingCache:
    if len(blob) < HEADER.size:
        raise FormatError(f"file too short for header ({len(blob)} bytes)")
    magic, version, dim, num_images, num_classes, norm_flag, _ = HEADER.unpack_from(blob, 0)
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}; not an embedding cache file")
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported format version {version}")

    offset = HEADER.size

    def take(nbytes: int, what: str) -> bytes:
        nonlocal offset
        if offset + nbytes > len(blob):
            raise FormatError(f"file truncated inside {what}")
        chunk = blob[offset : offset + nbytes]
        offset += nbytes
        return chunk

    feats = np.frombuffer(take(num_images * dim * 4, "image features"), dtype="<f4")
    feats = feats.reshape(num_images, dim).copy()
    labels = np.frombuffer(take(num_images * 4, "labels"), dtype="<u4").astype(np.int64)
    tags = np.frombuffer(take(num_images, "split tags"), dtype="u1").copy()
    names = []
    for i in range(num_classes):
        (length,) = struct.unpack("<H", take(2, f"class name {i} length"))
        raw = take(length, f"class name {i}")
        try:
            names.append(raw.decode("utf-8"))
        except UnicodeDecodeError as exc:
            raise FormatError(f"class name {i} is not valid UTF-8") from exc
    weights = np.frombuffer(take(num_classes * dim * 4, "classifier weights"), dtype="<f4")
    weights = weights.reshape(num_classes, dim).copy()
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes after classifier weights")

    cache = EmbeddingCache(
        dim=dim,
        image_features=feats,
        labels=labels,
        class_names=names,
        classifier_weights=weights,
        split_tags=tags,
        normalized_flag=bool(norm_flag),
    )
    cache.validate()
    return cache._freeze()


def sample_episode(cache: EmbeddingCache, shots: int, seed: int) -> Episode:
    """Sample `shots` train images per class, uniformly without replacement.

    Each class draws from its own generator seeded by (seed, class index),
    so adding or removing one class leaves every other class's selection
    unchanged.
    """
    if shots < 1:
        raise ArgumentError(f"shots must be positive, got {shots}")
    seed = seeding.check_seed(seed)
    train = cache.split_indices("train")
    chosen = []
    for cls in range(cache.num_classes):
        pool = train[cache.labels[train] == cls]
        if pool.size < shots:
            raise InsufficientShotsError(
                f"class {cls} ({cache.class_names[cls]!r}) has {pool.size} train images, "
                f"fewer than the requested {shots} shots"
            )
        rng = seeding.derive_rng(seed, seeding.EPISODE, cls)
        picked = rng.choice(pool, size=shots, replace=False)
        chosen.append(np.sort(picked))
    return Episode(shots=shots, seed=seed, indices=np.concatenate(chosen))


def make_synthetic_cache(
    classes: int,
    per_class: int,
    dim: int,
    text_noise: float,
    feature_noise: float,
    seed: int,
) -> EmbeddingCache:
    """Generate a unit-norm cache around random class prototypes.

    Image features are normalize(prototype + feature_noise * gaussian);
    classifier rows are normalize(prototype + text_noise * gaussian).
    Noise scales multiply a fixed set of standard-normal draws, so caches
    generated from the same seed differ only by the scale: sweeping a
    noise level moves every row along a fixed perturbation direction.
    Splits alternate train/test within each class (val stays empty).
    """
    if classes < 2:
        raise ArgumentError(f"classes must be >= 2, got {classes}")
    if dim < 2:
        raise ArgumentError(f"dim must be >= 2, got {dim}")
    if per_class < 1:
        raise ArgumentError(f"per_class must be >= 1, got {per_class}")
    if text_noise < 0 or feature_noise < 0:
        raise ArgumentError("noise levels must be non-negative")

    rng = seeding.derive_rng(seed, seeding.SYNTH)
    prototypes = _unit_rows(rng.standard_normal((classes, dim)))
    feature_draws = rng.standard_normal((classes * per_class, dim))
    text_draws = rng.standard_normal((classes, dim))

    labels = np.repeat(np.arange(classes, dtype=np.int64), per_class)
    features = _unit_rows(prototypes[labels] + feature_noise * feature_draws)
    weights = _unit_rows(prototypes + text_noise * text_draws)

    within = np.tile(np.arange(per_class), classes)
    tags = np.where(within % 2 == 0, SPLIT_TRAIN, SPLIT_TEST).astype(np.uint8)

    cache = EmbeddingCache(
        dim=dim,
        image_features=features.astype(np.float32),
        labels=labels,
        class_names=[f"class_{i:03d}" for i in range(classes)],
        classifier_weights=weights.astype(np.float32),
        split_tags=tags,
        normalized_flag=True,
    )
    cache.validate()
    return cache._freeze()


def _unit_rows(rows: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(rows, axis=1, keepdims=True)
    if np.any(norms == 0.0):
        raise ArgumentError("cannot normalize a zero row")
    return rows / norms
