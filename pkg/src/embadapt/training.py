"""Cross-entropy training of adapter parameters with hand-derived gradients.

All optimization state lives in 64-bit floats; caches are read, never
written. The backward pass is exact for every variant and ratio mode,
including the Jacobian of the row renormalization, and is verified
against central finite differences by :func:`grad_check`.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import seeding
from .adapters import (
    AdapterParams,
    FixedRatio,
    ForwardTape,
    HypernetRatio,
    LearnableRatio,
    RatioMode,
    Variant,
    check_scale,
    effective_ratios,
    forward_batch,
    ratio_mode_to_dict,
)
from .cache import EmbeddingCache, Episode
from .errors import ArgumentError, DivergenceError

SCHEDULES = ("constant", "cosine")

LOG_FLOOR = 1e-12

# matrices first, then ratio parameters; update order is part of the
# determinism contract
_MATRIX_KEYS = ("w1_visual", "w2_visual", "w1_text", "w2_text")
_RATIO_KEYS = ("theta_alpha", "theta_beta", "hyper_weights", "hyper_bias")


@dataclass
class TrainConfig:
    """Everything a training run depends on besides the data itself."""

    shots: int = 16
    seed: int = 0
    epochs: int = 200
    batch_size: int = 32
    learning_rate: float = 1e-5
    momentum: float = 0.9
    schedule: str = "cosine"
    variant: Variant = Variant.VISUAL
    ratio_mode: RatioMode = field(default_factory=FixedRatio)
    bottleneck_ratio: int = 4
    weight_decay: float = 0.0
    renormalize: bool = True
    logit_scale: float = 100.0

    def validate(self) -> None:
        if self.shots < 1:
            raise ArgumentError(f"shots must be >= 1, got {self.shots}")
        seeding.check_seed(self.seed)
        if self.epochs < 1:
            raise ArgumentError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 1:
            raise ArgumentError(f"batch_size must be >= 1, got {self.batch_size}")
        # zero is allowed so a run can be frozen in place
        if self.learning_rate < 0 or not math.isfinite(self.learning_rate):
            raise ArgumentError(f"learning_rate must be >= 0, got {self.learning_rate}")
        if not (0.0 <= self.momentum < 1.0):
            raise ArgumentError(f"momentum must lie in [0, 1), got {self.momentum}")
        if self.schedule not in SCHEDULES:
            raise ArgumentError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.bottleneck_ratio < 1:
            raise ArgumentError(f"bottleneck_ratio must be >= 1, got {self.bottleneck_ratio}")
        if self.weight_decay < 0:
            raise ArgumentError(f"weight_decay must be >= 0, got {self.weight_decay}")
        check_scale(self.logit_scale)
        Variant(self.variant)

    def to_dict(self) -> dict:
        """Full config echo; rerunning from this dict reproduces the run."""
        return {
            "shots": self.shots,
            "seed": self.seed,
            "epochs": self.epochs,
            "batch_size": self.batch_size,
            "learning_rate": self.learning_rate,
            "momentum": self.momentum,
            "schedule": self.schedule,
            "variant": Variant(self.variant).value,
            "ratio_mode": ratio_mode_to_dict(self.ratio_mode),
            "bottleneck_ratio": self.bottleneck_ratio,
            "weight_decay": self.weight_decay,
            "renormalize": self.renormalize,
            "logit_scale": self.logit_scale,
        }


@dataclass
class TrainResult:
    """Final adapter state plus per-epoch curves."""

    params: AdapterParams
    ratio_mode: RatioMode
    variant: Variant
    loss_curve: list[float]
    train_accuracy_curve: list[float]
    final_alpha: float
    final_beta: float
    wallclock: float

    def to_dict(self) -> dict:
        """JSON-ready summary; wallclock stays out so reruns match byte-wise."""
        return {
            "variant": self.variant.value,
            "loss_curve": self.loss_curve,
            "train_accuracy_curve": self.train_accuracy_curve,
            "final_alpha": self.final_alpha,
            "final_beta": self.final_beta,
            "final_ratio_mode": ratio_mode_to_dict(self.ratio_mode),
        }


def cross_entropy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Mean negative log-probability of the true labels.

    Probabilities are floored at 1e-12 inside the log only; gradients
    elsewhere use the exact softmax shortcut and never see the floor.
    """
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels)
    if probs.ndim != 2 or labels.shape != (probs.shape[0],):
        raise ArgumentError(
            f"probs {probs.shape} and labels {labels.shape} do not describe one batch"
        )
    if labels.size and (labels.min() < 0 or labels.max() >= probs.shape[1]):
        raise ArgumentError(f"labels must lie in [0, {probs.shape[1]})")
    row_sums = probs.sum(axis=1)
    if np.any(np.abs(row_sums - 1.0) > 1e-6):
        raise ArgumentError("probability rows must sum to 1")
    picked = probs[np.arange(probs.shape[0]), labels]
    return float(-np.mean(np.log(np.maximum(picked, LOG_FLOOR))))


def backward(tape: ForwardTape, labels: np.ndarray) -> dict[str, np.ndarray | float]:
    """Exact gradients of the batch cross-entropy w.r.t. active parameters.

    Keys cover only the parameters the variant and ratio mode actually
    train; inactive branches are absent rather than zero-filled.
    """
    labels = np.asarray(labels)
    batch, classes = tape.probs.shape
    if labels.shape != (batch,):
        raise ArgumentError(f"labels shape {labels.shape} does not match batch {batch}")
    if labels.size and (labels.min() < 0 or labels.max() >= classes):
        raise ArgumentError(f"labels must lie in [0, {classes})")

    # softmax + cross-entropy shortcut
    d_logits = tape.probs.copy()
    d_logits[np.arange(batch), labels] -= 1.0
    d_logits /= batch

    d_unit_f = tape.scale * (d_logits @ tape.unit_classifier)
    d_unit_w = tape.scale * (d_logits.T @ tape.unit_features)

    if tape.renormalize:
        d_blend_f = _renorm_backward(d_unit_f, tape.unit_features, tape.feature_norms)
        d_blend_w = _renorm_backward(d_unit_w, tape.unit_classifier, tape.classifier_norms)
    else:
        d_blend_f, d_blend_w = d_unit_f, d_unit_w

    grads: dict[str, np.ndarray | float] = {}
    d_alpha = 0.0
    d_beta = 0.0

    if tape.variant.adapts_visual:
        d_adapted = tape.alpha * d_blend_f
        d_alpha = float(np.sum(d_blend_f * (tape.adapted_visual - tape.features)))
        grads["w2_visual"] = tape.hidden_visual.T @ d_adapted
        d_pre = (d_adapted @ tape.params.w2_visual.T) * (tape.pre_visual > 0.0)
        grads["w1_visual"] = tape.features.T @ d_pre

    if tape.variant.adapts_text:
        d_adapted_t = tape.beta * d_blend_w
        d_beta = float(np.sum(d_blend_w * (tape.adapted_text - tape.classifier)))
        grads["w2_text"] = tape.hidden_text.T @ d_adapted_t
        d_pre_t = (d_adapted_t @ tape.params.w2_text.T) * (tape.pre_text > 0.0)
        grads["w1_text"] = tape.classifier.T @ d_pre_t

    mode = tape.ratio_mode
    if isinstance(mode, LearnableRatio):
        if tape.variant.adapts_visual:
            grads["theta_alpha"] = d_alpha * tape.alpha * (1.0 - tape.alpha)
        if tape.variant.adapts_text:
            grads["theta_beta"] = d_beta * tape.beta * (1.0 - tape.beta)
    elif isinstance(mode, HypernetRatio):
        d_z = np.zeros(2)
        if tape.variant.adapts_visual:
            d_z[0] = d_alpha * tape.alpha * (1.0 - tape.alpha)
        if tape.variant.adapts_text:
            d_z[1] = d_beta * tape.beta * (1.0 - tape.beta)
        grads["hyper_weights"] = np.outer(tape.mean_feature, d_z)
        grads["hyper_bias"] = d_z
    return grads


def _renorm_backward(d_unit: np.ndarray, unit: np.ndarray, norms: np.ndarray) -> np.ndarray:
    # d(x/||x||) has Jacobian (I - u u^T) / ||x|| with u = x/||x||
    inner = np.sum(d_unit * unit, axis=1, keepdims=True)
    return (d_unit - inner * unit) / norms[:, None]


def init_params(dim: int, bottleneck_ratio: int, variant: Variant | str, seed: int) -> AdapterParams:
    """Seeded uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) initialization."""
    variant = Variant(variant)
    if bottleneck_ratio < 1:
        raise ArgumentError(f"bottleneck_ratio must be >= 1, got {bottleneck_ratio}")
    hidden = dim // bottleneck_ratio
    if hidden < 1:
        raise ArgumentError(
            f"bottleneck ratio {bottleneck_ratio} leaves no hidden units for dim {dim}"
        )
    rng = seeding.derive_rng(seed, seeding.INIT)

    def draw(fan_in: int, shape: tuple[int, int]) -> np.ndarray:
        bound = 1.0 / math.sqrt(fan_in)
        return rng.uniform(-bound, bound, size=shape)

    kwargs: dict[str, np.ndarray] = {}
    if variant.adapts_visual:
        kwargs["w1_visual"] = draw(dim, (dim, hidden))
        kwargs["w2_visual"] = draw(hidden, (hidden, dim))
    if variant.adapts_text:
        kwargs["w1_text"] = draw(dim, (dim, hidden))
        kwargs["w2_text"] = draw(hidden, (hidden, dim))
    return AdapterParams(bottleneck_ratio=bottleneck_ratio, **kwargs)


def trainable_parameter_count(dim: int, hidden: int, variant: Variant | str, ratio_mode: RatioMode | type) -> int:
    """Number of trainable scalars; independent of the training set size."""
    variant = Variant(variant)
    count = 0
    if variant.adapts_visual:
        count += 2 * dim * hidden
    if variant.adapts_text:
        count += 2 * dim * hidden
    kind = ratio_mode if isinstance(ratio_mode, type) else type(ratio_mode)
    if kind is LearnableRatio:
        count += 2
    elif kind is HypernetRatio:
        count += 2 * dim + 2
    return count


def active_parameter_keys(variant: Variant, ratio_mode: RatioMode) -> list[str]:
    keys = []
    if variant.adapts_visual:
        keys += ["w1_visual", "w2_visual"]
    if variant.adapts_text:
        keys += ["w1_text", "w2_text"]
    if isinstance(ratio_mode, LearnableRatio):
        if variant.adapts_visual:
            keys.append("theta_alpha")
        if variant.adapts_text:
            keys.append("theta_beta")
    elif isinstance(ratio_mode, HypernetRatio):
        keys += ["hyper_weights", "hyper_bias"]
    return keys


def _get_param(params: AdapterParams, mode: RatioMode, key: str):
    if key in _MATRIX_KEYS:
        return getattr(params, key)
    if key == "theta_alpha":
        return mode.theta_alpha
    if key == "theta_beta":
        return mode.theta_beta
    if key == "hyper_weights":
        return mode.weights
    if key == "hyper_bias":
        return mode.bias
    raise ArgumentError(f"unknown parameter key {key!r}")


def _set_param(params: AdapterParams, mode: RatioMode, key: str, value) -> None:
    if key in _MATRIX_KEYS:
        setattr(params, key, value)
    elif key == "theta_alpha":
        mode.theta_alpha = float(value)
    elif key == "theta_beta":
        mode.theta_beta = float(value)
    elif key == "hyper_weights":
        mode.weights = value
    elif key == "hyper_bias":
        mode.bias = value
    else:
        raise ArgumentError(f"unknown parameter key {key!r}")


def _copy_mode(mode: RatioMode) -> RatioMode:
    if isinstance(mode, HypernetRatio):
        return HypernetRatio(weights=mode.weights.copy(), bias=mode.bias.copy())
    return replace(mode)


def _learning_rate(config: TrainConfig, epoch: int) -> float:
    if config.schedule == "constant":
        return config.learning_rate
    return 0.5 * config.learning_rate * (1.0 + math.cos(math.pi * epoch / config.epochs))


def train(cache: EmbeddingCache, episode: Episode, config: TrainConfig) -> TrainResult:
    """Train adapters on the episode's examples; the cache is never touched."""
    config.validate()
    indices = episode.indices
    if indices.size == 0 or indices.max() >= cache.num_images:
        raise ArgumentError("episode does not index into this cache")
    features = cache.image_features[indices].astype(np.float64)
    labels = cache.labels[indices].copy()
    classifier = cache.classifier_weights.astype(np.float64)
    return train_on_arrays(features, labels, classifier, config)


def train_on_arrays(
    features: np.ndarray,
    labels: np.ndarray,
    classifier: np.ndarray,
    config: TrainConfig,
) -> TrainResult:
    """Mini-batch SGD with momentum over the given example set.

    Per-epoch shuffling draws from a generator seeded by (config.seed,
    epoch), so the whole run is a pure function of its inputs. Weight
    decay applies to the adapter matrices only.
    """
    config.validate()
    started = time.perf_counter()
    features = np.asarray(features, dtype=np.float64)
    classifier = np.asarray(classifier, dtype=np.float64)
    labels = np.asarray(labels)
    n = features.shape[0]
    if n == 0:
        raise ArgumentError("cannot train on an empty example set")
    variant = Variant(config.variant)

    params = init_params(features.shape[1], config.bottleneck_ratio, variant, config.seed)
    mode = _copy_mode(config.ratio_mode)
    keys = active_parameter_keys(variant, mode)
    velocity = {k: np.zeros_like(np.asarray(_get_param(params, mode, k), dtype=np.float64)) for k in keys}

    loss_curve: list[float] = []
    accuracy_curve: list[float] = []
    # overflow on the way to a non-finite loss is reported once, as
    # DivergenceError, not as a stream of numpy warnings
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for epoch in range(config.epochs):
            lr = _learning_rate(config, epoch)
            order = seeding.derive_rng(config.seed, seeding.SHUFFLE, epoch).permutation(n)
            loss_sum = 0.0
            correct = 0
            for batch_index, start in enumerate(range(0, n, config.batch_size)):
                rows = order[start : start + config.batch_size]
                probs, tape = forward_batch(
                    features[rows], classifier, params, mode, variant,
                    scale=config.logit_scale, renormalize=config.renormalize,
                )
                loss = cross_entropy(probs, labels[rows])
                if not math.isfinite(loss):
                    raise DivergenceError(
                        f"non-finite loss at epoch {epoch}, batch {batch_index}",
                        epoch=epoch, batch=batch_index,
                    )
                loss_sum += loss * rows.size
                correct += int(np.sum(np.argmax(probs, axis=1) == labels[rows]))

                grads = backward(tape, labels[rows])
                for key in keys:
                    g = np.asarray(grads[key], dtype=np.float64)
                    if config.weight_decay and key in _MATRIX_KEYS:
                        g = g + config.weight_decay * _get_param(params, mode, key)
                    velocity[key] = config.momentum * velocity[key] + g
                    updated = np.asarray(_get_param(params, mode, key), dtype=np.float64) - lr * velocity[key]
                    _set_param(params, mode, key, updated if updated.ndim else float(updated))
            loss_curve.append(loss_sum / n)
            accuracy_curve.append(correct / n)

    final_alpha, final_beta = effective_ratios(mode, features.mean(axis=0))
    return TrainResult(
        params=params,
        ratio_mode=mode,
        variant=variant,
        loss_curve=loss_curve,
        train_accuracy_curve=accuracy_curve,
        final_alpha=final_alpha,
        final_beta=final_beta,
        wallclock=time.perf_counter() - started,
    )


# --- finite-difference verification -----------------------------------------

FD_STEP = 1e-5
FD_TOLERANCE = 1e-4
# entries where both gradients fall below this magnitude are compared on
# an absolute scale, keeping FD round-off out of the relative error
FD_FLOOR = 1e-3

_MODE_FACTORIES: dict[str, Callable[[np.random.Generator, int], RatioMode]] = {
    "fixed": lambda rng, dim: FixedRatio(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)),
    "learnable": lambda rng, dim: LearnableRatio(rng.normal(), rng.normal()),
    "hypernet": lambda rng, dim: HypernetRatio(
        weights=rng.normal(0.0, 0.5, size=(dim, 2)), bias=rng.normal(0.0, 0.5, size=2)
    ),
}


@dataclass
class GradCheckReport:
    passed: bool
    tolerance: float
    max_relative_error: float
    worst_case: str
    per_group: dict[str, float]
    trials: int
    seconds: float

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "tolerance": self.tolerance,
            "max_relative_error": self.max_relative_error,
            "worst_case": self.worst_case,
            "per_group": dict(sorted(self.per_group.items())),
            "trials": self.trials,
        }


def grad_check(
    batch: int = 4,
    dim: int = 8,
    hidden: int = 2,
    classes: int = 3,
    trials: int = 20,
    seed: int = 0,
    corrupt: Callable[[str, np.ndarray], np.ndarray] | None = None,
) -> GradCheckReport:
    """Compare analytic gradients with central finite differences.

    Every trial draws a fresh random problem and checks all three
    variants crossed with all three ratio modes, renormalization on.
    ``corrupt`` is a test hook applied to each analytic gradient before
    comparison.
    """
    if trials < 1:
        raise ArgumentError(f"trials must be >= 1, got {trials}")
    if dim // max(hidden, 1) < 1 or hidden < 1:
        raise ArgumentError("hidden width must be between 1 and dim")
    started = time.perf_counter()
    per_group: dict[str, float] = {}
    worst = 0.0
    worst_case = "none"

    for trial in range(trials):
        rng = seeding.derive_rng(seed, seeding.GRADCHECK, trial)
        feats = rng.standard_normal((batch, dim))
        feats /= np.linalg.norm(feats, axis=1, keepdims=True)
        weights = rng.standard_normal((classes, dim))
        weights /= np.linalg.norm(weights, axis=1, keepdims=True)
        labels = rng.integers(0, classes, size=batch)
        scale = float(rng.uniform(2.0, 20.0))

        def draw(fan_in: int, shape: tuple[int, int]) -> np.ndarray:
            bound = 1.0 / math.sqrt(fan_in)
            return rng.uniform(-bound, bound, size=shape)

        params = AdapterParams(
            bottleneck_ratio=max(dim // hidden, 1),
            w1_visual=draw(dim, (dim, hidden)),
            w2_visual=draw(hidden, (hidden, dim)),
            w1_text=draw(dim, (dim, hidden)),
            w2_text=draw(hidden, (hidden, dim)),
        )

        for variant in Variant:
            for mode_name, factory in _MODE_FACTORIES.items():
                mode = factory(rng, dim)

                def loss_value() -> float:
                    probs, _ = forward_batch(
                        feats, weights, params, mode, variant, scale=scale, renormalize=True
                    )
                    return cross_entropy(probs, labels)

                _, tape = forward_batch(
                    feats, weights, params, mode, variant, scale=scale, renormalize=True
                )
                grads = backward(tape, labels)
                for key in active_parameter_keys(variant, mode):
                    analytic = np.atleast_1d(np.asarray(grads[key], dtype=np.float64))
                    if corrupt is not None:
                        analytic = np.atleast_1d(np.asarray(corrupt(key, analytic)))
                    numeric = _fd_gradient(params, mode, key, loss_value)
                    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), FD_FLOOR)
                    rel = float(np.max(np.abs(analytic - numeric) / denom))
                    group = f"{variant.value}/{mode_name}/{key}"
                    per_group[group] = max(per_group.get(group, 0.0), rel)
                    if rel > worst:
                        worst = rel
                        worst_case = f"{group} (trial {trial})"

    return GradCheckReport(
        passed=worst < FD_TOLERANCE,
        tolerance=FD_TOLERANCE,
        max_relative_error=worst,
        worst_case=worst_case,
        per_group=per_group,
        trials=trials,
        seconds=time.perf_counter() - started,
    )


def _fd_gradient(params: AdapterParams, mode: RatioMode, key: str, loss_value: Callable[[], float]) -> np.ndarray:
    value = _get_param(params, mode, key)
    if np.isscalar(value):
        base = float(value)
        _set_param(params, mode, key, base + FD_STEP)
        up = loss_value()
        _set_param(params, mode, key, base - FD_STEP)
        down = loss_value()
        _set_param(params, mode, key, base)
        return np.array([(up - down) / (2.0 * FD_STEP)])
    arr = np.asarray(value, dtype=np.float64)
    flat = arr.reshape(-1)
    out = np.empty_like(flat)
    for i in range(flat.size):
        original = flat[i]
        flat[i] = original + FD_STEP
        up = loss_value()
        flat[i] = original - FD_STEP
        down = loss_value()
        flat[i] = original
        out[i] = (up - down) / (2.0 * FD_STEP)
    return out.reshape(arr.shape)
