"""Baseline evaluators, a certified linear probe, and ablation sweeps.

Evaluation is read-only: every function here takes a cache plus frozen
parameters and produces a report. Ties in argmax prediction break toward
the smallest class index so results are reproducible across runs and
languages.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .adapters import (
    AdapterParams,
    FixedRatio,
    RatioMode,
    Variant,
    check_scale,
    forward_batch,
    normalize_rows,
    ratio_mode_to_dict,
)
from .cache import EmbeddingCache, Episode
from .errors import ArgumentError, DivergenceError, EmbAdaptError
from .training import TrainConfig, train

ZERO_SHOT = "zero_shot"
LINEAR_PROBE = "linear_probe"
ADAPTER = "adapter"


@dataclass
class EvalReport:
    """Accuracy summary for one method on one split.

    ``per_class_accuracy`` has one entry per class in cache order; a class
    with no examples in the split reports 0.0 with a count of 0, so the
    count-weighted mean of the per-class accuracies always equals
    ``overall_accuracy``.
    """

    method_tag: str
    split: str
    overall_accuracy: float
    per_class_accuracy: list[float]
    per_class_counts: list[int]
    num_test: int
    config: dict
    predictions: np.ndarray = field(repr=False)

    def to_dict(self) -> dict:
        return {
            "method": self.method_tag,
            "split": self.split,
            "overall_accuracy": self.overall_accuracy,
            "per_class_accuracy": self.per_class_accuracy,
            "per_class_counts": self.per_class_counts,
            "num_test": self.num_test,
            "config": self.config,
        }

    def to_csv_rows(self, class_names: Sequence[str] | None = None) -> list[list]:
        rows: list[list] = [["class", "count", "accuracy"]]
        for i, (count, acc) in enumerate(zip(self.per_class_counts, self.per_class_accuracy)):
            name = class_names[i] if class_names is not None else str(i)
            rows.append([name, count, acc])
        rows.append(["overall", self.num_test, self.overall_accuracy])
        return rows


@dataclass
class SweepTable:
    """One ablation axis: values, accuracies, and the winning value.

    Failed cells keep their position with a recorded error message and a
    null accuracy; ``best_value`` is the smallest axis value attaining the
    maximum accuracy among the cells that succeeded.
    """

    axis_name: str
    axis_values: list
    accuracies: list[float | None]
    errors: list[str | None]
    best_value: object
    config: dict

    def to_dict(self) -> dict:
        return {
            "axis_name": self.axis_name,
            "axis_values": self.axis_values,
            "accuracies": self.accuracies,
            "errors": self.errors,
            "best_value": self.best_value,
            "config": self.config,
        }

    def to_csv_rows(self) -> list[list]:
        header = [self.axis_name] + [str(v) for v in self.axis_values]
        cells = [a if a is not None else err for a, err in zip(self.accuracies, self.errors)]
        return [header, ["accuracy"] + cells]


def write_csv(path, rows: list[list]) -> None:
    """RFC-4180 output: CRLF rows, minimal quoting."""
    with open(path, "w", newline="") as fh:
        csv.writer(fh).writerows(rows)


def _split_arrays(cache: EmbeddingCache, split: str) -> tuple[np.ndarray, np.ndarray]:
    idx = cache.split_indices(split)
    if idx.size == 0:
        raise ArgumentError(f"cache has no examples in the {split!r} split")
    return cache.image_features[idx].astype(np.float64), cache.labels[idx].astype(np.int64)


def _report(
    method_tag: str,
    split: str,
    predictions: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    config: dict,
) -> EvalReport:
    correct = predictions == labels
    per_class_acc: list[float] = []
    per_class_counts: list[int] = []
    for k in range(num_classes):
        mask = labels == k
        count = int(mask.sum())
        per_class_counts.append(count)
        per_class_acc.append(float(correct[mask].mean()) if count else 0.0)
    return EvalReport(
        method_tag=method_tag,
        split=split,
        overall_accuracy=float(correct.mean()),
        per_class_accuracy=per_class_acc,
        per_class_counts=per_class_counts,
        num_test=int(labels.size),
        config=config,
        predictions=predictions,
    )


def eval_zero_shot(cache: EmbeddingCache, scale: float = 100.0, split: str = "test") -> EvalReport:
    """Classify with the frozen classifier rows alone, no adapters.

    Shares the normalization and scoring arithmetic with the adapter
    forward pass, so a zero residual ratio reproduces these predictions
    bit for bit.
    """
    scale = check_scale(scale)
    features, labels = _split_arrays(cache, split)
    unit_f, _ = normalize_rows(features)
    unit_w, _ = normalize_rows(cache.classifier_weights.astype(np.float64))
    logits = scale * (unit_f @ unit_w.T)
    predictions = np.argmax(logits, axis=1)
    config = {"method": ZERO_SHOT, "scale": scale, "split": split}
    return _report(ZERO_SHOT, split, predictions, labels, cache.num_classes, config)


def eval_adapter(
    cache: EmbeddingCache,
    params: AdapterParams,
    ratio_mode: RatioMode,
    variant: Variant | str,
    scale: float = 100.0,
    split: str = "test",
    renormalize: bool = True,
) -> EvalReport:
    """Accuracy of the adapted model on a split.

    The whole split is scored as one batch, which also pins down the
    hypernetwork's mean-feature input.
    """
    variant = Variant(variant)
    features, labels = _split_arrays(cache, split)
    probs, _ = forward_batch(
        features, cache.classifier_weights.astype(np.float64), params, ratio_mode, variant,
        scale=scale, renormalize=renormalize,
    )
    predictions = np.argmax(probs, axis=1)
    config = {
        "method": ADAPTER,
        "scale": scale,
        "split": split,
        "renormalize": renormalize,
        "variant": variant.value,
        "ratio_mode": ratio_mode_to_dict(ratio_mode),
        "bottleneck_ratio": params.bottleneck_ratio,
    }
    return _report(ADAPTER, split, predictions, labels, cache.num_classes, config)


# --- linear probe ------------------------------------------------------------


@dataclass
class ProbeConfig:
    """Solver settings for the logistic-regression baseline.

    The penalty strength applies to the weight matrix only, scaled by
    1/(2N) alongside the mean data term so it is comparable across
    training-set sizes. A fixed step disables the backtracking search.
    """

    l2: float = 1.0
    max_iters: int = 10000
    tolerance: float = 1e-6
    fixed_step: float | None = None

    def validate(self) -> None:
        if self.l2 < 0 or not math.isfinite(self.l2):
            raise ArgumentError(f"l2 must be a finite float >= 0, got {self.l2}")
        if self.max_iters < 1:
            raise ArgumentError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.tolerance <= 0:
            raise ArgumentError(f"tolerance must be > 0, got {self.tolerance}")
        if self.fixed_step is not None and self.fixed_step <= 0:
            raise ArgumentError(f"fixed_step must be > 0, got {self.fixed_step}")

    def to_dict(self) -> dict:
        return {
            "l2": self.l2,
            "max_iters": self.max_iters,
            "tolerance": self.tolerance,
            "fixed_step": self.fixed_step,
        }


@dataclass
class ProbeResult:
    """Probe weights plus the convergence certificate."""

    weights: np.ndarray  # (K, D)
    bias: np.ndarray     # (K,)
    iterations: int
    gradient_norm: float
    objective: float
    converged: bool


def probe_objective(
    weights: np.ndarray, bias: np.ndarray, features: np.ndarray, labels: np.ndarray, l2: float
) -> float:
    """Mean cross-entropy plus (l2 / 2N) * squared weight norm."""
    n = features.shape[0]
    logits = features @ weights.T + bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_probs = shifted - np.log(np.sum(np.exp(shifted), axis=1, keepdims=True))
    data_term = -float(np.mean(log_probs[np.arange(n), labels]))
    return data_term + (l2 / (2.0 * n)) * float(np.sum(weights * weights))


def probe_gradient(
    weights: np.ndarray, bias: np.ndarray, features: np.ndarray, labels: np.ndarray, l2: float
) -> tuple[np.ndarray, np.ndarray]:
    """Exact gradient of :func:`probe_objective` w.r.t. weights and bias."""
    n = features.shape[0]
    logits = features @ weights.T + bias
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    probs = ex / ex.sum(axis=1, keepdims=True)
    probs[np.arange(n), labels] -= 1.0
    probs /= n
    d_weights = probs.T @ features + (l2 / n) * weights
    d_bias = probs.sum(axis=0)
    return d_weights, d_bias


def train_probe_on_arrays(
    features: np.ndarray,
    labels: np.ndarray,
    num_classes: int,
    config: ProbeConfig | None = None,
) -> ProbeResult:
    """Full-batch gradient descent to a certified optimum.

    The objective is smooth and convex, so a gradient norm below the
    tolerance certifies a global optimum. Backtracking halves the step
    until the Armijo condition holds; initialization is all zeros, making
    the whole solve deterministic.
    """
    config = config or ProbeConfig()
    config.validate()
    features = np.asarray(features, dtype=np.float64)
    labels = np.asarray(labels)
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise ArgumentError("features must be (n, dim) with one label per row")
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise ArgumentError(f"labels must lie in [0, {num_classes})")

    weights = np.zeros((num_classes, features.shape[1]))
    bias = np.zeros(num_classes)
    objective = probe_objective(weights, bias, features, labels, config.l2)
    grad_norm = math.inf
    step = 1.0
    iterations = 0

    # a divergent step surfaces as DivergenceError, not as numpy warnings
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        for iterations in range(1, config.max_iters + 1):
            d_weights, d_bias = probe_gradient(weights, bias, features, labels, config.l2)
            grad_norm = math.sqrt(float(np.sum(d_weights**2)) + float(np.sum(d_bias**2)))
            if not math.isfinite(objective) or not math.isfinite(grad_norm):
                raise DivergenceError(f"probe diverged at iteration {iterations}")
            if grad_norm < config.tolerance:
                iterations -= 1
                break
            if config.fixed_step is not None:
                weights -= config.fixed_step * d_weights
                bias -= config.fixed_step * d_bias
                objective = probe_objective(weights, bias, features, labels, config.l2)
                continue
            step = min(step * 2.0, 1e6)
            while True:
                trial_w = weights - step * d_weights
                trial_b = bias - step * d_bias
                trial_obj = probe_objective(trial_w, trial_b, features, labels, config.l2)
                if trial_obj <= objective - 1e-4 * step * grad_norm**2:
                    break
                step *= 0.5
                if step < 1e-20:
                    raise DivergenceError("probe line search stalled")
            weights, bias, objective = trial_w, trial_b, trial_obj

    return ProbeResult(
        weights=weights,
        bias=bias,
        iterations=iterations,
        gradient_norm=grad_norm,
        objective=objective,
        converged=grad_norm < config.tolerance,
    )


def train_linear_probe(
    cache: EmbeddingCache, episode: Episode, config: ProbeConfig | None = None
) -> ProbeResult:
    """Fit the logistic-regression baseline on an episode's features."""
    indices = episode.indices
    if indices.size == 0 or indices.max() >= cache.num_images:
        raise ArgumentError("episode does not index into this cache")
    features = cache.image_features[indices].astype(np.float64)
    labels = cache.labels[indices].astype(np.int64)
    return train_probe_on_arrays(features, labels, cache.num_classes, config)


def eval_probe(
    cache: EmbeddingCache,
    weights: np.ndarray,
    bias: np.ndarray,
    split: str = "test",
    config: dict | None = None,
) -> EvalReport:
    """Accuracy of a trained probe on a split."""
    features, labels = _split_arrays(cache, split)
    weights = np.asarray(weights, dtype=np.float64)
    bias = np.asarray(bias, dtype=np.float64)
    if weights.shape != (cache.num_classes, cache.dim) or bias.shape != (cache.num_classes,):
        raise ArgumentError(
            f"probe shapes {weights.shape}/{bias.shape} do not match cache "
            f"({cache.num_classes}, {cache.dim})"
        )
    predictions = np.argmax(features @ weights.T + bias, axis=1)
    echo = {"method": LINEAR_PROBE, "split": split}
    if config:
        echo.update(config)
    return _report(LINEAR_PROBE, split, predictions, labels, cache.num_classes, echo)


# --- ablation sweeps ---------------------------------------------------------


def _best_value(axis_values: list, accuracies: list[float | None]):
    scored = [(v, a) for v, a in zip(axis_values, accuracies) if a is not None]
    if not scored:
        return None
    top = max(a for _, a in scored)
    return min(v for v, a in scored if a == top)


def _run_cells(cell, count: int, jobs: int) -> list:
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(cell, range(count)))
    return [cell(i) for i in range(count)]


def sweep_alpha(
    cache: EmbeddingCache,
    episode: Episode,
    base_config: TrainConfig,
    grid: Sequence[float],
    split: str = "test",
    jobs: int = 1,
) -> SweepTable:
    """Train and evaluate once per residual-ratio value.

    A grid entry of exactly 0 skips training and scores the zero-shot
    predictions directly; the forward math makes the two routes agree
    prediction for prediction, so training a blend that ignores the
    adapter would only burn cycles.
    """
    grid = [float(v) for v in grid]
    if not grid:
        raise ArgumentError("alpha grid must be non-empty")
    for v in grid:
        if not (0.0 <= v <= 1.0):
            raise ArgumentError(f"alpha grid values must lie in [0, 1], got {v}")
    base_beta = base_config.ratio_mode.beta if isinstance(base_config.ratio_mode, FixedRatio) else 0.5

    def cell(i: int) -> tuple[float | None, str | None]:
        alpha = grid[i]
        try:
            if alpha == 0.0:
                report = eval_zero_shot(cache, scale=base_config.logit_scale, split=split)
            else:
                config = replace(base_config, ratio_mode=FixedRatio(alpha, base_beta))
                result = train(cache, episode, config)
                report = eval_adapter(
                    cache, result.params, result.ratio_mode, result.variant,
                    scale=config.logit_scale, split=split, renormalize=config.renormalize,
                )
            return report.overall_accuracy, None
        except EmbAdaptError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    outcomes = _run_cells(cell, len(grid), jobs)
    accuracies = [a for a, _ in outcomes]
    errors = [e for _, e in outcomes]
    return SweepTable(
        axis_name="alpha",
        axis_values=grid,
        accuracies=accuracies,
        errors=errors,
        best_value=_best_value(grid, accuracies),
        config={"base": base_config.to_dict(), "split": split},
    )


def sweep_bottleneck(
    cache: EmbeddingCache,
    episode: Episode,
    base_config: TrainConfig,
    ratios: Sequence[int],
    split: str = "test",
    jobs: int = 1,
) -> SweepTable:
    """Train and evaluate once per bottleneck ratio.

    A ratio too large for the feature width fails that cell alone; the
    error text lands in the table and the sweep keeps going.
    """
    ratios = [int(r) for r in ratios]
    if not ratios:
        raise ArgumentError("ratio grid must be non-empty")
    for r in ratios:
        if r < 1:
            raise ArgumentError(f"bottleneck ratios must be >= 1, got {r}")

    def cell(i: int) -> tuple[float | None, str | None]:
        try:
            config = replace(base_config, bottleneck_ratio=ratios[i])
            result = train(cache, episode, config)
            report = eval_adapter(
                cache, result.params, result.ratio_mode, result.variant,
                scale=config.logit_scale, split=split, renormalize=config.renormalize,
            )
            return report.overall_accuracy, None
        except EmbAdaptError as exc:
            return None, f"{type(exc).__name__}: {exc}"

    outcomes = _run_cells(cell, len(ratios), jobs)
    accuracies = [a for a, _ in outcomes]
    errors = [e for _, e in outcomes]
    return SweepTable(
        axis_name="bottleneck_ratio",
        axis_values=ratios,
        accuracies=accuracies,
        errors=errors,
        best_value=_best_value(ratios, accuracies),
        config={"base": base_config.to_dict(), "split": split},
    )


# --- adapted-feature export --------------------------------------------------


def export_adapted_features(
    cache: EmbeddingCache,
    params: AdapterParams,
    ratio_mode: RatioMode,
    variant: Variant | str,
    split: str = "test",
) -> tuple[np.ndarray, np.ndarray]:
    """Post-blend, renormalized feature rows with their labels.

    Intended for external projection tooling; the engine does no
    dimensionality reduction itself.
    """
    variant = Variant(variant)
    features, labels = _split_arrays(cache, split)
    _, tape = forward_batch(
        features, cache.classifier_weights.astype(np.float64), params, ratio_mode, variant,
        scale=100.0, renormalize=True,
    )
    return tape.unit_features, labels


def write_feature_csv(path, features: np.ndarray, labels: np.ndarray) -> None:
    """One row per example: D feature columns then the integer label."""
    features = np.asarray(features)
    labels = np.asarray(labels)
    if features.ndim != 2 or labels.shape != (features.shape[0],):
        raise ArgumentError("features must be (n, dim) with one label per row")
    header = [f"f{i}" for i in range(features.shape[1])] + ["label"]
    rows: list[list] = [header]
    for row, label in zip(features, labels):
        rows.append([repr(float(v)) for v in row] + [int(label)])
    write_csv(path, rows)
