"""Residual bottleneck adapter forward pass.

Each branch applies a two-layer bottleneck transformation (linear, ReLU,
linear, no biases) to frozen rows and blends the result with the original
rows through a residual ratio. Classification scores renormalized rows
against renormalized classifier rows by scaled cosine similarity followed
by a softmax.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .errors import ArgumentError, DegenerateFeatureError, FormatError, ShapeError

ADAPTER_MAGIC = b"ADPT"
ADAPTER_VERSION = 1


class Variant(str, Enum):
    """Which branches carry a trainable adapter."""

    VISUAL = "visual"
    TEXT = "text"
    BOTH = "both"

    @property
    def adapts_visual(self) -> bool:
        return self in (Variant.VISUAL, Variant.BOTH)

    @property
    def adapts_text(self) -> bool:
        return self in (Variant.TEXT, Variant.BOTH)


@dataclass
class FixedRatio:
    """Constant residual ratios, both in [0, 1]."""

    alpha: float = 0.2
    beta: float = 0.5

    def validate(self) -> None:
        for name, value in (("alpha", self.alpha), ("beta", self.beta)):
            if not (0.0 <= value <= 1.0):
                raise ArgumentError(f"{name} must lie in [0, 1], got {value}")


@dataclass
class LearnableRatio:
    """Scalar ratio parameters squashed through a sigmoid."""

    theta_alpha: float = 0.0
    theta_beta: float = 0.0

    def validate(self) -> None:
        if not (math.isfinite(self.theta_alpha) and math.isfinite(self.theta_beta)):
            raise ArgumentError("ratio parameters must be finite")


@dataclass
class HypernetRatio:
    """Ratios predicted from the batch-mean input feature.

    A single linear map takes the mean feature to two logits; the sigmoid
    of those logits gives (alpha, beta). Zero weights and bias start both
    ratios at 0.5.
    """

    weights: np.ndarray = field(repr=False)  # (dim, 2) float64
    bias: np.ndarray = field(repr=False)     # (2,) float64

    @classmethod
    def zeros(cls, dim: int) -> "HypernetRatio":
        return cls(weights=np.zeros((dim, 2)), bias=np.zeros(2))

    def validate(self) -> None:
        if self.weights.ndim != 2 or self.weights.shape[1] != 2:
            raise ShapeError(f"hypernetwork weights must be (dim, 2), got {self.weights.shape}")
        if self.bias.shape != (2,):
            raise ShapeError(f"hypernetwork bias must be (2,), got {self.bias.shape}")
        if not (np.isfinite(self.weights).all() and np.isfinite(self.bias).all()):
            raise ArgumentError("hypernetwork parameters must be finite")


RatioMode = FixedRatio | LearnableRatio | HypernetRatio


@dataclass
class AdapterParams:
    """Trainable bottleneck matrices; inactive branches stay None."""

    bottleneck_ratio: int
    w1_visual: np.ndarray | None = field(default=None, repr=False)  # (D, H)
    w2_visual: np.ndarray | None = field(default=None, repr=False)  # (H, D)
    w1_text: np.ndarray | None = field(default=None, repr=False)    # (D, H)
    w2_text: np.ndarray | None = field(default=None, repr=False)    # (H, D)

    @property
    def dim(self) -> int:
        for m in (self.w1_visual, self.w1_text):
            if m is not None:
                return m.shape[0]
        raise ShapeError("adapter params contain no matrices")

    @property
    def hidden(self) -> int:
        for m in (self.w1_visual, self.w1_text):
            if m is not None:
                return m.shape[1]
        raise ShapeError("adapter params contain no matrices")

    def matrices(self) -> dict[str, np.ndarray]:
        """Present matrices keyed by field name, in a fixed order."""
        out = {}
        for name in ("w1_visual", "w2_visual", "w1_text", "w2_text"):
            m = getattr(self, name)
            if m is not None:
                out[name] = m
        return out

    def validate(self, dim: int | None = None) -> None:
        mats = self.matrices()
        if not mats:
            raise ShapeError("adapter params contain no matrices")
        d, h = self.dim, self.hidden
        if h < 1:
            raise ShapeError(f"hidden width must be >= 1, got {h}")
        if dim is not None and d != dim:
            raise ShapeError(f"adapter built for dim {d}, data has dim {dim}")
        expected = {"w1_visual": (d, h), "w2_visual": (h, d), "w1_text": (d, h), "w2_text": (h, d)}
        for name, m in mats.items():
            if m.shape != expected[name]:
                raise ShapeError(f"{name} has shape {m.shape}, expected {expected[name]}")
            if not np.isfinite(m).all():
                raise ArgumentError(f"{name} contains non-finite entries")

    def require(self, name: str) -> np.ndarray:
        m = getattr(self, name)
        if m is None:
            raise ShapeError(f"variant needs {name} but it is absent")
        return m


@dataclass
class ForwardTape:
    """Intermediates retained for exact manual backpropagation."""

    features: np.ndarray
    classifier: np.ndarray
    params: AdapterParams
    ratio_mode: RatioMode
    variant: Variant
    scale: float
    renormalize: bool
    alpha: float
    beta: float
    mean_feature: np.ndarray
    probs: np.ndarray
    unit_features: np.ndarray
    unit_classifier: np.ndarray
    feature_norms: np.ndarray | None = None
    classifier_norms: np.ndarray | None = None
    pre_visual: np.ndarray | None = None
    hidden_visual: np.ndarray | None = None
    adapted_visual: np.ndarray | None = None
    blended_visual: np.ndarray | None = None
    pre_text: np.ndarray | None = None
    hidden_text: np.ndarray | None = None
    adapted_text: np.ndarray | None = None
    blended_text: np.ndarray | None = None


def sigmoid(x):
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out if out.ndim else float(out)


def softmax_rows(logits: np.ndarray) -> np.ndarray:
    """Row-wise softmax, stabilized by the row maximum."""
    shifted = logits - logits.max(axis=1, keepdims=True)
    ex = np.exp(shifted)
    return ex / ex.sum(axis=1, keepdims=True)


def normalize_rows(rows: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Unit-normalize rows; returns (unit rows, norms).

    Raises DegenerateFeatureError on an exactly-zero row.
    """
    norms = np.linalg.norm(rows, axis=-1)
    if np.any(norms == 0.0):
        raise DegenerateFeatureError("cannot renormalize a zero vector")
    return rows / norms[..., None], norms


def adapter_forward(x: np.ndarray, w1: np.ndarray, w2: np.ndarray) -> np.ndarray:
    """Bottleneck transform relu(x @ w1) @ w2.

    ``x`` may be a single vector or a matrix of rows; rows transform
    independently.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != w1.shape[0] or w1.shape[1] != w2.shape[0] or w2.shape[1] != w1.shape[0]:
        raise ShapeError(
            f"inconsistent shapes: x {x.shape}, w1 {w1.shape}, w2 {w2.shape}"
        )
    return np.maximum(x @ w1, 0.0) @ w2


def blend(original: np.ndarray, adapted: np.ndarray, ratio: float, renormalize: bool = False) -> np.ndarray:
    """Residual mix ratio*adapted + (1-ratio)*original.

    With ``renormalize`` the result is rescaled to unit L2 norm (rows
    independently for matrix input). ratio=0 returns ``original`` exactly
    and ratio=1 returns ``adapted`` exactly.
    """
    original = np.asarray(original, dtype=np.float64)
    adapted = np.asarray(adapted, dtype=np.float64)
    if original.shape != adapted.shape:
        raise ShapeError(f"blend shapes differ: {original.shape} vs {adapted.shape}")
    if not (0.0 <= ratio <= 1.0):
        raise ArgumentError(f"ratio must lie in [0, 1], got {ratio}")
    mixed = ratio * adapted + (1.0 - ratio) * original
    if renormalize:
        mixed, _ = normalize_rows(mixed)
    return mixed


def effective_ratios(ratio_mode: RatioMode, mean_feature: np.ndarray) -> tuple[float, float]:
    """Resolve a ratio mode to concrete (alpha, beta) values.

    ``mean_feature`` is consulted only by the hypernetwork mode.
    """
    if isinstance(ratio_mode, FixedRatio):
        ratio_mode.validate()
        return float(ratio_mode.alpha), float(ratio_mode.beta)
    if isinstance(ratio_mode, LearnableRatio):
        ratio_mode.validate()
        return float(sigmoid(ratio_mode.theta_alpha)), float(sigmoid(ratio_mode.theta_beta))
    if isinstance(ratio_mode, HypernetRatio):
        ratio_mode.validate()
        mean_feature = np.asarray(mean_feature, dtype=np.float64)
        if mean_feature.shape != (ratio_mode.weights.shape[0],):
            raise ShapeError(
                f"mean feature shape {mean_feature.shape} does not match hypernetwork dim "
                f"{ratio_mode.weights.shape[0]}"
            )
        z = mean_feature @ ratio_mode.weights + ratio_mode.bias
        squashed = sigmoid(z)
        return float(squashed[0]), float(squashed[1])
    raise ArgumentError(f"unknown ratio mode {type(ratio_mode).__name__}")


RATIO_MODE_NAMES = ("fixed", "learnable", "hypernet")


def initial_ratio_mode(kind: str, alpha: float, beta: float, dim: int) -> RatioMode:
    """Build a ratio mode whose starting effective ratios are (alpha, beta).

    The fixed mode keeps the values constant; the learnable mode stores
    their logits as trainable scalars; the hypernet mode puts the logits
    in its bias and starts the mixing weights at zero. Trainable modes
    therefore need both values strictly inside (0, 1).
    """
    if kind == "fixed":
        mode: RatioMode = FixedRatio(alpha, beta)
        mode.validate()
        return mode
    if kind not in RATIO_MODE_NAMES:
        raise ArgumentError(f"ratio mode must be one of {RATIO_MODE_NAMES}, got {kind!r}")

    def logit(value: float, name: str) -> float:
        if not (0.0 < value < 1.0):
            raise ArgumentError(
                f"{name} must lie strictly inside (0, 1) for the {kind} ratio mode, got {value}"
            )
        return math.log(value / (1.0 - value))

    if kind == "learnable":
        return LearnableRatio(logit(alpha, "alpha"), logit(beta, "beta"))
    mode = HypernetRatio.zeros(dim)
    mode.bias = np.array([logit(alpha, "alpha"), logit(beta, "beta")])
    return mode


def ratio_mode_to_dict(ratio_mode: RatioMode) -> dict:
    """JSON-ready description of a ratio mode, losslessly."""
    if isinstance(ratio_mode, FixedRatio):
        return {"kind": "fixed", "alpha": ratio_mode.alpha, "beta": ratio_mode.beta}
    if isinstance(ratio_mode, LearnableRatio):
        return {
            "kind": "learnable",
            "theta_alpha": ratio_mode.theta_alpha,
            "theta_beta": ratio_mode.theta_beta,
        }
    if isinstance(ratio_mode, HypernetRatio):
        return {
            "kind": "hypernet",
            "weights": ratio_mode.weights.tolist(),
            "bias": ratio_mode.bias.tolist(),
        }
    raise ArgumentError(f"unknown ratio mode {type(ratio_mode).__name__}")


def check_scale(scale: float) -> float:
    scale = float(scale)
    if not math.isfinite(scale) or scale <= 0.0:
        raise ArgumentError(f"logit scale must be a positive finite float, got {scale}")
    return scale


def forward_batch(
    features: np.ndarray,
    classifier: np.ndarray,
    params: AdapterParams,
    ratio_mode: RatioMode,
    variant: Variant | str,
    scale: float = 100.0,
    renormalize: bool = True,
) -> tuple[np.ndarray, ForwardTape]:
    """Full forward pass: adapt, blend, renormalize, score, softmax.

    Returns the (batch, classes) probability matrix and the tape of
    intermediates. The hypernetwork ratio mode reads the mean of the
    incoming feature batch, so ratios are a batch statistic.
    """
    variant = Variant(variant)
    scale = check_scale(scale)
    features = np.asarray(features, dtype=np.float64)
    classifier = np.asarray(classifier, dtype=np.float64)
    if features.ndim != 2 or classifier.ndim != 2:
        raise ShapeError("features and classifier must be 2-D")
    if features.shape[1] != classifier.shape[1]:
        raise ShapeError(
            f"feature dim {features.shape[1]} != classifier dim {classifier.shape[1]}"
        )
    params.validate(dim=features.shape[1])

    mean_feature = features.mean(axis=0)
    alpha, beta = effective_ratios(ratio_mode, mean_feature)

    tape = ForwardTape(
        features=features,
        classifier=classifier,
        params=params,
        ratio_mode=ratio_mode,
        variant=variant,
        scale=scale,
        renormalize=renormalize,
        alpha=alpha,
        beta=beta,
        mean_feature=mean_feature,
        probs=None,  # type: ignore[arg-type]
        unit_features=None,  # type: ignore[arg-type]
        unit_classifier=None,  # type: ignore[arg-type]
    )

    if variant.adapts_visual:
        pre = features @ params.require("w1_visual")
        hidden = np.maximum(pre, 0.0)
        adapted = hidden @ params.require("w2_visual")
        blended = alpha * adapted + (1.0 - alpha) * features
        tape.pre_visual, tape.hidden_visual = pre, hidden
        tape.adapted_visual, tape.blended_visual = adapted, blended
    else:
        blended = features

    if variant.adapts_text:
        pre_t = classifier @ params.require("w1_text")
        hidden_t = np.maximum(pre_t, 0.0)
        adapted_t = hidden_t @ params.require("w2_text")
        blended_t = beta * adapted_t + (1.0 - beta) * classifier
        tape.pre_text, tape.hidden_text = pre_t, hidden_t
        tape.adapted_text, tape.blended_text = adapted_t, blended_t
    else:
        blended_t = classifier

    if renormalize:
        unit_f, tape.feature_norms = normalize_rows(blended)
        unit_w, tape.classifier_norms = normalize_rows(blended_t)
    else:
        unit_f, unit_w = blended, blended_t

    logits = scale * (unit_f @ unit_w.T)
    probs = softmax_rows(logits)
    tape.unit_features, tape.unit_classifier, tape.probs = unit_f, unit_w, probs
    return probs, tape


# --- adapter state serialization -------------------------------------------
#
# Layout (little-endian): magic b"ADPT", version u32, variant u8
# (0=visual, 1=text, 2=both), ratio mode u8 (0=fixed, 1=learnable,
# 2=hypernet), dim u32, hidden u32, bottleneck ratio u32, ratio-mode
# parameters as f64 (fixed/learnable: 2 values; hypernet: dim*2 weights
# then 2 biases), then each of w1_visual, w2_visual, w1_text, w2_text as
# a u64 element count (0 when absent) followed by f64 data.

_VARIANT_CODES = {Variant.VISUAL: 0, Variant.TEXT: 1, Variant.BOTH: 2}
_VARIANT_FROM_CODE = {v: k for k, v in _VARIANT_CODES.items()}
_MODE_CODES = {FixedRatio: 0, LearnableRatio: 1, HypernetRatio: 2}


def save_adapter(path, params: AdapterParams, ratio_mode: RatioMode, variant: Variant | str) -> None:
    """Write trained adapter state with a deterministic byte layout."""
    variant = Variant(variant)
    params.validate()
    parts = [
        ADAPTER_MAGIC,
        struct.pack(
            "<IBBIII",
            ADAPTER_VERSION,
            _VARIANT_CODES[variant],
            _MODE_CODES[type(ratio_mode)],
            params.dim,
            params.hidden,
            params.bottleneck_ratio,
        ),
    ]
    if isinstance(ratio_mode, FixedRatio):
        parts.append(struct.pack("<dd", ratio_mode.alpha, ratio_mode.beta))
    elif isinstance(ratio_mode, LearnableRatio):
        parts.append(struct.pack("<dd", ratio_mode.theta_alpha, ratio_mode.theta_beta))
    else:
        parts.append(np.ascontiguousarray(ratio_mode.weights, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(ratio_mode.bias, dtype="<f8").tobytes())
    for name in ("w1_visual", "w2_visual", "w1_text", "w2_text"):
        m = getattr(params, name)
        if m is None:
            parts.append(struct.pack("<Q", 0))
        else:
            parts.append(struct.pack("<Q", m.size))
            parts.append(np.ascontiguousarray(m, dtype="<f8").tobytes())
    with open(path, "wb") as fh:
        fh.write(b"".join(parts))


def load_adapter(path) -> tuple[AdapterParams, RatioMode, Variant]:
    """Read adapter state written by :func:`save_adapter`."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != ADAPTER_MAGIC:
        raise FormatError(f"bad magic {blob[:4]!r}; not an adapter file")
    offset = 4

    def take(nbytes: int, what: str) -> bytes:
        nonlocal offset
        if offset + nbytes > len(blob):
            raise FormatError(f"adapter file truncated inside {what}")
        chunk = blob[offset : offset + nbytes]
        offset += nbytes
        return chunk

    version, var_code, mode_code, dim, hidden, ratio = struct.unpack("<IBBIII", take(18, "header"))
    if version != ADAPTER_VERSION:
        raise FormatError(f"unsupported adapter version {version}")
    if var_code not in _VARIANT_FROM_CODE:
        raise FormatError(f"unknown variant code {var_code}")
    variant = _VARIANT_FROM_CODE[var_code]

    if mode_code == 0:
        alpha, beta = struct.unpack("<dd", take(16, "ratio parameters"))
        ratio_mode: RatioMode = FixedRatio(alpha, beta)
    elif mode_code == 1:
        ta, tb = struct.unpack("<dd", take(16, "ratio parameters"))
        ratio_mode = LearnableRatio(ta, tb)
    elif mode_code == 2:
        weights = np.frombuffer(take(dim * 2 * 8, "hypernetwork weights"), dtype="<f8")
        bias = np.frombuffer(take(16, "hypernetwork bias"), dtype="<f8")
        ratio_mode = HypernetRatio(weights=weights.reshape(dim, 2).copy(), bias=bias.copy())
    else:
        raise FormatError(f"unknown ratio mode code {mode_code}")

    shapes = {"w1_visual": (dim, hidden), "w2_visual": (hidden, dim),
              "w1_text": (dim, hidden), "w2_text": (hidden, dim)}
    loaded: dict[str, np.ndarray | None] = {}
    for name, shape in shapes.items():
        (count,) = struct.unpack("<Q", take(8, f"{name} length"))
        if count == 0:
            loaded[name] = None
            continue
        if count != shape[0] * shape[1]:
            raise FormatError(f"{name} has {count} elements, expected {shape[0] * shape[1]}")
        data = np.frombuffer(take(count * 8, name), dtype="<f8")
        loaded[name] = data.reshape(shape).copy()
    if offset != len(blob):
        raise FormatError(f"{len(blob) - offset} trailing bytes in adapter file")

    params = AdapterParams(bottleneck_ratio=ratio, **loaded)
    params.validate()
    return params, ratio_mode, variant
