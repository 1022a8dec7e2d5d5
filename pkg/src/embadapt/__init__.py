"""Few-shot residual bottleneck adapter training on frozen embedding caches.

The package splits into a functional core (cache IO, adapter math,
training, evaluation, plots, CLI) and a thin scikit-learn estimator
layer on top. Everything downstream of a cache file is deterministic
given a seed.
"""

from .adapters import (
    AdapterParams,
    FixedRatio,
    HypernetRatio,
    LearnableRatio,
    RatioMode,
    Variant,
    adapter_forward,
    blend,
    effective_ratios,
    forward_batch,
    initial_ratio_mode,
    load_adapter,
    normalize_rows,
    ratio_mode_to_dict,
    save_adapter,
    sigmoid,
    softmax_rows,
)
from .cache import (
    EmbeddingCache,
    Episode,
    cache_from_bytes,
    cache_to_bytes,
    load_cache,
    make_synthetic_cache,
    sample_episode,
    save_cache,
)
from .errors import (
    ArgumentError,
    DegenerateFeatureError,
    DivergenceError,
    EmbAdaptError,
    FormatError,
    InsufficientShotsError,
    ShapeError,
    ValidationError,
)
from .estimators import (
    LinearProbeClassifier,
    ResidualAdapterClassifier,
    ZeroShotClassifier,
)
from .evaluation import (
    EvalReport,
    ProbeConfig,
    ProbeResult,
    SweepTable,
    eval_adapter,
    eval_probe,
    eval_zero_shot,
    export_adapted_features,
    probe_gradient,
    probe_objective,
    sweep_alpha,
    sweep_bottleneck,
    train_linear_probe,
    train_probe_on_arrays,
    write_csv,
    write_feature_csv,
)
from .plots import emit_plots
from .training import (
    GradCheckReport,
    TrainConfig,
    TrainResult,
    backward,
    cross_entropy,
    grad_check,
    init_params,
    train,
    train_on_arrays,
    trainable_parameter_count,
)

__version__ = "0.1.0"

__all__ = [
    "AdapterParams",
    "ArgumentError",
    "DegenerateFeatureError",
    "DivergenceError",
    "EmbAdaptError",
    "EmbeddingCache",
    "Episode",
    "EvalReport",
    "FixedRatio",
    "FormatError",
    "GradCheckReport",
    "HypernetRatio",
    "InsufficientShotsError",
    "LearnableRatio",
    "LinearProbeClassifier",
    "ProbeConfig",
    "ProbeResult",
    "RatioMode",
    "ResidualAdapterClassifier",
    "ShapeError",
    "SweepTable",
    "TrainConfig",
    "TrainResult",
    "ValidationError",
    "Variant",
    "ZeroShotClassifier",
    "adapter_forward",
    "backward",
    "blend",
    "cache_from_bytes",
    "cache_to_bytes",
    "cross_entropy",
    "effective_ratios",
    "emit_plots",
    "eval_adapter",
    "eval_probe",
    "eval_zero_shot",
    "export_adapted_features",
    "forward_batch",
    "grad_check",
    "init_params",
    "initial_ratio_mode",
    "load_adapter",
    "load_cache",
    "make_synthetic_cache",
    "normalize_rows",
    "probe_gradient",
    "probe_objective",
    "ratio_mode_to_dict",
    "sample_episode",
    "save_adapter",
    "save_cache",
    "sigmoid",
    "softmax_rows",
    "sweep_alpha",
    "sweep_bottleneck",
    "train",
    "train_linear_probe",
    "train_on_arrays",
    "train_probe_on_arrays",
    "trainable_parameter_count",
    "write_csv",
    "write_feature_csv",
]
