"""Command-line front door.

Every subcommand is a thin shell over one or two library calls. Machine
output goes to files (--out JSON, --csv, --plot, --model); standard
output carries only a short human summary. Errors print structured JSON
on standard error and map to exit codes: 1 for usage or validation
problems, 2 for runtime failures such as divergence or IO.
"""

from __future__ import annotations

import argparse
import json
import sys

import numpy as np

from . import seeding
from .adapters import (
    AdapterParams,
    FixedRatio,
    Variant,
    initial_ratio_mode,
    load_adapter,
    ratio_mode_to_dict,
    save_adapter,
)
from .cache import load_cache, make_synthetic_cache, sample_episode, save_cache
from .errors import (
    ArgumentError,
    DegenerateFeatureError,
    DivergenceError,
    EmbAdaptError,
    FormatError,
    ValidationError,
)
from .evaluation import (
    eval_adapter,
    eval_probe,
    eval_zero_shot,
    export_adapted_features,
    ProbeConfig,
    sweep_alpha,
    sweep_bottleneck,
    train_linear_probe,
    write_csv,
    write_feature_csv,
)
from .plots import emit_plots
from .training import TrainConfig, grad_check, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class _UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems instead of exiting."""

    def error(self, message):
        raise _UsageError(message)


def _write_json(path: str, payload: dict) -> None:
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _print_error(kind: str, message: str) -> None:
    json.dump({"error": {"type": kind, "message": message}}, sys.stderr)
    sys.stderr.write("\n")


def _seed(value: str) -> int:
    return seeding.check_seed(int(value))


def _float_list(text: str) -> list[float]:
    try:
        return [float(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ArgumentError(f"could not parse grid {text!r}: {exc}") from None


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError as exc:
        raise ArgumentError(f"could not parse grid {text!r}: {exc}") from None


def _add_train_flags(sub: argparse.ArgumentParser) -> None:
    sub.add_argument("--shots", type=int, default=16)
    sub.add_argument("--seed", type=_seed, default=0)
    sub.add_argument("--variant", choices=["visual", "text", "both"], default="visual")
    sub.add_argument("--ratio-mode", choices=["fixed", "learnable", "hypernet"], default="fixed")
    sub.add_argument("--alpha", type=float, default=0.2)
    sub.add_argument("--beta", type=float, default=0.5)
    sub.add_argument("--bottleneck-ratio", type=int, default=4)
    sub.add_argument("--epochs", type=int, default=200)
    sub.add_argument("--lr", type=float, default=1e-5)
    sub.add_argument("--batch-size", type=int, default=32)
    sub.add_argument("--momentum", type=float, default=0.9)
    sub.add_argument("--schedule", choices=["constant", "cosine"], default="cosine")
    sub.add_argument("--weight-decay", type=float, default=0.0)
    sub.add_argument("--logit-scale", type=float, default=100.0)
    sub.add_argument("--no-renorm", action="store_true")


def build_parser() -> _Parser:
    parser = _Parser(prog="embadapt", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("inspect", help="summarize a cache file")
    p.add_argument("--cache", required=True)
    p.add_argument("--out")

    p = subs.add_parser("synth", help="generate a synthetic cache")
    p.add_argument("--classes", type=int, required=True)
    p.add_argument("--per-class", type=int, required=True)
    p.add_argument("--dim", type=int, required=True)
    p.add_argument("--text-noise", type=float, required=True)
    p.add_argument("--feature-noise", type=float, required=True)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out", required=True, help="cache file to write")

    p = subs.add_parser("sample", help="sample a few-shot episode")
    p.add_argument("--cache", required=True)
    p.add_argument("--shots", type=int, default=16)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out")

    p = subs.add_parser("train", help="train adapters on a few-shot episode")
    p.add_argument("--cache", required=True)
    _add_train_flags(p)
    p.add_argument("--out", help="JSON report path")
    p.add_argument("--model", help="trained adapter state path")
    p.add_argument("--plot", help="loss-curve SVG path")

    p = subs.add_parser("eval", help="evaluate a method on a split")
    p.add_argument("--cache", required=True)
    p.add_argument("--method", choices=["zero-shot", "linear-probe", "adapter"], default="zero-shot")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--logit-scale", type=float, default=100.0)
    p.add_argument("--no-renorm", action="store_true")
    p.add_argument("--model", help="adapter state (adapter method)")
    p.add_argument("--shots", type=int, default=16, help="probe episode size (linear-probe method)")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--l2", type=float, default=1.0)
    p.add_argument("--out")
    p.add_argument("--csv")
    p.add_argument("--plot")

    p = subs.add_parser("sweep-alpha", help="ablation over the residual ratio")
    p.add_argument("--cache", required=True)
    _add_train_flags(p)
    p.add_argument("--grid", type=_float_list, default=[0.0, 0.2, 0.4, 0.6, 0.8, 1.0])
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--csv")
    p.add_argument("--plot")

    p = subs.add_parser("sweep-dim", help="ablation over the bottleneck ratio")
    p.add_argument("--cache", required=True)
    _add_train_flags(p)
    p.add_argument("--grid", type=_int_list, default=[1, 2, 4, 8, 16, 32])
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out")
    p.add_argument("--csv")
    p.add_argument("--plot")

    p = subs.add_parser("gradcheck", help="verify gradients against finite differences")
    p.add_argument("--trials", type=int, default=20)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--batch", type=int, default=4)
    p.add_argument("--dim", type=int, default=8)
    p.add_argument("--hidden", type=int, default=2)
    p.add_argument("--classes", type=int, default=3)
    p.add_argument("--out")

    p = subs.add_parser("export-features", help="write post-blend features as CSV")
    p.add_argument("--cache", required=True)
    p.add_argument("--model", help="adapter state; omitted exports renormalized originals")
    p.add_argument("--split", choices=["train", "val", "test"], default="test")
    p.add_argument("--out", required=True, help="CSV path")

    return parser


def _train_config_from_args(args, dim: int) -> TrainConfig:
    return TrainConfig(
        shots=args.shots,
        seed=args.seed,
        epochs=args.epochs,
        batch_size=args.batch_size,
        learning_rate=args.lr,
        momentum=args.momentum,
        schedule=args.schedule,
        variant=Variant(args.variant),
        ratio_mode=initial_ratio_mode(args.ratio_mode, args.alpha, args.beta, dim),
        bottleneck_ratio=args.bottleneck_ratio,
        weight_decay=args.weight_decay,
        renormalize=not args.no_renorm,
        logit_scale=args.logit_scale,
    )


def _flag_echo(args, names: list[str]) -> dict:
    echo = {"command": args.command}
    for name in names:
        echo[name.replace("-", "_")] = getattr(args, name.replace("-", "_"))
    return echo


_TRAIN_FLAGS = [
    "cache", "shots", "seed", "variant", "ratio-mode", "alpha", "beta",
    "bottleneck-ratio", "epochs", "lr", "batch-size", "momentum", "schedule",
    "weight-decay", "logit-scale", "no-renorm",
]


def _cmd_inspect(args) -> tuple[dict, list[str]]:
    cache = load_cache(args.cache)
    split_counts = {name: int(cache.split_indices(name).size) for name in ("train", "val", "test")}
    payload = {
        "command": "inspect",
        "cache": args.cache,
        "dim": cache.dim,
        "num_images": cache.num_images,
        "num_classes": cache.num_classes,
        "normalized": cache.normalized_flag,
        "split_counts": split_counts,
        "class_names": cache.class_names,
    }
    lines = [
        f"{args.cache}: {cache.num_images} images, {cache.num_classes} classes, dim {cache.dim}",
        f"splits: " + ", ".join(f"{k}={v}" for k, v in split_counts.items()),
        f"normalized: {cache.normalized_flag}",
    ]
    return payload, lines


def _cmd_synth(args) -> tuple[dict | None, list[str]]:
    cache = make_synthetic_cache(
        args.classes, args.per_class, args.dim, args.text_noise, args.feature_noise, args.seed
    )
    save_cache(cache, args.out)
    lines = [
        f"wrote {args.out}: {cache.num_images} images, {cache.num_classes} classes, dim {cache.dim}"
    ]
    return None, lines


def _cmd_sample(args) -> tuple[dict, list[str]]:
    cache = load_cache(args.cache)
    episode = sample_episode(cache, args.shots, args.seed)
    payload = {
        "command": "sample",
        "cache": args.cache,
        "shots": episode.shots,
        "seed": episode.seed,
        "indices": episode.indices.tolist(),
        "per_class": episode.per_class().tolist(),
    }
    lines = [f"sampled {episode.indices.size} indices ({args.shots} per class, seed {args.seed})"]
    return payload, lines


def _cmd_train(args) -> tuple[dict, list[str]]:
    cache = load_cache(args.cache)
    config = _train_config_from_args(args, cache.dim)
    episode = sample_episode(cache, args.shots, args.seed)
    result = train(cache, episode, config)
    if args.model:
        save_adapter(args.model, result.params, result.ratio_mode, result.variant)
    if args.plot:
        emit_plots(result, args.plot)
    payload = {
        "config": _flag_echo(args, _TRAIN_FLAGS),
        "result": result.to_dict(),
    }
    lines = [
        f"trained {config.variant.value} adapters for {config.epochs} epochs "
        f"({result.wallclock:.2f}s)",
        f"loss {result.loss_curve[0]:.4f} -> {result.loss_curve[-1]:.4f}, "
        f"train accuracy {result.train_accuracy_curve[-1]:.4f}",
    ]
    if args.model:
        lines.append(f"model written to {args.model}")
    return payload, lines


def _cmd_eval(args) -> tuple[dict, list[str]]:
    cache = load_cache(args.cache)
    renormalize = not args.no_renorm
    extras: dict = {}
    if args.method == "zero-shot":
        report = eval_zero_shot(cache, scale=args.logit_scale, split=args.split)
        baseline = None
    elif args.method == "adapter":
        if not args.model:
            raise ArgumentError("--model is required for the adapter method")
        params, ratio_mode, variant = load_adapter(args.model)
        report = eval_adapter(
            cache, params, ratio_mode, variant,
            scale=args.logit_scale, split=args.split, renormalize=renormalize,
        )
        baseline = eval_zero_shot(cache, scale=args.logit_scale, split=args.split)
        extras["zero_shot_accuracy"] = baseline.overall_accuracy
    else:
        episode = sample_episode(cache, args.shots, args.seed)
        probe = train_linear_probe(cache, episode, ProbeConfig(l2=args.l2))
        echo = {"l2": args.l2, "shots": args.shots, "seed": args.seed}
        report = eval_probe(cache, probe.weights, probe.bias, split=args.split, config=echo)
        baseline = eval_zero_shot(cache, scale=args.logit_scale, split=args.split)
        extras["probe"] = {
            "iterations": probe.iterations,
            "gradient_norm": probe.gradient_norm,
            "objective": probe.objective,
            "converged": probe.converged,
        }
        extras["zero_shot_accuracy"] = baseline.overall_accuracy
    if args.csv:
        write_csv(args.csv, report.to_csv_rows(cache.class_names))
    if args.plot:
        emit_plots(report, args.plot, baseline=baseline, class_names=cache.class_names)
    payload = {
        "config": {
            "command": "eval",
            "cache": args.cache,
            "method": args.method,
            "split": args.split,
            "logit_scale": args.logit_scale,
            "no_renorm": args.no_renorm,
            "model": args.model,
            "shots": args.shots,
            "seed": args.seed,
            "l2": args.l2,
        },
        "report": report.to_dict(),
        **extras,
    }
    lines = [f"{args.method} accuracy on {args.split}: {report.overall_accuracy:.4f} "
             f"({report.num_test} examples)"]
    return payload, lines


def _cmd_sweep(args, axis: str) -> tuple[dict, list[str]]:
    cache = load_cache(args.cache)
    config = _train_config_from_args(args, cache.dim)
    episode = sample_episode(cache, args.shots, args.seed)
    if axis == "alpha":
        table = sweep_alpha(cache, episode, config, args.grid, split=args.split, jobs=args.jobs)
    else:
        table = sweep_bottleneck(cache, episode, config, args.grid, split=args.split, jobs=args.jobs)
    if args.csv:
        write_csv(args.csv, table.to_csv_rows())
    if args.plot:
        emit_plots(table, args.plot)
    payload = {
        "config": {**_flag_echo(args, _TRAIN_FLAGS), "grid": args.grid,
                   "split": args.split, "jobs": args.jobs},
        "table": table.to_dict(),
    }
    lines = [f"{table.axis_name} sweep over {len(args.grid)} values, best {table.best_value}"]
    for value, acc, err in zip(table.axis_values, table.accuracies, table.errors):
        lines.append(f"  {value}: {acc:.4f}" if acc is not None else f"  {value}: {err}")
    return payload, lines


def _cmd_gradcheck(args) -> tuple[dict, list[str]]:
    report = grad_check(
        batch=args.batch, dim=args.dim, hidden=args.hidden, classes=args.classes,
        trials=args.trials, seed=args.seed,
    )
    payload = {
        "config": {
            "command": "gradcheck", "trials": args.trials, "seed": args.seed,
            "batch": args.batch, "dim": args.dim, "hidden": args.hidden,
            "classes": args.classes,
        },
        "report": report.to_dict(),
    }
    lines = [
        f"gradient check passed: max relative error {report.max_relative_error:.3e} "
        f"(tolerance {report.tolerance:g}, {report.trials} trials, {report.seconds:.2f}s)",
        f"worst case: {report.worst_case}",
    ]
    if not report.passed:
        # the report is still written so the failure can be inspected
        if args.out:
            _write_json(args.out, payload)
        raise DivergenceError(
            f"gradient check failed: max relative error {report.max_relative_error:.3e} "
            f"at {report.worst_case}"
        )
    return payload, lines


def _cmd_export(args) -> tuple[dict | None, list[str]]:
    cache = load_cache(args.cache)
    if args.model:
        params, ratio_mode, variant = load_adapter(args.model)
    else:
        hidden = max(1, cache.dim // 4)
        params = AdapterParams(
            bottleneck_ratio=4,
            w1_visual=np.zeros((cache.dim, hidden)),
            w2_visual=np.zeros((hidden, cache.dim)),
        )
        ratio_mode = FixedRatio(0.0, 0.0)
        variant = Variant.VISUAL
    features, labels = export_adapted_features(cache, params, ratio_mode, variant, split=args.split)
    write_feature_csv(args.out, features, labels)
    lines = [f"wrote {features.shape[0]} rows x {features.shape[1] + 1} columns to {args.out}"]
    return None, lines


def run(argv: list[str] | None = None) -> int:
    """Parse arguments, dispatch, and map errors to exit codes."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _UsageError as exc:
        _print_error("UsageError", str(exc))
        return EXIT_USAGE

    try:
        if args.command == "inspect":
            payload, lines = _cmd_inspect(args)
        elif args.command == "synth":
            payload, lines = _cmd_synth(args)
        elif args.command == "sample":
            payload, lines = _cmd_sample(args)
        elif args.command == "train":
            payload, lines = _cmd_train(args)
        elif args.command == "eval":
            payload, lines = _cmd_eval(args)
        elif args.command == "sweep-alpha":
            payload, lines = _cmd_sweep(args, "alpha")
        elif args.command == "sweep-dim":
            payload, lines = _cmd_sweep(args, "bottleneck_ratio")
        elif args.command == "gradcheck":
            payload, lines = _cmd_gradcheck(args)
        else:
            payload, lines = _cmd_export(args)
    except (DivergenceError, DegenerateFeatureError) as exc:
        _print_error(type(exc).__name__, str(exc))
        return EXIT_RUNTIME
    except (ArgumentError, ValidationError, FormatError) as exc:
        _print_error(type(exc).__name__, str(exc))
        return EXIT_USAGE
    except EmbAdaptError as exc:
        _print_error(type(exc).__name__, str(exc))
        return EXIT_RUNTIME
    except OSError as exc:
        _print_error("IoError", str(exc))
        return EXIT_RUNTIME

    out = getattr(args, "out", None)
    if payload is not None and out:
        try:
            _write_json(out, payload)
        except OSError as exc:
            _print_error("IoError", str(exc))
            return EXIT_RUNTIME
        lines.append(f"report written to {out}")
    for line in lines:
        print(line)
    return EXIT_OK


def main() -> None:
    sys.exit(run())
