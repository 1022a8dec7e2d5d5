"""Deterministic SVG chart emission.

Charts are static report artifacts, so we build the SVG text directly:
identical report content yields byte-identical files, which a plotting
library does not guarantee. Three chart kinds cover the package's
outputs: per-epoch loss curves, sweep curves with one marker per grid
value, and per-class bars (absolute accuracy, or gain over a baseline).
"""

from __future__ import annotations

from typing import Sequence

from .errors import ArgumentError
from .evaluation import EvalReport, SweepTable
from .training import TrainResult

WIDTH = 640
HEIGHT = 400
MARGIN_LEFT = 70
MARGIN_RIGHT = 20
MARGIN_TOP = 40
MARGIN_BOTTOM = 50

_STYLE = (
    "text{font-family:monospace;font-size:12px;fill:#333}"
    ".title{font-size:14px}"
    ".axis{stroke:#333;stroke-width:1}"
    ".grid{stroke:#ddd;stroke-width:1}"
    ".line{stroke:#1f77b4;stroke-width:1.5;fill:none}"
    ".marker{fill:#1f77b4}"
    ".bar{fill:#1f77b4}"
    ".bar-neg{fill:#d62728}"
)


def _fmt(value: float) -> str:
    return f"{value:.2f}"


def _label(value) -> str:
    if isinstance(value, float):
        return f"{value:g}"
    return str(value)


def _scaler(lo: float, hi: float, out_lo: float, out_hi: float):
    if hi == lo:
        lo, hi = lo - 1.0, hi + 1.0
    span = hi - lo

    def scale(v: float) -> float:
        return out_lo + (v - lo) / span * (out_hi - out_lo)

    return scale, lo, hi


def _document(body: list[str], title: str) -> str:
    head = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f"<style>{_STYLE}</style>",
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text class="title" x="{WIDTH // 2}" y="20" text-anchor="middle">{_escape(title)}</text>',
    ]
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def _axes(x_label: str, y_label: str, y_lo: float, y_hi: float) -> list[str]:
    bottom = HEIGHT - MARGIN_BOTTOM
    right = WIDTH - MARGIN_RIGHT
    return [
        f'<line class="axis" x1="{MARGIN_LEFT}" y1="{bottom}" x2="{right}" y2="{bottom}"/>',
        f'<line class="axis" x1="{MARGIN_LEFT}" y1="{MARGIN_TOP}" x2="{MARGIN_LEFT}" y2="{bottom}"/>',
        f'<text x="{(MARGIN_LEFT + right) // 2}" y="{HEIGHT - 12}" text-anchor="middle">{_escape(x_label)}</text>',
        f'<text x="16" y="{(MARGIN_TOP + bottom) // 2}" text-anchor="middle" '
        f'transform="rotate(-90 16 {(MARGIN_TOP + bottom) // 2})">{_escape(y_label)}</text>',
        f'<text x="{MARGIN_LEFT - 6}" y="{bottom + 4}" text-anchor="end">{y_lo:.4g}</text>',
        f'<text x="{MARGIN_LEFT - 6}" y="{MARGIN_TOP + 4}" text-anchor="end">{y_hi:.4g}</text>',
    ]


def _series_svg(
    xs: Sequence[float],
    ys: Sequence[float],
    x_tick_labels: Sequence[str] | None,
    title: str,
    x_label: str,
    y_label: str,
    markers: bool,
) -> str:
    if not xs:
        raise ArgumentError("nothing to plot: empty series")
    bottom = HEIGHT - MARGIN_BOTTOM
    right = WIDTH - MARGIN_RIGHT
    scale_x, _, _ = _scaler(min(xs), max(xs), MARGIN_LEFT, right)
    scale_y_fn, y_lo, y_hi = _scaler(min(ys), max(ys), bottom, MARGIN_TOP)

    body = _axes(x_label, y_label, y_lo, y_hi)
    points = " ".join(f"{_fmt(scale_x(x))},{_fmt(scale_y_fn(y))}" for x, y in zip(xs, ys))
    if len(xs) > 1:
        body.append(f'<polyline class="line" points="{points}"/>')
    if markers:
        for x, y in zip(xs, ys):
            body.append(
                f'<circle class="marker" cx="{_fmt(scale_x(x))}" cy="{_fmt(scale_y_fn(y))}" r="4"/>'
            )
    if x_tick_labels is not None:
        for x, label in zip(xs, x_tick_labels):
            body.append(
                f'<text x="{_fmt(scale_x(x))}" y="{bottom + 16}" text-anchor="middle">{_escape(label)}</text>'
            )
    else:
        body.append(f'<text x="{MARGIN_LEFT}" y="{bottom + 16}" text-anchor="middle">{_label(xs[0])}</text>')
        body.append(f'<text x="{right}" y="{bottom + 16}" text-anchor="middle">{_label(xs[-1])}</text>')
    return _document(body, title)


def loss_curve_svg(result: TrainResult) -> str:
    """Per-epoch mean training loss, one point per epoch."""
    epochs = list(range(len(result.loss_curve)))
    return _series_svg(
        [float(e) for e in epochs],
        result.loss_curve,
        None,
        f"training loss ({result.variant.value} variant)",
        "epoch",
        "mean loss",
        markers=len(epochs) <= 60,
    )


def sweep_svg(table: SweepTable) -> str:
    """Accuracy against the swept axis, one marker per grid value."""
    xs, ys, labels = [], [], []
    for i, (value, acc) in enumerate(zip(table.axis_values, table.accuracies)):
        if acc is None:
            continue
        xs.append(float(i))
        ys.append(acc)
        labels.append(_label(value))
    if not xs:
        raise ArgumentError("nothing to plot: every sweep cell failed")
    return _series_svg(
        xs, ys, labels,
        f"accuracy vs {table.axis_name}",
        table.axis_name,
        "accuracy",
        markers=True,
    )


def bars_svg(
    values: Sequence[float],
    labels: Sequence[str],
    title: str,
    y_label: str,
) -> str:
    """Vertical bars around a zero baseline; negatives drop below it."""
    if not values:
        raise ArgumentError("nothing to plot: empty bar series")
    if len(values) != len(labels):
        raise ArgumentError("one label per bar required")
    bottom = HEIGHT - MARGIN_BOTTOM
    right = WIDTH - MARGIN_RIGHT
    lo = min(0.0, min(values))
    hi = max(0.0, max(values))
    scale_y_fn, y_lo, y_hi = _scaler(lo, hi, bottom, MARGIN_TOP)
    body = _axes("class", y_label, y_lo, y_hi)

    zero_y = scale_y_fn(0.0)
    body.append(
        f'<line class="grid" x1="{MARGIN_LEFT}" y1="{_fmt(zero_y)}" x2="{right}" y2="{_fmt(zero_y)}"/>'
    )
    slot = (right - MARGIN_LEFT) / len(values)
    bar_width = slot * 0.7
    for i, (value, label) in enumerate(zip(values, labels)):
        x = MARGIN_LEFT + slot * i + (slot - bar_width) / 2.0
        top = scale_y_fn(max(value, 0.0))
        height = abs(scale_y_fn(value) - zero_y)
        cls = "bar" if value >= 0 else "bar-neg"
        body.append(
            f'<rect class="{cls}" x="{_fmt(x)}" y="{_fmt(top)}" '
            f'width="{_fmt(bar_width)}" height="{_fmt(height)}"/>'
        )
        if len(values) <= 24:
            body.append(
                f'<text x="{_fmt(x + bar_width / 2.0)}" y="{bottom + 16}" '
                f'text-anchor="middle">{_escape(label)}</text>'
            )
    return _document(body, title)


def accuracy_bars_svg(report: EvalReport, class_names: Sequence[str] | None = None) -> str:
    labels = list(class_names) if class_names else [str(i) for i in range(len(report.per_class_accuracy))]
    return bars_svg(
        report.per_class_accuracy, labels,
        f"per-class accuracy ({report.method_tag}, {report.split} split)",
        "accuracy",
    )


def gain_bars_svg(
    report: EvalReport, baseline: EvalReport, class_names: Sequence[str] | None = None
) -> str:
    """Per-class accuracy gain of a method over a baseline report."""
    if len(report.per_class_accuracy) != len(baseline.per_class_accuracy):
        raise ArgumentError("reports cover different class counts")
    gains = [a - b for a, b in zip(report.per_class_accuracy, baseline.per_class_accuracy)]
    labels = list(class_names) if class_names else [str(i) for i in range(len(gains))]
    return bars_svg(
        gains, labels,
        f"accuracy gain over {baseline.method_tag} ({report.split} split)",
        "accuracy gain",
    )


def emit_plots(report, path, baseline: EvalReport | None = None, class_names=None) -> None:
    """Write the chart matching the report type to ``path``.

    TrainResult gets a loss curve, SweepTable a marker curve, EvalReport
    per-class bars (gain bars when a baseline report is supplied).
    """
    if isinstance(report, TrainResult):
        svg = loss_curve_svg(report)
    elif isinstance(report, SweepTable):
        svg = sweep_svg(report)
    elif isinstance(report, EvalReport):
        if baseline is not None:
            svg = gain_bars_svg(report, baseline, class_names)
        else:
            svg = accuracy_bars_svg(report, class_names)
    else:
        raise ArgumentError(f"cannot plot a {type(report).__name__}")
    with open(path, "w", newline="\n") as fh:
        fh.write(svg)
