"""Report and plot rendering: results tables and native SVG charts."""
import math
from typing import Sequence

import numpy as np

from src.assembly import Mode
from src.diversity import Distribution
from src.sweep import AggregateRow, RunResult, aggregate

WIDTH = 640
HEIGHT = 400
MARGIN_LEFT = 60
MARGIN_RIGHT = 150
MARGIN_TOP = 40
MARGIN_BOTTOM = 50

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd")
METRIC_LABELS = {"f1": "F1", "pr_auc": "PR-AUC", "recall": "Recall", "precision": "Precision"}

TABLE_HEADER = ("Dataset", "Synth Ratio", "F1", "PR-AUC", "Recall")


def _num(v: float) -> str:
    return f"{v:.2f}"


def _escape(text: str) -> str:
    return text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")


def ratio_label(ratio: float, mode: str) -> str:
    """
    Table label of a condition.

    Examples: ``0×``, ``0.5×``, ``synth-only (20×)``.
    """
    label = f"{ratio:g}×"
    return f"synth-only ({label})" if mode == Mode.SYNTH_ONLY.value else label


def ratio_positions(ratios: Sequence[float]) -> dict[float, float]:
    """
    Log-scale axis coordinates of ratios.

    Positive ratios map to log10(ratio); 0 sits one decade left of the
    smallest positive ratio (or at 0 when no ratio is positive).
    """
    positive = sorted(r for r in ratios if r > 0)
    zero_at = math.log10(positive[0]) - 1 if positive else 0.0
    return {r: (math.log10(r) if r > 0 else zero_at) for r in ratios}


def _svg(body: list[str], title: str) -> str:
    head = (
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">'
    )
    return "\n".join([
        head,
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.2f}" y="22" text-anchor="middle" font-size="14">{_escape(title)}</text>',
        *body,
        "</svg>",
        "",
    ])


class _Frame:
    """Linear map from data coordinates to the plot area."""

    def __init__(self, x_min: float, x_max: float, y_min: float, y_max: float) -> None:
        if x_max == x_min:
            x_min, x_max = x_min - 0.5, x_max + 0.5
        if y_max == y_min:
            y_min, y_max = y_min - 0.5, y_max + 0.5
        self.x_min, self.x_max, self.y_min, self.y_max = x_min, x_max, y_min, y_max
        self.left = MARGIN_LEFT
        self.right = WIDTH - MARGIN_RIGHT
        self.top = MARGIN_TOP
        self.bottom = HEIGHT - MARGIN_BOTTOM

    def x(self, v: float) -> float:
        return self.left + (v - self.x_min) / (self.x_max - self.x_min) * (self.right - self.left)

    def y(self, v: float) -> float:
        return self.bottom - (v - self.y_min) / (self.y_max - self.y_min) * (self.bottom - self.top)

    def axes(self, x_label: str, y_label: str) -> list[str]:
        return [
            f'<line x1="{_num(self.left)}" y1="{_num(self.bottom)}" x2="{_num(self.right)}" '
            f'y2="{_num(self.bottom)}" stroke="black"/>',
            f'<line x1="{_num(self.left)}" y1="{_num(self.top)}" x2="{_num(self.left)}" '
            f'y2="{_num(self.bottom)}" stroke="black"/>',
            f'<text x="{_num((self.left + self.right) / 2)}" y="{HEIGHT - 12}" '
            f'text-anchor="middle">{_escape(x_label)}</text>',
            f'<text x="16" y="{_num((self.top + self.bottom) / 2)}" text-anchor="middle" '
            f'transform="rotate(-90 16 {_num((self.top + self.bottom) / 2)})">{_escape(y_label)}</text>',
        ]

    def y_ticks(self, values: Sequence[float], fmt: str = "{:.2f}") -> list[str]:
        out = []
        for v in values:
            y = self.y(v)
            out.append(f'<line x1="{_num(self.left - 4)}" y1="{_num(y)}" x2="{_num(self.left)}" '
                       f'y2="{_num(y)}" stroke="black"/>')
            out.append(f'<text x="{_num(self.left - 8)}" y="{_num(y + 4)}" text-anchor="end">'
                       f'{fmt.format(v)}</text>')
        return out


def render_ratio_plot(
    rows: Sequence[AggregateRow],
    metrics: Sequence[str] = ("f1", "pr_auc", "recall"),
    title: str = "Effect of synthetic data size on classification",
) -> str:
    """
    Line plot of mean metrics against the synthetic ratio (log-scaled axis).

    Mixed-mode conditions form one line per metric; synth-only conditions
    are drawn as hollow square markers at their ratio.

    Args:
        rows: Aggregate rows of one domain
        metrics: Metric names to draw
        title: Plot title

    Returns:
        SVG document text
    """
    mixed = sorted((r for r in rows if r.mode == Mode.MIXED.value), key=lambda r: r.ratio)
    synth = [r for r in rows if r.mode == Mode.SYNTH_ONLY.value]
    ratios = sorted({r.ratio for r in rows})
    pos = ratio_positions(ratios)
    xs = list(pos.values()) or [0.0]
    frame = _Frame(min(xs) - 0.15, max(xs) + 0.15, 0.0, 1.0)

    body = frame.axes("synthetic-to-real ratio (log scale)", "score")
    body += frame.y_ticks([0.0, 0.25, 0.5, 0.75, 1.0])
    for r in ratios:
        x = frame.x(pos[r])
        body.append(f'<line x1="{_num(x)}" y1="{_num(frame.bottom)}" x2="{_num(x)}" '
                    f'y2="{_num(frame.bottom + 4)}" stroke="black"/>')
        body.append(f'<text x="{_num(x)}" y="{_num(frame.bottom + 18)}" text-anchor="middle">'
                    f'{_escape(ratio_label(r, Mode.MIXED.value))}</text>')

    for k, name in enumerate(metrics):
        color = PALETTE[k % len(PALETTE)]
        points = [(frame.x(pos[r.ratio]), frame.y(r.metric(name)[0])) for r in mixed]
        if points:
            coords = " ".join(f"{_num(x)},{_num(y)}" for x, y in points)
            body.append(f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="2"/>')
            body += [f'<circle cx="{_num(x)}" cy="{_num(y)}" r="3" fill="{color}"/>' for x, y in points]
        for r in synth:
            x, y = frame.x(pos[r.ratio]), frame.y(r.metric(name)[0])
            body.append(f'<rect x="{_num(x - 4)}" y="{_num(y - 4)}" width="8" height="8" '
                        f'fill="none" stroke="{color}" stroke-width="2"/>')
        ly = MARGIN_TOP + 10 + 18 * k
        lx = WIDTH - MARGIN_RIGHT + 16
        body.append(f'<line x1="{lx}" y1="{ly}" x2="{lx + 20}" y2="{ly}" stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{lx + 26}" y="{ly + 4}">{METRIC_LABELS.get(name, name)}</text>')
    if synth:
        ly = MARGIN_TOP + 10 + 18 * len(metrics)
        lx = WIDTH - MARGIN_RIGHT + 16
        body.append(f'<rect x="{lx + 6}" y="{ly - 4}" width="8" height="8" fill="none" stroke="black"/>')
        body.append(f'<text x="{lx + 26}" y="{ly + 4}">synth-only</text>')
    return _svg(body, title)


def render_histogram(
    real: Distribution,
    synth: Distribution,
    title: str,
    x_label: str,
) -> str:
    """
    Overlaid histograms of a real and a synthetic pairwise distribution.

    Both are re-binned on a shared range with the real distribution's bin count.

    Returns:
        SVG document text
    """
    bins = len(real.bin_counts)
    lo = min(real.min, synth.min)
    hi = max(real.max, synth.max)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    real_counts, edges = np.histogram(real.values, bins=bins, range=(lo, hi))
    synth_counts, _ = np.histogram(synth.values, bins=bins, range=(lo, hi))
    real_density = real_counts / max(real.count, 1)
    synth_density = synth_counts / max(synth.count, 1)
    top = float(max(real_density.max(), synth_density.max(), 1e-12))
    frame = _Frame(float(edges[0]), float(edges[-1]), 0.0, top)

    body = frame.axes(x_label, "fraction of pairs")
    body += frame.y_ticks([0.0, top / 2, top], "{:.3f}")
    for v in (edges[0], (edges[0] + edges[-1]) / 2, edges[-1]):
        x = frame.x(float(v))
        body.append(f'<text x="{_num(x)}" y="{_num(frame.bottom + 18)}" text-anchor="middle">{v:.3g}</text>')

    for k, (name, density) in enumerate((("real", real_density), ("synthetic", synth_density))):
        color = PALETTE[k]
        for i, d in enumerate(density.tolist()):
            if d <= 0:
                continue
            x0, x1 = frame.x(float(edges[i])), frame.x(float(edges[i + 1]))
            y = frame.y(d)
            body.append(f'<rect x="{_num(x0)}" y="{_num(y)}" width="{_num(x1 - x0)}" '
                        f'height="{_num(frame.bottom - y)}" fill="{color}" fill-opacity="0.45"/>')
        ly = MARGIN_TOP + 10 + 18 * k
        lx = WIDTH - MARGIN_RIGHT + 16
        body.append(f'<rect x="{lx}" y="{ly - 6}" width="12" height="12" fill="{color}" fill-opacity="0.45"/>')
        body.append(f'<text x="{lx + 20}" y="{ly + 4}">{name} (mean {_num(real.mean if k == 0 else synth.mean)})</text>')
    return _svg(body, title)


def format_report_table(results: Sequence[RunResult]) -> str:
    """
    Table of mean F1, PR-AUC and Recall per dataset and condition.

    Args:
        results: Per-run rows

    Returns:
        Markdown-style pipe table
    """
    lines = [
        "| " + " | ".join(TABLE_HEADER) + " |",
        "|" + "|".join("---" for _ in TABLE_HEADER) + "|",
    ]
    for row in aggregate(results):
        lines.append("| " + " | ".join([
            row.domain,
            ratio_label(row.ratio, row.mode),
            f"{row.metric('f1')[0]:.3f}",
            f"{row.metric('pr_auc')[0]:.3f}",
            f"{row.metric('recall')[0]:.3f}",
        ]) + " |")
    return "\n".join(lines)


def format_analysis(results: Sequence[RunResult]) -> str:
    """
    Findings per dataset: best condition, gain over the no-synthetic
    baseline, whether gains diminish past the best ratio, and synth-only vs
    mixed at the same ratio.

    Args:
        results: Per-run rows

    Returns:
        Plain-text summary
    """
    rows = aggregate(results)
    lines = []
    for domain in sorted({r.domain for r in rows}):
        domain_rows = [r for r in rows if r.domain == domain]
        mixed = sorted((r for r in domain_rows if r.mode == Mode.MIXED.value), key=lambda r: r.ratio)
        best = max(domain_rows, key=lambda r: (r.metric("f1")[0], -r.ratio))
        lines.append(f"[{domain}]")
        lines.append(
            f"  best F1: {best.metric('f1')[0]:.3f} at {ratio_label(best.ratio, best.mode)}"
        )

        baseline = next((r for r in mixed if r.ratio == 0), None)
        if baseline is not None:
            base_f1 = baseline.metric("f1")[0]
            for r in mixed:
                if r.ratio == 0:
                    continue
                f1 = r.metric("f1")[0]
                gain = f"{f1 / base_f1:.1f}× baseline" if base_f1 > 0 else "baseline F1 is 0"
                lines.append(f"  {ratio_label(r.ratio, r.mode)}: F1 {f1:.3f} ({gain})")

        if mixed:
            peak = max(mixed, key=lambda r: (r.metric("f1")[0], -r.ratio))
            if peak.ratio < mixed[-1].ratio:
                lines.append(
                    f"  diminishing returns: F1 peaks at {ratio_label(peak.ratio, peak.mode)} "
                    f"and is lower at larger ratios"
                )
            else:
                lines.append("  F1 is highest at the largest ratio tested")

        for r in domain_rows:
            if r.mode != Mode.SYNTH_ONLY.value:
                continue
            twin = next((m for m in mixed if m.ratio == r.ratio), None)
            if twin is not None:
                lines.append(
                    f"  {ratio_label(r.ratio, r.mode)}: F1 {r.metric('f1')[0]:.3f} "
                    f"vs mixed {twin.metric('f1')[0]:.3f}"
                )
    return "\n".join(lines)
