"""Minimal deterministic SVG line plots for curves, differences, transfer.

Hand-rolled rather than a plotting library so that identical inputs
produce byte-identical files (modulo the optional timestamp comment).
Token axes are log-scaled; zero-token points are drawn at the position
of one token.
"""

from __future__ import annotations

import math
from datetime import datetime, timezone
from pathlib import Path

import numpy as np

from .errors import ContractError
from .transfer import LossCurve, TransferReport

WIDTH, HEIGHT = 860, 520
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 90, 40, 56, 70

PALETTE = (
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
    "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_label(v: float) -> str:
    if v == 0:
        return "0"
    exp = math.log10(abs(v))
    if exp == int(exp) and abs(exp) >= 3:
        return f"1e{int(exp)}"
    return f"{v:g}"


class _Svg:
    def __init__(self, title: str, timestamp: bool):
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        ]
        if timestamp:
            now = datetime.now(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")
            self.parts.append(f"<!-- generated: {now} -->")
        self.parts.append(f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>')
        self.text(WIDTH / 2, MARGIN_T / 2 + 6, title, size=16, anchor="middle")

    def line(self, x1, y1, x2, y2, color="#333333", width=1.0, dashed=False):
        dash = ' stroke-dasharray="6,4"' if dashed else ""
        self.parts.append(
            f'<line x1="{_fmt(x1)}" y1="{_fmt(y1)}" x2="{_fmt(x2)}" y2="{_fmt(y2)}" '
            f'stroke="{color}" stroke-width="{width}"{dash}/>'
        )

    def polyline(self, pts, color, width=1.8):
        if len(pts) < 2:
            return
        coords = " ".join(f"{_fmt(x)},{_fmt(y)}" for x, y in pts)
        self.parts.append(
            f'<polyline points="{coords}" fill="none" stroke="{color}" stroke-width="{width}"/>'
        )

    def text(self, x, y, s, size=12, anchor="start", rotate=None, color="#222222"):
        tr = f' transform="rotate({rotate} {_fmt(x)} {_fmt(y)})"' if rotate is not None else ""
        self.parts.append(
            f'<text x="{_fmt(x)}" y="{_fmt(y)}" font-size="{size}" font-family="sans-serif" '
            f'text-anchor="{anchor}" fill="{color}"{tr}>{s}</text>'
        )

    def write(self, path):
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        self.parts.append("</svg>")
        path.write_text("\n".join(self.parts) + "\n")


class _Axes:
    """Maps data space to pixel space; either axis may be log10."""

    def __init__(self, svg: _Svg, xlim, ylim, xlabel, ylabel, xlog=False, ylog=False):
        self.svg = svg
        self.xlog, self.ylog = xlog, ylog
        self.x0, self.x1 = (math.log10(xlim[0]), math.log10(xlim[1])) if xlog else xlim
        self.y0, self.y1 = (math.log10(ylim[0]), math.log10(ylim[1])) if ylog else ylim
        if self.x1 <= self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 <= self.y0:
            self.y1 = self.y0 + 1.0
        svg.line(MARGIN_L, HEIGHT - MARGIN_B, WIDTH - MARGIN_R, HEIGHT - MARGIN_B)
        svg.line(MARGIN_L, MARGIN_T, MARGIN_L, HEIGHT - MARGIN_B)
        svg.text(WIDTH / 2, HEIGHT - 16, xlabel, size=13, anchor="middle")
        svg.text(22, HEIGHT / 2, ylabel, size=13, anchor="middle", rotate=-90)
        self._ticks()

    def px(self, x: float) -> float:
        v = math.log10(x) if self.xlog else x
        f = (v - self.x0) / (self.x1 - self.x0)
        return MARGIN_L + f * (WIDTH - MARGIN_L - MARGIN_R)

    def py(self, y: float) -> float:
        v = math.log10(y) if self.ylog else y
        f = (v - self.y0) / (self.y1 - self.y0)
        return HEIGHT - MARGIN_B - f * (HEIGHT - MARGIN_T - MARGIN_B)

    def _tick_values(self, lo, hi, is_log):
        if is_log:
            return [10.0**e for e in range(math.ceil(lo), math.floor(hi) + 1)]
        step = 10 ** math.floor(math.log10(max(hi - lo, 1e-12)))
        if (hi - lo) / step > 6:
            step *= 2
        elif (hi - lo) / step < 3:
            step /= 2
        start = math.ceil(lo / step) * step
        vals, v = [], start
        while v <= hi + 1e-12:
            vals.append(v)
            v += step
        return vals

    def _ticks(self):
        for v in self._tick_values(self.x0, self.x1, self.xlog):
            x = self.px(v) if not self.xlog else self.px(v)
            self.svg.line(x, HEIGHT - MARGIN_B, x, HEIGHT - MARGIN_B + 5)
            self.svg.text(x, HEIGHT - MARGIN_B + 20, _tick_label(v), size=10, anchor="middle")
        for v in self._tick_values(self.y0, self.y1, self.ylog):
            y = self.py(v) if not self.ylog else self.py(v)
            self.svg.line(MARGIN_L - 5, y, MARGIN_L, y)
            self.svg.text(MARGIN_L - 9, y + 4, _tick_label(v), size=10, anchor="end")

    def legend(self, entries):
        x, y = WIDTH - MARGIN_R - 220, MARGIN_T + 14
        for i, (label, color) in enumerate(entries):
            yy = y + i * 18
            self.svg.line(x, yy - 4, x + 24, yy - 4, color=color, width=2.2)
            self.svg.text(x + 30, yy, label, size=11)


def _positive_tokens(tokens: np.ndarray) -> np.ndarray:
    return np.maximum(np.asarray(tokens, dtype=np.float64), 1.0)


def plot_curves(curves: list[LossCurve], out_path, title="validation loss", timestamp=True) -> None:
    if not curves:
        raise ContractError("no curves to plot")
    svg = _Svg(title, timestamp)
    all_t = np.concatenate([_positive_tokens(c.tokens) for c in curves])
    all_l = np.concatenate([c.losses for c in curves])
    pad = 0.05 * (all_l.max() - all_l.min() + 1e-9)
    ax = _Axes(
        svg,
        (all_t.min(), all_t.max()),
        (all_l.min() - pad, all_l.max() + pad),
        "tokens seen (log scale)",
        "validation loss",
        xlog=True,
    )
    entries = []
    for i, c in enumerate(curves):
        color = PALETTE[i % len(PALETTE)]
        pts = [(ax.px(t), ax.py(l)) for t, l in zip(_positive_tokens(c.tokens), c.losses)]
        svg.polyline(pts, color)
        entries.append((c.run_id or f"curve {i}", color))
    ax.legend(entries)
    svg.write(out_path)


def plot_difference(tokens, diffs, out_path, title="validation loss difference", timestamp=True) -> None:
    tokens = np.asarray(tokens, dtype=np.float64)
    diffs = np.asarray(diffs, dtype=np.float64)
    if tokens.size == 0:
        raise ContractError("empty difference series")
    svg = _Svg(title, timestamp)
    t = _positive_tokens(tokens)
    lo, hi = min(diffs.min(), 0.0), max(diffs.max(), 0.0)
    pad = 0.05 * (hi - lo + 1e-9)
    ax = _Axes(
        svg, (t.min(), t.max()), (lo - pad, hi + pad),
        "tokens seen (log scale)", "loss difference", xlog=True,
    )
    zero_y = ax.py(0.0)
    svg.line(MARGIN_L, zero_y, WIDTH - MARGIN_R, zero_y, color="#bbbbbb", dashed=True)
    svg.polyline([(ax.px(x), ax.py(y)) for x, y in zip(t, diffs)], PALETTE[0])
    svg.write(out_path)


def plot_transfer(report: TransferReport, out_path, title="effective data transfer", timestamp=True) -> None:
    defined = [r for r in report.rows if r.effective_transfer is not None]
    asymptotes = [r.level for r in report.rows if r.asymptote]
    if not defined and not asymptotes:
        raise ContractError("transfer report has no plottable rows")
    levels = [r.level for r in defined] + asymptotes
    values = [r.effective_transfer for r in defined] or [0.0]
    svg = _Svg(title, timestamp)
    lo, hi = min(values + [0.0]), max(values + [0.0])
    pad = 0.05 * (hi - lo + 1e-9)
    ax = _Axes(
        svg, (min(levels), max(levels)), (lo - pad, hi + pad),
        "loss level (log scale)", "effective transfer (tokens)", xlog=True,
    )
    zero_y = ax.py(0.0)
    svg.line(MARGIN_L, zero_y, WIDTH - MARGIN_R, zero_y, color="#bbbbbb")
    pts = sorted(((r.level, r.effective_transfer) for r in defined), key=lambda p: p[0])
    svg.polyline([(ax.px(x), ax.py(y)) for x, y in pts], PALETTE[1])
    if asymptotes:
        # convergence asymptote: random init never reaches levels at or below this
        x = ax.px(max(asymptotes))
        svg.line(x, MARGIN_T, x, HEIGHT - MARGIN_B, color=PALETTE[1], dashed=True)
        svg.text(x + 4, MARGIN_T + 14, "asymptote", size=10, color=PALETTE[1])
    svg.write(out_path)
