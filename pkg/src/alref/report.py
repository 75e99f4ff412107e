"""Aggregation of cycle records into curve views and SVG plots.

Curves show mean +/- standard error per cycle across all (repeat, fold)
groups, one series per strategy, with the across-cycle mean in the legend.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from xml.sax.saxutils import escape

import numpy as np

from .loop import CycleRecord

_METRICS = ("accuracy", "acquisition_rate")
_STRATEGY_ORDER = {"rs": 0, "cs": 1, "us": 2}
_COLORS = {"rs": "#7f7f7f", "cs": "#1f77b4", "us": "#d62728"}
_FALLBACK_COLORS = ("#2ca02c", "#9467bd", "#8c564b", "#e377c2")


@dataclass
class CurveSeries:
    strategy: str
    cycles: list[int]
    means: list[float]
    stderrs: list[float]
    legend_mean: float


def aggregate(records: list[CycleRecord], metric: str) -> list[CurveSeries]:
    """One CurveSeries per strategy: per-cycle mean and standard error over
    all (repeat, fold) groups, sample (n-1) std, stderr 0 for single groups.

    Raises if any strategy's (repeat, fold) groups do not all cover the same
    contiguous cycle range starting at 0.
    """
    if not records:
        raise ValueError("no records to aggregate")
    if metric not in _METRICS:
        raise ValueError(f"metric must be one of {_METRICS}")
    by_strategy: dict[str, list[CycleRecord]] = {}
    for rec in records:
        by_strategy.setdefault(rec.strategy, []).append(rec)

    out = []
    for strategy in sorted(by_strategy, key=lambda s: (_STRATEGY_ORDER.get(s, 99), s)):
        recs = by_strategy[strategy]
        groups: dict[tuple[int, int], list[int]] = {}
        for rec in recs:
            groups.setdefault((rec.repeat, rec.fold), []).append(rec.cycle)
        cycle_sets = {tuple(sorted(cs)) for cs in groups.values()}
        if len(cycle_sets) != 1:
            raise ValueError(f"ragged cycle ranges for strategy {strategy!r}")
        cycles = list(cycle_sets.pop())
        if cycles != list(range(len(cycles))):
            raise ValueError(f"cycles not contiguous from 0 for strategy {strategy!r}")

        # canonical group order so float accumulation ignores input order
        values: dict[int, list[float]] = {c: [] for c in cycles}
        for rec in sorted(recs, key=lambda r: (r.repeat, r.fold)):
            values[rec.cycle].append(getattr(rec, metric))
        means, stderrs = [], []
        for c in cycles:
            v = np.array(values[c], dtype=np.float64)
            means.append(float(v.mean()))
            stderrs.append(float(v.std(ddof=1) / np.sqrt(v.size)) if v.size > 1 else 0.0)
        out.append(CurveSeries(strategy, cycles, means, stderrs,
                               legend_mean=float(np.mean(means))))
    return out


class PlotTransform:
    """Affine data -> pixel mapping used by render_svg; exposed so plots can
    be spot-checked from the emitted coordinates."""

    def __init__(self, x_range, y_range, width=640.0, height=400.0,
                 left=56.0, right=492.0, top=20.0, bottom=360.0):
        self.width, self.height = width, height
        self.left, self.right, self.top, self.bottom = left, right, top, bottom
        self.x0, self.x1 = x_range
        self.y0, self.y1 = y_range

    def x(self, v: float) -> float:
        span = self.x1 - self.x0 or 1.0
        return self.left + (v - self.x0) / span * (self.right - self.left)

    def y(self, v: float) -> float:
        span = self.y1 - self.y0 or 1.0
        return self.bottom - (v - self.y0) / span * (self.bottom - self.top)


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _color(strategy: str, i: int) -> str:
    return _COLORS.get(strategy, _FALLBACK_COLORS[i % len(_FALLBACK_COLORS)])


def render_svg(series: list[CurveSeries], metric_label: str, path=None) -> str:
    """Deterministic SVG with one polyline per strategy, a +/- stderr band,
    axis ticks and a legend carrying each series' mean to 4 decimals."""
    if not series:
        raise ValueError("nothing to plot")
    xs = [c for s in series for c in s.cycles]
    lows = [m - e for s in series for m, e in zip(s.means, s.stderrs)]
    highs = [m + e for s in series for m, e in zip(s.means, s.stderrs)]
    y0, y1 = min(lows), max(highs)
    if y0 == y1:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    tr = PlotTransform((min(xs), max(xs)), (y0 - pad, y1 + pad))

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{tr.width:.0f}" '
        f'height="{tr.height:.0f}" viewBox="0 0 {tr.width:.0f} {tr.height:.0f}">',
        f'<rect x="0" y="0" width="{tr.width:.0f}" height="{tr.height:.0f}" fill="white"/>',
        f'<rect x="{_fmt(tr.left)}" y="{_fmt(tr.top)}" width="{_fmt(tr.right - tr.left)}" '
        f'height="{_fmt(tr.bottom - tr.top)}" fill="none" stroke="#333333"/>',
    ]

    # Axis ticks: 5 on y, integer ticks on x thinned to at most 8.
    for v in np.linspace(tr.y0, tr.y1, 5):
        py = tr.y(float(v))
        parts.append(f'<line x1="{_fmt(tr.left - 4)}" y1="{_fmt(py)}" x2="{_fmt(tr.left)}" '
                     f'y2="{_fmt(py)}" stroke="#333333"/>')
        parts.append(f'<text x="{_fmt(tr.left - 8)}" y="{_fmt(py + 4)}" font-size="11" '
                     f'text-anchor="end" font-family="sans-serif">{v:.3f}</text>')
    x_lo, x_hi = int(min(xs)), int(max(xs))
    step = max(1, (x_hi - x_lo) // 8)
    for v in range(x_lo, x_hi + 1, step):
        px = tr.x(v)
        parts.append(f'<line x1="{_fmt(px)}" y1="{_fmt(tr.bottom)}" x2="{_fmt(px)}" '
                     f'y2="{_fmt(tr.bottom + 4)}" stroke="#333333"/>')
        parts.append(f'<text x="{_fmt(px)}" y="{_fmt(tr.bottom + 16)}" font-size="11" '
                     f'text-anchor="middle" font-family="sans-serif">{v}</text>')
    parts.append(f'<text x="{_fmt((tr.left + tr.right) / 2)}" y="{_fmt(tr.bottom + 32)}" '
                 f'font-size="12" text-anchor="middle" font-family="sans-serif">cycle</text>')
    parts.append(f'<text x="14" y="{_fmt((tr.top + tr.bottom) / 2)}" font-size="12" '
                 f'text-anchor="middle" font-family="sans-serif" '
                 f'transform="rotate(-90 14 {_fmt((tr.top + tr.bottom) / 2)})">'
                 f'{escape(metric_label)}</text>')

    for i, s in enumerate(series):
        color = _color(s.strategy, i)
        upper = [(tr.x(c), tr.y(m + e)) for c, m, e in zip(s.cycles, s.means, s.stderrs)]
        lower = [(tr.x(c), tr.y(m - e)) for c, m, e in zip(s.cycles, s.means, s.stderrs)]
        band = " ".join(f"{_fmt(px)},{_fmt(py)}" for px, py in upper + lower[::-1])
        parts.append(f'<polygon points="{band}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
        line = " ".join(f"{_fmt(tr.x(c))},{_fmt(tr.y(m))}" for c, m in zip(s.cycles, s.means))
        parts.append(f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="1.5"/>')

    for i, s in enumerate(series):
        color = _color(s.strategy, i)
        ly = tr.top + 14 + 18 * i
        parts.append(f'<line x1="{_fmt(tr.right + 12)}" y1="{_fmt(ly - 4)}" '
                     f'x2="{_fmt(tr.right + 34)}" y2="{_fmt(ly - 4)}" '
                     f'stroke="{color}" stroke-width="1.5"/>')
        parts.append(f'<text x="{_fmt(tr.right + 40)}" y="{_fmt(ly)}" font-size="12" '
                     f'font-family="sans-serif">{escape(s.strategy)} '
                     f'(mean {s.legend_mean:.4f})</text>')

    parts.append("</svg>")
    doc = "\n".join(parts) + "\n"
    if path is not None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(doc)
    return doc


def summary_csv(accuracy_series: list[CurveSeries],
                acquisition_series: list[CurveSeries]) -> str:
    """Per-strategy summary: legend-mean accuracy, final accuracy, final
    acquisition rate."""
    acq = {s.strategy: s for s in acquisition_series}
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["strategy", "legend_mean_accuracy", "final_accuracy",
                     "final_acquisition_rate"])
    for s in accuracy_series:
        if s.strategy not in acq:
            raise ValueError(f"no acquisition data for strategy {s.strategy!r}")
        writer.writerow([
            s.strategy,
            f"{s.legend_mean:.6f}",
            f"{s.means[-1]:.6f}",
            f"{acq[s.strategy].means[-1]:.6f}",
        ])
    return buf.getvalue()
