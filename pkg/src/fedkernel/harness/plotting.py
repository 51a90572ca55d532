"""Standalone SVG line plots (mean curve per algorithm, shaded +-1 SE band)."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Dict, Optional, Sequence
from xml.sax.saxutils import escape

import numpy as np

from ..exceptions import EmptySelectionError
from .results import ResultTable

__all__ = ["PlotSpec", "LOG_FLOOR", "emit_plot", "render_svg"]

log = logging.getLogger("fedkernel.plot")

LOG_FLOOR = 1e-12
WIDTH, HEIGHT = 720, 440
LEFT, RIGHT, TOP, BOTTOM = 80, 190, 40, 60
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


@dataclass(frozen=True)
class PlotSpec:
    metric: str
    title: str = ""
    xlabel: str = "round"
    ylabel: str = ""
    log_x: bool = False
    log_y: bool = False
    hline: Optional[float] = None
    only: tuple = ()
    filename: Optional[str] = None

    @property
    def name(self) -> str:
        return self.filename or f"plot-{self.metric.replace(':', '-')}.svg"


def emit_plot(table: ResultTable, spec: PlotSpec, summary=None) -> str:
    """SVG document for ``spec.metric`` of ``table``; one series per algorithm."""
    series = table.series(spec.metric, summary)
    if spec.only:
        series = {k: v for k, v in series.items() if k in spec.only}
    return render_svg(series, spec)


def _ticks(lo, hi, log_scale):
    if log_scale:
        a, b = math.floor(lo), math.ceil(hi)
        step = max(1, int(math.ceil((b - a) / 8)))
        return [float(k) for k in range(a, b + 1, step)]
    if hi == lo:
        return [lo]
    raw = (hi - lo) / 5
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def _label(v, log_scale):
    if log_scale:
        return f"1e{int(round(v))}"
    return f"{v:.4g}"


def _clamp(values, name, what):
    bad = ~(values > LOG_FLOOR)
    if np.any(bad):
        log.warning("%s: %d value(s) of %s at or below %g clamped to the log-axis floor",
                    name, int(bad.sum()), what, LOG_FLOOR)
    return np.log10(np.maximum(np.nan_to_num(values, nan=LOG_FLOOR), LOG_FLOOR))


def render_svg(series: Dict[str, tuple], spec: PlotSpec) -> str:
    """Render ``{label: (x, mean[, stderr[, n]])}`` as an SVG string."""
    if not series or all(len(np.asarray(v[0])) == 0 for v in series.values()):
        raise EmptySelectionError(f"nothing to plot for {spec.metric!r}")
    prepared = []
    for label, data in series.items():
        x = np.asarray(data[0], dtype=float)
        m = np.asarray(data[1], dtype=float)
        se = np.asarray(data[2], dtype=float) if len(data) > 2 else np.zeros_like(m)
        n = np.asarray(data[3], dtype=float) if len(data) > 3 else np.ones_like(m)
        se = np.where(np.isfinite(se), se, 0.0)
        lo, hi = m - se, m + se
        if spec.log_y:
            m = _clamp(m, label, spec.metric)
            lo = np.log10(np.maximum(lo, LOG_FLOOR))
            hi = np.log10(np.maximum(hi, LOG_FLOOR))
        if spec.log_x:
            x = np.log10(np.maximum(x, LOG_FLOOR))
        band = bool(np.any(n > 1) and np.any(se > 0))
        prepared.append((label, x, m, lo, hi, band))

    xs = np.concatenate([p[1] for p in prepared])
    ys = np.concatenate([np.concatenate([p[2], p[3], p[4]] if p[5] else [p[2]]) for p in prepared])
    ys = ys[np.isfinite(ys)]
    if spec.hline is not None:
        ys = np.append(ys, math.log10(spec.hline) if spec.log_y else spec.hline)
    x0, x1 = float(np.min(xs)), float(np.max(xs))
    y0, y1 = float(np.min(ys)), float(np.max(ys))
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    def px(v):
        return LEFT + (v - x0) / (x1 - x0) * pw

    def py(v):
        return TOP + (1 - (v - y0) / (y1 - y0)) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>']
    if spec.title:
        out.append(f'<text x="{LEFT + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">'
                   f'{escape(spec.title)}</text>')
    # axes
    out.append(f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>')
    out.append(f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>')
    for t in _ticks(x0, x1, spec.log_x):
        if x0 <= t <= x1:
            out.append(f'<line x1="{px(t):.2f}" y1="{TOP + ph}" x2="{px(t):.2f}" y2="{TOP + ph + 5}" '
                       f'stroke="black"/>')
            out.append(f'<text x="{px(t):.2f}" y="{TOP + ph + 18}" text-anchor="middle">'
                       f'{_label(t, spec.log_x)}</text>')
    for t in _ticks(y0, y1, spec.log_y):
        if y0 <= t <= y1:
            out.append(f'<line x1="{LEFT - 5}" y1="{py(t):.2f}" x2="{LEFT}" y2="{py(t):.2f}" stroke="black"/>')
            out.append(f'<text x="{LEFT - 8}" y="{py(t) + 4:.2f}" text-anchor="end">'
                       f'{_label(t, spec.log_y)}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 15}" text-anchor="middle">'
               f'{escape(spec.xlabel)}</text>')
    out.append(f'<text x="18" y="{TOP + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {TOP + ph / 2:.1f})">{escape(spec.ylabel or spec.metric)}</text>')
    if spec.hline is not None:
        h = math.log10(spec.hline) if spec.log_y else spec.hline
        out.append(f'<line x1="{LEFT}" y1="{py(h):.2f}" x2="{LEFT + pw}" y2="{py(h):.2f}" '
                   f'stroke="gray" stroke-dasharray="4 3"/>')

    for k, (label, x, m, lo, hi, band) in enumerate(prepared):
        color = COLORS[k % len(COLORS)]
        ok = np.isfinite(m)
        if band:
            upper = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], hi[ok]))
            lower = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok][::-1], lo[ok][::-1]))
            out.append(f'<polygon points="{upper} {lower}" fill="{color}" fill-opacity="0.2" stroke="none"/>')
        pts = " ".join(f"{px(a):.2f},{py(b):.2f}" for a, b in zip(x[ok], m[ok]))
        out.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = TOP + 10 + 20 * k
        lx = LEFT + pw + 15
        out.append(f'<g class="legend-entry"><line x1="{lx}" y1="{ly}" x2="{lx + 25}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>'
                   f'<text x="{lx + 32}" y="{ly + 4}">{escape(str(label))}</text></g>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_plots(table: ResultTable, specs: Sequence[PlotSpec], out_dir, summary=None) -> list:
    """Write every plot whose metric is present; returns the file names."""
    from pathlib import Path

    summary = table.summary() if summary is None else summary
    present = {r.metric for r in summary}
    names = []
    for spec in specs:
        if spec.metric not in present:
            continue
        svg = emit_plot(table, spec, summary)
        (Path(out_dir) / spec.name).write_text(svg)
        names.append(spec.name)
    return names
