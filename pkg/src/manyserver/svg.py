"""Tiny SVG line-chart writer (axes, polylines, labels, legend)."""
from __future__ import annotations

import math
from html import escape

COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo, hi, k=5):
    if hi <= lo:
        return [lo]
    step = 10 ** math.floor(math.log10((hi - lo) / k))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (m * step) <= k:
            step *= m
            break
    start = math.ceil(lo / step - 1e-9) * step
    out, v = [], start
    while v <= hi + 1e-9 * step:
        out.append(round(v, 12))
        v += step
    return out


def line_chart(series: dict, title: str = "", xlabel: str = "", ylabel: str = "",
               logx: bool = False, width: int = 640, height: int = 400) -> str:
    """``series`` maps a label to ``(xs, ys)``. Returns the SVG document as text."""
    left, right, top, bottom = 70, 150, 40, 55
    pw, ph = width - left - right, height - top - bottom
    fx = (lambda v: math.log10(v)) if logx else float
    pts = [(fx(x), float(y)) for xs, ys in series.values() for x, y in zip(xs, ys) if math.isfinite(float(y))]
    if not pts:
        pts = [(0.0, 0.0), (1.0, 1.0)]
    x0, x1 = min(p[0] for p in pts), max(p[0] for p in pts)
    y0, y1 = min(0.0, min(p[1] for p in pts)), max(p[1] for p in pts)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y1 = y0 + 1.0
    y1 += 0.05 * (y1 - y0)

    def sx(v):
        return left + (v - x0) / (x1 - x0) * pw

    def sy(v):
        return top + (y1 - v) / (y1 - y0) * ph

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
           f'<rect width="{width}" height="{height}" fill="white"/>',
           f'<text x="{left + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>',
           f'<line x1="{left}" y1="{top + ph}" x2="{left + pw}" y2="{top + ph}" stroke="black"/>',
           f'<line x1="{left}" y1="{top}" x2="{left}" y2="{top + ph}" stroke="black"/>']
    if logx:
        xt = [math.log10(v) for xs, _ in series.values() for v in xs]
        xt = sorted(set(xt))
        xlab = [f"{10 ** v:g}" for v in xt]
    else:
        xt = _ticks(x0, x1)
        xlab = [f"{v:g}" for v in xt]
    for v, lab in zip(xt, xlab):
        out.append(f'<line x1="{sx(v):.1f}" y1="{top + ph}" x2="{sx(v):.1f}" y2="{top + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{sx(v):.1f}" y="{top + ph + 18}" text-anchor="middle">{lab}</text>')
    for v in _ticks(y0, y1):
        out.append(f'<line x1="{left - 5}" y1="{sy(v):.1f}" x2="{left}" y2="{sy(v):.1f}" stroke="black"/>')
        out.append(f'<text x="{left - 8}" y="{sy(v) + 4:.1f}" text-anchor="end">{v:g}</text>')
    out.append(f'<text x="{left + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {top + ph / 2:.1f})">{escape(ylabel)}</text>')
    for i, (label, (xs, ys)) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        coords = [(sx(fx(x)), sy(float(y))) for x, y in zip(xs, ys) if math.isfinite(float(y))]
        poly = " ".join(f"{a:.1f},{b:.1f}" for a, b in coords)
        out.append(f'<polyline points="{poly}" fill="none" stroke="{color}" stroke-width="2"/>')
        for a, b in coords:
            out.append(f'<circle cx="{a:.1f}" cy="{b:.1f}" r="3" fill="{color}"/>')
        ly = top + 14 + 18 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly}" x2="{left + pw + 32}" y2="{ly}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 38}" y="{ly + 4}">{escape(str(label))}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write_chart(path, series: dict, **kw) -> None:
    with open(path, "w") as fh:
        fh.write(line_chart(series, **kw))
