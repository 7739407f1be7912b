"""Minimal SVG line plots: axes, ticks, polylines, legend.  Output is deterministic text."""

from __future__ import annotations

import math

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf")


def _fmt(x: float) -> str:
    return f"{x:.6g}"


def _transform(vals, log: bool):
    return [math.log10(v) if log else v for v in vals]


def line_plot(series, title: str = "", xlabel: str = "", ylabel: str = "", logx: bool = False, logy: bool = False, width: int = 480, height: int = 320) -> str:
    """``series`` is a list of ``(label, xs, ys)``.  Non-finite or (on log axes) nonpositive points are dropped."""
    pts = []
    for label, xs, ys in series:
        keep = [(x, y) for x, y in zip(xs, ys) if math.isfinite(x) and math.isfinite(y) and (x > 0 or not logx) and (y > 0 or not logy)]
        tx = _transform([p[0] for p in keep], logx)
        ty = _transform([p[1] for p in keep], logy)
        pts.append((label, tx, ty))
    allx = [x for _, xs, _ in pts for x in xs] or [0.0, 1.0]
    ally = [y for _, _, ys in pts for y in ys] or [0.0, 1.0]
    x0, x1 = min(allx), max(allx)
    y0, y1 = min(ally), max(ally)
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    ml, mr, mt, mb = 64, 16, 28, 44
    pw, ph = width - ml - mr, height - mt - mb

    def X(x):
        return ml + (x - x0) / (x1 - x0) * pw

    def Y(y):
        return mt + (1 - (y - y0) / (y1 - y0)) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-size="13">{_esc(title)}</text>',
        f'<text x="{ml + pw / 2:.1f}" y="{height - 8}" text-anchor="middle" font-size="11">{_esc(xlabel)}</text>',
        f'<text x="14" y="{mt + ph / 2:.1f}" text-anchor="middle" font-size="11" transform="rotate(-90 14 {mt + ph / 2:.1f})">{_esc(ylabel)}</text>',
    ]
    for i in range(5):
        fx = x0 + (x1 - x0) * i / 4
        fy = y0 + (y1 - y0) * i / 4
        lx = _fmt(10**fx) if logx else _fmt(fx)
        ly = _fmt(10**fy) if logy else _fmt(fy)
        out.append(f'<text x="{X(fx):.1f}" y="{mt + ph + 14}" text-anchor="middle" font-size="9">{lx}</text>')
        out.append(f'<text x="{ml - 4}" y="{Y(fy) + 3:.1f}" text-anchor="end" font-size="9">{ly}</text>')
    for i, (label, xs, ys) in enumerate(pts):
        c = PALETTE[i % len(PALETTE)]
        if xs:
            coords = " ".join(f"{X(x):.2f},{Y(y):.2f}" for x, y in zip(xs, ys))
            out.append(f'<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{coords}"/>')
            out.extend(f'<circle cx="{X(x):.2f}" cy="{Y(y):.2f}" r="2" fill="{c}"/>' for x, y in zip(xs, ys))
        out.append(f'<text x="{ml + 8}" y="{mt + 14 + 12 * i}" font-size="10" fill="{c}">{_esc(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
