"""Minimal self-contained SVG log-log plots."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

__all__ = ["Series", "Guide", "loglog_svg"]

_COLORS = ("#1f5fa8", "#c0392b", "#2e8b57", "#8e44ad", "#d35400")


@dataclass
class Series:
    label: str
    points: list
    marker: str = "circle"


@dataclass
class Guide:
    """Dashed line ``c * n^-rate`` anchored at ``(n0, y0)``."""

    rate: float
    n0: float
    y0: float
    label: str = field(default="")

    def __post_init__(self):
        if not self.label:
            self.label = f"n^-{self.rate:g}"

    def at(self, n: float) -> float:
        return self.y0 * (n / self.n0) ** (-self.rate)


def _decades(lo: float, hi: float) -> tuple:
    a = math.floor(math.log10(lo))
    b = math.ceil(math.log10(hi))
    if b == a:
        b += 1
    return a, b


def loglog_svg(series, guides=(), title: str = "", xlabel: str = "degrees of freedom",
               ylabel: str = "residual", width: int = 640, height: int = 480) -> str:
    """Render series and guide lines on log-log axes; returns SVG text."""
    pts = [(n, y) for s in series for n, y in s.points if n > 0 and y > 0]
    if not pts:
        raise ValueError("nothing to plot")
    xa, xb = _decades(min(p[0] for p in pts), max(p[0] for p in pts))
    ya, yb = _decades(min(p[1] for p in pts), max(p[1] for p in pts))
    ml, mr, mt, mb = 70, 150, 40, 55
    pw, ph = width - ml - mr, height - mt - mb

    def X(n):
        return ml + pw * (math.log10(n) - xa) / (xb - xa)

    def Y(y):
        return mt + ph * (1 - (math.log10(y) - ya) / (yb - ya))

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="white"/>',
    ]
    if title:
        out.append(f'<text x="{ml + pw / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>')
    out.append(f'<defs><clipPath id="plot"><rect x="{ml}" y="{mt}" width="{pw}" height="{ph}"/></clipPath></defs>')
    # grid and ticks
    for d in range(xa, xb + 1):
        x = X(10.0**d)
        out.append(f'<line x1="{x:.1f}" y1="{mt}" x2="{x:.1f}" y2="{mt + ph}" stroke="#ddd"/>')
        out.append(f'<text x="{x:.1f}" y="{mt + ph + 18}" text-anchor="middle">1e{d}</text>')
        if d < xb:
            for k in range(2, 10):
                xm = X(k * 10.0**d)
                out.append(f'<line x1="{xm:.1f}" y1="{mt + ph}" x2="{xm:.1f}" y2="{mt + ph - 4}" stroke="#333"/>')
    for d in range(ya, yb + 1):
        y = Y(10.0**d)
        out.append(f'<line x1="{ml}" y1="{y:.1f}" x2="{ml + pw}" y2="{y:.1f}" stroke="#ddd"/>')
        out.append(f'<text x="{ml - 6}" y="{y + 4:.1f}" text-anchor="end">1e{d}</text>')
        if d < yb:
            for k in range(2, 10):
                ym = Y(k * 10.0**d)
                out.append(f'<line x1="{ml}" y1="{ym:.1f}" x2="{ml + 4}" y2="{ym:.1f}" stroke="#333"/>')
    out.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>')
    out.append(f'<text x="{ml + pw / 2:.1f}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{mt + ph / 2:.1f}" text-anchor="middle" '
        f'transform="rotate(-90 16 {mt + ph / 2:.1f})">{escape(ylabel)}</text>'
    )
    legend = []
    n_lo, n_hi = 10.0**xa, 10.0**xb
    for i, gd in enumerate(guides):
        color = _COLORS[(i + len(series)) % len(_COLORS)]
        out.append(
            f'<line x1="{X(n_lo):.1f}" y1="{Y(gd.at(n_lo)):.1f}" x2="{X(n_hi):.1f}" y2="{Y(gd.at(n_hi)):.1f}" '
            f'stroke="{color}" stroke-dasharray="6,4" clip-path="url(#plot)"/>'
        )
        legend.append((gd.label, color, True))
    for i, s in enumerate(series):
        color = _COLORS[i % len(_COLORS)]
        ok = [(n, y) for n, y in s.points if n > 0 and y > 0]
        path = " ".join(f"{X(n):.1f},{Y(y):.1f}" for n, y in ok)
        out.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        for n, y in ok:
            if s.marker == "square":
                out.append(f'<rect x="{X(n) - 3:.1f}" y="{Y(y) - 3:.1f}" width="6" height="6" fill="{color}"/>')
            else:
                out.append(f'<circle cx="{X(n):.1f}" cy="{Y(y):.1f}" r="3" fill="{color}"/>')
        legend.append((s.label, color, False))
    lx = ml + pw + 12
    for i, (label, color, dashed) in enumerate(legend):
        y = mt + 14 + 18 * i
        dash = ' stroke-dasharray="6,4"' if dashed else ' stroke-width="1.5"'
        out.append(f'<line x1="{lx}" y1="{y - 4}" x2="{lx + 22}" y2="{y - 4}" stroke="{color}"{dash}/>')
        out.append(f'<text x="{lx + 28}" y="{y}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
