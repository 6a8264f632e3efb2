"""Loss curves as a self-contained SVG line chart."""

from __future__ import annotations

import math
from typing import List, Optional, Sequence, Tuple
from xml.sax.saxutils import escape

from .train import LossLog

WIDTH, HEIGHT = 720, 420
MARGIN = dict(left=70, right=150, top=40, bottom=50)
SERIES = (("train", "Training loss", "#1f77b4"), ("val", "Validation loss", "#ff7f0e"),
          ("test", "Test loss", "#2ca02c"))


def _ticks(lo: float, hi: float, n: int = 5) -> List[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / n
    mag = 10 ** math.floor(math.log10(raw))
    step = next(m * mag for m in (1, 2, 5, 10) if m * mag >= raw)
    first = math.ceil(lo / step) * step
    return [first + i * step for i in range(int((hi - first) / step + 1e-9) + 1)]


def _polyline(points: Sequence[Tuple[float, float]], colour: str) -> str:
    pts = " ".join(f"{x:.2f},{y:.2f}" for x, y in points)
    return f'<polyline fill="none" stroke="{colour}" stroke-width="1.8" points="{pts}"/>'


def loss_svg(log: LossLog, title: str = "Loss (MSE + weighted BCE)") -> str:
    """Render train/validation/test curves against epoch; test is drawn only when recorded."""
    curves = []
    for attr, label, colour in SERIES:
        vals: List[Optional[float]] = list(getattr(log, attr))
        pts = [(i + 1, v) for i, v in enumerate(vals) if v is not None and math.isfinite(v)]
        if pts:
            curves.append((label, colour, pts))
    n = max(len(log), 1)
    ys = [v for _, _, pts in curves for _, v in pts] or [0.0, 1.0]
    y_lo, y_hi = min(0.0, min(ys)), max(ys)
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def sx(e):
        return x0 + (x1 - x0) * ((e - 1) / (n - 1) if n > 1 else 0.5)

    def sy(v):
        return y0 - (y0 - y1) * (v - y_lo) / (y_hi - y_lo)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
           f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{(x0 + x1) / 2:.1f}" y="22" text-anchor="middle" font-size="14">{escape(title)}</text>']
    for v in _ticks(y_lo, y_hi):
        y = sy(v)
        out.append(f'<line x1="{x0}" y1="{y:.2f}" x2="{x1}" y2="{y:.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{x0 - 6}" y="{y + 4:.2f}" text-anchor="end">{v:g}</text>')
    for e in _ticks(1, n):
        if e != int(e):
            continue
        x = sx(e)
        out.append(f'<line x1="{x:.2f}" y1="{y0}" x2="{x:.2f}" y2="{y0 + 4}" stroke="black"/>')
        out.append(f'<text x="{x:.2f}" y="{y0 + 18}" text-anchor="middle">{int(e)}</text>')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>')
    out.append(f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>')
    out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 12}" text-anchor="middle">Epoch</text>')
    out.append(f'<text x="18" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 18 {(y0 + y1) / 2:.1f})">Loss</text>')
    for i, (label, colour, pts) in enumerate(curves):
        out.append(_polyline([(sx(e), sy(v)) for e, v in pts], colour))
        ly = y1 + 10 + 20 * i
        out.append(f'<line x1="{x1 + 15}" y1="{ly}" x2="{x1 + 40}" y2="{ly}" stroke="{colour}" stroke-width="2"/>')
        out.append(f'<text x="{x1 + 46}" y="{ly + 4}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
