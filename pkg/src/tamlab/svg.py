"""A tiny dependency-free SVG emitter for line plots, staircases and heatmaps.

Output is a pure function of the inputs (numbers are printed with fixed
precision), so figures regenerate byte-identically from the CSV records.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from xml.sax.saxutils import escape

PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#17becf"]


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _tick_values(lo: float, hi: float, count: int = 5) -> list[float]:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((m * mag for m in (1, 2, 5, 10) if m * mag >= raw), default=raw)
    start = math.ceil(lo / step) * step
    out = []
    v = start
    while v <= hi + 1e-12 * abs(hi):
        out.append(round(v, 12))
        v += step
    return out


@dataclass
class Series:
    x: list
    y: list
    label: str = ""
    style: str = "line"  # line | points | step
    color: str | None = None
    dashed: bool = False


@dataclass
class Axes:
    title: str = ""
    xlabel: str = ""
    ylabel: str = ""
    log_y: bool = False
    xlim: tuple | None = None
    ylim: tuple | None = None
    series: list = field(default_factory=list)
    vlines: list = field(default_factory=list)  # (x, label)


class _Frame:
    def __init__(self, ax: Axes, width: int, height: int):
        self.ax = ax
        self.w, self.h = width, height
        self.left, self.right, self.top, self.bottom = 70, 20, 35, 50
        xs = [v for s in ax.series for v in s.x if _finite(v)] + [v for v, _ in ax.vlines]
        ys = [self._ty(v) for s in ax.series for v in s.y if _finite(self._ty(v))]
        self.x0, self.x1 = ax.xlim or (min(xs, default=0.0), max(xs, default=1.0))
        if ax.ylim:
            self.y0, self.y1 = self._ty(ax.ylim[0]), self._ty(ax.ylim[1])
        else:
            self.y0, self.y1 = min(ys, default=0.0), max(ys, default=1.0)
        if self.x1 == self.x0:
            self.x1 = self.x0 + 1.0
        if self.y1 == self.y0:
            self.y1 = self.y0 + 1.0

    def _ty(self, v):
        if not self.ax.log_y:
            return v
        return math.log10(v) if _finite(v) and v > 0 else float("nan")

    def px(self, x):
        return self.left + (x - self.x0) / (self.x1 - self.x0) * (self.w - self.left - self.right)

    def py(self, y):
        return self.h - self.bottom - (y - self.y0) / (self.y1 - self.y0) * (self.h - self.top - self.bottom)


def _finite(v) -> bool:
    try:
        return math.isfinite(float(v))
    except (TypeError, ValueError):
        return False


def _axes_svg(ax: Axes, width: int, height: int, ox: float = 0.0, oy: float = 0.0) -> list[str]:
    fr = _Frame(ax, width, height)
    out = [f'<g transform="translate({_fmt(ox)},{_fmt(oy)})">']
    x_lo, x_hi = fr.left, width - fr.right
    y_lo, y_hi = height - fr.bottom, fr.top
    out.append(f'<rect x="{x_lo}" y="{y_hi}" width="{x_hi - x_lo}" height="{y_lo - y_hi}" '
               'fill="none" stroke="#333"/>')
    for t in _tick_values(fr.x0, fr.x1):
        p = fr.px(t)
        out.append(f'<line x1="{_fmt(p)}" y1="{y_lo}" x2="{_fmt(p)}" y2="{y_lo + 4}" stroke="#333"/>')
        out.append(f'<text x="{_fmt(p)}" y="{y_lo + 16}" font-size="10" text-anchor="middle">{t:g}</text>')
    for t in _tick_values(fr.y0, fr.y1):
        p = fr.py(t)
        lab = f"1e{t:g}" if ax.log_y else f"{t:g}"
        out.append(f'<line x1="{x_lo - 4}" y1="{_fmt(p)}" x2="{x_lo}" y2="{_fmt(p)}" stroke="#333"/>')
        out.append(f'<text x="{x_lo - 6}" y="{_fmt(p + 3)}" font-size="10" text-anchor="end">{lab}</text>')
    out.append(f'<text x="{_fmt((x_lo + x_hi) / 2)}" y="{height - 12}" font-size="12" '
               f'text-anchor="middle">{escape(ax.xlabel)}</text>')
    out.append(f'<text x="14" y="{_fmt((y_lo + y_hi) / 2)}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {_fmt((y_lo + y_hi) / 2)})">{escape(ax.ylabel)}</text>')
    out.append(f'<text x="{_fmt((x_lo + x_hi) / 2)}" y="20" font-size="13" '
               f'text-anchor="middle">{escape(ax.title)}</text>')
    for xv, lab in ax.vlines:
        p = fr.px(xv)
        out.append(f'<line x1="{_fmt(p)}" y1="{y_lo}" x2="{_fmt(p)}" y2="{y_hi}" stroke="#555" '
                   'stroke-dasharray="4,3"/>')
        if lab:
            out.append(f'<text x="{_fmt(p + 3)}" y="{y_hi + 12}" font-size="10">{escape(lab)}</text>')
    for k, s in enumerate(ax.series):
        color = s.color or PALETTE[k % len(PALETTE)]
        pts = [(fr.px(x), fr.py(fr._ty(y))) for x, y in zip(s.x, s.y)
               if _finite(x) and _finite(fr._ty(y))]
        pts = [(min(max(a, x_lo), x_hi), min(max(b, y_hi), y_lo)) for a, b in pts]
        if s.style == "points":
            for a, b in pts:
                out.append(f'<circle cx="{_fmt(a)}" cy="{_fmt(b)}" r="3" fill="none" stroke="{color}"/>')
        elif pts:
            if s.style == "step":
                path = [pts[0]]
                for a, b in pts[1:]:
                    path.append((a, path[-1][1]))
                    path.append((a, b))
                pts = path
            d = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in pts)
            dash = ' stroke-dasharray="6,4"' if s.dashed else ""
            out.append(f'<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>')
        if s.label:
            ly = y_hi + 14 + 14 * k
            out.append(f'<line x1="{x_hi - 120}" y1="{ly - 4}" x2="{x_hi - 100}" y2="{ly - 4}" '
                       f'stroke="{color}" stroke-width="2"/>')
            out.append(f'<text x="{x_hi - 96}" y="{ly}" font-size="10">{escape(s.label)}</text>')
    out.append("</g>")
    return out


def figure(axes: list[Axes], cols: int = 1, panel=(420, 300)) -> str:
    rows = math.ceil(len(axes) / cols)
    w, h = panel
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w * cols}" height="{h * rows}" '
            f'font-family="sans-serif">', f'<rect width="{w * cols}" height="{h * rows}" fill="white"/>']
    for k, ax in enumerate(axes):
        body.extend(_axes_svg(ax, w, h, (k % cols) * w, (k // cols) * h))
    body.append("</svg>")
    return "\n".join(body) + "\n"


def _color_ramp(t: float) -> str:
    """Map t in [0, 1] to a blue-to-yellow ramp."""
    t = min(max(t, 0.0), 1.0)
    r = int(round(40 + 215 * t))
    g = int(round(30 + 200 * t))
    b = int(round(120 * (1 - t) + 40))
    return f"#{r:02x}{g:02x}{b:02x}"


def heatmap(values, xs, ys, title: str = "", xlabel: str = "", ylabel: str = "",
            vmax: float | None = None, log: bool = False, curves=(), points=(),
            panel=(460, 340)) -> str:
    """Heatmap with rows indexed by ``ys`` and columns by ``xs``.

    ``curves`` are ``(x_list, y_list, label)`` overlays and ``points`` are
    ``(x, y)`` pairs drawn as open circles.  Values above ``vmax`` are clipped.
    """
    w, h = panel
    left, right, top, bottom = 70, 70, 35, 50
    nx, ny = len(xs), len(ys)
    flat = [v for row in values for v in row if _finite(v)]
    tr = (lambda v: math.log10(max(v, 1e-300))) if log else (lambda v: v)
    hi = tr(vmax) if vmax is not None else max((tr(v) for v in flat), default=1.0)
    lo = min((tr(v) for v in flat), default=0.0)
    lo = min(lo, hi)
    span = hi - lo if hi > lo else 1.0

    def edges(c):
        if len(c) == 1:
            return [c[0] - 0.5, c[0] + 0.5]
        mids = [(a + b) / 2 for a, b in zip(c[:-1], c[1:])]
        return [c[0] - (mids[0] - c[0])] + mids + [c[-1] + (c[-1] - mids[-1])]

    ex, ey = edges(list(xs)), edges(list(ys))
    x0, x1, y0, y1 = ex[0], ex[-1], ey[0], ey[-1]

    def px(x):
        return left + (x - x0) / (x1 - x0) * (w - left - right)

    def py(y):
        return h - bottom - (y - y0) / (y1 - y0) * (h - top - bottom)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif">',
           f'<rect width="{w}" height="{h}" fill="white"/>']
    for i in range(ny):
        for j in range(nx):
            v = values[i][j]
            color = "#cccccc" if not _finite(v) else _color_ramp((min(tr(v), hi) - lo) / span)
            out.append(f'<rect x="{_fmt(px(ex[j]))}" y="{_fmt(py(ey[i + 1]))}" '
                       f'width="{_fmt(px(ex[j + 1]) - px(ex[j]))}" height="{_fmt(py(ey[i]) - py(ey[i + 1]))}" '
                       f'fill="{color}"/>')
    for cx, cy, lab in curves:
        pts = " ".join(f"{_fmt(px(a))},{_fmt(py(b))}" for a, b in zip(cx, cy)
                       if x0 <= a <= x1 and y0 <= b <= y1)
        out.append(f'<polyline points="{pts}" fill="none" stroke="white" stroke-width="2"/>')
    for a, b in points:
        out.append(f'<circle cx="{_fmt(px(a))}" cy="{_fmt(py(b))}" r="4" fill="none" stroke="red" '
                   'stroke-width="1.5"/>')
    for t in _tick_values(x0, x1):
        out.append(f'<text x="{_fmt(px(t))}" y="{h - bottom + 16}" font-size="10" '
                   f'text-anchor="middle">{t:g}</text>')
    for t in _tick_values(y0, y1):
        out.append(f'<text x="{left - 6}" y="{_fmt(py(t) + 3)}" font-size="10" text-anchor="end">{t:g}</text>')
    out.append(f'<text x="{_fmt((left + w - right) / 2)}" y="{h - 12}" font-size="12" '
               f'text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="14" y="{_fmt(h / 2)}" font-size="12" text-anchor="middle" '
               f'transform="rotate(-90 14 {_fmt(h / 2)})">{escape(ylabel)}</text>')
    out.append(f'<text x="{_fmt(w / 2)}" y="20" font-size="13" text-anchor="middle">{escape(title)}</text>')
    # color bar
    bx = w - right + 15
    for k in range(50):
        t0 = k / 50
        yy = py(y0) - (k + 1) * (py(y0) - py(y1)) / 50
        out.append(f'<rect x="{bx}" y="{_fmt(yy)}" width="12" height="{_fmt((py(y0) - py(y1)) / 50 + 0.5)}" '
                   f'fill="{_color_ramp(t0)}"/>')
    lab_lo = f"{(10 ** lo if log else lo):.3g}"
    lab_hi = f"{(10 ** hi if log else hi):.3g}"
    out.append(f'<text x="{bx + 16}" y="{_fmt(py(y0))}" font-size="9">{lab_lo}</text>')
    out.append(f'<text x="{bx + 16}" y="{_fmt(py(y1) + 8)}" font-size="9">{lab_hi}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
