"""Minimal SVG line panels and scatter plots.

Output is plain text with fixed coordinate precision so that reruns are
byte-identical.
"""

from dataclasses import dataclass, field
from html import escape
from math import floor, log10
from typing import Sequence

import numpy as np

PALETTE = (
    "#1b9e77", "#d95f02", "#7570b3", "#e7298a",
    "#66a61e", "#e6ab02", "#a6761d", "#666666",
    "#1f78b4", "#b2df8a",
)
GREY = "#bbbbbb"


@dataclass
class Series:
    x: Sequence[float]
    y: Sequence[float]
    color: str = "#000000"
    width: float = 1.0
    dash: str = None
    opacity: float = 1.0
    label: str = None


@dataclass
class Panel:
    title: str
    series: list = field(default_factory=list)


def _n(v: float) -> str:
    return f"{v:.2f}".rstrip("0").rstrip(".")


def nice_ticks(lo: float, hi: float, count: int = 4) -> list:
    if hi <= lo:
        return [lo]
    raw = (hi - lo) / count
    mag = 10 ** floor(log10(raw))
    step = next(m * mag for m in (1, 2, 2.5, 5, 10) if m * mag >= raw)
    start = np.ceil(lo / step) * step
    ticks = []
    t = start
    while t <= hi + 1e-12 * step:
        ticks.append(round(t, 10))
        t += step
    return ticks


def _tick_label(v: float) -> str:
    if v == 0:
        return "0"
    if abs(v) >= 1000 or float(v).is_integer():
        return str(int(round(v)))
    return f"{v:.3g}"


def _panel_svg(panel: Panel, x0, y0, w, h) -> list:
    pad_l, pad_r, pad_t, pad_b = 44, 8, 20, 24
    xs = np.concatenate([np.asarray(s.x, float) for s in panel.series]) if panel.series else np.array([0, 1.0])
    ys = np.concatenate([np.asarray(s.y, float) for s in panel.series]) if panel.series else np.array([0, 1.0])
    xlo, xhi = float(xs.min()), float(xs.max())
    ylo, yhi = float(ys.min()), float(ys.max())
    if yhi - ylo < 1e-12:
        ylo, yhi = ylo - 0.5, yhi + 0.5
    margin = 0.05 * (yhi - ylo)
    ylo, yhi = ylo - margin, yhi + margin
    if xhi - xlo < 1e-12:
        xlo, xhi = xlo - 0.5, xhi + 0.5
    pw, ph = w - pad_l - pad_r, h - pad_t - pad_b

    def px(v):
        return x0 + pad_l + (v - xlo) / (xhi - xlo) * pw

    def py(v):
        return y0 + pad_t + (yhi - v) / (yhi - ylo) * ph

    out = [
        f'<text x="{_n(x0 + pad_l + pw / 2)}" y="{_n(y0 + 14)}" text-anchor="middle" '
        f'font-size="12" font-weight="bold">{escape(panel.title)}</text>',
        f'<rect x="{_n(x0 + pad_l)}" y="{_n(y0 + pad_t)}" width="{_n(pw)}" height="{_n(ph)}" '
        f'fill="none" stroke="#333333" stroke-width="0.8"/>',
    ]
    for t in nice_ticks(ylo, yhi):
        out.append(f'<line x1="{_n(x0 + pad_l - 3)}" y1="{_n(py(t))}" x2="{_n(x0 + pad_l)}" y2="{_n(py(t))}" stroke="#333333"/>')
        out.append(f'<text x="{_n(x0 + pad_l - 5)}" y="{_n(py(t) + 3)}" text-anchor="end" font-size="9">{_tick_label(t)}</text>')
    for t in nice_ticks(xlo, xhi):
        out.append(f'<line x1="{_n(px(t))}" y1="{_n(y0 + pad_t + ph)}" x2="{_n(px(t))}" y2="{_n(y0 + pad_t + ph + 3)}" stroke="#333333"/>')
        out.append(f'<text x="{_n(px(t))}" y="{_n(y0 + pad_t + ph + 13)}" text-anchor="middle" font-size="9">{_tick_label(t)}</text>')
    for s in panel.series:
        pts = " ".join(f"{_n(px(a))},{_n(py(b))}" for a, b in zip(s.x, s.y))
        dash = f' stroke-dasharray="{s.dash}"' if s.dash else ""
        alpha = f' stroke-opacity="{_n(s.opacity)}"' if s.opacity < 1 else ""
        out.append(f'<polyline points="{pts}" fill="none" stroke="{s.color}" stroke-width="{_n(s.width)}"{dash}{alpha}/>')
    return out


def panels_svg(panels: Sequence[Panel], ncols: int = 4, title: str = None,
               panel_size=(260, 190), legend: Sequence = ()) -> str:
    """Grid of line panels. ``legend`` is a sequence of ``(label, color, dash)``."""
    nrows = max(1, -(-len(panels) // ncols))
    pw, ph = panel_size
    top = 30 if title else 6
    legend_h = 22 if legend else 0
    W, H = ncols * pw, top + nrows * ph + legend_h
    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
            f'font-family="sans-serif">', f'<rect width="{W}" height="{H}" fill="#ffffff"/>']
    if title:
        body.append(f'<text x="{_n(W / 2)}" y="20" text-anchor="middle" font-size="15">{escape(title)}</text>')
    for idx, panel in enumerate(panels):
        r, c = divmod(idx, ncols)
        body.extend(_panel_svg(panel, c * pw, top + r * ph, pw, ph))
    x = 10
    for label, color, dash in legend:
        y = H - 8
        d = f' stroke-dasharray="{dash}"' if dash else ""
        body.append(f'<line x1="{x}" y1="{y - 4}" x2="{x + 22}" y2="{y - 4}" stroke="{color}" stroke-width="2"{d}/>')
        body.append(f'<text x="{x + 26}" y="{y}" font-size="11">{escape(str(label))}</text>')
        x += 36 + 7 * len(str(label))
    body.append("</svg>")
    return "\n".join(body) + "\n"


def scatter_svg(x, y, groups, labels=None, title=None, xlabel="PC1", ylabel="PC2", size=(520, 460)) -> str:
    """Scatter of points coloured by integer group, with optional text labels."""
    W, H = size
    pad_l, pad_r, pad_t, pad_b = 50, 20, 34 if title else 14, 40
    x = np.asarray(x, float)
    y = np.asarray(y, float)
    xlo, xhi = float(x.min()), float(x.max())
    ylo, yhi = float(y.min()), float(y.max())
    dx = max(xhi - xlo, 1e-9) * 0.08
    dy = max(yhi - ylo, 1e-9) * 0.08
    xlo, xhi, ylo, yhi = xlo - dx, xhi + dx, ylo - dy, yhi + dy
    pw, ph = W - pad_l - pad_r, H - pad_t - pad_b

    def px(v):
        return pad_l + (v - xlo) / (xhi - xlo) * pw

    def py(v):
        return pad_t + (yhi - v) / (yhi - ylo) * ph

    body = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
            f'font-family="sans-serif">', f'<rect width="{W}" height="{H}" fill="#ffffff"/>',
            f'<rect x="{pad_l}" y="{pad_t}" width="{_n(pw)}" height="{_n(ph)}" fill="none" stroke="#333333"/>']
    if title:
        body.append(f'<text x="{_n(W / 2)}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>')
    for t in nice_ticks(xlo, xhi, 6):
        body.append(f'<text x="{_n(px(t))}" y="{_n(pad_t + ph + 14)}" text-anchor="middle" font-size="10">{_tick_label(t)}</text>')
    for t in nice_ticks(ylo, yhi, 6):
        body.append(f'<text x="{pad_l - 5}" y="{_n(py(t) + 3)}" text-anchor="end" font-size="10">{_tick_label(t)}</text>')
    body.append(f'<text x="{_n(pad_l + pw / 2)}" y="{H - 8}" text-anchor="middle" font-size="12">{escape(xlabel)}</text>')
    body.append(f'<text x="14" y="{_n(pad_t + ph / 2)}" text-anchor="middle" font-size="12" '
                f'transform="rotate(-90 14 {_n(pad_t + ph / 2)})">{escape(ylabel)}</text>')
    for i, (a, b, g) in enumerate(zip(x, y, groups)):
        color = PALETTE[(int(g) - 1) % len(PALETTE)]
        body.append(f'<circle cx="{_n(px(a))}" cy="{_n(py(b))}" r="4" fill="{color}"/>')
        if labels is not None:
            body.append(f'<text x="{_n(px(a) + 6)}" y="{_n(py(b) - 4)}" font-size="9">{escape(str(labels[i]))}</text>')
    body.append("</svg>")
    return "\n".join(body) + "\n"
