"""Minimal deterministic SVG rendering of feature shapes and pair heatmaps."""

from __future__ import annotations

from typing import Mapping
from xml.sax.saxutils import escape

import numpy as np

from .shapes import FeatureShape, Mode, PairShape

WIDTH, HEIGHT = 480, 320
MARGIN = dict(left=60, right=20, top=30, bottom=45)
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2",
           "#7f7f7f")


def _fmt(v: float) -> str:
    return f"{v:.2f}"


def _ticks(lo: float, hi: float, n: int = 5) -> np.ndarray:
    if hi <= lo:
        return np.array([lo])
    return np.linspace(lo, hi, n)


def _curve_points(s: FeatureShape, n_dense: int = 200) -> tuple[np.ndarray, np.ndarray]:
    if s.mode is Mode.PIECEWISE_CONSTANT:
        if len(s.xs) == 1:
            return np.array([s.xs[0], s.xs[0]]), np.array([s.ys[0], s.ys[0]])
        # step outline: each value runs from its breakpoint to the next
        xs = np.repeat(s.xs, 2)[1:]
        ys = np.repeat(s.ys, 2)[:-1]
        return xs, ys
    grid = np.linspace(s.xs[0], s.xs[-1], n_dense)
    return grid, s(grid)


def plot_feature(feature: str, curves: Mapping[str, FeatureShape], title: str | None = None) -> str:
    """One feature's shapes, overlaid; x is the feature value, y its contribution."""
    pts = {label: _curve_points(s) for label, s in curves.items()}
    if pts:
        xmin = min(float(x.min()) for x, _ in pts.values())
        xmax = max(float(x.max()) for x, _ in pts.values())
        ymin = min(float(y.min()) for _, y in pts.values())
        ymax = max(float(y.max()) for _, y in pts.values())
    else:
        xmin, xmax, ymin, ymax = 0.0, 1.0, 0.0, 1.0
    if xmax == xmin:
        xmin, xmax = xmin - 0.5, xmax + 0.5
    if ymax == ymin:
        ymin, ymax = ymin - 0.5, ymax + 0.5
    pad = 0.05 * (ymax - ymin)
    ymin, ymax = ymin - pad, ymax + pad

    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"]
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]

    def sx(v):
        return x0 + (v - xmin) / (xmax - xmin) * (x1 - x0)

    def sy(v):
        return y0 + (v - ymin) / (ymax - ymin) * (y1 - y0)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="13">'
           f'{escape(title or feature)}</text>',
           f'<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>',
           f'<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>']
    for t in _ticks(xmin, xmax):
        out.append(f'<text x="{sx(t):.2f}" y="{y0 + 15}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(ymin, ymax):
        out.append(f'<text x="{x0 - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    if ymin < 0 < ymax:
        out.append(f'<line x1="{x0}" y1="{sy(0):.2f}" x2="{x1}" y2="{sy(0):.2f}" '
                   f'stroke="#bbbbbb" stroke-dasharray="3,3"/>')
    out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle">'
               f'{escape(feature)}</text>')
    out.append(f'<text x="14" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {(y0 + y1) / 2:.1f})">contribution</text>')
    for k, (label, (xs, ys)) in enumerate(pts.items()):
        color = PALETTE[k % len(PALETTE)]
        path = " ".join(f"{_fmt(sx(a))},{_fmt(sy(b))}" for a, b in zip(xs, ys))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" '
                   f'points="{path}"><title>{escape(label)}</title></polyline>')
        ly = MARGIN["top"] + 12 + 14 * k
        out.append(f'<line x1="{x1 - 110}" y1="{ly - 4}" x2="{x1 - 90}" y2="{ly - 4}" '
                   f'stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{x1 - 86}" y="{ly}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def _color(v: float, vmax: float) -> str:
    # diverging blue-white-red
    t = 0.0 if vmax == 0 else max(-1.0, min(1.0, v / vmax))
    if t >= 0:
        r, g, b = 255, int(255 * (1 - t)), int(255 * (1 - t))
    else:
        r, g, b = int(255 * (1 + t)), int(255 * (1 + t)), 255
    return f"#{r:02x}{g:02x}{b:02x}"


def plot_pair(p: PairShape) -> str:
    """Heatmap of a pairwise component over its grid."""
    fx, fy = p.features
    nx, ny = p.values.shape
    x0, x1 = MARGIN["left"], WIDTH - MARGIN["right"] - 40
    y0, y1 = HEIGHT - MARGIN["bottom"], MARGIN["top"]
    cw = (x1 - x0) / nx
    ch = (y0 - y1) / ny
    vmax = float(np.max(np.abs(p.values))) if p.values.size else 0.0
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
           f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
           f'<text x="{WIDTH / 2:.1f}" y="18" text-anchor="middle" font-size="13">'
           f'{escape(fx)} x {escape(fy)}</text>']
    for i in range(nx):
        for j in range(ny):
            out.append(f'<rect x="{x0 + i * cw:.2f}" y="{y0 - (j + 1) * ch:.2f}" '
                       f'width="{cw:.2f}" height="{ch:.2f}" '
                       f'fill="{_color(float(p.values[i, j]), vmax)}"/>')
    for i in (0, nx - 1):
        out.append(f'<text x="{x0 + (i + 0.5) * cw:.2f}" y="{y0 + 15}" text-anchor="middle">'
                   f'{p.grid_x[i]:.3g}</text>')
    for j in (0, ny - 1):
        out.append(f'<text x="{x0 - 6}" y="{y0 - (j + 0.5) * ch + 4:.2f}" text-anchor="end">'
                   f'{p.grid_y[j]:.3g}</text>')
    out.append(f'<text x="{(x0 + x1) / 2:.1f}" y="{HEIGHT - 8}" text-anchor="middle">'
               f'{escape(fx)}</text>')
    out.append(f'<text x="14" y="{(y0 + y1) / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 14 {(y0 + y1) / 2:.1f})">{escape(fy)}</text>')
    out.append(f'<text x="{x1 + 8}" y="{y1 + 10}">+{vmax:.3g}</text>')
    out.append(f'<text x="{x1 + 8}" y="{y0}">-{vmax:.3g}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
