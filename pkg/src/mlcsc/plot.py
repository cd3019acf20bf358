"""Minimal standalone SVG line plots."""

from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

__all__ = ["emit_plot_svg", "render_svg"]

_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")
_W, _H, _PAD = 480, 320, 56


def _ticks(lo, hi, n=5):
    return np.linspace(lo, hi, n)


def render_svg(series, title: str = "", xlabel: str = "", ylabel: str = "") -> str:
    """SVG text for ``series``: a list of ``(x, y)`` or ``(label, x, y)`` tuples."""
    curves = []
    for k, s in enumerate(series):
        label, x, y = (f"series {k + 1}", *s) if len(s) == 2 else s
        x = np.asarray(x, dtype=float).ravel()
        y = np.asarray(y, dtype=float).ravel()
        if x.shape != y.shape or x.size == 0:
            raise ValueError(f"curve {label!r} needs equally long, non-empty x and y")
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
            raise ValueError(f"curve {label!r} contains NaN or infinite values")
        curves.append((str(label), x, y))
    if not curves:
        raise ValueError("nothing to plot: series is empty")
    xs = np.concatenate([c[1] for c in curves])
    ys = np.concatenate([c[2] for c in curves])
    x0, x1 = xs.min(), xs.max()
    y0, y1 = ys.min(), ys.max()
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5

    def sx(v):
        return _PAD + (v - x0) / (x1 - x0) * (_W - 2 * _PAD)

    def sy(v):
        return _H - _PAD - (v - y0) / (y1 - y0) * (_H - 2 * _PAD)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{_W}" height="{_H}" '
           f'viewBox="0 0 {_W} {_H}" font-family="sans-serif" font-size="11">',
           f'<rect width="{_W}" height="{_H}" fill="white"/>',
           f'<line x1="{_PAD}" y1="{_H - _PAD}" x2="{_W - _PAD}" y2="{_H - _PAD}" stroke="black"/>',
           f'<line x1="{_PAD}" y1="{_PAD}" x2="{_PAD}" y2="{_H - _PAD}" stroke="black"/>']
    for t in _ticks(x0, x1):
        out.append(f'<text x="{sx(t):.2f}" y="{_H - _PAD + 16}" text-anchor="middle">{t:.3g}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<text x="{_PAD - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">{t:.3g}</text>')
    if title:
        out.append(f'<text x="{_W / 2}" y="{_PAD / 2}" text-anchor="middle" '
                   f'font-size="13">{escape(title)}</text>')
    if xlabel:
        out.append(f'<text x="{_W / 2}" y="{_H - 14}" text-anchor="middle">{escape(xlabel)}</text>')
    if ylabel:
        out.append(f'<text x="14" y="{_H / 2}" text-anchor="middle" '
                   f'transform="rotate(-90 14 {_H / 2})">{escape(ylabel)}</text>')
    for k, (label, x, y) in enumerate(curves):
        color = _COLORS[k % len(_COLORS)]
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="2" points="{pts}"/>')
        ly = _PAD + 14 * k
        out.append(f'<rect x="{_W - _PAD - 90}" y="{ly - 8}" width="10" height="10" fill="{color}"/>')
        out.append(f'<text x="{_W - _PAD - 76}" y="{ly + 1}">{escape(label)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_plot_svg(series, path, **labels) -> None:
    """Write a line plot; invalid input is rejected before anything touches disk."""
    text = render_svg(series, **labels)
    Path(path).write_text(text)
