"""Minimal SVG scatter for two-dimensional biplot archives.

Points are drawn as text labels; cluster labels scale with the cluster's
share of its class, class labels with the class mass, and category
labels at a fixed size.  Origin axes are always drawn.
"""

from __future__ import annotations

from typing import Sequence

_FILL = {"cluster": "#1f4e9c", "class": "#b02a2a", "category": "#1d7a35"}

WIDTH = 760
HEIGHT = 560
MARGIN = 48


def _font_size(kind: str, share: float | None) -> float:
    if kind == "cluster":
        return 7.0 + 13.0 * (share if share is not None else 0.5)
    if kind == "class":
        return 9.0 + 8.0 * (share if share is not None else 0.5)
    return 11.0


def render_scatter(points: Sequence[dict], title: str = "") -> str:
    """Render points with keys kind, label, x, y and optional share.

    The viewport covers all points plus the origin with an 8% pad; y grows
    upward as in the underlying coordinates.
    """
    xs = [0.0] + [float(p["x"]) for p in points]
    ys = [0.0] + [float(p["y"]) for p in points]
    x_lo, x_hi = min(xs), max(xs)
    y_lo, y_hi = min(ys), max(ys)
    x_pad = 0.08 * max(x_hi - x_lo, 1e-9)
    y_pad = 0.08 * max(y_hi - y_lo, 1e-9)
    x_lo, x_hi = x_lo - x_pad, x_hi + x_pad
    y_lo, y_hi = y_lo - y_pad, y_hi + y_pad

    def sx(x: float) -> float:
        return MARGIN + (x - x_lo) / (x_hi - x_lo) * (WIDTH - 2 * MARGIN)

    def sy(y: float) -> float:
        return HEIGHT - MARGIN - (y - y_lo) / (y_hi - y_lo) * (HEIGHT - 2 * MARGIN)

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<line x1="{sx(x_lo):.2f}" y1="{sy(0):.2f}" x2="{sx(x_hi):.2f}" y2="{sy(0):.2f}" '
        'stroke="#999" stroke-width="1"/>',
        f'<line x1="{sx(0):.2f}" y1="{sy(y_lo):.2f}" x2="{sx(0):.2f}" y2="{sy(y_hi):.2f}" '
        'stroke="#999" stroke-width="1"/>',
    ]
    if title:
        parts.append(
            f'<text x="{WIDTH / 2:.2f}" y="20" text-anchor="middle" '
            f'font-size="14" fill="#222">{_escape(title)}</text>'
        )
    for p in points:
        size = _font_size(p["kind"], p.get("share"))
        parts.append(
            f'<text x="{sx(float(p["x"])):.2f}" y="{sy(float(p["y"])):.2f}" '
            f'text-anchor="middle" font-size="{size:.2f}" '
            f'fill="{_FILL.get(p["kind"], "#333")}">{_escape(str(p["label"]))}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
    )
