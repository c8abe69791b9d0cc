"""Static SVG scatter plots of layouts."""

from __future__ import annotations

from typing import Sequence
from xml.sax.saxutils import escape

import numpy as np

from .errors import DimensionError

# tab10 followed by tab20's lighter shades
PALETTE = (
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd",
    "#8c564b", "#e377c2", "#7f7f7f", "#bcbd22", "#17becf",
    "#aec7e8", "#ffbb78", "#98df8a", "#ff9896", "#c5b0d5",
    "#c49c94", "#f7b6d2", "#c7c7c7", "#dbdb8d", "#9edae5",
)
DEFAULT_COLOR = "#1f77b4"


def label_colors(labels: Sequence[str]) -> dict[str, str]:
    """Sorted distinct labels mapped round-robin onto the palette."""
    return {lab: PALETTE[i % len(PALETTE)] for i, lab in enumerate(sorted(set(labels)))}


def _num(v: float) -> str:
    return format(v, ".6g")


def render_svg(
    positions: np.ndarray,
    labels: Sequence[str] | None = None,
    width: int = 800,
    height: int = 800,
    radius: float = 1.0,
    margin: float = 0.02,
    background: str = "white",
) -> str:
    pos = np.asarray(positions, dtype=np.float64)
    if pos.ndim != 2 or pos.shape[1] != 2 or pos.shape[0] == 0:
        raise DimensionError("need a non-empty n x 2 layout")
    if labels is not None and len(labels) != pos.shape[0]:
        raise DimensionError("labels do not match layout rows")
    lo, hi = pos.min(0), pos.max(0)
    span = np.where(hi > lo, hi - lo, 1.0)
    lo = lo - margin * span
    span = span * (1 + 2 * margin)
    px = (pos[:, 0] - lo[0]) / span[0] * width
    py = height - (pos[:, 1] - lo[1]) / span[1] * height

    colors = label_colors(labels) if labels is not None else {}
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
        f'<rect x="0" y="0" width="{width}" height="{height}" fill="{background}"/>',
        f'<g stroke="none" data-xmin="{_num(lo[0])}" data-ymin="{_num(lo[1])}" '
        f'data-xspan="{_num(span[0])}" data-yspan="{_num(span[1])}">',
    ]
    for i in range(pos.shape[0]):
        fill = colors[labels[i]] if labels is not None else DEFAULT_COLOR
        out.append(f'<circle cx="{_num(px[i])}" cy="{_num(py[i])}" r="{_num(radius)}" fill="{fill}"/>')
    out.append("</g>")
    if colors:
        out.append('<g font-family="sans-serif" font-size="10">')
        for row, (lab, col) in enumerate(colors.items()):
            y = 14 + 12 * row
            out.append(f'<rect x="6" y="{y - 8}" width="8" height="8" fill="{col}"/>')
            out.append(f'<text x="18" y="{y}">{escape(lab)}</text>')
        out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"


def save_svg(path, positions, labels=None, **style) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_svg(positions, labels, **style))
