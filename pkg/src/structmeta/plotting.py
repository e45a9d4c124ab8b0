"""Dependency-free SVG scatter plot for 2-D task embeddings."""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

# Colour-blind friendly qualitative palette; cycles past 8 labels.
PALETTE = ("#0072b2", "#e69f00", "#009e73", "#cc79a7", "#56b4e9", "#d55e00", "#f0e442", "#000000")

WIDTH, HEIGHT, MARGIN, LEGEND_W = 480, 400, 30, 130


def _scale(v: np.ndarray, lo: float, hi: float) -> np.ndarray:
    span = v.max() - v.min()
    if span == 0:
        return np.full(v.shape, (lo + hi) / 2)
    return lo + (v - v.min()) / span * (hi - lo)


def scatter_svg(coords, labels, names=None, radius: float = 4.0) -> str:
    """One circle per row of ``coords`` (first two columns), coloured by label.

    Legend entries follow the order in which labels first appear, so the
    output depends only on the inputs.
    """
    coords = np.asarray(coords, dtype=np.float64)
    if coords.ndim != 2 or coords.shape[1] < 2:
        raise ValueError("coords must have shape (n, >=2)")
    if len(labels) != coords.shape[0]:
        raise ValueError(f"{len(labels)} labels for {coords.shape[0]} points")
    names = names if names is not None else [str(i) for i in range(coords.shape[0])]
    order = list(dict.fromkeys(str(l) for l in labels))
    colour = {l: PALETTE[k % len(PALETTE)] for k, l in enumerate(order)}
    xs = _scale(coords[:, 0], MARGIN, WIDTH - MARGIN)
    # SVG y grows downward; flip so larger coordinates sit higher.
    ys = _scale(-coords[:, 1], MARGIN, HEIGHT - MARGIN)
    total_w = WIDTH + LEGEND_W
    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{HEIGHT}" '
        f'viewBox="0 0 {total_w} {HEIGHT}">',
        f'<rect x="0" y="0" width="{total_w}" height="{HEIGHT}" fill="white"/>',
        f'<rect x="{MARGIN / 2:g}" y="{MARGIN / 2:g}" width="{WIDTH - MARGIN:g}" height="{HEIGHT - MARGIN:g}" '
        'fill="none" stroke="#bbbbbb"/>',
        '<g class="points">',
    ]
    for x, y, label, name in zip(xs, ys, labels, names):
        out.append(
            f'<circle cx="{x:.2f}" cy="{y:.2f}" r="{radius:g}" fill="{colour[str(label)]}">'
            f"<title>{escape(str(name))}</title></circle>"
        )
    out.append("</g>")
    out.append('<g class="legend" font-family="sans-serif" font-size="12">')
    for k, label in enumerate(order):
        y = MARGIN + 18 * k
        out.append(f'<rect x="{WIDTH + 5}" y="{y}" width="10" height="10" fill="{colour[label]}"/>')
        out.append(f'<text x="{WIDTH + 20}" y="{y + 9}">{escape(label)}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
