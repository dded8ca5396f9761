"""Bird's-eye-view SVG rendering of detections.

The view spans x in [-40, 40] m and z in [0, 80] m at ``SCALE`` pixels per
metre; image y grows as z shrinks, so the ego vehicle sits at the bottom.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

from .geometry import bev_polygon

SCALE = 10.0
X_MIN, X_MAX = -40.0, 40.0
Z_MIN, Z_MAX = 0.0, 80.0
GRID_STEP = 10.0
WIDTH = (X_MAX - X_MIN) * SCALE
HEIGHT = (Z_MAX - Z_MIN) * SCALE

CLASS_COLOURS = {"Car": "#d62728", "Pedestrian": "#1f77b4", "Cyclist": "#2ca02c"}


def to_pixels(x, z):
    return (x - X_MIN) * SCALE, (Z_MAX - z) * SCALE


def polygon_pixels(box):
    return [to_pixels(x, z) for x, z in bev_polygon(box)]


def _points(pts):
    return " ".join(f"{u:.2f},{v:.2f}" for u, v in pts)


def render_bev_svg(detections, ground_truth=(), title=None):
    """SVG text for ``(box3d, class_name, uncertainty)`` detections.

    ``ground_truth`` holds ``(box3d, class_name)`` pairs drawn dashed.
    """
    out = [
        '<?xml version="1.0" encoding="UTF-8" standalone="no"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH:.0f}" '
        f'height="{HEIGHT:.0f}" viewBox="0 0 {WIDTH:.0f} {HEIGHT:.0f}">',
        f'<rect x="0" y="0" width="{WIDTH:.0f}" height="{HEIGHT:.0f}" fill="#ffffff"/>',
        '<g id="grid" stroke="#dddddd" stroke-width="1">',
    ]
    x = X_MIN
    while x <= X_MAX:
        u, _ = to_pixels(x, 0.0)
        out.append(f'<line x1="{u:.2f}" y1="0.00" x2="{u:.2f}" y2="{HEIGHT:.2f}"/>')
        x += GRID_STEP
    z = Z_MIN
    while z <= Z_MAX:
        _, v = to_pixels(0.0, z)
        out.append(f'<line x1="0.00" y1="{v:.2f}" x2="{WIDTH:.2f}" y2="{v:.2f}"/>')
        z += GRID_STEP
    out.append("</g>")
    if title:
        out.append(f'<text x="8" y="20" font-size="16" font-family="sans-serif">{escape(title)}</text>')

    if ground_truth:
        out.append('<g id="ground-truth" fill="none" stroke="#555555" stroke-width="1.5" stroke-dasharray="6,4">')
        for box, name in ground_truth:
            out.append(f'<polygon class="gt" data-class="{escape(name)}" points="{_points(polygon_pixels(box))}"/>')
        out.append("</g>")

    out.append('<g id="detections" fill="none" stroke-width="2">')
    for box, name, unc in detections:
        pts = polygon_pixels(box)
        colour = CLASS_COLOURS.get(name, "#9467bd")
        out.append(f'<polygon class="det" data-class="{escape(name)}" stroke="{colour}" points="{_points(pts)}"/>')
        if unc is not None:
            u = max(p[0] for p in pts) + 3.0
            v = min(p[1] for p in pts)
            out.append(f'<text class="unc" x="{u:.2f}" y="{v:.2f}" font-size="11" '
                       f'font-family="sans-serif" fill="{colour}">{unc:.4f}</text>')
    out.append("</g>")
    out.append("</svg>")
    return "\n".join(out) + "\n"
