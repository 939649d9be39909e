"""Minimal deterministic SVG output for heatmaps and placement overlays.

Hand-rolled on purpose: the emitted files must be byte-identical across
reruns and self-contained (no fonts, stylesheets, or external references).
"""

from __future__ import annotations

import numpy as np

_VIRIDIS_STOPS = (
    (0.267, 0.005, 0.329),
    (0.283, 0.141, 0.458),
    (0.254, 0.265, 0.530),
    (0.207, 0.372, 0.553),
    (0.164, 0.471, 0.558),
    (0.128, 0.567, 0.551),
    (0.135, 0.659, 0.518),
    (0.267, 0.749, 0.441),
    (0.478, 0.821, 0.318),
    (0.741, 0.873, 0.150),
    (0.993, 0.906, 0.144),
)


def color_for(value):
    """Map a value in [0, 1] to a hex color along a viridis-like ramp."""
    v = min(max(float(value), 0.0), 1.0)
    pos = v * (len(_VIRIDIS_STOPS) - 1)
    i = min(int(pos), len(_VIRIDIS_STOPS) - 2)
    t = pos - i
    rgb = [(1 - t) * a + t * b for a, b in zip(_VIRIDIS_STOPS[i], _VIRIDIS_STOPS[i + 1])]
    return "#{:02x}{:02x}{:02x}".format(*(int(round(255 * c)) for c in rgb))


def _fmt(v):
    return f"{v:.4f}"


class _Canvas:
    """World-coordinate (meters) drawing surface scaled to millimeters."""

    def __init__(self, xmin, xmax, ymin, ymax, title):
        self.scale = 1000.0 * 8.0  # 8 px per mm
        pad = 0.0015
        self.xmin = xmin - pad
        self.ymax = ymax + pad
        width = (xmax - xmin + 2 * pad) * self.scale
        height = (ymax - ymin + 2 * pad) * self.scale + 30.0
        self.parts = [
            '<?xml version="1.0" encoding="UTF-8"?>\n'
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" '
            f'height="{_fmt(height)}" viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
            f'<rect width="{_fmt(width)}" height="{_fmt(height)}" fill="white"/>',
            f'<text x="6" y="16" font-family="monospace" font-size="12">{title}</text>',
        ]

    def to_px(self, x, y):
        # flip y so the wing tip points up
        return (x - self.xmin) * self.scale, 30.0 + (self.ymax - y) * self.scale

    def polygon(self, vertices, stroke="black", fill="none"):
        pts = " ".join("{},{}".format(_fmt(px), _fmt(py))
                       for px, py in (self.to_px(x, y) for x, y in vertices))
        self.parts.append(f'<polygon points="{pts}" fill="{fill}" stroke="{stroke}" stroke-width="1"/>')

    def polyline(self, vertices, stroke="#888888"):
        pts = " ".join("{},{}".format(_fmt(px), _fmt(py))
                       for px, py in (self.to_px(x, y) for x, y in vertices))
        self.parts.append(f'<polyline points="{pts}" fill="none" stroke="{stroke}" stroke-width="1"/>')

    def circle(self, x, y, radius_px, fill, stroke="none"):
        px, py = self.to_px(x, y)
        self.parts.append(
            f'<circle cx="{_fmt(px)}" cy="{_fmt(py)}" r="{_fmt(radius_px)}" '
            f'fill="{fill}" stroke="{stroke}" stroke-width="1"/>')

    def square(self, x, y, half_px, fill, stroke="none"):
        px, py = self.to_px(x, y)
        self.parts.append(
            f'<rect x="{_fmt(px - half_px)}" y="{_fmt(py - half_px)}" '
            f'width="{_fmt(2 * half_px)}" height="{_fmt(2 * half_px)}" '
            f'fill="{fill}" stroke="{stroke}" stroke-width="1"/>')

    def render(self):
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def render_heatmap(polygon, xs, ys, values, title):
    """Planform outline with one colored marker per station.

    Values are min-max normalized to the color ramp; degenerate ranges map
    to mid-scale.
    """
    poly = np.asarray(polygon, dtype=float)
    values = np.asarray(values, dtype=float)
    vmin = float(values.min())
    vmax = float(values.max())
    span = vmax - vmin
    canvas = _Canvas(poly[:, 0].min(), poly[:, 0].max(),
                     poly[:, 1].min(), poly[:, 1].max(),
                     f"{title} [min={vmin:.6g} max={vmax:.6g}]")
    canvas.polygon(poly)
    for x, y, v in zip(xs, ys, values):
        norm = 0.5 if span == 0.0 else (v - vmin) / span
        canvas.circle(x, y, 4.0, color_for(norm))
    return canvas.render()


def render_overlay(polygon, veins, sites, selected, title):
    """Planform, veins, and the selected sensors (circles bending, squares shear)."""
    poly = np.asarray(polygon, dtype=float)
    canvas = _Canvas(poly[:, 0].min(), poly[:, 0].max(),
                     poly[:, 1].min(), poly[:, 1].max(), title)
    canvas.polygon(poly)
    for vein in veins:
        canvas.polyline(np.asarray(vein, dtype=float))
    chosen = set(selected)
    for idx, site in enumerate(sites):
        if idx not in chosen:
            continue
        if site.kind == "bending":
            canvas.circle(site.x, site.y, 5.0, "#d62728", stroke="black")
        else:
            canvas.square(site.x, site.y, 4.0, "#1f77b4", stroke="black")
    return canvas.render()
