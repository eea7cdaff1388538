"""Static SVG figures: curves, displacement glyphs, meshes and nodal heat maps.

Output is plain text with fixed number formatting so identical inputs give
byte-identical files.
"""
from __future__ import annotations

from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b")

# viridis anchor colours, interpolated linearly
_VIRIDIS = np.array([
    [68, 1, 84], [72, 40, 120], [62, 74, 137], [49, 104, 142], [38, 130, 142],
    [31, 158, 137], [53, 183, 121], [109, 205, 89], [180, 222, 44], [253, 231, 37],
], dtype=float)


def colormap(u) -> np.ndarray:
    """Map values in [0, 1] to RGB triples (0-255)."""
    u = np.clip(np.asarray(u, dtype=float), 0.0, 1.0) * (len(_VIRIDIS) - 1)
    i = np.minimum(u.astype(int), len(_VIRIDIS) - 2)
    f = (u - i)[..., None]
    return np.rint(_VIRIDIS[i] * (1 - f) + _VIRIDIS[i + 1] * f).astype(int)


def _hex(rgb) -> str:
    return "#%02x%02x%02x" % tuple(int(c) for c in rgb)


def _num(x) -> str:
    s = f"{x:.3f}".rstrip("0").rstrip(".")
    return "0" if s == "-0" else s


class Canvas:
    """World-to-pixel transform (y up) plus an element list."""

    def __init__(self, points, width: int = 480, margin: float = 0.05, title: str | None = None):
        p = np.asarray(points, dtype=float).reshape(-1, 2)
        lo, hi = p.min(axis=0), p.max(axis=0)
        span = np.maximum(hi - lo, 1e-12)
        pad = margin * span.max()
        self.lo = lo - pad
        span = span + 2 * pad
        self.scale = width / span[0]
        self.width = width
        self.height = max(int(round(span[1] * self.scale)), 1)
        self.top = self.lo[1] + span[1]
        self.items: list[str] = []
        self.title = title

    def xy(self, p) -> np.ndarray:
        p = np.asarray(p, dtype=float)
        return np.stack([(p[..., 0] - self.lo[0]) * self.scale, (self.top - p[..., 1]) * self.scale], axis=-1)

    def polyline(self, pts, closed=False, color="#000000", width=1.0, fill="none"):
        q = self.xy(pts)
        d = " ".join(f"{_num(x)},{_num(y)}" for x, y in q)
        tag = "polygon" if closed else "polyline"
        self.items.append(f'<{tag} points="{d}" fill="{fill}" stroke="{color}" stroke-width="{_num(width)}"/>')

    def arrows(self, sources, vectors, color="#444444", width=0.8):
        a = self.xy(sources)
        b = self.xy(np.asarray(sources) + np.asarray(vectors))
        for (x0, y0), (x1, y1) in zip(a, b):
            self.items.append(f'<line x1="{_num(x0)}" y1="{_num(y0)}" x2="{_num(x1)}" y2="{_num(y1)}" '
                              f'stroke="{color}" stroke-width="{_num(width)}" marker-end="url(#head)"/>')

    def triangles(self, vertices, triangles, colors=None, stroke="#00000033", width=0.3):
        q = self.xy(vertices)
        for k, t in enumerate(triangles):
            d = " ".join(f"{_num(x)},{_num(y)}" for x, y in q[t])
            fill = _hex(colors[k]) if colors is not None else "none"
            self.items.append(f'<polygon points="{d}" fill="{fill}" stroke="{stroke}" stroke-width="{_num(width)}"/>')

    def text(self, x, y, s, size=12):
        self.items.append(f'<text x="{_num(x)}" y="{_num(y)}" font-size="{size}" font-family="sans-serif">{escape(str(s))}</text>')

    def render(self) -> str:
        head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{self.width}" height="{self.height}" '
                f'viewBox="0 0 {self.width} {self.height}">\n'
                '<defs><marker id="head" markerWidth="6" markerHeight="6" refX="5" refY="3" orient="auto">'
                '<path d="M0,0 L6,3 L0,6 z" fill="#444444"/></marker></defs>\n'
                '<rect width="100%" height="100%" fill="#ffffff"/>\n')
        body = "\n".join(self.items)
        if self.title:
            body += f'\n<text x="6" y="16" font-size="13" font-family="sans-serif">{escape(str(self.title))}</text>'
        return head + body + "\n</svg>\n"

    def save(self, path) -> Path:
        path = Path(path)
        path.write_text(self.render())
        return path


def plot_curves(curves, path, title=None, width=480) -> Path:
    curves = list(curves)
    cv = Canvas(np.vstack([c.points for c in curves]), width, title=title)
    for k, c in enumerate(curves):
        cv.polyline(c.points, c.closed, PALETTE[k % len(PALETTE)], 1.5)
    return cv.save(path)


def plot_field(field, path, curves=(), title=None, width=480) -> Path:
    """Displacement vectors drawn as arrows over the stage boundaries."""
    pts = [field.sources, field.targets] + [c.points for c in curves]
    cv = Canvas(np.vstack(pts), width, title=title)
    for k, c in enumerate(curves):
        cv.polyline(c.points, c.closed, PALETTE[k % len(PALETTE)], 1.5)
    cv.arrows(field.sources, field.vectors)
    return cv.save(path)


def plot_mesh(mesh, path, title=None, width=480) -> Path:
    cv = Canvas(mesh.vertices, width, title=title)
    cv.triangles(mesh.vertices, mesh.triangles, stroke="#333333", width=0.4)
    for a, b in mesh.boundary_edges():
        cv.polyline(mesh.vertices[[a, b]], False, PALETTE[0], 1.2)
    return cv.save(path)


def plot_state(state, path, species: int = 0, vmin=None, vmax=None, title=None, width=480) -> Path:
    """Heat map of one species, each triangle filled by its vertex mean."""
    mesh = state.mesh
    c = state.c[species]
    lo = float(c.min()) if vmin is None else float(vmin)
    hi = float(c.max()) if vmax is None else float(vmax)
    u = (c[mesh.triangles].mean(axis=1) - lo) / (hi - lo) if hi > lo else np.full(len(mesh.triangles), 0.5)
    cv = Canvas(mesh.vertices, width, title=title)
    cv.triangles(mesh.vertices, mesh.triangles, colormap(u), stroke="none", width=0)
    for a, b in mesh.boundary_edges():
        cv.polyline(mesh.vertices[[a, b]], False, "#000000", 1.0)
    cv.text(6, cv.height - 6, f"c{species}: [{lo:.4g}, {hi:.4g}]  t={state.t:.4g}", 11)
    return cv.save(path)
