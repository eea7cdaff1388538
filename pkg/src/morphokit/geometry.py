"""Planar polyline curves and the pre-processing applied before mapping.

Curves are piecewise-linear. Closed curves store each vertex once (the
closing segment from the last point back to the first is implicit).
Coordinates are in micrometres throughout.
"""
from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np
from scipy.optimize import brentq

log = logging.getLogger(__name__)

#: Two consecutive points closer than this are treated as identical.
DUPLICATE_TOL = 1e-9


class CurveError(ValueError):
    """Raised for invalid or degenerate curves."""


@dataclass(frozen=True, eq=False)
class Curve:
    """Ordered planar point list.

    Parameters
    ----------
    points : (n, 2) array_like
        Vertex coordinates. For closed curves the first point must not be
        repeated at the end; a repeated closing point is dropped.
    closed : bool
        Whether the last point connects back to the first.
    label : str
        Subdomain / boundary identity tag.
    """

    points: np.ndarray
    closed: bool = True
    label: str = ""

    def __post_init__(self):
        pts = np.array(self.points, dtype=float, copy=True)
        if pts.ndim != 2 or pts.shape[1] != 2:
            raise CurveError(f"points must have shape (n, 2), got {pts.shape}")
        if not np.all(np.isfinite(pts)):
            raise CurveError("curve coordinates must be finite")
        if self.closed and len(pts) > 1 and np.hypot(*(pts[-1] - pts[0])) <= DUPLICATE_TOL:
            pts = pts[:-1]
        need = 3 if self.closed else 2
        if len(pts) < need:
            kind = "closed" if self.closed else "open"
            raise CurveError(f"{kind} curve needs at least {need} points, got {len(pts)}")
        steps = np.hypot(*np.diff(pts, axis=0).T)
        if np.any(steps <= DUPLICATE_TOL):
            i = int(np.argmax(steps <= DUPLICATE_TOL))
            raise CurveError(f"consecutive points {i} and {i + 1} coincide")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    def __len__(self):
        return len(self.points)

    def __repr__(self):
        kind = "closed" if self.closed else "open"
        return f"Curve({len(self)} points, {kind}, label={self.label!r})"

    @property
    def segments(self) -> tuple[np.ndarray, np.ndarray]:
        """Segment start and end points, each of shape (m, 2)."""
        p = self.points
        if self.closed:
            return p, np.roll(p, -1, axis=0)
        return p[:-1], p[1:]

    @property
    def length(self) -> float:
        a, b = self.segments
        return float(np.hypot(*(b - a).T).sum())

    def arclength(self) -> np.ndarray:
        """Cumulative arc length at each vertex (plus the closing vertex if closed)."""
        a, b = self.segments
        return np.concatenate([[0.0], np.cumsum(np.hypot(*(b - a).T))])

    def centroid(self) -> np.ndarray:
        """Area centroid for closed curves, length-weighted centroid for open ones."""
        if self.closed:
            a, b = self.segments
            cross = a[:, 0] * b[:, 1] - b[:, 0] * a[:, 1]
            area = cross.sum() / 2.0
            if abs(area) > 1e-300:
                cx = ((a[:, 0] + b[:, 0]) * cross).sum() / (6.0 * area)
                cy = ((a[:, 1] + b[:, 1]) * cross).sum() / (6.0 * area)
                return np.array([cx, cy])
        a, b = self.segments
        w = np.hypot(*(b - a).T)
        return ((a + b) / 2 * w[:, None]).sum(axis=0) / w.sum()

    def reversed(self) -> "Curve":
        return Curve(self.points[::-1], self.closed, self.label)

    def with_points(self, points) -> "Curve":
        return Curve(points, self.closed, self.label)

    def is_simple(self) -> bool:
        """True if no two non-adjacent segments touch."""
        return not _self_intersections(self)


@dataclass(frozen=True)
class CurveTransform:
    """Uniform scaling about ``reference`` followed by ``translation``."""

    scale: float
    translation: np.ndarray = field(default_factory=lambda: np.zeros(2))
    reference: np.ndarray = field(default_factory=lambda: np.zeros(2))

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float))
        object.__setattr__(self, "reference", np.asarray(self.reference, dtype=float))

    def apply(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return self.reference + self.scale * (p - self.reference) + self.translation

    def inverse(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return self.reference + (p - self.translation - self.reference) / self.scale


# --------------------------------------------------------------------------
# Exact predicates and segment intersection

def orient2d(a, b, c) -> int:
    """Sign of the signed area of triangle abc, exact for float inputs."""
    det = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
    bound = 1e-14 * (abs(b[0] - a[0]) + abs(c[0] - a[0])) * (abs(b[1] - a[1]) + abs(c[1] - a[1]))
    if abs(det) > bound:
        return 1 if det > 0 else -1
    fa = [Fraction(float(v)) for v in a]
    fb = [Fraction(float(v)) for v in b]
    fc = [Fraction(float(v)) for v in c]
    exact = (fb[0] - fa[0]) * (fc[1] - fa[1]) - (fb[1] - fa[1]) * (fc[0] - fa[0])
    return (exact > 0) - (exact < 0)


def _on_segment(a, b, p) -> bool:
    return min(a[0], b[0]) <= p[0] <= max(a[0], b[0]) and min(a[1], b[1]) <= p[1] <= max(a[1], b[1])


def segments_intersect(a, b, c, d) -> bool:
    """Closed-segment intersection test for ab and cd (touching counts)."""
    o1, o2 = orient2d(a, b, c), orient2d(a, b, d)
    o3, o4 = orient2d(c, d, a), orient2d(c, d, b)
    if o1 != o2 and o3 != o4 and o1 * o2 <= 0 and o3 * o4 <= 0:
        if o1 or o2 or o3 or o4:
            return True
    if o1 == 0 and _on_segment(a, b, c):
        return True
    if o2 == 0 and _on_segment(a, b, d):
        return True
    if o3 == 0 and _on_segment(c, d, a):
        return True
    if o4 == 0 and _on_segment(c, d, b):
        return True
    return False


def candidate_pairs(a0, a1, b0, b1, pad=0.0):
    """Index pairs (i, j) whose segment bounding boxes overlap.

    Vectorized broad phase; callers confirm with :func:`segments_intersect`.
    """
    a0, a1, b0, b1 = (np.asarray(v, dtype=float) for v in (a0, a1, b0, b1))
    alo, ahi = np.minimum(a0, a1) - pad, np.maximum(a0, a1) + pad
    blo, bhi = np.minimum(b0, b1) - pad, np.maximum(b0, b1) + pad
    pairs = []
    chunk = max(1, 2_000_000 // max(len(b0), 1))
    for s in range(0, len(a0), chunk):
        sl = slice(s, s + chunk)
        ok = ((alo[sl, None, 0] <= bhi[None, :, 0]) & (blo[None, :, 0] <= ahi[sl, None, 0])
              & (alo[sl, None, 1] <= bhi[None, :, 1]) & (blo[None, :, 1] <= ahi[sl, None, 1]))
        i, j = np.nonzero(ok)
        pairs.append(np.column_stack([i + s, j]))
    return np.concatenate(pairs) if pairs else np.zeros((0, 2), dtype=int)


def segment_intersection_point(a, b, c, d):
    """Intersection point of segments ab and cd, or None.

    For collinear overlaps the overlap endpoint nearest to ``a`` is returned.
    The second return value is the parameter along ab.
    """
    if not segments_intersect(a, b, c, d):
        return None
    a, b, c, d = (np.asarray(v, dtype=float) for v in (a, b, c, d))
    r, s = b - a, d - c
    denom = r[0] * s[1] - r[1] * s[0]
    if abs(denom) > 1e-15 * np.hypot(*r) * np.hypot(*s):
        t = ((c[0] - a[0]) * s[1] - (c[1] - a[1]) * s[0]) / denom
        t = min(max(t, 0.0), 1.0)
        if orient2d(a, b, c) == 0 and _on_segment(a, b, c):
            return c.copy(), float(np.dot(c - a, r) / np.dot(r, r))
        if orient2d(a, b, d) == 0 and _on_segment(a, b, d):
            return d.copy(), float(np.dot(d - a, r) / np.dot(r, r))
        if orient2d(c, d, a) == 0 and _on_segment(c, d, a):
            return a.copy(), 0.0
        if orient2d(c, d, b) == 0 and _on_segment(c, d, b):
            return b.copy(), 1.0
        return a + t * r, float(t)
    # collinear overlap
    rr = float(np.dot(r, r))
    cands = []
    for p in (c, d):
        if _on_segment(a, b, p):
            cands.append((float(np.dot(p - a, r) / rr), p.copy()))
    for t0, p in ((0.0, a), (1.0, b)):
        if _on_segment(c, d, p):
            cands.append((t0, p.copy()))
    t, p = min(cands, key=lambda x: x[0])
    return p, t


def _self_intersections(curve: Curve):
    a, b = curve.segments
    m = len(a)
    pairs = candidate_pairs(a, b, a, b)
    pairs = pairs[pairs[:, 0] < pairs[:, 1]]
    hits = []
    for i, j in pairs:
        adjacent = j == i + 1 or (curve.closed and i == 0 and j == m - 1)
        if adjacent:
            # adjacent segments share one vertex; they only conflict if they fold back
            shared = b[i] if j == i + 1 else a[i]
            other_i = a[i] if j == i + 1 else b[i]
            other_j = b[j] if j == i + 1 else a[j]
            if orient2d(shared, other_i, other_j) == 0 and np.dot(other_i - shared, other_j - shared) > 0:
                hits.append((i, j))
            continue
        if segments_intersect(a[i], b[i], a[j], b[j]):
            hits.append((i, j))
    return hits


# --------------------------------------------------------------------------
# Operations

def signed_area(curve: Curve) -> float:
    """Shoelace area of a closed curve; positive iff counter-clockwise."""
    if not curve.closed:
        raise CurveError("signed area is only defined for closed curves")
    x, y = curve.points.T
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def point_at_arclength(curve: Curve, s) -> np.ndarray:
    """Points at arc-length positions ``s`` along the curve polyline.

    Positions wrap around closed curves and are clamped to the ends of open ones.
    """
    a, b = curve.segments
    cum = curve.arclength()
    s = np.asarray(s, dtype=float)
    if curve.closed:
        s = np.mod(s, cum[-1])
    idx = np.clip(np.searchsorted(cum, s, side="right") - 1, 0, len(a) - 1)
    seglen = cum[idx + 1] - cum[idx]
    t = np.clip((s - cum[idx]) / seglen, 0.0, 1.0)
    return a[idx] + t[..., None] * (b[idx] - a[idx])


def resample_equidistant(curve: Curve, n: int, tol: float = 1e-6, max_iter: int = 100) -> Curve:
    """Resample to ``n`` points with equal chord lengths between neighbours.

    Points are placed on the input polyline. Open curves keep both endpoints
    exactly; closed curves start at the first input vertex and have ``n``
    equal chords around the loop.

    Equal arc-length spacing is the starting guess; chord lengths then get
    equalized by a 1D secant iteration on the chord length, walking the
    polyline with circle-segment intersections.
    """
    need = 3 if curve.closed else 2
    if n < need:
        raise CurveError(f"n must be >= {need} for a {'closed' if curve.closed else 'open'} curve")
    total = curve.length
    if total < 1e-9:
        raise CurveError("cannot resample a curve of zero length")

    a, b = curve.segments
    target_end = curve.points[0] if curve.closed else curve.points[-1]
    n_chords = n if curve.closed else n - 1

    def walk(chord):
        # returns points and the closing mismatch (signed, in arc length)
        pts = [curve.points[0].copy()]
        seg, t = 0, 0.0
        for _ in range(n_chords - 1):
            p = pts[-1]
            found = False
            while seg < len(a):
                q0 = a[seg] + t * (b[seg] - a[seg])
                d = b[seg] - q0
                # solve |q0 + u d - p| = chord for the smallest u in [0, 1]
                f = q0 - p
                A = d @ d
                B = 2 * f @ d
                C = f @ f - chord * chord
                disc = B * B - 4 * A * C
                if A > 0 and disc >= 0:
                    sq = np.sqrt(disc)
                    u = (-B + sq) / (2 * A)
                    if 0.0 <= u <= 1.0:
                        t = t + u * (1 - t)
                        pts.append(a[seg] + t * (b[seg] - a[seg]))
                        found = True
                        break
                seg, t = seg + 1, 0.0
            if not found:
                return None, None
        last = pts[-1]
        # remaining arc length from the last point to the end
        cum = curve.arclength()
        pos = cum[seg] + t * (cum[seg + 1] - cum[seg]) if seg < len(a) else total
        return np.array(pts), (total - pos, np.hypot(*(target_end - last)))

    def residual(chord):
        pts, rem = walk(chord)
        if pts is None:
            return -1.0, None
        # closing chord minus target chord; sign follows leftover arc
        return (rem[1] if rem[0] > 0 else -rem[1]) - chord, pts

    hi = total / n_chords
    r_hi, pts = residual(hi)
    # chords never exceed arcs, so the arc-length spacing brackets the root from above
    if r_hi < 0:
        cache = {}

        def f(chord):
            r, p = residual(chord)
            cache[chord] = p
            return r

        chord = brentq(f, 1e-6 * hi, hi, xtol=tol * 1e-3 * hi, rtol=1e-14, maxiter=max_iter)
        pts = cache[chord] if chord in cache else residual(chord)[1]
    if not curve.closed:
        pts = np.vstack([pts, curve.points[-1]])
    return curve.with_points(pts)


def normalize_direction(c1: Curve, c2: Curve) -> tuple[Curve, Curve]:
    """Make both curves run in the same direction.

    Closed curves are made counter-clockwise. For open curves ``c2`` is
    reversed when that lowers the summed endpoint-to-endpoint distance.
    """
    if c1.closed or c2.closed:
        out = []
        for c in (c1, c2):
            if c.closed and signed_area(c) < 0:
                c = c.reversed()
            out.append(c)
        return out[0], out[1]
    p, q = c1.points, c2.points
    same = np.hypot(*(p[0] - q[0])) + np.hypot(*(p[-1] - q[-1]))
    flipped = np.hypot(*(p[0] - q[-1])) + np.hypot(*(p[-1] - q[0]))
    if flipped < same:
        return c1, c2.reversed()
    return c1, c2


def rms_radius(curve: Curve) -> float:
    """Root-mean-square distance from the centroid, weighted by arc length."""
    a, b = curve.segments
    c = curve.centroid()
    u, v = a - c, b - c
    w = np.hypot(*(b - a).T)
    # exact integral of |u + t(v-u)|^2 over t in [0, 1]
    seg = (u * u).sum(1) + (u * (v - u)).sum(1) + ((v - u) ** 2).sum(1) / 3.0
    return float(np.sqrt((seg * w).sum() / w.sum()))


def similarity_prescale(c1: Curve, c2: Curve, align_centroids: bool = False) -> tuple[Curve, CurveTransform]:
    """Scale ``c1`` about its centroid to match the size of ``c2``.

    Size is the RMS radius for closed curves and the total length for open
    ones. With ``align_centroids`` the scaled curve is also translated onto
    the centroid of ``c2``.
    """
    if c1.closed != c2.closed:
        raise CurveError("prescale needs both curves open or both closed")
    if c1.closed:
        s1, s2 = rms_radius(c1), rms_radius(c2)
    else:
        s1, s2 = c1.length, c2.length
    if s1 < 1e-12 or s2 < 1e-12:
        raise CurveError("cannot prescale a zero-size curve")
    ref = c1.centroid()
    shift = c2.centroid() - ref if align_centroids else np.zeros(2)
    tf = CurveTransform(scale=s2 / s1, translation=shift, reference=ref)
    return c1.with_points(tf.apply(c1.points)), tf


def split_at_intersection(b1: Curve, b2: Curve) -> tuple[list[Curve], list[np.ndarray]]:
    """Split ``b1`` into open pieces at every point where it meets ``b2``.

    Returns the pieces (in traversal order of ``b1``) and the intersection
    points. Tangential contacts count as one intersection. A closed ``b1``
    with k intersections yields k pieces, an open one k + 1. Without any
    intersection ``b1`` is returned whole.
    """
    a, b = b1.segments
    c, d = b2.segments
    hits = []  # (segment index, parameter, point)
    for i, j in candidate_pairs(a, b, c, d):
        res = segment_intersection_point(a[i], b[i], c[j], d[j])
        if res is not None:
            p, t = res
            hits.append((int(i), float(t), p))
    if not hits:
        return [b1], []
    # normalize vertex hits (t == 1 belongs to the next segment at t == 0)
    norm = []
    for i, t, p in hits:
        if t >= 1.0:
            if b1.closed or i + 1 < len(a):
                i, t = (i + 1) % len(a), 0.0
        norm.append((i, t, p))
    norm.sort(key=lambda h: (h[0], h[1]))
    uniq = []
    for h in norm:
        if uniq and np.hypot(*(h[2] - uniq[-1][2])) <= DUPLICATE_TOL:
            continue
        uniq.append(h)
    if b1.closed and len(uniq) > 1 and np.hypot(*(uniq[0][2] - uniq[-1][2])) <= DUPLICATE_TOL:
        uniq.pop()

    pts = b1.points
    # build a vertex sequence with intersection points inserted, tagging cuts
    seq, cuts = [], []
    hi = 0
    nseg = len(a)
    for i in range(nseg):
        seq.append(pts[i])
        while hi < len(uniq) and uniq[hi][0] == i:
            _, t, p = uniq[hi]
            if np.hypot(*(p - pts[i])) <= DUPLICATE_TOL:
                seq[-1] = p
                cuts.append(len(seq) - 1)
            elif np.hypot(*(p - b[i])) <= DUPLICATE_TOL:
                # belongs to next vertex; handled there unless b1 is open and this is the end
                if not b1.closed and i == nseg - 1:
                    seq.append(p)
                    cuts.append(len(seq) - 1)
            else:
                seq.append(p)
                cuts.append(len(seq) - 1)
            hi += 1
    if not b1.closed:
        if not cuts or cuts[-1] != len(seq) - 1 or np.hypot(*(seq[-1] - pts[-1])) > DUPLICATE_TOL:
            seq.append(pts[-1])
    seq = np.array(seq)
    points_out = [seq[k] for k in cuts]

    pieces = []
    if b1.closed:
        m = len(seq)
        for k in range(len(cuts)):
            s = cuts[k]
            e = cuts[(k + 1) % len(cuts)]
            if len(cuts) == 1:
                idx = list(range(s, m)) + list(range(0, s + 1))
            elif e > s:
                idx = list(range(s, e + 1))
            else:
                idx = list(range(s, m)) + list(range(0, e + 1))
            pieces.append(_open_piece(seq[idx], b1.label, len(pieces)))
    else:
        bounds = [0] + [k for k in cuts if 0 < k < len(seq) - 1] + [len(seq) - 1]
        for s, e in zip(bounds[:-1], bounds[1:]):
            pieces.append(_open_piece(seq[s:e + 1], b1.label, len(pieces)))
    return pieces, points_out


def _open_piece(pts, label, k):
    keep = [0]
    for i in range(1, len(pts)):
        if np.hypot(*(pts[i] - pts[keep[-1]])) > DUPLICATE_TOL:
            keep.append(i)
    return Curve(pts[keep], closed=False, label=f"{label}.{k}" if label else str(k))


# --------------------------------------------------------------------------
# File format: x,y CSV plus a JSON descriptor next to it.

def write_curve(curve: Curve, path) -> None:
    path = Path(path)
    np.savetxt(path, curve.points, delimiter=",", header="x,y", comments="", fmt="%.17g")
    desc = {"closed": bool(curve.closed), "label": curve.label, "units": "um"}
    path.with_suffix(".json").write_text(json.dumps(desc, indent=2) + "\n")


def read_curve(path) -> Curve:
    path = Path(path)
    pts = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    desc_path = path.with_suffix(".json")
    desc = json.loads(desc_path.read_text()) if desc_path.exists() else {}
    if desc.get("units", "um") != "um":
        raise CurveError(f"{desc_path}: unsupported units {desc['units']!r}")
    return Curve(pts, closed=bool(desc.get("closed", True)), label=desc.get("label", path.stem))
