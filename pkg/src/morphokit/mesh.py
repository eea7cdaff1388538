"""Triangle meshes of curve-bounded domains: generation, quality checks,
refinement, coarsening, boundary-driven deformation and Gmsh MSH 2.2 I/O.
"""
from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

import numpy as np
import triangle as tr
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .geometry import Curve, CurveError, candidate_pairs, segments_intersect, signed_area

log = logging.getLogger(__name__)

#: "several times lower" than the gradient length scale
GRADIENT_FACTOR = 5.0
MIN_EDGE_RATIO = 0.1
MIN_ANGLE = 20.0


class MeshError(ValueError):
    pass


class MeshInversionError(MeshError):
    pass


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Conforming P1 triangle mesh.

    ``edges``/``edge_tags`` list every constrained edge (outer boundary,
    hole boundaries, subdomain interfaces) with the label of the curve it
    came from. ``curves`` keeps the generating polylines by label so that
    refinement can snap new boundary vertices back onto them.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), dtype=int))
    edge_tags: tuple = ()
    triangle_region_tag: tuple = ()
    curves: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float).reshape(-1, 2)
        t = np.asarray(self.triangles, dtype=np.int64).reshape(-1, 3)
        e = np.asarray(self.edges, dtype=np.int64).reshape(-1, 2)
        if len(self.edge_tags) != len(e):
            raise MeshError("edge_tags must match edges")
        regions = tuple(self.triangle_region_tag) or ("",) * len(t)
        if len(regions) != len(t):
            raise MeshError("triangle_region_tag must match triangles")
        for arr in (v, t, e):
            arr.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", t)
        object.__setattr__(self, "edges", e)
        object.__setattr__(self, "edge_tags", tuple(self.edge_tags))
        object.__setattr__(self, "triangle_region_tag", regions)

    def __repr__(self):
        return f"TriMesh({len(self.vertices)} vertices, {len(self.triangles)} triangles)"

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    @property
    def area(self) -> float:
        return float(self.signed_areas().sum())

    def all_edges(self) -> np.ndarray:
        """Unique undirected edges, sorted vertex pairs."""
        t = self.triangles
        e = np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        return np.unique(e, axis=0)

    @cached_property
    def _boundary_edges(self) -> np.ndarray:
        t = self.triangles
        directed = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        n = max(self.n_vertices, 1)
        key = np.minimum(directed[:, 0], directed[:, 1]) * n + np.maximum(directed[:, 0], directed[:, 1])
        _, inv, counts = np.unique(key, return_inverse=True, return_counts=True)
        out = directed[counts[inv] == 1]
        out.setflags(write=False)
        return out

    def boundary_edges(self) -> np.ndarray:
        """Edges used by exactly one triangle, oriented with the domain on the left."""
        return self._boundary_edges

    def boundary_vertices(self) -> np.ndarray:
        return np.unique(self.boundary_edges())

    def boundary_edge_tags(self) -> list[str]:
        """Tag per row of :meth:`boundary_edges` ('' if untagged)."""
        lookup = {tuple(sorted(e)): tag for e, tag in zip(self.edges.tolist(), self.edge_tags)}
        return [lookup.get(tuple(sorted(e)), "") for e in self.boundary_edges().tolist()]

    def vertex_boundary_tag(self) -> list[str]:
        """Curve label per vertex ('' for vertices on no tagged edge)."""
        tags = [""] * self.n_vertices
        for (a, b), tag in zip(self.edges.tolist(), self.edge_tags):
            tags[a] = tags[a] or tag
            tags[b] = tags[b] or tag
        return tags

    def with_vertices(self, vertices) -> "TriMesh":
        return replace(self, vertices=np.asarray(vertices, dtype=float))


# --------------------------------------------------------------------------
# Generation

def _interior_point(curve: Curve) -> np.ndarray:
    pts = np.array(curve.points)
    n = len(pts)
    seg = np.column_stack([np.arange(n), (np.arange(n) + 1) % n])
    out = tr.triangulate({"vertices": pts, "segments": seg}, "pQ")
    p = out["vertices"][out["triangles"]]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    area = np.abs(d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])
    return p[np.argmax(area)].mean(axis=0)


def point_in_polygon(points, poly) -> np.ndarray:
    """Even-odd rule containment of ``points`` in closed polygon ``poly``."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.asarray(poly, dtype=float)
    b = np.roll(a, -1, axis=0)
    x, y = pts[:, 0:1], pts[:, 1:2]
    cond = (a[None, :, 1] > y) != (b[None, :, 1] > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = a[None, :, 0] + (y - a[None, :, 1]) * (b[None, :, 0] - a[None, :, 0]) / (b[None, :, 1] - a[None, :, 1])
    return (cond & (x < xint)).sum(axis=1) % 2 == 1


def _subdivide(points, closed, h):
    """Insert points so no segment exceeds ``h``; original vertices are kept."""
    pts = np.asarray(points)
    nxt = np.roll(pts, -1, axis=0) if closed else pts[1:]
    base = pts if closed else pts[:-1]
    out = []
    for p, q in zip(base, nxt):
        k = max(1, int(math.ceil(np.hypot(*(q - p)) / h - 1e-9)))
        out.extend(p + (q - p) * (np.arange(k)[:, None] / k))
    if not closed:
        out.append(pts[-1])
    return np.array(out)


def _input_angles(curve: Curve) -> np.ndarray:
    p = curve.points
    prev, nxt = np.roll(p, 1, axis=0), np.roll(p, -1, axis=0)
    u, v = prev - p, nxt - p
    cosang = (u * v).sum(1) / (np.hypot(*u.T) * np.hypot(*v.T))
    ang = np.degrees(np.arccos(np.clip(cosang, -1, 1)))
    return ang if curve.closed else ang[1:-1]


def _check_intersections(curves):
    for i in range(len(curves)):
        for j in range(i + 1, len(curves)):
            ci, cj = curves[i], curves[j]
            a, b = ci.segments
            c, d = cj.segments
            ends = []
            for cc in (ci, cj):
                if not cc.closed:
                    ends.extend([cc.points[0], cc.points[-1]])
            for p, q in candidate_pairs(a, b, c, d):
                if not segments_intersect(a[p], b[p], c[q], d[q]):
                    continue
                # contacts at open-curve endpoints are junctions, not crossings
                seg_pts = [a[p], b[p], c[q], d[q]]
                if any(_touches_only_at(e, seg_pts) for e in ends):
                    continue
                raise MeshError(f"input curves {ci.label!r} and {cj.label!r} intersect")


def _touches_only_at(e, seg_pts):
    from .geometry import orient2d, _on_segment
    a, b, c, d = seg_pts
    on_ab = orient2d(a, b, e) == 0 and _on_segment(a, b, e)
    on_cd = orient2d(c, d, e) == 0 and _on_segment(c, d, e)
    if not (on_ab and on_cd):
        return False
    # the only shared point must be e: check the segments are not collinear-overlapping elsewhere
    return orient2d(a, b, c) != 0 or orient2d(a, b, d) != 0


def triangulate(outer: Curve, inner=(), target_h: float = 0.1, region_labels=None,
                min_angle: float = MIN_ANGLE, boundary_steiner: bool = True) -> TriMesh:
    """Constrained quality Delaunay triangulation of a curve-bounded domain.

    Parameters
    ----------
    outer : Curve
        Closed outer boundary (counter-clockwise).
    inner : sequence of Curve
        Clockwise closed curves are holes; counter-clockwise closed curves
        bound labelled subdomains; open curves are interface constraints
        whose endpoints may rest on other curves.
    target_h : float
        Upper bound for every edge length.
    region_labels : sequence of (point, label), optional
        Seeds that override region tags of the constrained-edge-bounded
        component containing them.
    boundary_steiner : bool
        Allow extra vertices on input segments. With ``False`` the boundary
        vertices are exactly the (subdivided) input points.
    """
    if not outer.closed:
        raise MeshError("outer boundary must be closed")
    if signed_area(outer) < 0:
        raise MeshError("outer boundary must be counter-clockwise")
    inner = list(inner)
    curves = [outer] + inner
    labels = [c.label or f"curve{k}" for k, c in enumerate(curves)]
    if len(set(labels)) != len(labels):
        raise MeshError(f"curve labels must be unique: {labels}")
    _check_intersections(curves)
    small = [lab for c, lab in zip(curves, labels) if len(_input_angles(c)) and _input_angles(c).min() < min_angle - 1e-9]
    if small:
        log.warning("input angles below %.0f deg on %s; quality is best effort", min_angle, small)

    # vertex pool with junction insertion
    pool: dict = {}
    coords = []

    def vid(p):
        key = (round(float(p[0]), 12), round(float(p[1]), 12))
        if key not in pool:
            pool[key] = len(coords)
            coords.append((float(p[0]), float(p[1])))
        return pool[key]

    junctions = [c.points[k] for c in inner if not c.closed for k in (0, -1)]
    segs, marks = [], []
    for k, c in enumerate(curves):
        pts = list(c.points)
        if junctions:
            pts = _insert_junctions(c, junctions)
        pts = _subdivide(np.array(pts), c.closed, target_h)
        ids = [vid(p) for p in pts]
        n = len(ids)
        pairs = [(ids[i], ids[(i + 1) % n]) for i in range(n if c.closed else n - 1)]
        segs.extend(pairs)
        marks.extend([k + 1] * len(pairs))

    holes = [_interior_point(c) for c in inner if c.closed and signed_area(c) < 0]
    data = {
        "vertices": np.array(coords),
        "segments": np.array(segs, dtype=np.int32),
        "segment_markers": np.array(marks, dtype=np.int32)[:, None],
    }
    if holes:
        data["holes"] = np.array(holes)

    flags = f"pq{min_angle:g}Q" + ("" if boundary_steiner else "Y")
    max_area = math.sqrt(3) / 4 * target_h ** 2
    for _ in range(30):
        out = tr.triangulate(data, flags + f"a{max_area:.17g}")
        v, t = out["vertices"], out["triangles"]
        e = np.sort(np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]]), axis=1)
        longest = np.hypot(*(v[e[:, 0]] - v[e[:, 1]]).T).max()
        if longest <= target_h * (1 + 1e-12):
            break
        max_area *= 0.7
    else:
        raise MeshError(f"could not reach target_h={target_h}")

    seg_out = out["segments"]
    seg_mark = out["segment_markers"].ravel()
    tags = tuple(labels[m - 1] for m in seg_mark)
    t = _orient(v, t)
    regions = _assign_regions(v, t, seg_out, curves, labels, region_labels)
    return TriMesh(v, t, seg_out, tags, regions, {lab: c for lab, c in zip(labels, curves)})


def _insert_junctions(curve, junctions):
    a, b = curve.segments
    out = []
    for i in range(len(a)):
        out.append(a[i])
        extra = []
        d = b[i] - a[i]
        L2 = d @ d
        for j in junctions:
            s = (j - a[i]) @ d / L2
            if 1e-12 < s < 1 - 1e-12 and abs(d[0] * (j - a[i])[1] - d[1] * (j - a[i])[0]) <= 1e-12 * L2:
                extra.append((s, j))
        out.extend(p for _, p in sorted(extra, key=lambda x: x[0]))
    if not curve.closed:
        out.append(curve.points[-1])
    return out


def _orient(v, t):
    t = np.array(t, dtype=np.int64)
    p = v[t]
    d1, d2 = p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]
    neg = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0] < 0
    t[neg] = t[neg][:, [0, 2, 1]]
    return t


def _assign_regions(v, t, constrained, curves, labels, seeds):
    """Flood-fill components across unconstrained edges, then label them."""
    n = len(v)
    cons = np.sort(np.asarray(constrained, dtype=np.int64).reshape(-1, 2), axis=1)
    cons_key = set((cons[:, 0] * n + cons[:, 1]).tolist())
    e = np.vstack([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
    key = np.minimum(e[:, 0], e[:, 1]) * n + np.maximum(e[:, 0], e[:, 1])
    tri = np.tile(np.arange(len(t)), 3)
    order = np.argsort(key, kind="stable")
    ks, ts = key[order], tri[order]
    pair = np.nonzero(ks[1:] == ks[:-1])[0]
    free = np.array([k not in cons_key for k in ks[pair].tolist()], dtype=bool)
    a, b = ts[pair][free], ts[pair + 1][free]
    graph = coo_matrix((np.ones(len(a)), (a, b)), shape=(len(t), len(t)))
    n_comp, comp = connected_components(graph, directed=False)

    centroids = v[t].mean(axis=1)
    comp_label = {}
    for c in range(n_comp):
        k = int(np.argmax(comp == c))
        p = centroids[k]
        label = labels[0]
        best_area = math.inf
        for curve, lab in zip(curves[1:], labels[1:]):
            if curve.closed and signed_area(curve) > 0 and point_in_polygon(p, curve.points)[0]:
                if signed_area(curve) < best_area:
                    label, best_area = lab, signed_area(curve)
        comp_label[c] = label
    if seeds:
        for point, lab in seeds:
            inside = _locate(v, t, np.asarray(point, dtype=float))
            if inside is None:
                raise MeshError(f"region seed {point} for {lab!r} lies outside the mesh")
            comp_label[comp[inside]] = lab
    return tuple(comp_label[c] for c in comp)


def _locate(v, t, p):
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]

    def cross(u, w):
        return u[:, 0] * w[:, 1] - u[:, 1] * w[:, 0]

    s1 = cross(b - a, p - a)
    s2 = cross(c - b, p - b)
    s3 = cross(a - c, p - c)
    hit = np.nonzero((s1 >= 0) & (s2 >= 0) & (s3 >= 0))[0]
    return int(hit[0]) if len(hit) else None


# --------------------------------------------------------------------------
# Quality


def locate_points(mesh: TriMesh, points, tol: float = 1e-9):
    """Containing triangle and barycentric weights for each query point.

    Points outside the mesh (by more than ``tol`` in barycentric terms) get
    triangle index -1 and NaN weights.
    """
    from scipy.spatial import cKDTree

    p = np.atleast_2d(np.asarray(points, dtype=float))
    v, t = mesh.vertices, mesh.triangles
    a, b, c = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    det = (b[:, 0] - a[:, 0]) * (c[:, 1] - a[:, 1]) - (c[:, 0] - a[:, 0]) * (b[:, 1] - a[:, 1])
    tree = cKDTree(v[t].mean(axis=1))
    tri = np.full(len(p), -1)
    bary = np.full((len(p), 3), np.nan)
    todo = np.arange(len(p))
    done, k = 0, 4
    while len(todo) and done < len(t):
        k = min(k, len(t))
        _, cand = tree.query(p[todo], k=k)
        cand = np.asarray(cand).reshape(len(todo), k)
        for j in range(done, k):
            ti = cand[:, j]
            q = p[todo]
            l1 = ((b[ti, 0] - q[:, 0]) * (c[ti, 1] - q[:, 1]) - (c[ti, 0] - q[:, 0]) * (b[ti, 1] - q[:, 1])) / det[ti]
            l2 = ((c[ti, 0] - q[:, 0]) * (a[ti, 1] - q[:, 1]) - (a[ti, 0] - q[:, 0]) * (c[ti, 1] - q[:, 1])) / det[ti]
            l3 = 1.0 - l1 - l2
            hit = (l1 >= -tol) & (l2 >= -tol) & (l3 >= -tol)
            tri[todo[hit]] = ti[hit]
            bary[todo[hit]] = np.column_stack([l1, l2, l3])[hit]
            todo, cand = todo[~hit], cand[~hit]
            if not len(todo):
                break
        done, k = k, 4 * k
        if len(todo) and done >= 64:
            # no hit among the nearest centroids: settle the rest by brute force
            for i in todo:
                q = p[i]
                l1 = ((b[:, 0] - q[0]) * (c[:, 1] - q[1]) - (c[:, 0] - q[0]) * (b[:, 1] - q[1])) / det
                l2 = ((c[:, 0] - q[0]) * (a[:, 1] - q[1]) - (a[:, 0] - q[0]) * (c[:, 1] - q[1])) / det
                l3 = 1.0 - l1 - l2
                ok = np.nonzero((l1 >= -tol) & (l2 >= -tol) & (l3 >= -tol))[0]
                if len(ok):
                    tri[i] = ok[0]
                    bary[i] = (l1[ok[0]], l2[ok[0]], l3[ok[0]])
            break
    return tri, bary


def interpolate_p1(mesh: TriMesh, values, points, outside: str = "raise") -> np.ndarray:
    """Evaluate nodal P1 ``values`` (..., n_vertices) at ``points``.

    ``outside="nearest"`` uses the nearest vertex for points off the mesh.
    """
    values = np.asarray(values, dtype=float)
    tri, bary = locate_points(mesh, points)
    miss = tri < 0
    if miss.any():
        if outside != "nearest":
            raise MeshError(f"{int(miss.sum())} interpolation points lie outside the mesh")
        from scipy.spatial import cKDTree

        _, near = cKDTree(mesh.vertices).query(np.atleast_2d(points)[miss])
        tri = tri.copy()
    idx = mesh.triangles[np.where(miss, 0, tri)]
    out = (values[..., idx] * np.where(miss[:, None], 0.0, bary)).sum(axis=-1)
    if miss.any():
        out[..., miss] = values[..., near]
    return out


@dataclass(frozen=True)
class MeshQualityReport:
    min_edge_ratio: float
    max_edge_length: float
    min_angle: float
    n_inverted: int
    passed: bool
    reasons: tuple = ()

    def to_dict(self) -> dict:
        return {
            "min_edge_ratio": self.min_edge_ratio,
            "max_edge_length": self.max_edge_length,
            "min_angle": self.min_angle,
            "n_inverted": self.n_inverted,
            "passed": self.passed,
            "reasons": list(self.reasons),
        }


def triangle_edge_lengths(vertices, triangles) -> np.ndarray:
    p = np.asarray(vertices)[np.asarray(triangles)]
    return np.stack([
        np.hypot(*(p[:, 1] - p[:, 2]).T),
        np.hypot(*(p[:, 2] - p[:, 0]).T),
        np.hypot(*(p[:, 0] - p[:, 1]).T),
    ], axis=1)


def quality_report(mesh: TriMesh, gradient_length: float | None = None,
                   factor: float = GRADIENT_FACTOR, min_ratio: float = MIN_EDGE_RATIO) -> MeshQualityReport:
    """Edge-ratio, size and orientation checks.

    Passes iff shortest/longest side >= ``min_ratio`` in every triangle, no
    triangle is inverted, and (when ``gradient_length`` is given) the longest
    edge is at most ``gradient_length / factor``.
    """
    L = triangle_edge_lengths(mesh.vertices, mesh.triangles)
    ratio = float((L.min(1) / L.max(1)).min())
    longest = float(L.max())
    # law of cosines for each angle
    a, b, c = L[:, 0], L[:, 1], L[:, 2]
    with np.errstate(invalid="ignore", divide="ignore"):
        ang = np.degrees(np.arccos(np.clip(np.stack([
            (b * b + c * c - a * a) / (2 * b * c),
            (a * a + c * c - b * b) / (2 * a * c),
            (a * a + b * b - c * c) / (2 * a * b),
        ]), -1, 1)))
    n_inv = int((mesh.signed_areas() <= 0).sum())
    reasons = []
    if ratio < min_ratio:
        reasons.append(f"min edge ratio {ratio:.4g} < {min_ratio}")
    if n_inv:
        reasons.append(f"{n_inv} inverted triangles")
    if gradient_length is not None and longest > gradient_length / factor:
        reasons.append(f"max edge {longest:.4g} > {gradient_length}/{factor:g}")
    return MeshQualityReport(ratio, longest, float(np.nanmin(ang)), n_inv, not reasons, tuple(reasons))


# --------------------------------------------------------------------------
# Refinement

def _project_to_curve(p, curve: Curve):
    a, b = curve.segments
    d = b - a
    s = np.clip(((p - a) * d).sum(1) / (d * d).sum(1), 0, 1)
    q = a + s[:, None] * d
    k = np.argmin(np.hypot(*(q - p).T))
    return q[k]


def refine(mesh: TriMesh, snap=None) -> TriMesh:
    """Split every triangle into four at its edge midpoints.

    New vertices on constrained edges are projected onto the generating
    polyline of their label, or with ``snap`` (``{label: f(points) -> points}``)
    onto an exact boundary description instead.
    """
    snap = snap or {}
    v, t = mesh.vertices, mesh.triangles
    edges = mesh.all_edges()
    index = {tuple(e): mesh.n_vertices + k for k, e in enumerate(edges.tolist())}
    mids = 0.5 * (v[edges[:, 0]] + v[edges[:, 1]])
    new_edges, new_tags = [], []
    for (a, b), tag in zip(mesh.edges.tolist(), mesh.edge_tags):
        m = index[(min(a, b), max(a, b))]
        curve = mesh.curves.get(tag)
        if tag in snap:
            mids[m - mesh.n_vertices] = np.asarray(snap[tag](mids[m - mesh.n_vertices][None]))[0]
        elif curve is not None:
            mids[m - mesh.n_vertices] = _project_to_curve(mids[m - mesh.n_vertices], curve)
        new_edges += [(a, m), (m, b)]
        new_tags += [tag, tag]

    def mid(a, b):
        return index[(min(a, b), max(a, b))]

    tris, regions = [], []
    for (a, b, c), reg in zip(t.tolist(), mesh.triangle_region_tag):
        ab, bc, ca = mid(a, b), mid(b, c), mid(c, a)
        tris += [(a, ab, ca), (ab, b, bc), (ca, bc, c), (ab, bc, ca)]
        regions += [reg] * 4
    return TriMesh(np.vstack([v, mids]), tris, new_edges, new_tags, regions, mesh.curves)


def coarsen(mesh: TriMesh, factor: float = 2.0, target_h: float | None = None,
            min_ratio: float = MIN_EDGE_RATIO) -> TriMesh:
    """Edge-collapse decimation toward ``n_vertices / factor`` vertices.

    Collapses that would invert or flatten a triangle, push its edge ratio
    below ``min_ratio``, break the mesh topology, or move a constrained edge
    more than ``target_h / 10`` away from the vertices it replaces are
    skipped. The result may keep more vertices than requested when no valid
    collapse is left.
    """
    if factor < 1:
        raise MeshError("coarsening factor must be >= 1")
    v = mesh.vertices.copy()
    n0 = mesh.n_vertices
    target = int(math.ceil(n0 / factor))
    n_loops = max(1, len(mesh.curves))
    if target < 3 * n_loops + 1:
        raise MeshError(f"cannot coarsen {n0} vertices by {factor}: below minimal topology")
    if target_h is None:
        L = triangle_edge_lengths(mesh.vertices, mesh.triangles)
        target_h = float(L.max()) * math.sqrt(factor)
    tol = target_h / 10.0

    tris = {k: list(tri) for k, tri in enumerate(mesh.triangles.tolist())}
    region = dict(enumerate(mesh.triangle_region_tag))
    vt = defaultdict(set)
    for k, tri in tris.items():
        for a in tri:
            vt[a].add(k)
    cedge = {}  # constrained edge -> (tag, shadow points)
    for (a, b), tag in zip(mesh.edges.tolist(), mesh.edge_tags):
        cedge[(min(a, b), max(a, b))] = (tag, [])
    for a, b in mesh.boundary_edges().tolist():
        cedge.setdefault((min(a, b), max(a, b)), ("", []))
    vce = defaultdict(set)
    for a, b in cedge:
        vce[a].add((a, b))
        vce[b].add((a, b))
    alive = np.ones(n0, dtype=bool)

    def neighbors(a):
        return {x for k in vt[a] for x in tris[k]} - {a}

    def tri_ok(p):
        d1, d2 = p[1] - p[0], p[2] - p[0]
        area = 0.5 * (d1[0] * d2[1] - d1[1] * d2[0])
        L = [np.hypot(*(p[1] - p[2])), np.hypot(*(p[2] - p[0])), np.hypot(*d1)]
        return area > 1e-12 * max(L) ** 2 and min(L) / max(L) >= min_ratio

    def try_collapse(b, a):
        """Move b onto a; returns True on success."""
        key = (min(a, b), max(a, b))
        shared = vt[a] & vt[b]
        if not shared:
            return False
        opp = {x for k in shared for x in tris[k]} - {a, b}
        if neighbors(a) & neighbors(b) != opp:
            return False
        new_ce = None
        if vce[b]:
            if key not in cedge or len(vce[b]) != 2:
                return False
            other = next(e for e in vce[b] if e != key)
            tag_ab, sh_ab = cedge[key]
            tag_bc, sh_bc = cedge[other]
            if tag_ab != tag_bc:
                return False
            c = other[0] if other[1] == b else other[1]
            if c == a or (min(a, c), max(a, c)) in cedge:
                return False
            shadow = sh_ab + sh_bc + [v[b].copy()]
            pa, pc = v[a], v[c]
            d = pc - pa
            for q in shadow:
                s = np.clip((q - pa) @ d / (d @ d), 0, 1)
                if np.hypot(*(pa + s * d - q)) > tol:
                    return False
            new_ce = (other, (min(a, c), max(a, c)), tag_ab, shadow)
        elif vce[a] and len(shared) < 2:
            return False
        for k in vt[b] - shared:
            p = np.array([v[a] if x == b else v[x] for x in tris[k]])
            if not tri_ok(p):
                return False
        # commit
        for k in shared:
            for x in tris[k]:
                vt[x].discard(k)
            del tris[k]
            del region[k]
        for k in list(vt[b]):
            tris[k] = [a if x == b else x for x in tris[k]]
            vt[a].add(k)
        vt[b].clear()
        if new_ce is not None:
            other, ac, tag, shadow = new_ce
            for e in (key, other):
                del cedge[e]
                for x in e:
                    vce[x].discard(e)
            cedge[ac] = (tag, shadow)
            vce[ac[0]].add(ac)
            vce[ac[1]].add(ac)
        alive[b] = False
        return True

    progress = True
    while alive.sum() > target and progress:
        progress = False
        edges = {tuple(sorted((tri[i], tri[(i + 1) % 3]))) for tri in tris.values() for i in range(3)}
        edges = sorted(edges, key=lambda e: (np.hypot(*(v[e[0]] - v[e[1]])), e))
        for a, b in edges:
            if alive.sum() <= target:
                break
            if not (alive[a] and alive[b]) or not (vt[a] & vt[b]):
                continue
            if try_collapse(b, a) or try_collapse(a, b):
                progress = True

    keep = np.nonzero(alive)[0]
    remap = -np.ones(n0, dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    order = sorted(tris)
    new_t = remap[np.array([tris[k] for k in order])]
    new_regions = [region[k] for k in order]
    ce = sorted(cedge.items())
    new_e = remap[np.array([e for e, _ in ce], dtype=np.int64).reshape(-1, 2)]
    new_tags = [tag for _, (tag, _) in ce]
    if alive.sum() > target:
        log.info("coarsen stopped at %d vertices (target %d)", alive.sum(), target)
    return TriMesh(v[keep], new_t, new_e, new_tags, new_regions, mesh.curves)


# --------------------------------------------------------------------------
# Deformation

def boundary_displacements(mesh: TriMesh, field, s: float = 1.0, tol: float = 1e-6,
                           fixed_labels=()) -> tuple[np.ndarray, np.ndarray]:
    """Displacement of each boundary vertex taken from a sampled boundary field.

    Vertices coinciding with a field source (within ``tol`` relative to the
    field's extent) take its vector; vertices lying on the polyline through
    the sources get linearly interpolated vectors. Vertices on curves listed
    in ``fixed_labels`` stay put. Anything else is an error.
    """
    bv = mesh.boundary_vertices()
    src = np.asarray(field.sources, dtype=float)
    vec = np.asarray(field.vectors, dtype=float)
    scale = max(np.ptp(src, axis=0).max(), 1e-300)
    atol = tol * scale
    tags = mesh.vertex_boundary_tag()
    closed = bool(getattr(field, "closed", True))
    a = src
    b = np.roll(src, -1, axis=0) if closed else src[1:]
    va = vec
    vb = np.roll(vec, -1, axis=0) if closed else vec[1:]
    if not closed:
        a, va = a[:-1], va[:-1]
    d = b - a
    dd = np.maximum((d * d).sum(1), 1e-300)
    out = np.zeros((len(bv), 2))
    for k, i in enumerate(bv):
        p = mesh.vertices[i]
        dist = np.hypot(*(src - p).T)
        j = int(np.argmin(dist))
        if dist[j] <= atol:
            out[k] = vec[j]
            continue
        sp = np.clip(((p - a) * d).sum(1) / dd, 0, 1)
        q = a + sp[:, None] * d
        dq = np.hypot(*(q - p).T)
        j = int(np.argmin(dq))
        if dq[j] <= atol:
            out[k] = va[j] + sp[j] * (vb[j] - va[j])
        elif tags[i] in fixed_labels:
            out[k] = 0.0
        else:
            raise MeshError(f"boundary vertex {i} at {p} is not covered by the displacement field")
    return bv, s * out


def harmonic_extension(mesh: TriMesh, vertex_ids, values) -> np.ndarray:
    """Discrete harmonic extension of vertex data prescribed at ``vertex_ids``."""
    from scipy.sparse.linalg import splu

    from .fem.assembly import stiffness_matrix

    K = stiffness_matrix(mesh.vertices, mesh.triangles).tocsr()
    n = mesh.n_vertices
    values = np.asarray(values, dtype=float)
    out = np.zeros((n,) + values.shape[1:])
    fixed = np.zeros(n, dtype=bool)
    fixed[vertex_ids] = True
    out[vertex_ids] = values
    free = ~fixed
    if free.any():
        A = K[free][:, free].tocsc()
        rhs = -K[free][:, fixed] @ out[fixed]
        out[free] = splu(A).solve(np.asarray(rhs))
    return out


def deform(mesh: TriMesh, boundary_field, s: float = 1.0, fixed_labels=(), tol: float = 1e-6) -> TriMesh:
    """Move boundary vertices by ``s`` times the field and extend harmonically inside.

    Connectivity is unchanged. Raises :class:`MeshInversionError` when any
    triangle ends up with non-positive area.
    """
    if not 0.0 <= s <= 1.0:
        raise MeshError(f"s must lie in [0, 1], got {s}")
    if s == 0.0:
        return mesh
    bv, disp = boundary_displacements(mesh, boundary_field, s, tol, fixed_labels)
    d = harmonic_extension(mesh, bv, disp)
    moved = mesh.with_vertices(mesh.vertices + d)
    n_inv = int((moved.signed_areas() <= 0).sum())
    if n_inv:
        raise MeshInversionError(
            f"{n_inv} triangles inverted by the deformation; remesh or use a smaller step s")
    return moved


# --------------------------------------------------------------------------
# Gmsh MSH 2.2 ASCII

def write_msh(mesh: TriMesh, path) -> None:
    """Write nodes, tagged line elements and triangles; physical names carry labels."""
    line_names = sorted(set(mesh.edge_tags))
    region_names = sorted(set(mesh.triangle_region_tag))
    phys = {}
    lines = ["$MeshFormat", "2.2 0 8", "$EndMeshFormat", "$PhysicalNames", str(len(line_names) + len(region_names))]
    tag = 1
    for nm in line_names:
        phys[(1, nm)] = tag
        lines.append(f'1 {tag} "{nm}"')
        tag += 1
    for nm in region_names:
        phys[(2, nm)] = tag
        lines.append(f'2 {tag} "{nm}"')
        tag += 1
    lines += ["$EndPhysicalNames", "$Nodes", str(mesh.n_vertices)]
    lines += [f"{i + 1} {x!r} {y!r} 0" for i, (x, y) in enumerate(mesh.vertices.tolist())]
    lines += ["$EndNodes", "$Elements", str(len(mesh.edges) + len(mesh.triangles))]
    k = 1
    for (a, b), nm in zip(mesh.edges.tolist(), mesh.edge_tags):
        p = phys[(1, nm)]
        lines.append(f"{k} 1 2 {p} {p} {a + 1} {b + 1}")
        k += 1
    for (a, b, c), nm in zip(mesh.triangles.tolist(), mesh.triangle_region_tag):
        p = phys[(2, nm)]
        lines.append(f"{k} 2 2 {p} {p} {a + 1} {b + 1} {c + 1}")
        k += 1
    lines.append("$EndElements")
    Path(path).write_text("\n".join(lines) + "\n")


def read_msh(path) -> TriMesh:
    """Read a 2D MSH 2.2 ASCII file (line and triangle elements only)."""
    text = Path(path).read_text().split("\n")
    names, nodes, node_ids = {}, [], {}
    edges, etags, tris, rtags = [], [], [], []
    i = 0
    while i < len(text):
        line = text[i].strip()
        if line == "$MeshFormat":
            ver = text[i + 1].split()
            if not ver or not ver[0].startswith("2"):
                raise MeshError(f"{path}: unsupported MSH version {ver[:1]}")
            if len(ver) > 1 and ver[1] != "0":
                raise MeshError(f"{path}: only ASCII MSH is supported")
            i += 2
        elif line == "$PhysicalNames":
            n = int(text[i + 1])
            for j in range(n):
                dim, tag, nm = text[i + 2 + j].split(maxsplit=2)
                names[int(tag)] = nm.strip().strip('"')
            i += n + 2
        elif line == "$Nodes":
            n = int(text[i + 1])
            for j in range(n):
                parts = text[i + 2 + j].split()
                node_ids[int(parts[0])] = j
                nodes.append((float(parts[1]), float(parts[2])))
            i += n + 2
        elif line == "$Elements":
            n = int(text[i + 1])
            for j in range(n):
                parts = [int(x) for x in text[i + 2 + j].split()]
                etype, ntags = parts[1], parts[2]
                phys = parts[3] if ntags else 0
                conn = [node_ids[x] for x in parts[3 + ntags:]]
                label = names.get(phys, str(phys))
                if etype == 1:
                    edges.append(conn)
                    etags.append(label)
                elif etype == 2:
                    tris.append(conn)
                    rtags.append(label)
            i += n + 2
        else:
            i += 1
    if not tris:
        raise MeshError(f"{path}: no triangle elements")
    v = np.array(nodes)
    return TriMesh(v, _orient(v, tris), np.array(edges, dtype=np.int64).reshape(-1, 2), etags, rtags)
