"""Boundary-to-boundary mapping methods.

All methods expect curves that went through the pre-processing of
:mod:`morphokit.mapping.pipeline` (equal point counts, same direction),
except where noted.
"""
from __future__ import annotations

import logging

import numpy as np

from ..geometry import Curve, candidate_pairs, resample_equidistant, segments_intersect, signed_area
from .field import DisplacementField, MappingError

log = logging.getLogger(__name__)

#: Share of normal rays allowed to miss the target before giving up.
MAX_MISSING = 0.2


def nearest_on_polyline(points, curve: Curve, chunk: int = 512):
    """Closest point on the curve polyline for each query point, plus segment index."""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    a, b = curve.segments
    d = b - a
    dd = np.maximum((d * d).sum(1), 1e-300)
    out = np.empty_like(points)
    seg = np.empty(len(points), dtype=int)
    for s in range(0, len(points), chunk):
        p = points[s:s + chunk]
        t = np.clip(((p[:, None] - a[None]) * d[None]).sum(-1) / dd[None], 0, 1)
        q = a[None] + t[..., None] * d[None]
        dist = ((q - p[:, None]) ** 2).sum(-1)
        k = np.argmin(dist, axis=1)
        out[s:s + chunk] = q[np.arange(len(p)), k]
        seg[s:s + chunk] = k
    return out, seg


def vertex_normals(curve: Curve) -> np.ndarray:
    """Unit normals at vertices, bisecting the adjacent segment normals.

    For counter-clockwise closed curves they point outward; open curves get
    the right-hand normal of their direction of travel.
    """
    p = curve.points
    if curve.closed:
        d_next = np.roll(p, -1, axis=0) - p
        d_prev = p - np.roll(p, 1, axis=0)
    else:
        d = np.diff(p, axis=0)
        d_next = np.vstack([d, d[-1:]])
        d_prev = np.vstack([d[:1], d])
    t1 = d_prev / np.hypot(*d_prev.T)[:, None]
    t2 = d_next / np.hypot(*d_next.T)[:, None]
    n = np.column_stack([t1[:, 1] + t2[:, 1], -(t1[:, 0] + t2[:, 0])])
    norm = np.hypot(*n.T)
    # hairpin turns: fall back to the incoming segment normal
    flat = norm < 1e-12
    n[flat] = np.column_stack([t1[flat, 1], -t1[flat, 0]])
    norm[flat] = 1.0
    return n / norm[:, None]


def ray_hits(origins, directions, curve: Curve, tol: float = 1e-9):
    """Nearest intersection of each line ``o + tau * d`` with the polyline.

    The nearest hit with ``tau >= 0`` wins; without one the nearest hit with
    ``tau < 0`` is used. Returns hit points and a found mask.
    """
    a, b = curve.segments
    e = b - a
    scale = max(np.ptp(curve.points, axis=0).max(), 1e-300)
    hits = np.full((len(origins), 2), np.nan)
    found = np.zeros(len(origins), dtype=bool)
    for k, (o, d) in enumerate(zip(origins, directions)):
        denom = d[0] * e[:, 1] - d[1] * e[:, 0]
        w = a - o
        with np.errstate(divide="ignore", invalid="ignore"):
            tau = (w[:, 0] * e[:, 1] - w[:, 1] * e[:, 0]) / denom
            sig = (w[:, 0] * d[1] - w[:, 1] * d[0]) / denom
        ok = (np.abs(denom) > 1e-15) & (sig >= -tol) & (sig <= 1 + tol)
        if not ok.any():
            continue
        tau = tau[ok]
        pos = tau >= -tol * scale
        if pos.any():
            t = tau[pos].min()
        else:
            t = tau.max()
        hits[k] = o + max(t, 0.0) * d if pos.any() else o + t * d
        found[k] = True
    return hits, found


def map_minimal_distance(c1: Curve, c2: Curve, t: float = 0.0, dt: float = 1.0) -> DisplacementField:
    """Send every point of ``c1`` to the closest point of the ``c2`` polyline."""
    q, _ = nearest_on_polyline(c1.points, c2)
    return DisplacementField(c1.points, q - c1.points, t, dt, "minimal_distance", c1.closed)


def best_cyclic_offset(p: np.ndarray, q: np.ndarray) -> int:
    """Shift k minimizing sum |q[(i + k) % n] - p[i]|^2 (via FFT cross-correlation)."""
    # sum |q_{i+k} - p_i|^2 = const - 2 sum p_i . q_{i+k}
    corr = np.zeros(len(p))
    for dim in range(2):
        corr += np.real(np.fft.ifft(np.conj(np.fft.fft(p[:, dim])) * np.fft.fft(q[:, dim])))
    return int(np.argmax(np.round(corr, 12)))


def map_uniform(c1: Curve, c2: Curve, n: int | None = None, t: float = 0.0, dt: float = 1.0) -> DisplacementField:
    """Pair the i-th of ``n`` equidistant points on ``c1`` with the i-th on ``c2``.

    Closed curves are paired after the cyclic shift with the least total
    squared displacement. With ``n=None`` both curves must already have the
    same number of points and are used as they are.
    """
    if c1.closed != c2.closed:
        raise MappingError("uniform mapping needs both curves open or both closed")
    if n is not None:
        c1, c2 = resample_equidistant(c1, n), resample_equidistant(c2, n)
    elif len(c1) != len(c2):
        raise MappingError(f"point counts differ ({len(c1)} vs {len(c2)}); pass n to resample")
    p, q = c1.points, c2.points
    offset = 0
    if c1.closed:
        offset = best_cyclic_offset(p, q)
        q = np.roll(q, -offset, axis=0)
    f = DisplacementField(p, q - p, t, dt, "uniform", c1.closed, {"offset": offset})
    return f


def map_normal(c1: Curve, c2: Curve, reverse: bool = False, t: float = 0.0, dt: float = 1.0,
               max_missing: float = MAX_MISSING) -> DisplacementField:
    """Follow vertex normals of the start curve to the other curve.

    Forward: normals of ``c1`` hit ``c2``. Reverse: normals of ``c2`` hit
    ``c1`` and the pairs are flipped, so the field still maps ``c1`` onto
    ``c2`` and its targets are the ``c2`` points.
    """
    start, end = (c2, c1) if reverse else (c1, c2)
    normals = vertex_normals(start)
    hits, found = ray_hits(start.points, normals, end)
    missing = int((~found).sum())
    if missing > max_missing * len(found):
        raise MappingError(
            f"{missing} of {len(found)} normal rays miss the target curve; use diffusion mapping")
    if missing:
        log.info("%d normal rays missed the target curve", missing)
    src, hit = start.points[found], hits[found]
    info = {"n_missing": missing}
    if reverse:
        return DisplacementField(hit, src - hit, t, dt, "reverse_normal", c1.closed, info)
    return DisplacementField(src, hit - src, t, dt, "normal", c1.closed, info)


# --------------------------------------------------------------------------
# Diffusion mapping

def _inside(points, curve: Curve) -> np.ndarray:
    from ..mesh import point_in_polygon

    return point_in_polygon(points, curve.points)


def _curves_cross(c1: Curve, c2: Curve) -> bool:
    a, b = c1.segments
    c, d = c2.segments
    return any(segments_intersect(a[i], b[i], c[j], d[j]) for i, j in candidate_pairs(a, b, c, d))


def _ccw(c: Curve) -> Curve:
    return c if signed_area(c) > 0 else c.reversed()


class _Tracer:
    """Streamlines of -grad(c) for a P1 field with recovered nodal gradients.

    Points are located by walking from element to element; all streamlines
    advance together with adaptive RK4 steps (step doubling error control).
    """

    def __init__(self, mesh, c):
        from ..fem.assembly import shape_gradients

        self.v = mesh.vertices
        self.t = mesh.triangles
        g, area = shape_gradients(self.v, self.t)
        grad_e = np.einsum("ti,tid->td", c[self.t], g)
        acc = np.zeros((len(self.v), 2))
        w = np.zeros(len(self.v))
        for k in range(3):
            np.add.at(acc, self.t[:, k], grad_e * area[:, None])
            np.add.at(w, self.t[:, k], area)
        self.grad = acc / w[:, None]
        self.nbr = self._neighbors()
        p = self.v[self.t]
        self.h = float(np.sqrt(2 * area.mean()))
        self.centroids = p.mean(axis=1)
        # inverse of [p1 - p0, p2 - p0] per element: (l1, l2) = inv @ (x - p0)
        self.p0 = p[:, 0]
        self.inv = np.linalg.inv(np.stack([p[:, 1] - p[:, 0], p[:, 2] - p[:, 0]], axis=-1))

    def _neighbors(self):
        t = self.t
        nt = len(t)
        # edge opposite local vertex i joins vertices i+1 and i+2
        a = t[:, [1, 2, 0]].ravel()
        b = t[:, [2, 0, 1]].ravel()
        key = np.minimum(a, b) * len(self.v) + np.maximum(a, b)
        order = np.argsort(key, kind="stable")
        ks = key[order]
        pair = np.nonzero(ks[1:] == ks[:-1])[0]
        i, j = order[pair], order[pair + 1]
        nbr = -np.ones(3 * nt, dtype=np.int64)
        nbr[i] = j // 3
        nbr[j] = i // 3
        return nbr.reshape(nt, 3)

    def bary(self, elem, pts):
        l12 = np.einsum("nij,nj->ni", self.inv[elem], pts - self.p0[elem])
        lam = np.empty((len(pts), 3))
        lam[:, 0] = 1 - l12.sum(axis=1)
        lam[:, 1:] = l12
        return lam

    def locate(self, pts, elem, with_bary=False):
        elem = elem.copy()
        bary = np.empty((len(pts), 3))
        active = np.ones(len(pts), dtype=bool)
        for _ in range(4 * int(np.sqrt(len(self.t))) + 10):
            if not active.any():
                break
            idx = np.nonzero(active)[0]
            lam = self.bary(elem[idx], pts[idx])
            worst = np.argmin(lam, axis=1)
            inside = lam[np.arange(len(idx)), worst] >= -1e-12
            bary[idx] = lam
            active[idx[inside]] = False
            out = idx[~inside]
            nxt = self.nbr[elem[out], worst[~inside]]
            stuck = nxt < 0
            active[out[stuck]] = False  # outside the mesh: keep the boundary element
            elem[out[~stuck]] = nxt[~stuck]
        if active.any():
            # cycling walk; brute-force nearest centroid
            idx = np.nonzero(active)[0]
            d = ((pts[idx, None] - self.centroids[None]) ** 2).sum(-1)
            elem[idx] = np.argmin(d, axis=1)
            bary[idx] = self.bary(elem[idx], pts[idx])
        return (elem, bary) if with_bary else elem

    def direction(self, pts, elem):
        elem, lam = self.locate(pts, elem, with_bary=True)
        lam = np.clip(lam, 0, None)
        lam /= lam.sum(1, keepdims=True)
        g = np.einsum("ni,nid->nd", lam, self.grad[self.t[elem]])
        n = np.hypot(*g.T)
        return -g / np.maximum(n, 1e-300)[:, None], n, elem

    def trace(self, seeds, target: Curve, max_steps: int = 20000, rtol: float = 1e-3):
        """Follow unit-speed streamlines until they cross ``target``; returns end points."""
        n = len(seeds)
        pos = np.array(seeds, dtype=float)
        elem = self.locate(pos, np.argmin(((pos[:, None] - self.centroids[None]) ** 2).sum(-1), axis=1))
        step = np.full(n, 0.25 * self.h)
        done = np.zeros(n, dtype=bool)
        ends = np.full((n, 2), np.nan)
        a, b = target.segments
        tol = rtol * self.h

        def rk4(p, h, e, k1=None):
            if k1 is None:
                k1, _, e = self.direction(p, e)
            k2, _, _ = self.direction(p + 0.5 * h[:, None] * k1, e)
            k3, _, _ = self.direction(p + 0.5 * h[:, None] * k2, e)
            k4, _, _ = self.direction(p + h[:, None] * k3, e)
            return p + h[:, None] / 6 * (k1 + 2 * k2 + 2 * k3 + k4)

        for it in range(max_steps):
            idx = np.nonzero(~done)[0]
            if len(idx) == 0:
                break
            p, h, e = pos[idx], step[idx], elem[idx]
            k1, gnorm, e = self.direction(p, e)
            elem[idx] = e
            if np.any(gnorm < 1e-14):
                bad = idx[int(np.argmax(gnorm < 1e-14))]
                raise MappingError(f"streamline from seed {bad} stagnated (vanishing gradient)")
            full = rk4(p, h, e, k1)
            half = rk4(rk4(p, 0.5 * h, e, k1), 0.5 * h, e)
            err = np.hypot(*(full - half).T)
            accept = err <= tol
            # grow/shrink step sizes
            fac = np.clip(0.9 * (tol / np.maximum(err, 1e-300)) ** 0.2, 0.2, 2.0)
            new_h = np.minimum(h * fac, self.h)
            step[idx] = new_h
            acc = idx[accept]
            newp = half[accept]
            oldp = pos[acc]
            moved = np.hypot(*(newp - oldp).T)
            if np.any(moved < 1e-12):
                bad = acc[int(np.argmax(moved < 1e-12))]
                raise MappingError(f"streamline from seed {bad} stagnated (step below 1e-12)")
            hit, found = _first_crossings(oldp, newp, a, b)
            ends[acc[found]] = hit[found]
            done[acc[found]] = True
            keep = ~done[acc]
            pos[acc[keep]] = newp[keep]
        if not done.all():
            raise MappingError(f"{int((~done).sum())} streamlines did not reach the target curve")
        return ends


def _first_crossings(p0, p1, a, b):
    """First point where each step p0[k] -> p1[k] meets the polyline segments a -> b."""
    d = (p1 - p0)[:, None, :]
    e = (b - a)[None]
    denom = d[..., 0] * e[..., 1] - d[..., 1] * e[..., 0]
    w = a[None] - p0[:, None, :]
    with np.errstate(divide="ignore", invalid="ignore"):
        tau = (w[..., 0] * e[..., 1] - w[..., 1] * e[..., 0]) / denom
        sig = (w[..., 0] * d[..., 1] - w[..., 1] * d[..., 0]) / denom
    ok = (np.abs(denom) > 0) & (tau >= 0) & (tau <= 1) & (sig >= 0) & (sig <= 1)
    found = ok.any(axis=1)
    k = np.argmin(np.where(ok, tau, np.inf), axis=1)
    rows = np.arange(len(p0))
    hit = a[k] + sig[rows, k][:, None] * (b - a)[k]
    return hit, found


def map_diffusion(c1: Curve, c2: Curve, reverse: bool = False, n_stream: int | None = None,
                  mesh_h: float | None = None, t: float = 0.0, dt: float = 1.0) -> DisplacementField:
    """Map along streamlines of the harmonic function that is 1 on the start curve and 0 on the other.

    One curve must lie strictly inside the other. ``n_stream`` seeds are
    placed equidistantly on the start curve (``c1``, or ``c2`` with
    ``reverse``); reverse results are flipped to map ``c1`` onto ``c2``.
    """
    from ..fem.solver import BoundaryCondition, Dirichlet, solve_laplace
    from ..mesh import triangulate

    if not (c1.closed and c2.closed):
        raise MappingError("diffusion mapping needs two closed curves")
    if _curves_cross(c1, c2):
        raise MappingError("curves intersect; split them with split_at_intersection first")
    if _inside(c1.points, c2).all():
        inner, outer = c1, c2
    elif _inside(c2.points, c1).all():
        inner, outer = c2, c1
    else:
        raise MappingError("diffusion mapping needs one curve strictly inside the other")
    start, end = (c2, c1) if reverse else (c1, c2)
    n_stream = n_stream or len(start)
    if mesh_h is None:
        mesh_h = min(start.length / n_stream, end.length / len(end))
    outer_c = Curve(_ccw(outer).points, True, "outer")
    inner_c = Curve(_ccw(inner).points[::-1], True, "inner")
    mesh = triangulate(outer_c, [inner_c], target_h=mesh_h)
    start_label = "inner" if start is inner else "outer"
    end_label = "outer" if start_label == "inner" else "inner"
    sol = solve_laplace(mesh, BoundaryCondition({start_label: Dirichlet(1.0), end_label: Dirichlet(0.0)}))
    seeds = resample_equidistant(start, n_stream).points if n_stream != len(start) else start.points
    ends = _Tracer(mesh, sol.c[0]).trace(seeds, end)
    info = {"mesh_vertices": mesh.n_vertices, "mesh_h": mesh_h}
    if reverse:
        return DisplacementField(ends, seeds - ends, t, dt, "reverse_diffusion", True, info)
    return DisplacementField(seeds, ends - seeds, t, dt, "diffusion", True, info)
