"""Displacement fields sampled on a boundary, their quality measures and file format."""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..geometry import Curve, candidate_pairs, segments_intersect

METHODS = ("minimal_distance", "uniform", "normal", "reverse_normal", "diffusion",
           "reverse_diffusion", "tps")


class MappingError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Vectors attached to points on the stage-t boundary.

    ``sources + vectors`` are the matching points at stage t + dt; the
    boundary velocity used for growth is ``vectors / dt``.
    """

    sources: np.ndarray
    vectors: np.ndarray
    t: float = 0.0
    dt: float = 1.0
    method: str = "uniform"
    closed: bool = True
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        src = np.array(self.sources, dtype=float).reshape(-1, 2)
        vec = np.array(self.vectors, dtype=float).reshape(-1, 2)
        if len(src) != len(vec):
            raise MappingError(f"{len(src)} sources but {len(vec)} vectors")
        if len(src) < 2:
            raise MappingError("a displacement field needs at least two samples")
        if self.method not in METHODS:
            raise MappingError(f"unknown mapping method {self.method!r}")
        if not self.dt > 0:
            raise MappingError("dt must be positive")
        src.setflags(write=False)
        vec.setflags(write=False)
        object.__setattr__(self, "sources", src)
        object.__setattr__(self, "vectors", vec)

    def __len__(self):
        return len(self.sources)

    @property
    def targets(self) -> np.ndarray:
        return self.sources + self.vectors

    @property
    def velocity(self) -> np.ndarray:
        return self.vectors / self.dt


@dataclass(frozen=True)
class FieldQuality:
    crossing_count: int
    unmapped_fraction: float
    max_stretch: float

    def to_dict(self) -> dict:
        return {"crossing_count": self.crossing_count, "unmapped_fraction": self.unmapped_fraction,
                "max_stretch": self.max_stretch}


def crossing_pairs(field: DisplacementField) -> list[tuple[int, int]]:
    """Index pairs of displacement segments that meet (touching included)."""
    a, b = field.sources, field.targets
    out = []
    for i, j in candidate_pairs(a, b, a, b):
        if i < j and segments_intersect(a[i], b[i], a[j], b[j]):
            out.append((int(i), int(j)))
    return out


def crossing_count(field: DisplacementField) -> int:
    return len(crossing_pairs(field))


def covered_intervals(a, b, centers, eps):
    """Parameter intervals of segment ab lying within ``eps`` of any centre."""
    d = b - a
    L2 = d @ d
    f = a[None] - centers
    B = 2 * f @ d
    C = (f * f).sum(1) - eps * eps
    disc = B * B - 4 * L2 * C
    ok = disc >= 0
    if L2 == 0:
        return [(0.0, 1.0)] if np.any(C <= 0) else []
    sq = np.sqrt(np.where(ok, disc, 0))
    lo = np.clip((-B - sq) / (2 * L2), 0, 1)
    hi = np.clip((-B + sq) / (2 * L2), 0, 1)
    keep = ok & (hi > lo)
    return sorted(zip(lo[keep].tolist(), hi[keep].tolist()))


def unmapped_fraction(curve: Curve, endpoints, eps: float) -> float:
    """Fraction of the curve's arc length farther than ``eps`` from every endpoint."""
    a, b = curve.segments
    endpoints = np.asarray(endpoints, dtype=float)
    total = 0.0
    missed = 0.0
    for p, q in zip(a, b):
        L = float(np.hypot(*(q - p)))
        total += L
        near = endpoints[np.hypot(*(endpoints - 0.5 * (p + q)).T) <= eps + 0.5 * L]
        covered = 0.0
        end = 0.0
        for lo, hi in covered_intervals(p, q, near, eps):
            lo = max(lo, end)
            if hi > lo:
                covered += hi - lo
                end = hi
        missed += (1.0 - covered) * L
    return float(min(max(missed / total, 0.0), 1.0))


def max_stretch(field: DisplacementField) -> float:
    src, dst = field.sources, field.targets
    if field.closed:
        ds = np.hypot(*(np.roll(src, -1, axis=0) - src).T)
        dd = np.hypot(*(np.roll(dst, -1, axis=0) - dst).T)
    else:
        ds = np.hypot(*np.diff(src, axis=0).T)
        dd = np.hypot(*np.diff(dst, axis=0).T)
    ok = ds > 1e-12
    return float((dd[ok] / ds[ok]).max()) if ok.any() else 0.0


def field_quality(field: DisplacementField, c2: Curve, eps: float | None = None) -> FieldQuality:
    """Crossings, uncovered share of ``c2`` and worst local stretching of a field.

    ``eps`` defaults to the mean spacing of ``len(field)`` points on ``c2``.
    """
    if eps is None:
        eps = c2.length / len(field)
    return FieldQuality(crossing_count(field), unmapped_fraction(c2, field.targets, eps), max_stretch(field))


# --------------------------------------------------------------------------
# CSV x,y,dx,dy + JSON descriptor

def write_field(field: DisplacementField, path) -> None:
    path = Path(path)
    data = np.column_stack([field.sources, field.vectors])
    np.savetxt(path, data, delimiter=",", header="x,y,dx,dy", comments="", fmt="%.17g")
    desc = {"t": field.t, "dt": field.dt, "method": field.method, "closed": field.closed}
    path.with_suffix(".json").write_text(json.dumps(desc, indent=2) + "\n")


def read_field(path) -> DisplacementField:
    path = Path(path)
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    side = path.with_suffix(".json")
    desc = json.loads(side.read_text()) if side.exists() else {}
    return DisplacementField(data[:, :2], data[:, 2:4], float(desc.get("t", 0.0)), float(desc.get("dt", 1.0)),
                             desc.get("method", "uniform"), bool(desc.get("closed", True)))
