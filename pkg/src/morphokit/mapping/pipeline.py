"""Pre-processing plus method selection for curve-to-curve mapping."""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

from ..geometry import Curve, normalize_direction, resample_equidistant, similarity_prescale
from .field import DisplacementField, FieldQuality, MappingError, field_quality
from .methods import map_diffusion, map_minimal_distance, map_normal, map_uniform

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class MappingConfig:
    method: str = "auto"
    n: int = 128
    prescale: bool = False
    align_centroids: bool = False
    eps: float | None = None
    mesh_h: float | None = None
    n_stream: int | None = None
    t: float = 0.0
    dt: float = 1.0
    # auto mode: try reverse diffusion after forward diffusion fails
    allow_reverse_diffusion: bool = True

    @classmethod
    def from_dict(cls, d: dict) -> "MappingConfig":
        known = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        return cls(**known)


def _run(method, a, b, cfg):
    if method == "minimal_distance":
        return map_minimal_distance(a, b, cfg.t, cfg.dt)
    if method == "uniform":
        return map_uniform(a, b, None, cfg.t, cfg.dt)
    if method in ("normal", "reverse_normal"):
        return map_normal(a, b, method == "reverse_normal", cfg.t, cfg.dt)
    if method in ("diffusion", "reverse_diffusion"):
        return map_diffusion(a, b, method == "reverse_diffusion", cfg.n_stream, cfg.mesh_h, cfg.t, cfg.dt)
    raise MappingError(f"unknown mapping method {method!r}")


def run_mapping_pipeline(c1: Curve, c2: Curve, config: MappingConfig | None = None
                         ) -> tuple[DisplacementField, FieldQuality]:
    """Pre-process, map and score.

    Steps: optional prescale of ``c1`` toward ``c2``; resampling both curves
    to ``config.n`` equidistant points; direction normalization; mapping.
    In ``auto`` mode open curves use uniform mapping and closed curves try
    normal, reverse normal and diffusion mapping in turn until a field
    without crossings is found. Sources are mapped back onto the original
    ``c1`` when prescaling was used.
    """
    cfg = config or MappingConfig()
    if c1.closed != c2.closed:
        raise MappingError("cannot map an open curve onto a closed one")
    tf = None
    work1 = c1
    if cfg.prescale:
        work1, tf = similarity_prescale(c1, c2, cfg.align_centroids)
    a = resample_equidistant(work1, cfg.n)
    b = resample_equidistant(c2, cfg.n)
    a, b = normalize_direction(a, b)

    if cfg.method != "auto":
        candidates = [cfg.method]
    elif not c1.closed:
        candidates = ["uniform"]
    else:
        candidates = ["normal", "reverse_normal", "diffusion"]
        if cfg.allow_reverse_diffusion:
            candidates.append("reverse_diffusion")

    field = quality = None
    tried = []
    for method in candidates:
        try:
            f = _run(method, a, b, cfg)
        except MappingError as exc:
            if len(candidates) == 1:
                raise
            log.info("%s mapping failed: %s", method, exc)
            tried.append(f"{method}: {exc}")
            continue
        if tf is not None:
            src = tf.inverse(f.sources)
            f = replace(f, sources=src, vectors=f.targets - src)
        q = field_quality(f, c2, cfg.eps)
        tried.append(f"{method}: {q.crossing_count} crossings")
        if field is None or q.crossing_count < quality.crossing_count:
            field, quality = f, q
        if q.crossing_count == 0:
            break
    if field is None:
        raise MappingError("no mapping method succeeded: " + "; ".join(tried))
    field.info["tried"] = tried
    return field, quality
