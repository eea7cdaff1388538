"""Synthetic inputs shipped with the package: a growing bud imaged at three
stages, offset circles and a kidney inside a circle.

``write_all(root)`` regenerates the files under ``root``; the generators
are deterministic so the shipped copies can be rebuilt bit for bit.
"""
from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from .geometry import Curve, write_curve
from .ingest import GrayImage, save_image
from .mesh import point_in_polygon
from .shapes import bud, circle, kidney

BUD_TIMES = (0.0, 10.0, 20.0)
BUD_SHAPE_T = (0.0, 0.5, 1.0)
BUD_SCALE_UM = 25.0      # bud() units -> um
PIXEL_SIZE_UM = 1.0
IMAGE_SIZE = 144


def bud_image(t: float, size: int = IMAGE_SIZE, seed: int = 0) -> GrayImage:
    """Bright bud on a dark background with mild deterministic noise."""
    c = bud(t, 512)
    center = np.array([size / 2, size / 2]) * PIXEL_SIZE_UM
    poly = c.points * BUD_SCALE_UM + center
    rows, cols = np.mgrid[0:size, 0:size]
    pts = np.column_stack([cols.ravel(), rows.ravel()]) * PIXEL_SIZE_UM
    inside = point_in_polygon(pts, poly).reshape(size, size)
    rng = np.random.default_rng(seed)
    px = np.where(inside, 180.0, 40.0) + rng.normal(0.0, 8.0, (size, size))
    return GrayImage(np.clip(np.rint(px), 0, 255).astype(np.uint16), PIXEL_SIZE_UM)


def growing_bud_config() -> dict:
    return {
        "seed": 7,
        "output": "out",
        "stages": [{"image": f"stage_{k}.pgm", "time": t} for k, t in enumerate(BUD_TIMES)],
        "segment": {"thresholds": [[110, 255]], "smoothing_radius": 1.0, "n_points": 160, "label": "epithelium"},
        "map": {"method": "auto", "n": 160},
        "mesh": {"target_h": 2.5},
        "simulate": {
            "model": {"kinetics": "schnakenberg", "params": {"a": 0.1, "b": 0.9, "gamma": 1.0, "Du": 1.0, "Dv": 20.0}},
            "bc": {},
            "initial": {"values": "steady", "noise": 0.01},
            "t_end": 60.0,
            "dt": 0.25,
            "stride": 40,
            "growth_tol": 1e-3,
        },
    }


def write_growing_bud(directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for k, t in enumerate(BUD_SHAPE_T):
        save_image(bud_image(t, seed=k), d / f"stage_{k}.pgm")
    path = d / "run.json"
    path.write_text(json.dumps(growing_bud_config(), indent=2) + "\n")
    return path


def offset_circles(n: int = 256) -> tuple[Curve, Curve]:
    """Small circle at the origin and a larger circle shifted to the right.

    Without prescaling, normal rays from the small circle miss the far side
    of the large one; a similarity prescale evens out the coverage.
    """
    return circle(1.0, n, label="stage_t"), circle(2.2, n, center=(0.9, 0.3), label="stage_t_dt")


def kidney_in_circle(n: int = 256) -> tuple[Curve, Curve]:
    """Concave kidney inside a circle: forward normals cross, reverse ones do not."""
    return kidney(n, "kidney"), circle(1.6, n, label="circle")


def write_all(root) -> None:
    root = Path(root)
    write_growing_bud(root / "growing_bud")
    for name, (a, b) in {"offset_circles": offset_circles(), "kidney_in_circle": kidney_in_circle()}.items():
        d = root / name
        d.mkdir(parents=True, exist_ok=True)
        write_curve(a, d / "c1.csv")
        write_curve(b, d / "c2.csv")


if __name__ == "__main__":
    import sys

    write_all(sys.argv[1] if len(sys.argv) > 1 else "fixtures")
