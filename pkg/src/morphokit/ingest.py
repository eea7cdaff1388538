"""Image loading, threshold segmentation and boundary extraction for 2D sections."""
from __future__ import annotations

import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .geometry import Curve, resample_equidistant

BACKGROUND = 0


class ImageFormatError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GrayImage:
    """Grayscale image; ``pixels`` has shape (height, width), dtype uint16."""

    pixels: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        px = np.asarray(self.pixels)
        if px.ndim != 2 or min(px.shape) < 2:
            raise ValueError(f"image must be at least 2x2, got shape {px.shape}")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")
        if px.dtype != np.uint16:
            if px.min() < 0 or px.max() > 65535:
                raise ValueError("pixel values must lie in 0..65535")
            px = px.astype(np.uint16)
        object.__setattr__(self, "pixels", px)

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def width(self) -> int:
        return self.pixels.shape[1]


@dataclass(frozen=True)
class SegmentationSpec:
    """Labelled closed intensity intervals, tried in order."""

    thresholds: tuple  # of (label, lo, hi)
    smoothing_radius: float = 0.0

    def __post_init__(self):
        th = tuple((str(lab), float(lo), float(hi)) for lab, lo, hi in self.thresholds)
        labels = [t[0] for t in th]
        if len(set(labels)) != len(labels):
            raise ValueError(f"threshold labels must be unique: {labels}")
        for lab, lo, hi in th:
            if lo > hi:
                raise ValueError(f"empty interval for label {lab!r}: [{lo}, {hi}]")
        ordered = sorted(th, key=lambda t: t[1])
        for (la, _, ha), (lb, lo_b, _) in zip(ordered, ordered[1:]):
            if lo_b <= ha:
                raise ValueError(f"intervals for {la!r} and {lb!r} overlap")
        if self.smoothing_radius < 0:
            raise ValueError("smoothing_radius must be >= 0")
        object.__setattr__(self, "thresholds", th)

    @property
    def labels(self) -> list[str]:
        return [t[0] for t in self.thresholds]


# --------------------------------------------------------------------------
# PGM I/O

_TOKEN = re.compile(rb"(#[^\n]*\n?)|(\S+)")


def _header_tokens(data: bytes, count: int):
    """First ``count`` whitespace-separated tokens (skipping comments) and the offset after them."""
    tokens, pos = [], 0
    for m in _TOKEN.finditer(data):
        if m.group(2) is None:
            continue
        tokens.append(m.group(2))
        pos = m.end()
        if len(tokens) == count:
            break
    return tokens, pos


def load_image(path, pixel_size: float | None = None) -> GrayImage:
    """Read a P2 (ASCII) or P5 (binary) PGM file.

    ``pixel_size`` (um/pixel) defaults to the ``pixel_size_um`` entry of a
    sidecar JSON file with the same stem, else 1.0.
    """
    path = Path(path)
    data = path.read_bytes()
    magic = data[:2]
    if magic not in (b"P2", b"P5"):
        raise ImageFormatError(f"{path}: not a PGM file (magic {magic!r}, expected P2 or P5)")
    tokens, pos = _header_tokens(data, 4)
    if len(tokens) < 4:
        raise ImageFormatError(f"{path}: truncated PGM header")
    try:
        width, height, maxval = (int(t) for t in tokens[1:4])
    except ValueError as exc:
        raise ImageFormatError(f"{path}: malformed PGM header {tokens!r}") from exc
    if width < 1 or height < 1:
        raise ImageFormatError(f"{path}: invalid size {width}x{height}")
    if not 0 < maxval <= 65535:
        raise ImageFormatError(f"{path}: maxval {maxval} outside 1..65535")
    n = width * height
    if magic == b"P5":
        body = data[pos + 1:]
        if maxval < 256:
            need = n
            if len(body) < need:
                raise ImageFormatError(f"{path}: truncated payload ({len(body)} of {need} bytes)")
            px = np.frombuffer(body[:need], dtype=np.uint8)
        else:
            need = 2 * n
            if len(body) < need:
                raise ImageFormatError(f"{path}: truncated payload ({len(body)} of {need} bytes)")
            px = np.frombuffer(body[:need], dtype=">u2")
    else:
        values = data[pos:].split()
        if len(values) < n:
            raise ImageFormatError(f"{path}: truncated payload ({len(values)} of {n} values)")
        try:
            px = np.array([int(v) for v in values[:n]], dtype=np.int64)
        except ValueError as exc:
            raise ImageFormatError(f"{path}: non-integer pixel value") from exc
    if px.max(initial=0) > maxval:
        raise ImageFormatError(f"{path}: pixel value exceeds maxval {maxval}")
    if pixel_size is None:
        side = path.with_suffix(".json")
        pixel_size = json.loads(side.read_text()).get("pixel_size_um", 1.0) if side.exists() else 1.0
    return GrayImage(px.reshape(height, width).astype(np.uint16), float(pixel_size))


def save_image(img: GrayImage, path, binary: bool = True) -> None:
    """Write a PGM (P5 by default, P2 with ``binary=False``) plus pixel-size sidecar."""
    path = Path(path)
    px = img.pixels
    maxval = max(int(px.max()), 1)
    maxval = 255 if maxval < 256 else 65535
    header = f"{'P5' if binary else 'P2'}\n{img.width} {img.height}\n{maxval}\n".encode()
    if binary:
        body = px.astype(np.uint8 if maxval < 256 else ">u2").tobytes()
    else:
        body = "\n".join(" ".join(str(v) for v in row) for row in px).encode() + b"\n"
    path.write_bytes(header + body)
    path.with_suffix(".json").write_text(json.dumps({"pixel_size_um": img.pixel_size}) + "\n")


# --------------------------------------------------------------------------
# Segmentation

def segment_threshold(img: GrayImage, spec: SegmentationSpec) -> np.ndarray:
    """Label image (int array): 0 is background, label k is ``spec.labels[k-1]``."""
    px = img.pixels.astype(float)
    if spec.smoothing_radius > 0:
        px = ndimage.gaussian_filter(px, sigma=spec.smoothing_radius, mode="nearest")
    out = np.full(px.shape, BACKGROUND, dtype=np.int32)
    for k, (_, lo, hi) in enumerate(spec.thresholds, start=1):
        out[(out == BACKGROUND) & (px >= lo) & (px <= hi)] = k
    return out


# --------------------------------------------------------------------------
# Marching squares on a binary indicator
#
# Grid nodes sit at pixel centres: x = col * pixel_size, y = row * pixel_size.
# Every directed contour segment keeps the foreground on its left, which makes
# outer boundaries counter-clockwise and hole boundaries clockwise.
# Saddle cells are resolved by the mean of the four corners (0.5 >= level), so
# diagonal foreground pixels count as connected.

# cell corners in (row, col) offsets, counter-clockwise in (x=col, y=row)
_CORNERS = ((0, 0), (0, 1), (1, 1), (1, 0))
# edges between consecutive corners; midpoints in doubled integer coordinates
_EDGE_MID = tuple(
    (_CORNERS[k][0] + _CORNERS[(k + 1) % 4][0], _CORNERS[k][1] + _CORNERS[(k + 1) % 4][1])
    for k in range(4)
)


def _cell_segments(inside):
    """Directed segments (edge_from, edge_to) for one cell, foreground on the left."""
    n_in = sum(inside)
    if n_in in (0, 4):
        return []
    cut = [k for k in range(4) if inside[k] != inside[(k + 1) % 4]]
    if n_in == 2 and inside[0] == inside[2]:
        # saddle; centre value 0.5 counts as inside, so isolate the outside corners
        segs = []
        for k in range(4):
            if not inside[k]:
                segs.append(_orient((k - 1) % 4, k, k, inside))
        return segs
    return [_orient(cut[0], cut[1], None, inside)]


def _orient(e0, e1, corner, inside):
    """Order the edge pair so that foreground lies to the left."""
    p0 = np.array(_EDGE_MID[e0], dtype=float) / 2
    p1 = np.array(_EDGE_MID[e1], dtype=float) / 2
    if corner is None:
        corner = next(k for k in range(4) if inside[k])
        sign = 1
    else:
        sign = -1  # corner given is an outside corner
    c = np.array(_CORNERS[corner], dtype=float)
    # (row, col) -> (x, y) = (col, row)
    d = (p1 - p0)[::-1]
    w = (c - p0)[::-1]
    cross = d[0] * w[1] - d[1] * w[0]
    return (e0, e1) if cross * sign > 0 else (e1, e0)


_CASES = {}
for _code in range(16):
    _ins = tuple(bool(_code >> k & 1) for k in range(4))
    _CASES[_code] = _cell_segments(_ins)


def _contour_loops(mask: np.ndarray):
    m = np.pad(mask.astype(bool), 1)
    h, w = m.shape
    code = (m[:-1, :-1].astype(int) | m[:-1, 1:] << 1 | m[1:, 1:] << 2 | m[1:, :-1] << 3)
    nxt = {}
    rows, cols = np.nonzero((code != 0) & (code != 15))
    for r, c in zip(rows.tolist(), cols.tolist()):
        for e0, e1 in _CASES[int(code[r, c])]:
            a = (2 * r + _EDGE_MID[e0][0], 2 * c + _EDGE_MID[e0][1])
            b = (2 * r + _EDGE_MID[e1][0], 2 * c + _EDGE_MID[e1][1])
            nxt[a] = b
    loops = []
    seen = set()
    for start in sorted(nxt):
        if start in seen:
            continue
        loop, p = [], start
        while p not in seen:
            seen.add(p)
            loop.append(p)
            p = nxt[p]
        loops.append(np.array(loop, dtype=float))
    # doubled padded (row, col) -> unpadded pixel (row, col)
    return [lp / 2.0 - 1.0 for lp in loops]


def _drop_collinear(pts):
    prev = np.roll(pts, 1, axis=0)
    nxt = np.roll(pts, -1, axis=0)
    cross = (pts[:, 0] - prev[:, 0]) * (nxt[:, 1] - prev[:, 1]) - (pts[:, 1] - prev[:, 1]) * (nxt[:, 0] - prev[:, 0])
    keep = np.abs(cross) > 1e-12
    return pts[keep] if keep.sum() >= 3 else pts


def extract_contours(labels: np.ndarray, label: int, pixel_size: float = 1.0,
                     n_points: int | None = None, name: str | None = None) -> list[Curve]:
    """Closed boundary curves (in um) of the pixels carrying ``label``.

    Outer boundaries run counter-clockwise, hole boundaries clockwise, with
    x along columns and y along rows. ``n_points`` resamples each curve to
    equal chords. An absent label yields an empty list.
    """
    mask = np.asarray(labels) == label
    if not mask.any():
        return []
    curves = []
    for loop in _contour_loops(mask):
        xy = _drop_collinear(loop[:, ::-1]) * pixel_size
        curve = Curve(xy, closed=True, label=name if name is not None else str(label))
        if n_points is not None:
            curve = resample_equidistant(curve, n_points)
        curves.append(curve)
    return curves
