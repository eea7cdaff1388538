"""Thin-plate spline interpolation of landmark pairs."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist


class SingularLandmarksError(np.linalg.LinAlgError):
    pass


def tps_kernel(r):
    """U(r) = r^2 log(r^2), with U(0) = 0."""
    r = np.asarray(r, dtype=float)
    r2 = r * r
    with np.errstate(divide="ignore", invalid="ignore"):
        out = r2 * np.log(r2)
    return np.where(r2 > 0, out, 0.0)


@dataclass(frozen=True, eq=False)
class LandmarkSet:
    """Corresponding points at stage t (``source``) and t + dt (``target``)."""

    source: np.ndarray
    target: np.ndarray

    def __post_init__(self):
        s = np.array(self.source, dtype=float).reshape(-1, 2)
        t = np.array(self.target, dtype=float).reshape(-1, 2)
        if len(s) != len(t):
            raise ValueError("source and target landmark counts differ")
        if len(s) < 3:
            raise SingularLandmarksError("need at least 3 landmarks")
        d = cdist(s, s)
        np.fill_diagonal(d, np.inf)
        if d.min() < 1e-12 * max(np.ptp(s, axis=0).max(), 1.0):
            i, j = np.unravel_index(np.argmin(d), d.shape)
            raise SingularLandmarksError(f"landmarks {i} and {j} coincide")
        P = np.column_stack([np.ones(len(s)), s])
        if np.linalg.matrix_rank(P, tol=1e-10 * max(np.ptp(s, axis=0).max(), 1.0)) < 3:
            raise SingularLandmarksError("source landmarks are collinear")
        object.__setattr__(self, "source", s)
        object.__setattr__(self, "target", t)

    @classmethod
    def read(cls, path) -> "LandmarkSet":
        """CSV with header ``x0,y0,x1,y1``."""
        data = np.loadtxt(Path(path), delimiter=",", skiprows=1, ndmin=2)
        return cls(data[:, :2], data[:, 2:4])

    def write(self, path) -> None:
        np.savetxt(Path(path), np.column_stack([self.source, self.target]), delimiter=",",
                   header="x0,y0,x1,y1", comments="", fmt="%.17g")


class ThinPlateSpline:
    """Minimal bending-energy map ``f(x) = a0 + A x + sum_i w_i U(|x - x_i|)``.

    Each output coordinate is fitted separately with the side conditions
    ``sum w_i = 0`` and ``sum w_i x_i = 0``. ``regularization`` adds a ridge
    term (lambda * I on the kernel block); 0 interpolates exactly.
    """

    def __init__(self, landmarks: LandmarkSet, regularization: float = 0.0):
        s, t = landmarks.source, landmarks.target
        n = len(s)
        K = tps_kernel(cdist(s, s))
        P = np.column_stack([np.ones(n), s])
        L = np.zeros((n + 3, n + 3))
        L[:n, :n] = K + regularization * np.eye(n)
        L[:n, n:] = P
        L[n:, :n] = P.T
        Y = np.vstack([t, np.zeros((3, 2))])
        try:
            sol = np.linalg.solve(L, Y)
        except np.linalg.LinAlgError as exc:
            raise SingularLandmarksError(f"singular TPS system: {exc}") from exc
        if not np.all(np.isfinite(sol)):
            raise SingularLandmarksError("singular TPS system")
        self.landmarks = landmarks
        self.K = K
        self.weights = sol[:n]   # (n, 2)
        self.affine = sol[n:]    # rows: constant, x coefficient, y coefficient

    def __call__(self, points) -> np.ndarray:
        p = np.atleast_2d(np.asarray(points, dtype=float))
        U = tps_kernel(cdist(p, self.landmarks.source))
        return self.affine[0] + p @ self.affine[1:] + U @ self.weights

    def bending_energy(self) -> float:
        """Sum over output coordinates of w^T K w (proportional to the bending integral)."""
        return float(np.einsum("ic,ij,jc->", self.weights, self.K, self.weights))


def map_tps(landmarks: LandmarkSet, queries, regularization: float = 0.0) -> np.ndarray:
    """Displacement ``f(q) - q`` of each query point under the landmark spline."""
    q = np.atleast_2d(np.asarray(queries, dtype=float))
    return ThinPlateSpline(landmarks, regularization)(q) - q
