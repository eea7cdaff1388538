"""Reaction-diffusion on domains whose boundary moves between imaged stages.

The mesh follows the boundary (harmonic interior motion) and material is
assumed to move with the mesh, so the ALE convective term vanishes and the
conservative update

    M(t+dt) c(t+dt) - M(t) c(t) = dt * (-D K(t+dt) c(t+dt) + M(t) R(c(t)) + boundary terms)

holds. Summing rows shows the integral of c changes only through reactions
and boundary fluxes: area growth dilutes without creating or losing mass.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from ..mesh import MeshInversionError, deform
from .assembly import assemble
from .solver import BoundaryCondition, FieldState, SolverError, _boundary_terms, _reaction, _System

log = logging.getLogger(__name__)

TIME_TOL = 1e-12


class _Field(NamedTuple):
    sources: np.ndarray
    vectors: np.ndarray
    closed: bool


@dataclass(frozen=True)
class GrowthSeries:
    """Boundary motion through imaged stages.

    ``fields[k]`` maps the boundary at ``times[k]`` onto the boundary at
    ``times[k + 1]``; positions in between are linear in time. ``tol`` is
    the distance, relative to the boundary extent, within which a mesh
    boundary vertex is matched to the sampled boundary of a field; chains of
    separately resampled stages need a loose value (about 1e-3).
    """

    times: tuple
    fields: tuple
    fixed_labels: tuple = ()
    tol: float = 1e-6

    def __post_init__(self):
        times = tuple(float(t) for t in self.times)
        if len(times) != len(self.fields) + 1:
            raise ValueError("need one more stage time than displacement fields")
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("stage times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "fields", tuple(self.fields))
        object.__setattr__(self, "fixed_labels", tuple(self.fixed_labels))

    @property
    def t_start(self) -> float:
        return self.times[0]

    @property
    def t_end(self) -> float:
        return self.times[-1]

    def stage_index(self, t: float) -> int:
        if t < self.times[0] - TIME_TOL or t > self.times[-1] + TIME_TOL:
            raise ValueError(f"t={t} outside growth series [{self.times[0]}, {self.times[-1]}]")
        k = int(np.searchsorted(self.times, t + TIME_TOL, side="right")) - 1
        return min(max(k, 0), len(self.fields) - 1)

    def boundary_at(self, t: float):
        """Field sources advanced to time ``t`` and stage index."""
        k = self.stage_index(t)
        f = self.fields[k]
        s = (t - self.times[k]) / (self.times[k + 1] - self.times[k])
        src = np.asarray(f.sources, dtype=float) + s * np.asarray(f.vectors, dtype=float)
        return src, k

    def increment(self, t: float, dt: float) -> _Field:
        """Boundary displacement over ``[t, t + dt]`` within one stage interval."""
        src, k = self.boundary_at(t)
        if t + dt > self.times[k + 1] + TIME_TOL:
            raise ValueError("step crosses a stage boundary")
        f = self.fields[k]
        frac = dt / (self.times[k + 1] - self.times[k])
        return _Field(src, frac * np.asarray(f.vectors, dtype=float), bool(getattr(f, "closed", True)))

    def velocity(self, t: float) -> np.ndarray:
        """Sampled boundary velocity (vector / stage duration) at time ``t``."""
        k = self.stage_index(t)
        f = self.fields[k]
        return np.asarray(f.vectors, dtype=float) / (self.times[k + 1] - self.times[k])


def _split(growth: GrowthSeries, t: float, dt: float):
    """Sub-intervals of [t, t+dt] that stay within single stage intervals."""
    pieces = []
    t_end = t + dt
    while t < t_end - TIME_TOL:
        k = growth.stage_index(t)
        stop = min(t_end, growth.times[k + 1])
        if stop - t <= TIME_TOL:
            # sitting on a stage boundary; move to the next interval
            k += 1
            stop = min(t_end, growth.times[k + 1])
        pieces.append((t, stop - t))
        t = stop
    return pieces


def step_rd_growing(state: FieldState, model, bc: BoundaryCondition, growth: GrowthSeries | None,
                    dt: float, M_old=None) -> FieldState:
    """One conservative ALE step; the returned state lives on the moved mesh.

    Steps spanning a stage time are split at that time. Without a growth
    series (or past its end) the mesh stays fixed and the update equals
    :func:`step_rd`.
    """
    if not dt > 0:
        raise SolverError("dt must be positive")
    if growth is None or state.t >= growth.t_end - TIME_TOL:
        pieces = [(state.t, dt)]
        growth_on = False
    else:
        growth_on = True
        usable = min(dt, growth.t_end - state.t)
        pieces = _split(growth, state.t, usable)
        if dt - usable > TIME_TOL:
            pieces.append((state.t + usable, dt - usable))
    cur = state
    for t0, h in pieces:
        grows = growth_on and t0 < growth.t_end - TIME_TOL
        cur = _ale_step(cur, model, bc, growth if grows else None, h, M_old)
        M_old = None
    return cur


def _ale_step(state, model, bc, growth, dt, M_old=None):
    mesh_old = state.mesh
    if M_old is None:
        _, M_old, _ = assemble(mesh_old)
    if growth is not None:
        inc = growth.increment(state.t, dt)
        try:
            mesh_new = deform(mesh_old, inc, 1.0, fixed_labels=growth.fixed_labels, tol=growth.tol)
        except MeshInversionError as exc:
            raise MeshInversionError(f"{exc}; substep with a smaller dt") from exc
    else:
        mesh_new = mesh_old
    K, M_new, boundary = assemble(mesh_new)
    R = _reaction(model, state.c)
    out = np.empty_like(state.c)
    for i in range(model.n_species):
        robin, load, ids, vals = _boundary_terms(mesh_new, bc, i, boundary, state.t + dt)
        A = M_new + dt * model.D[i] * K + dt * robin
        rhs = M_old @ (state.c[i] + dt * R[i]) + dt * load
        out[i] = _System(A, ids).solve(rhs, vals)
    return FieldState(mesh_new, out, state.t + dt)
