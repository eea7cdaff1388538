"""Boundary conditions, field states, steady Laplace and IMEX reaction-diffusion steps."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import splu

from ..mesh import TriMesh
from .assembly import assemble
from .kinetics import ReactionModel

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Boundary conditions
#
# Flux convention: ``flux`` is D * dc/dn with n the outward normal, i.e. the
# rate at which material enters through the boundary. Robin reads
# alpha * c + flux = beta.

@dataclass(frozen=True)
class Dirichlet:
    value: float | object = 0.0

    def values(self, points, t=0.0):
        if callable(self.value):
            return np.asarray(self.value(points, t), dtype=float) * np.ones(len(points))
        return np.full(len(points), float(self.value))


@dataclass(frozen=True)
class Neumann:
    flux: float = 0.0


@dataclass(frozen=True)
class Robin:
    alpha: float
    beta: float = 0.0


ZERO_FLUX = Neumann(0.0)


@dataclass(frozen=True)
class BoundaryCondition:
    """Per boundary label, one condition for all species or a list per species.

    Labels that are not listed get zero flux.
    """

    conditions: dict = field(default_factory=dict)

    def get(self, label: str, species: int):
        spec = self.conditions.get(label, ZERO_FLUX)
        if isinstance(spec, (list, tuple)):
            return spec[species]
        return spec

    def check(self, mesh: TriMesh, n_species: int) -> None:
        known = set(mesh.boundary_edge_tags())
        unknown = set(self.conditions) - known
        if unknown:
            raise SolverError(f"boundary labels {sorted(unknown)} not on the mesh boundary {sorted(known)}")
        for label, spec in self.conditions.items():
            if isinstance(spec, (list, tuple)) and len(spec) != n_species:
                raise SolverError(f"label {label!r}: need {n_species} species conditions, got {len(spec)}")

    @classmethod
    def from_config(cls, cfg: dict) -> "BoundaryCondition":
        """Parse ``{label: {"kind": ..., ...} | [per-species...]}``."""
        def one(d):
            kind = d["kind"]
            if kind == "dirichlet":
                return Dirichlet(float(d["value"]))
            if kind == "neumann":
                return Neumann(float(d.get("flux", 0.0)))
            if kind == "robin":
                return Robin(float(d["alpha"]), float(d.get("beta", 0.0)))
            raise ValueError(f"unknown boundary condition kind {kind!r}")

        return cls({lab: [one(x) for x in v] if isinstance(v, list) else one(v) for lab, v in cfg.items()})


# --------------------------------------------------------------------------
# State

@dataclass(frozen=True, eq=False)
class FieldState:
    """Nodal concentrations ``c`` of shape (n_species, n_vertices) at time ``t``."""

    mesh: TriMesh
    c: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        c = np.array(self.c, dtype=float, copy=True)
        if c.ndim == 1:
            c = c[None]
        if c.shape[1] != self.mesh.n_vertices:
            raise ValueError(f"field has {c.shape[1]} values per species, mesh has {self.mesh.n_vertices} vertices")
        if not np.all(np.isfinite(c)):
            raise ValueError("field values must be finite")
        c.setflags(write=False)
        object.__setattr__(self, "c", c)

    @property
    def n_species(self) -> int:
        return self.c.shape[0]

    def total(self, M=None) -> np.ndarray:
        """Integral of each species over the domain."""
        if M is None:
            _, M, _ = assemble(self.mesh)
        return np.asarray(M @ self.c.T).sum(axis=0)


# --------------------------------------------------------------------------
# Linear algebra helpers

class _System:
    """Factorized ``A`` with Dirichlet rows eliminated."""

    def __init__(self, A: csr_matrix, dirichlet: np.ndarray):
        n = A.shape[0]
        self.fixed = dirichlet
        self.free = np.setdiff1d(np.arange(n), dirichlet)
        A = A.tocsr()
        self.A_fd = A[self.free][:, self.fixed]
        A_ff = A[self.free][:, self.free].tocsc()
        try:
            self.lu = splu(A_ff)
        except RuntimeError as exc:
            raise SolverError(f"linear solve failed: {exc}") from exc
        self.n = n

    def solve(self, rhs, g):
        out = np.empty(self.n)
        out[self.fixed] = g
        r = rhs[self.free] - (self.A_fd @ g if len(self.fixed) else 0.0)
        out[self.free] = self.lu.solve(r)
        if not np.all(np.isfinite(out)):
            raise SolverError("linear solve produced non-finite values")
        return out


def _boundary_terms(mesh, bc, species, boundary, t=0.0):
    """Robin matrix, flux load vector, Dirichlet vertex ids and values."""
    n = mesh.n_vertices
    robin = csr_matrix((n, n))
    load = np.zeros(n)
    bedges = mesh.boundary_edges()
    tags = np.array(mesh.boundary_edge_tags(), dtype=object)
    dir_ids, dir_vals = [], []
    ones = np.ones(n)
    for label, B in boundary.items():
        spec = bc.get(label, species)
        if isinstance(spec, Neumann):
            if spec.flux:
                load += spec.flux * (B @ ones)
        elif isinstance(spec, Robin):
            robin = robin + spec.alpha * B
            if spec.beta:
                load += spec.beta * (B @ ones)
        elif isinstance(spec, Dirichlet):
            ids = np.unique(bedges[tags == label])
            dir_ids.append(ids)
            dir_vals.append(spec.values(mesh.vertices[ids], t))
        else:
            raise SolverError(f"unsupported boundary condition {spec!r}")
    if dir_ids:
        ids = np.concatenate(dir_ids)
        vals = np.concatenate(dir_vals)
        # vertices shared by two Dirichlet labels keep the first value
        ids, first = np.unique(ids, return_index=True)
        vals = vals[first]
    else:
        ids, vals = np.zeros(0, dtype=int), np.zeros(0)
    return robin, load, ids, vals


# --------------------------------------------------------------------------
# Steady Laplace

def solve_laplace(mesh: TriMesh, bc: BoundaryCondition, check_residual: float = 1e-10) -> FieldState:
    """Discrete harmonic field for a single species."""
    bc.check(mesh, 1)
    K, _, boundary = assemble(mesh)
    robin, load, ids, vals = _boundary_terms(mesh, bc, 0, boundary)
    has_robin = any(isinstance(bc.get(lab, 0), Robin) and bc.get(lab, 0).alpha > 0 for lab in boundary)
    if len(ids) == 0 and not has_robin:
        raise SolverError("Laplace problem with pure flux conditions is singular; add a Dirichlet boundary")
    A = (K + robin).tocsr()
    c = _System(A, ids).solve(load, vals)
    free = np.setdiff1d(np.arange(mesh.n_vertices), ids)
    res = (A @ c - load)[free]
    scale = max(1.0, np.abs(load).max(initial=0.0), np.abs(vals).max(initial=0.0))
    if np.abs(res).max(initial=0.0) > check_residual * scale * max(1.0, abs(A).max()):
        raise SolverError(f"Laplace residual {np.abs(res).max():.3g} above tolerance")
    return FieldState(mesh, c[None], 0.0)


# --------------------------------------------------------------------------
# Reaction-diffusion stepping

def reaction_stiffness(model: ReactionModel, c) -> float:
    """max |dR_i/dc_j| over species pairs and nodes."""
    with np.errstate(all="ignore"):
        return float(np.abs(model.jacobian(c)).max())


def _reaction(model, c):
    with np.errstate(all="ignore"):
        R = model.R(c)
    bad = ~np.all(np.isfinite(R), axis=1)
    if bad.any():
        raise SolverError(f"non-finite reaction rate for species {int(np.argmax(bad))}")
    return R


class Stepper:
    """IMEX backward-Euler stepping on a fixed mesh with cached factorizations.

    Each step solves ``(M + dt D_i K + dt A_robin) c_i_new = M (c_i + dt R_i(c)) + dt f``
    per species, with Dirichlet values imposed by elimination.
    """

    def __init__(self, mesh: TriMesh, model: ReactionModel, bc: BoundaryCondition, dt: float):
        if not dt > 0:
            raise SolverError("dt must be positive")
        bc.check(mesh, model.n_species)
        self.mesh, self.model, self.bc, self.dt = mesh, model, bc, dt
        self.K, self.M, self.boundary = assemble(mesh)
        self._systems = []
        for i in range(model.n_species):
            robin, load, ids, vals = _boundary_terms(mesh, bc, i, self.boundary)
            A = self.M + dt * model.D[i] * self.K + dt * robin
            self._systems.append((_System(A, ids), load, vals))
        specs = [bc.get(lab, i) for lab in self.boundary for i in range(model.n_species)]
        self._time_dependent = any(isinstance(sp, Dirichlet) and callable(sp.value) for sp in specs)

    def step(self, state: FieldState) -> FieldState:
        dt = self.dt
        R = _reaction(self.model, state.c)
        out = np.empty_like(state.c)
        for i, (system, load, vals) in enumerate(self._systems):
            if self._time_dependent:
                _, load, _, vals = _boundary_terms(self.mesh, self.bc, i, self.boundary, state.t + dt)
            rhs = self.M @ (state.c[i] + dt * R[i]) + dt * load
            out[i] = system.solve(rhs, vals)
        if out.min() < -1e-8:
            log.debug("negative concentration %.3g at t=%.4g", out.min(), state.t + dt)
        return FieldState(state.mesh, out, state.t + dt)


def step_rd(state: FieldState, model: ReactionModel, bc: BoundaryCondition, dt: float) -> FieldState:
    """One IMEX step of the static-domain reaction-diffusion system."""
    if state.n_species != model.n_species:
        raise SolverError(f"state has {state.n_species} species, model {model.n_species}")
    stiff = dt * reaction_stiffness(model, state.c)
    if stiff > 1:
        log.warning("dt * max|dR/dc| = %.3g > 1; reaction step may be inaccurate", stiff)
    return Stepper(state.mesh, model, bc, dt).step(state)


def uniform_state(mesh: TriMesh, values, t: float = 0.0) -> FieldState:
    values = np.atleast_1d(np.asarray(values, dtype=float))
    return FieldState(mesh, np.repeat(values[:, None], mesh.n_vertices, axis=1), t)


def noisy_state(mesh: TriMesh, values, amplitude: float = 0.01, seed: int = 0, t: float = 0.0) -> FieldState:
    """Uniform field times ``1 + amplitude * U(-1, 1)``, independently per node and species."""
    rng = np.random.default_rng(seed)
    base = uniform_state(mesh, values, t).c
    return FieldState(mesh, base * (1.0 + amplitude * rng.uniform(-1.0, 1.0, base.shape)), t)


def with_time(state: FieldState, t: float) -> FieldState:
    return replace(state, t=t)
