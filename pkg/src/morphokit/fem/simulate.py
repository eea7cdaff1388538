"""Time loop, pre-equilibration and trajectory files."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assembly import assemble
from .growth import GrowthSeries, step_rd_growing
from .solver import BoundaryCondition, FieldState, SolverError, Stepper, reaction_stiffness

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Schedule:
    t_end: float
    dt: float
    stride: int = 1

    def __post_init__(self):
        if self.t_end < 0 or not self.dt > 0 or self.stride < 1:
            raise ValueError(f"invalid schedule {self}")


def equilibrate(state: FieldState, model, bc: BoundaryCondition, dt: float,
                tol: float = 1e-8, max_steps: int = 100_000) -> FieldState:
    """Run static steps until max |dc/dt| < ``tol``; the clock is not advanced."""
    stepper = Stepper(state.mesh, model, bc, dt)
    cur = state
    for n in range(max_steps):
        nxt = stepper.step(cur)
        rate = np.abs(nxt.c - cur.c).max() / dt
        cur = nxt
        if rate < tol:
            log.info("equilibrated after %d steps", n + 1)
            return FieldState(state.mesh, cur.c, state.t)
    raise SolverError(f"no steady state within {max_steps} steps (last rate {rate:.3g})")


def simulate(model, mesh, bc: BoundaryCondition, initial: FieldState, schedule: Schedule,
             growth: GrowthSeries | None = None, equilibrate_tol: float | None = None):
    """Integrate from ``initial`` to ``initial.t + schedule.t_end``.

    Returns the list of states every ``schedule.stride`` steps, starting with
    the initial state and always ending with the final one. With a growth
    series the ALE update is used while the series is active; the static
    domain uses cached factorizations.
    """
    if initial.mesh is not mesh:
        if initial.mesh.n_vertices != mesh.n_vertices:
            raise ValueError("initial state is defined on a different mesh")
        initial = FieldState(mesh, initial.c, initial.t)
    if initial.n_species != model.n_species:
        raise ValueError(f"initial state has {initial.n_species} species, model {model.n_species}")
    state = initial
    if equilibrate_tol is not None:
        state = equilibrate(state, model, bc, schedule.dt, equilibrate_tol)
    out = [state]
    if schedule.t_end <= 0:
        return out
    stiff = schedule.dt * reaction_stiffness(model, state.c)
    if stiff > 1:
        log.warning("dt * max|dR/dc| = %.3g > 1 at the initial state", stiff)

    n_steps = int(round(schedule.t_end / schedule.dt))
    if abs(n_steps * schedule.dt - schedule.t_end) > 1e-9 * max(1.0, schedule.t_end):
        n_steps = int(np.ceil(schedule.t_end / schedule.dt))
    t0 = state.t
    stepper = None
    M_cur = None
    for n in range(1, n_steps + 1):
        dt = min(schedule.dt, t0 + schedule.t_end - state.t)
        if dt <= 0:
            break
        growing = growth is not None and state.t < growth.t_end - 1e-12
        if growing:
            state = step_rd_growing(state, model, bc, growth, dt, M_old=M_cur)
            _, M_cur, _ = assemble(state.mesh)
            stepper = None
        else:
            if stepper is None or stepper.mesh is not state.mesh or stepper.dt != dt:
                stepper = Stepper(state.mesh, model, bc, dt)
            state = stepper.step(state)
        if state.c.min() < -1e-8:
            log.warning("negative concentration %.3g at t=%.4g", state.c.min(), state.t)
        if n % schedule.stride == 0 or n == n_steps:
            out.append(state)
    return out


# --------------------------------------------------------------------------
# Trajectory files

def write_frame(state: FieldState, path) -> None:
    header = "vertex_id,x,y," + ",".join(f"c_{i}" for i in range(state.n_species))
    data = np.column_stack([np.arange(state.mesh.n_vertices), state.mesh.vertices, state.c.T])
    fmt = ["%d", "%.17g", "%.17g"] + ["%.17g"] * state.n_species
    np.savetxt(path, data, delimiter=",", header=header, comments="", fmt=fmt)


def read_frame(path, mesh=None) -> FieldState:
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    from ..mesh import TriMesh

    if mesh is None:
        raise ValueError("a mesh is needed to rebuild a FieldState from a frame")
    if not np.allclose(mesh.vertices, data[:, 1:3]):
        mesh = TriMesh(data[:, 1:3], mesh.triangles, mesh.edges, mesh.edge_tags,
                       mesh.triangle_region_tag, mesh.curves)
    return FieldState(mesh, data[:, 3:].T)


def config_hash(config) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()


def write_trajectory(states, outdir, config=None, seed=None, prefix="frame") -> Path:
    """One CSV per frame plus ``manifest.json`` (times, config hash, seed)."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    files = []
    for k, s in enumerate(states):
        name = f"{prefix}_{k:05d}.csv"
        write_frame(s, outdir / name)
        files.append(name)
    manifest = {
        "times": [float(s.t) for s in states],
        "frames": files,
        "config_hash": config_hash(config) if config is not None else None,
        "seed": seed,
    }
    path = outdir / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path
