"""Parameter screening, local refinement and model ranking against target patterns."""
from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import product
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import minimize
from scipy.stats import qmc

from .fem.assembly import mass_matrix
from .fem.solver import FieldState
from .mesh import interpolate_p1

log = logging.getLogger(__name__)

METRIC_KINDS = ("sse", "normalized_correlation", "threshold_overlap")


class InferenceError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# Metrics

@dataclass(frozen=True)
class Metric:
    """Distance between a simulated and a target field.

    ``sse``: mass-weighted integral of the squared difference divided by
    ``scale``. ``normalized_correlation``: 1 - Pearson correlation of the
    nodal values (for semi-quantitative data). ``threshold_overlap``:
    1 - Jaccard index of the supra-threshold regions (for qualitative
    data); ``threshold=None`` uses the midpoint of each field's range.
    ``species`` restricts the comparison to the listed species.
    """

    kind: str = "sse"
    scale: float = 1.0
    threshold: float | None = None
    species: tuple[int, ...] | None = None
    notes: str = ""

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric {self.kind!r}; expected one of {METRIC_KINDS}")
        if not (self.scale > 0 and math.isfinite(self.scale)):
            raise ValueError("metric scale must be positive and finite")
        if self.species is not None:
            object.__setattr__(self, "species", tuple(int(s) for s in self.species))

    @classmethod
    def from_dict(cls, d: dict) -> "Metric":
        d = dict(d)
        if d.get("species") is not None:
            d["species"] = tuple(np.atleast_1d(d["species"]).tolist())
        return cls(**{k: v for k, v in d.items() if k in cls.__dataclass_fields__})


def _on_sim_mesh(sim: FieldState, target: FieldState) -> np.ndarray:
    if target.mesh is sim.mesh:
        return target.c
    same = (target.mesh.n_vertices == sim.mesh.n_vertices
            and np.array_equal(target.mesh.triangles, sim.mesh.triangles)
            and np.allclose(target.mesh.vertices, sim.mesh.vertices))
    if same:
        return target.c
    return interpolate_p1(target.mesh, target.c, sim.mesh.vertices, outside="nearest")


def _pearson(x, y) -> float:
    x = x - x.mean()
    y = y - y.mean()
    sx, sy = np.sqrt(x @ x), np.sqrt(y @ y)
    if sx == 0 and sy == 0:
        return 1.0
    if sx == 0 or sy == 0:
        return 0.0
    return float(np.clip((x @ y) / (sx * sy), -1.0, 1.0))


def evaluate_metric(sim: FieldState, target: FieldState, metric: Metric, M=None) -> float:
    """Distance between ``sim`` and ``target``; the target is interpolated onto the sim mesh if needed.

    ``M`` may pass a precomputed mass matrix of the sim mesh.
    """
    if sim.n_species != target.n_species:
        raise ValueError(f"species count differs: simulated {sim.n_species}, target {target.n_species}")
    tgt = _on_sim_mesh(sim, target)
    species = metric.species if metric.species is not None else tuple(range(sim.n_species))
    for s in species:
        if not 0 <= s < sim.n_species:
            raise ValueError(f"metric species index {s} out of range")
    a, b = sim.c[list(species)], tgt[list(species)]
    if metric.kind == "sse":
        if M is None:
            M = mass_matrix(sim.mesh.vertices, sim.mesh.triangles)
        d = a - b
        val = float(np.einsum("si,si->", d, (M @ d.T).T))
        return max(val, 0.0) / metric.scale
    if metric.kind == "normalized_correlation":
        return float(np.mean([1.0 - _pearson(x, y) for x, y in zip(a, b)]))
    # threshold overlap, area-weighted with the lumped mass
    if M is None:
        M = mass_matrix(sim.mesh.vertices, sim.mesh.triangles)
    w = np.asarray(M.sum(axis=1)).ravel()
    out = []
    for x, y in zip(a, b):
        tx = metric.threshold if metric.threshold is not None else 0.5 * (x.min() + x.max())
        ty = metric.threshold if metric.threshold is not None else 0.5 * (y.min() + y.max())
        ix, iy = x > tx, y > ty
        union = w[ix | iy].sum()
        out.append(0.0 if union == 0 else 1.0 - w[ix & iy].sum() / union)
    return float(np.mean(out))


# --------------------------------------------------------------------------
# Objective

@dataclass(frozen=True)
class Dataset:
    target: FieldState
    metric: Metric = Metric()
    weight: float = 1.0

    def __post_init__(self):
        if not (self.weight > 0 and math.isfinite(self.weight)):
            raise ValueError("dataset weights must be positive and finite")


@dataclass
class Objective:
    """Weighted sum of metric distances between simulations and targets.

    ``simulator(params)`` maps a dict of parameter values to one FieldState
    per dataset (a single FieldState is accepted for one dataset). Any
    exception or non-finite result scores ``+inf``.
    """

    simulator: Callable[[dict], FieldState | Sequence[FieldState]]
    datasets: list[Dataset]
    names: tuple[str, ...]
    n_evaluations: int = field(default=0, init=False)

    def __post_init__(self):
        self.names = tuple(self.names)
        if not self.datasets:
            raise ValueError("an objective needs at least one dataset")
        self.datasets = [d if isinstance(d, Dataset) else Dataset(*d) for d in self.datasets]

    @property
    def metric_kinds(self) -> tuple[str, ...]:
        return tuple(d.metric.kind for d in self.datasets)

    @property
    def n_data(self) -> int:
        """Effective data size: compared nodal values summed over datasets."""
        n = 0
        for d in self.datasets:
            k = len(d.metric.species) if d.metric.species is not None else d.target.n_species
            n += k * d.target.mesh.n_vertices
        return n

    def params(self, theta) -> dict:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if len(theta) != len(self.names):
            raise ValueError(f"expected {len(self.names)} parameters, got {len(theta)}")
        return dict(zip(self.names, theta.tolist()))

    def __call__(self, theta) -> float:
        self.n_evaluations += 1
        p = self.params(theta)
        try:
            sims = self.simulator(p)
            if isinstance(sims, FieldState):
                sims = [sims]
            if len(sims) != len(self.datasets):
                raise InferenceError(f"simulator returned {len(sims)} fields for {len(self.datasets)} datasets")
            total = sum(d.weight * evaluate_metric(s, d.target, d.metric) for s, d in zip(sims, self.datasets))
        except (ArithmeticError, ValueError, RuntimeError, np.linalg.LinAlgError) as exc:
            if isinstance(exc, InferenceError):
                raise
            log.info("simulation failed at %s: %s", p, exc)
            return math.inf
        return float(total) if math.isfinite(total) else math.inf


# --------------------------------------------------------------------------
# Global screen

@dataclass(frozen=True)
class Bound:
    lo: float
    hi: float
    scale: str = "linear"

    def __post_init__(self):
        if self.scale not in ("linear", "log"):
            raise ValueError(f"bound scale must be 'linear' or 'log', not {self.scale!r}")
        if not self.hi > self.lo:
            raise ValueError(f"empty bound [{self.lo}, {self.hi}]")
        if self.scale == "log" and self.lo <= 0:
            raise ValueError("log-scale bounds must be positive")

    def to_unit(self, x):
        x = np.asarray(x, dtype=float)
        if self.scale == "log":
            return (np.log(x) - math.log(self.lo)) / (math.log(self.hi) - math.log(self.lo))
        return (x - self.lo) / (self.hi - self.lo)

    def from_unit(self, u):
        u = np.asarray(u, dtype=float)
        if self.scale == "log":
            return np.exp(math.log(self.lo) + u * (math.log(self.hi) - math.log(self.lo)))
        return self.lo + u * (self.hi - self.lo)

    def grid(self, n: int) -> np.ndarray:
        if n == 1:
            return self.from_unit(np.array([0.5]))
        g = self.from_unit(np.linspace(0.0, 1.0, n))
        g[0], g[-1] = self.lo, self.hi
        return g


def as_bounds(bounds) -> tuple[Bound, ...]:
    out = []
    for b in bounds:
        if isinstance(b, Bound):
            out.append(b)
        elif isinstance(b, dict):
            out.append(Bound(float(b["lo"]), float(b["hi"]), b.get("scale", "linear")))
        else:
            out.append(Bound(float(b[0]), float(b[1]), *(b[2:3] or ["linear"])))
    return tuple(out)


@dataclass(frozen=True)
class ScreenResult:
    samples: np.ndarray   # (n, d)
    values: np.ndarray    # (n,)
    bounds: tuple[Bound, ...]
    names: tuple[str, ...] = ()
    design: str = "factorial"

    @property
    def best(self) -> int:
        return int(np.argmin(self.values))

    @property
    def best_params(self) -> np.ndarray:
        return self.samples[self.best]

    @property
    def best_value(self) -> float:
        return float(self.values[self.best])


def _evaluate_all(objective, samples, jobs):
    if jobs is None or jobs <= 1:
        return np.array([objective(s) for s in samples], dtype=float)
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return np.array(list(pool.map(objective, samples)), dtype=float)


def grid_screen(objective: Callable, bounds, n_per_dim, budget: int = 10_000, seed: int = 0,
                jobs: int | None = None, names=None) -> ScreenResult:
    """Evaluate ``objective`` on a full factorial grid over ``bounds``.

    When the factorial design has more than ``budget`` points, a seeded Latin
    hypercube with ``budget`` samples is used instead. Failed evaluations
    are kept with value ``+inf``.
    """
    bounds = as_bounds(bounds)
    d = len(bounds)
    counts = [int(n_per_dim)] * d if np.isscalar(n_per_dim) else [int(n) for n in n_per_dim]
    if len(counts) != d or min(counts) < 1:
        raise ValueError("n_per_dim must give a positive count per parameter")
    if budget < 1:
        raise ValueError("budget must be positive")
    n_total = math.prod(counts)
    if n_total <= budget:
        samples = np.array(list(product(*[b.grid(n) for b, n in zip(bounds, counts)])), dtype=float)
        design = "factorial"
    else:
        log.info("factorial design of %d points exceeds budget %d; using Latin hypercube", n_total, budget)
        u = qmc.LatinHypercube(d=d, seed=seed).random(budget)
        samples = np.column_stack([b.from_unit(u[:, i]) for i, b in enumerate(bounds)])
        design = "latin_hypercube"
    values = _evaluate_all(objective, samples, jobs)
    values[~np.isfinite(values)] = math.inf
    if not np.isfinite(values).any():
        raise InferenceError(f"all {len(values)} screen evaluations failed")
    if names is None:
        names = getattr(objective, "names", tuple(f"p{i}" for i in range(d)))
    return ScreenResult(samples, values, bounds, tuple(names), design)


# --------------------------------------------------------------------------
# Local refinement

@dataclass(frozen=True)
class RefineResult:
    x: np.ndarray
    value: float
    trace: np.ndarray        # best-so-far value after each evaluation
    converged: bool
    n_evaluations: int
    message: str = ""


def local_refine(objective: Callable, start, bounds=None, xtol: float = 1e-6, ftol: float = 1e-10,
                 max_evals: int = 2000, initial_step: float = 0.05) -> RefineResult:
    """Nelder-Mead simplex descent from ``start`` with bound clipping.

    With ``bounds`` the search runs in unit coordinates of each bound (log
    axes are searched in log space); ``initial_step`` is then the initial
    simplex edge as a fraction of each range, otherwise relative to
    ``start``. The returned point is the best evaluated one, so its value
    never exceeds the value at ``start``.
    """
    x0 = np.atleast_1d(np.asarray(start, dtype=float))
    if bounds is not None:
        bounds = as_bounds(bounds)
        if len(bounds) != len(x0):
            raise ValueError("bounds and start differ in length")
        for b, x in zip(bounds, x0):
            if not b.lo - 1e-12 * abs(b.lo) <= x <= b.hi + 1e-12 * abs(b.hi):
                raise ValueError(f"start value {x} outside [{b.lo}, {b.hi}]")
        to_x = lambda u: np.array([b.from_unit(v) for b, v in zip(bounds, np.clip(u, 0.0, 1.0))])
        u0 = np.array([float(b.to_unit(x)) for b, x in zip(bounds, x0)])
        box = [(0.0, 1.0)] * len(x0)
        step = np.full(len(x0), initial_step)
        scale = 1.0
    else:
        to_x = lambda u: np.asarray(u, dtype=float)
        u0 = x0.copy()
        box = None
        step = np.where(x0 != 0, initial_step * np.abs(x0), 0.00025)
        scale = max(float(np.abs(x0).max()), 1.0)

    best = {"x": x0.copy(), "f": math.inf}
    trace = []

    def f(u):
        x = to_x(u)
        val = float(objective(x))
        if not math.isfinite(val):
            val = math.inf
        if val < best["f"]:
            best["x"], best["f"] = x.copy(), val
        trace.append(best["f"])
        return val

    f0 = f(u0)
    if bounds is not None:
        # point the simplex inward when the start sits on an upper bound
        step = np.where(u0 + step > 1.0, -step, step)
    simplex = np.vstack([u0] + [u0 + np.eye(len(u0))[i] * step[i] for i in range(len(u0))])
    res = minimize(f, u0, method="Nelder-Mead", bounds=box,
                   options={"xatol": xtol * scale, "fatol": ftol, "maxfev": max(max_evals - 1, 1),
                            "initial_simplex": simplex})
    converged = bool(res.success)
    if not converged:
        log.info("local refinement stopped before convergence: %s", res.message)
    if best["f"] > f0:
        best["x"], best["f"] = x0.copy(), f0
    return RefineResult(best["x"], best["f"], np.array(trace), converged, len(trace), str(res.message))


# --------------------------------------------------------------------------
# Model comparison

@dataclass(frozen=True)
class ModelResult:
    tag: str
    objective: float
    k: int
    n: int
    metric: str = "sse"


@dataclass(frozen=True)
class ModelScore:
    tag: str
    score: float
    delta: float
    relative_likelihood: float
    objective: float
    k: int
    n: int

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def information_score(objective: float, k: int, n: int, criterion: str = "aic") -> float:
    """``n ln(objective / n) + penalty``; penalty ``2k`` (AIC) or ``k ln n`` (BIC).

    Assumes independent Gaussian residuals, i.e. an ``sse`` objective.
    """
    if n < 1 or k < 0:
        raise ValueError("need n >= 1 and k >= 0")
    if not objective > 0:
        raise ValueError("information scores need a positive objective value")
    if criterion == "aic":
        pen = 2.0 * k
    elif criterion == "bic":
        pen = k * math.log(n)
    else:
        raise ValueError(f"unknown criterion {criterion!r}")
    return n * math.log(objective / n) + pen


def compare_models(results, criterion: str = "aic") -> list[ModelScore]:
    """Rank fitted models by information score, best first.

    ``results`` holds :class:`ModelResult` or ``(tag, objective, k, n[, metric])``
    tuples; all must use the same metric.
    """
    rs = [r if isinstance(r, ModelResult) else ModelResult(*r) for r in results]
    if not rs:
        raise ValueError("no models to compare")
    metrics = {r.metric for r in rs}
    if len(metrics) > 1:
        raise InferenceError(f"objectives are not commensurate: metrics {sorted(metrics)}")
    if metrics != {"sse"}:
        log.warning("information scores assume an sse objective, got %s", metrics.pop())
    scores = [information_score(r.objective, r.k, r.n, criterion) for r in rs]
    lo = min(scores)
    out = [ModelScore(r.tag, s, s - lo, math.exp(-(s - lo) / 2), r.objective, r.k, r.n)
           for r, s in zip(rs, scores)]
    return sorted(out, key=lambda m: (m.score, m.k, m.tag))


# --------------------------------------------------------------------------
# Files

def write_screen_csv(result: ScreenResult, path) -> None:
    names = result.names or tuple(f"p{i}" for i in range(result.samples.shape[1]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow([*names, "objective"])
        for x, v in zip(result.samples, result.values):
            w.writerow([repr(float(a)) for a in x] + [repr(float(v))])


def read_screen_csv(path, bounds=None) -> ScreenResult:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    names = tuple(rows[0][:-1])
    data = np.array([[float(a) for a in r] for r in rows[1:]], dtype=float).reshape(-1, len(names) + 1)
    if bounds is None:
        bounds = [Bound(float(c.min()), float(c.max()) if c.max() > c.min() else float(c.min()) + 1.0)
                  for c in data[:, :-1].T]
    return ScreenResult(data[:, :-1], data[:, -1], as_bounds(bounds), names)


def write_summary(path, screen: ScreenResult | None = None, refine: RefineResult | None = None,
                  comparison: list[ModelScore] | None = None, extra: dict | None = None) -> None:
    out: dict = dict(extra or {})
    if screen is not None:
        out["screen"] = {
            "design": screen.design,
            "n_samples": int(len(screen.values)),
            "n_failed": int(np.isinf(screen.values).sum()),
            "best_params": dict(zip(screen.names, screen.best_params.tolist())),
            "best_value": screen.best_value,
            "bounds": [{"lo": b.lo, "hi": b.hi, "scale": b.scale} for b in screen.bounds],
        }
    if refine is not None:
        names = screen.names if screen is not None else tuple(f"p{i}" for i in range(len(refine.x)))
        out["refine"] = {
            "params": dict(zip(names, refine.x.tolist())),
            "value": refine.value,
            "converged": refine.converged,
            "n_evaluations": refine.n_evaluations,
        }
    if comparison is not None:
        out["model_comparison"] = [m.to_dict() for m in comparison]
    Path(path).write_text(json.dumps(out, indent=2) + "\n")
