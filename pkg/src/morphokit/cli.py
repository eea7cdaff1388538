"""Command-line front end: ``morphokit <segment|map|mesh|simulate|fit|plot|run> ...``.

Every command takes an optional JSON run config (``--config``) whose stage
section supplies defaults; command-line flags win. Outputs go under
``--out`` together with a ``<command>.manifest.json`` recording the config
hash, package versions, seed and wall time.

Exit codes: 0 success, 1 computational failure, 2 usage or input error.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__

log = logging.getLogger("morphokit")

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2


class UsageError(Exception):
    """Bad flags, missing files or malformed configuration (exit code 2)."""


# --------------------------------------------------------------------------
# Config handling

class RunContext:
    def __init__(self, args, command: str):
        self.args = args
        self.command = command
        self.config_path = Path(args.config).resolve() if args.config else None
        self.config = _load_json(self.config_path) if self.config_path else {}
        if not isinstance(self.config, dict):
            raise UsageError(f"{self.config_path}: run config must be a JSON object")
        self.base = self.config_path.parent if self.config_path else Path.cwd()
        out = args.out or self.config.get("output") or "morphokit_out"
        self.out = Path(out) if Path(out).is_absolute() or args.out else self.base / out
        self.seed = self._seed()
        self.t0 = time.perf_counter()

    def _seed(self) -> int:
        if self.args.seed is not None:
            return int(self.args.seed)
        env = os.environ.get("MORPHOKIT_SEED")
        if env not in (None, ""):
            try:
                return int(env)
            except ValueError:
                raise UsageError(f"MORPHOKIT_SEED must be an integer, got {env!r}") from None
        return int(self.config.get("seed", 0))

    def section(self, name: str) -> dict:
        sec = self.config.get(name, {})
        if not isinstance(sec, dict):
            raise UsageError(f"config section {name!r} must be an object")
        return dict(sec)

    def path(self, p, must_exist: bool = True) -> Path:
        """Resolve a config path relative to the config file; flags are relative to the cwd."""
        q = Path(p)
        if not q.is_absolute():
            q = self.base / q
        if must_exist and not q.exists():
            raise UsageError(f"input file not found: {q}")
        return q

    def outdir(self) -> Path:
        self.out.mkdir(parents=True, exist_ok=True)
        return self.out

    def manifest(self, effective: dict, outputs, name: str | None = None) -> Path:
        from .fem.simulate import config_hash

        man = {
            "command": self.command,
            "config_hash": config_hash(effective),
            "config": effective,
            "seed": self.seed,
            "outputs": sorted(str(Path(o).relative_to(self.out)) if Path(o).is_relative_to(self.out) else str(o)
                              for o in outputs),
            "versions": _versions(),
            "wall_time_s": round(time.perf_counter() - self.t0, 3),
        }
        path = self.outdir() / f"{name or self.command}.manifest.json"
        path.write_text(json.dumps(man, indent=2, default=str) + "\n")
        return path


def _load_json(path: Path):
    if not path.exists():
        raise UsageError(f"input file not found: {path}")
    try:
        return json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path}: invalid JSON ({exc})") from exc


def _versions() -> dict:
    import scipy
    import triangle

    return {"morphokit": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "triangle": getattr(triangle, "__version__", "unknown"), "python": platform.python_version()}


def _flag(args, name, cfg: dict, key=None, default=None):
    v = getattr(args, name, None)
    if v is not None:
        return v
    return cfg.get(key or name, default)


def _input(ctx: RunContext, flag_value, cfg: dict, key: str) -> Path:
    if flag_value is not None:
        p = Path(flag_value)
        if not p.exists():
            raise UsageError(f"input file not found: {p}")
        return p
    if key not in cfg:
        raise UsageError(f"no {key} given (flag or config '{ctx.command}.{key}')")
    return ctx.path(cfg[key])


def parse_threshold(text: str):
    """``LO:HI[:LABEL]`` -> (label or None, lo, hi)."""
    parts = text.split(":")
    if len(parts) not in (2, 3):
        raise argparse.ArgumentTypeError(f"threshold {text!r} is not LO:HI[:LABEL]")
    try:
        lo, hi = float(parts[0]), float(parts[1])
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold {text!r}: bounds must be numbers") from None
    return (parts[2] if len(parts) == 3 else None, lo, hi)


# --------------------------------------------------------------------------
# segment

def cmd_segment(ctx: RunContext) -> int:
    from .geometry import write_curve
    from .ingest import SegmentationSpec, extract_contours, load_image, segment_threshold

    a, cfg = ctx.args, ctx.section("segment")
    image_path = _input(ctx, a.image, cfg, "image")
    thresholds = a.threshold or [tuple([t[0], t[1], t[2]]) if len(t) == 3 else (None, t[0], t[1])
                                 for t in cfg.get("thresholds", [])]
    if not thresholds:
        raise UsageError("at least one --threshold LO:HI[:LABEL] is required")
    thresholds = [(lab if lab else f"region{i}", float(lo), float(hi)) for i, (lab, lo, hi) in enumerate(thresholds)]
    blur = float(_flag(a, "blur", cfg, "smoothing_radius", 0.0))
    n_points = _flag(a, "points", cfg, "n_points")
    pixel_size = _flag(a, "pixel_size", cfg)

    img = load_image(image_path, pixel_size)
    spec = SegmentationSpec(tuple(thresholds), blur)
    labels = segment_threshold(img, spec)
    out = ctx.outdir()
    written = []
    for k, (name, _, _) in enumerate(thresholds, start=1):
        curves = extract_contours(labels, k, img.pixel_size, int(n_points) if n_points else None, name)
        if not curves:
            log.warning("no pixels in threshold band %r", name)
        for j, c in enumerate(curves):
            path = out / (f"{name}.csv" if j == 0 else f"{name}_{j}.csv")
            write_curve(c, path)
            written.append(path)
    if not written:
        raise ComputationError("segmentation produced no curves")
    eff = {"image": str(image_path), "thresholds": thresholds, "smoothing_radius": blur,
           "n_points": n_points, "pixel_size": img.pixel_size}
    ctx.manifest(eff, written)
    for p in written:
        print(p)
    return EXIT_OK


class ComputationError(RuntimeError):
    pass


# --------------------------------------------------------------------------
# map

def _mapping_config(a, cfg: dict):
    from .mapping import MappingConfig

    d = dict(cfg)
    for key in ("method", "n", "eps", "mesh_h", "n_stream", "t", "dt"):
        v = getattr(a, key, None)
        if v is not None:
            d[key] = v
    if getattr(a, "prescale", None):
        d["prescale"] = True
    if getattr(a, "align_centroids", None):
        d["align_centroids"] = True
    return MappingConfig.from_dict(d)


def cmd_map(ctx: RunContext) -> int:
    from .geometry import read_curve
    from .mapping import run_mapping_pipeline, write_field

    a, cfg = ctx.args, ctx.section("map")
    c1 = read_curve(_input(ctx, a.c1, cfg, "c1"))
    c2 = read_curve(_input(ctx, a.c2, cfg, "c2"))
    mcfg = _mapping_config(a, cfg)
    field, quality = run_mapping_pipeline(c1, c2, mcfg)
    out = ctx.outdir()
    name = a.name or cfg.get("name", "field")
    fpath = out / f"{name}.csv"
    write_field(field, fpath)
    qpath = out / f"{name}_quality.json"
    qpath.write_text(json.dumps({**quality.to_dict(), "method": field.method,
                                 "tried": field.info.get("tried", [])}, indent=2) + "\n")
    written = [fpath, fpath.with_suffix(".json"), qpath]
    if not a.no_plot:
        from .plot import plot_field

        written.append(plot_field(field, out / f"{name}.svg", [c1, c2], title=f"{field.method} mapping"))
    ctx.manifest({"c1": str(a.c1 or cfg.get("c1")), "c2": str(a.c2 or cfg.get("c2")), **mcfg.__dict__},
                 written, name=f"map_{name}" if name != "field" else None)
    print(json.dumps(quality.to_dict()))
    return EXIT_OK if quality.crossing_count == 0 or not a.strict else EXIT_FAIL


# --------------------------------------------------------------------------
# mesh

def _build_mesh(ctx: RunContext, cfg: dict, outer=None, inner=None):
    from .geometry import read_curve
    from .mesh import read_msh, triangulate

    if outer is None and "file" in cfg:
        return read_msh(ctx.path(cfg["file"]))
    outer_path = Path(outer) if outer is not None else ctx.path(cfg["outer"]) if "outer" in cfg else None
    if outer_path is None:
        raise UsageError("no outer boundary curve given")
    if not outer_path.exists():
        raise UsageError(f"input file not found: {outer_path}")
    if outer_path.suffix == ".msh":
        return read_msh(outer_path)
    inner_paths = [Path(p) for p in inner] if inner else [ctx.path(p) for p in cfg.get("inner", [])]
    for p in inner_paths:
        if not p.exists():
            raise UsageError(f"input file not found: {p}")
    c_out = read_curve(outer_path)
    c_in = [read_curve(p) for p in inner_paths]
    return triangulate(c_out, c_in, target_h=float(cfg.get("target_h", 0.1)),
                       min_angle=float(cfg.get("min_angle", 20.0)))


def cmd_mesh(ctx: RunContext) -> int:
    from .mesh import quality_report, read_msh, write_msh

    a, cfg = ctx.args, ctx.section("mesh")
    if a.h is not None:
        cfg["target_h"] = a.h
    gl = _flag(a, "gradient_length", cfg)
    factor = float(_flag(a, "factor", cfg, default=5.0))
    if gl is not None and a.h is None and "target_h" not in cfg:
        cfg["target_h"] = float(gl) / factor
    if a.check_only:
        src = a.input or cfg.get("file")
        if src is None:
            raise UsageError("--check-only needs a mesh file")
        p = Path(src) if a.input else ctx.path(src)
        if not p.exists():
            raise UsageError(f"input file not found: {p}")
        mesh = read_msh(p)
        rep = quality_report(mesh, gl, factor)
        print(json.dumps(rep.to_dict(), indent=2))
        return EXIT_OK if rep.passed else EXIT_FAIL

    mesh = _build_mesh(ctx, cfg, a.input, a.inner)
    rep = quality_report(mesh, gl, factor)
    out = ctx.outdir()
    mpath = out / "mesh.msh"
    write_msh(mesh, mpath)
    qpath = out / "mesh_quality.json"
    qpath.write_text(json.dumps(rep.to_dict(), indent=2) + "\n")
    written = [mpath, qpath]
    if not a.no_plot:
        from .plot import plot_mesh

        written.append(plot_mesh(mesh, out / "mesh.svg", title=f"{mesh.n_vertices} vertices"))
    ctx.manifest({**cfg, "input": str(a.input), "inner": a.inner, "gradient_length": gl, "factor": factor}, written)
    print(json.dumps(rep.to_dict()))
    if not rep.passed:
        log.error("mesh fails quality checks: %s", "; ".join(rep.reasons))
        return EXIT_FAIL
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate

def _growth_series(ctx: RunContext, spec, base: Path | None = None):
    from .fem import GrowthSeries
    from .mapping import read_field

    if isinstance(spec, (str, Path)):
        p = Path(spec)
        if not p.is_absolute():
            p = (base or ctx.base) / p
        if not p.exists():
            raise UsageError(f"input file not found: {p}")
        data = _load_json(p)
        base = p.parent
    else:
        data = spec
        base = base or ctx.base
    try:
        paths = [Path(f) if Path(f).is_absolute() else base / f for f in data["fields"]]
        for p in paths:
            if not p.exists():
                raise UsageError(f"input file not found: {p}")
        return GrowthSeries(data["times"], [read_field(p) for p in paths], tuple(data.get("fixed_labels", ())),
                            float(data.get("tol", 1e-3)))
    except KeyError as exc:
        raise UsageError(f"growth series lacks {exc}") from None


def _setup_simulation(ctx: RunContext, cfg: dict, mesh=None, model_cfg=None):
    from .fem import BoundaryCondition, FieldState, model_from_config

    if mesh is None:
        flag = getattr(ctx.args, "mesh_file", None)
        if flag:
            if not Path(flag).exists():
                raise UsageError(f"input file not found: {flag}")
            mcfg = {"file": str(Path(flag).resolve())}
        else:
            mcfg = cfg.get("mesh", ctx.section("mesh"))
            if isinstance(mcfg, str):
                mcfg = {"file": mcfg}
        mesh = _build_mesh(ctx, mcfg)
    try:
        model = model_from_config(model_cfg or cfg["model"])
    except KeyError as exc:
        raise UsageError(f"simulate config lacks {exc}") from None
    bc = BoundaryCondition.from_config(cfg.get("bc", {}))
    bc.check(mesh, model.n_species)
    init = cfg.get("initial", {})
    values = init.get("values", "steady")
    base = model.homogeneous_steady_state() if values == "steady" else np.asarray(values, dtype=float)
    if len(base) != model.n_species:
        raise UsageError(f"initial values need {model.n_species} entries")
    amp = float(init.get("noise", 0.01))
    rng = np.random.default_rng(ctx.seed)
    c = base[:, None] * (1.0 + amp * rng.uniform(-1.0, 1.0, (model.n_species, mesh.n_vertices)))
    return mesh, model, bc, FieldState(mesh, c, float(init.get("t", 0.0)))


def cmd_simulate(ctx: RunContext) -> int:
    from .fem import Schedule, simulate, write_trajectory
    from .mesh import write_msh

    a, cfg = ctx.args, ctx.section("simulate")
    for key in ("t_end", "dt", "stride"):
        v = getattr(a, key, None)
        if v is not None:
            cfg[key] = v
    mesh, model, bc, init = _setup_simulation(ctx, cfg)
    growth_spec = a.growth if a.growth is not None else cfg.get("growth")
    growth = None
    if growth_spec is not None:
        growth = _growth_series(ctx, Path(a.growth).resolve() if a.growth else growth_spec)
    try:
        sched = Schedule(float(cfg["t_end"]), float(cfg["dt"]), int(cfg.get("stride", 1)))
    except KeyError as exc:
        raise UsageError(f"simulate config lacks {exc}") from None
    states = simulate(model, mesh, bc, init, sched, growth, cfg.get("equilibrate_tol"))
    out = ctx.outdir()
    traj = out / "trajectory"
    written = [write_trajectory(states, traj, cfg, ctx.seed)]
    written += sorted(traj.glob("frame_*.csv"))
    write_msh(states[-1].mesh, out / "final_mesh.msh")
    written.append(out / "final_mesh.msh")
    plot = cfg.get("plot", True) and not a.no_plot
    if plot:
        from .plot import plot_state

        last = states[-1].c[0]
        for k, s in enumerate(states):
            written.append(plot_state(s, traj / f"frame_{k:05d}.svg", 0, float(last.min()), float(last.max())))
    final = states[-1]
    summary = {"n_frames": len(states), "t_final": final.t,
               "min": final.c.min(axis=1).tolist(), "max": final.c.max(axis=1).tolist(),
               "rel_std": (final.c.std(axis=1) / np.maximum(np.abs(final.c.mean(axis=1)), 1e-300)).tolist()}
    (out / "simulate_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    written.append(out / "simulate_summary.json")
    ctx.manifest({**cfg, "growth": str(growth_spec) if growth_spec is not None else None}, written)
    print(json.dumps(summary))
    return EXIT_OK


# --------------------------------------------------------------------------
# fit

def _fit_one(ctx, cfg, sim_cfg, mesh, model_cfg, target, tag, n_screen, refine, jobs):
    from .fem import Schedule, simulate
    from .infer import Dataset, Metric, Objective, grid_screen, local_refine

    mesh, model, bc, init = _setup_simulation(ctx, sim_cfg, mesh, model_cfg)
    sched = Schedule(float(sim_cfg["t_end"]), float(sim_cfg["dt"]), max(int(round(sim_cfg["t_end"] / sim_cfg["dt"])), 1))
    params = cfg.get("params") if model_cfg is None else model_cfg.get("fit_params", cfg.get("params"))
    if not params:
        raise UsageError("fit config needs 'params': {name: [lo, hi, scale]}")
    names = tuple(params)
    bounds = [params[n] for n in names]

    def simulator(p):
        return simulate(model.with_params(**p), mesh, bc, init, sched)[-1]

    metric = Metric.from_dict(cfg.get("metric", {"kind": "sse"}))
    obj = Objective(simulator, [Dataset(target, metric, float(cfg.get("weight", 1.0)))], names)
    screen = grid_screen(obj, bounds, n_screen, int(cfg.get("budget", 10_000)), ctx.seed, jobs, names)
    ref = None
    if refine:
        ref = local_refine(obj, screen.best_params, screen.bounds, float(cfg.get("xtol", 1e-6)),
                           max_evals=int(cfg.get("max_evals", 500)))
    return screen, ref, obj, metric


def cmd_fit(ctx: RunContext) -> int:
    from .fem.simulate import read_frame
    from .infer import ModelResult, compare_models, write_screen_csv, write_summary

    a, cfg = ctx.args, ctx.section("fit")
    sim_cfg = ctx.section("simulate")
    for key in ("t_end", "dt"):
        if key in cfg:
            sim_cfg[key] = cfg[key]
    if "t_end" not in sim_cfg or "dt" not in sim_cfg:
        raise UsageError("fit needs simulate.t_end and simulate.dt")
    n_screen = a.screen if a.screen is not None else cfg.get("screen", 5)
    refine = a.refine if a.refine is not None else bool(cfg.get("refine", False))
    mesh, _, _, _ = _setup_simulation(ctx, sim_cfg)
    target_path = Path(a.target) if a.target else ctx.path(cfg["target"]) if "target" in cfg else None
    if target_path is None:
        raise UsageError("fit needs a target frame (--target or fit.target)")
    if not target_path.exists():
        raise UsageError(f"input file not found: {target_path}")
    target = read_frame(target_path, mesh)
    models = cfg.get("models") or [{"tag": sim_cfg.get("model", {}).get("kinetics", "model"), **sim_cfg["model"]}]
    out = ctx.outdir()
    written, results, fits = [], [], {}
    metric_kind = None
    for m in models:
        tag = m.get("tag", m.get("kinetics"))
        screen, ref, obj, metric = _fit_one(ctx, cfg, sim_cfg, target.mesh, m if cfg.get("models") else None,
                                            target, tag, n_screen, refine, a.jobs)
        metric_kind = metric.kind
        p = out / f"screen_{tag}.csv"
        write_screen_csv(screen, p)
        written.append(p)
        best = ref.value if ref is not None else screen.best_value
        x = ref.x if ref is not None else screen.best_params
        fits[tag] = {"params": dict(zip(screen.names, x.tolist())), "value": best,
                     "converged": ref.converged if ref is not None else None}
        if np.isfinite(best):
            results.append(ModelResult(tag, max(best, 1e-300), len(screen.names), obj.n_data, metric_kind))
    comparison = compare_models(results, cfg.get("criterion", "aic")) if results else None
    spath = out / "fit_summary.json"
    write_summary(spath, comparison=comparison, extra={"fits": fits, "metric": metric_kind})
    written.append(spath)
    ctx.manifest({"fit": cfg, "simulate": sim_cfg, "screen": n_screen, "refine": refine}, written)
    print(json.dumps(fits))
    return EXIT_OK


# --------------------------------------------------------------------------
# plot

def _sniff(path: Path) -> str:
    if path.suffix == ".msh":
        return "mesh"
    head = path.open().readline().strip()
    if head.startswith("x,y,dx,dy"):
        return "field"
    if head.startswith("vertex_id"):
        return "frame"
    if head.startswith("x,y"):
        return "curve"
    raise UsageError(f"{path}: cannot tell what kind of file this is")


def cmd_plot(ctx: RunContext) -> int:
    from .fem.simulate import read_frame
    from .geometry import read_curve
    from .mapping import read_field
    from .mesh import read_msh
    from .plot import plot_curves, plot_field, plot_mesh, plot_state

    a = ctx.args
    paths = [Path(p) for p in a.inputs]
    for p in paths:
        if not p.exists():
            raise UsageError(f"input file not found: {p}")
    kinds = [_sniff(p) for p in paths]
    out = ctx.outdir()
    target = out / (a.output or f"{paths[0].stem}.svg")
    if "frame" in kinds:
        if a.mesh_file is None:
            raise UsageError("plotting a frame needs --mesh")
        mesh = read_msh(a.mesh_file)
        plot_state(read_frame(paths[kinds.index("frame")], mesh), target, a.species, title=a.title)
    elif "field" in kinds:
        curves = [read_curve(p) for p, k in zip(paths, kinds) if k == "curve"]
        plot_field(read_field(paths[kinds.index("field")]), target, curves, title=a.title)
    elif "mesh" in kinds:
        plot_mesh(read_msh(paths[kinds.index("mesh")]), target, title=a.title)
    else:
        plot_curves([read_curve(p) for p in paths], target, title=a.title)
    ctx.manifest({"inputs": [str(p) for p in paths], "species": a.species}, [target])
    print(target)
    return EXIT_OK


# --------------------------------------------------------------------------
# run: the whole pipeline from one config

def cmd_run(ctx: RunContext) -> int:
    """Segment each stage image, map consecutive stages, mesh the first stage
    and simulate on the growing domain.

    Config keys: ``stages`` (list of {"image", "time"}), ``segment``
    (thresholds, smoothing_radius, n_points, label), ``map``, ``mesh``
    (target_h), ``simulate`` (model, bc, initial, t_end, dt, stride).
    """
    from .fem import GrowthSeries, Schedule, simulate, write_trajectory
    from .geometry import write_curve
    from .ingest import SegmentationSpec, extract_contours, load_image, segment_threshold
    from .mapping import run_mapping_pipeline, write_field
    from .mesh import quality_report, triangulate, write_msh
    from .plot import plot_curves, plot_field, plot_mesh, plot_state

    cfg = ctx.config
    stages = cfg.get("stages")
    if not stages:
        raise UsageError("run config needs a non-empty 'stages' list")
    seg = ctx.section("segment")
    out = ctx.outdir()
    written = []

    label = seg.get("label", "epithelium")
    thresholds = tuple((label if i == 0 else f"{label}{i}", float(t[-2]), float(t[-1]))
                       for i, t in enumerate(seg.get("thresholds", [[128, 65535]])))
    spec = SegmentationSpec(thresholds[:1], float(seg.get("smoothing_radius", 0.0)))
    curves, times = [], []
    for k, st in enumerate(stages):
        img = load_image(ctx.path(st["image"]), st.get("pixel_size"))
        found = extract_contours(segment_threshold(img, spec), 1, img.pixel_size,
                                 seg.get("n_points"), label)
        outer = [c for c in found if c.closed and _ccw(c)]
        if not outer:
            raise ComputationError(f"segment: stage {k} has no foreground region")
        c = max(outer, key=lambda c: abs(_area(c)))
        curves.append(c)
        times.append(float(st.get("time", k)))
        p = out / "curves" / f"stage_{k}.csv"
        p.parent.mkdir(exist_ok=True)
        write_curve(c, p)
        written.append(p)
    written.append(plot_curves(curves, out / "curves" / "stages.svg", title="segmented stages"))

    mcfg = _mapping_config(argparse.Namespace(), ctx.section("map"))
    fields = []
    for k in range(len(curves) - 1):
        mcfg_k = mcfg.__class__(**{**mcfg.__dict__, "t": times[k], "dt": times[k + 1] - times[k]})
        f, q = run_mapping_pipeline(curves[k], curves[k + 1], mcfg_k)
        if q.crossing_count:
            log.warning("map: stage %d field has %d crossings", k, q.crossing_count)
        p = out / "fields" / f"field_{k}.csv"
        p.parent.mkdir(exist_ok=True)
        write_field(f, p)
        (out / "fields" / f"field_{k}_quality.json").write_text(json.dumps(q.to_dict(), indent=2) + "\n")
        written += [p, plot_field(f, out / "fields" / f"field_{k}.svg", [curves[k], curves[k + 1]])]
        fields.append(f)

    mesh_cfg = ctx.section("mesh")
    h = float(mesh_cfg.get("target_h", curves[0].length / 64))
    mesh = triangulate(curves[0], target_h=h)
    rep = quality_report(mesh, mesh_cfg.get("gradient_length"), float(mesh_cfg.get("factor", 5.0)))
    if not rep.passed:
        raise ComputationError("mesh: " + "; ".join(rep.reasons))
    write_msh(mesh, out / "mesh.msh")
    written += [out / "mesh.msh", plot_mesh(mesh, out / "mesh.svg")]

    sim = ctx.section("simulate")
    mesh, model, bc, init = _setup_simulation(ctx, sim, mesh)
    init = init.__class__(mesh, init.c, times[0])
    growth = GrowthSeries(times, fields, (), float(sim.get("growth_tol", 1e-3))) if fields else None
    sched = Schedule(float(sim["t_end"]), float(sim["dt"]), int(sim.get("stride", 1)))
    states = simulate(model, mesh, bc, init, sched, growth)
    traj = out / "trajectory"
    written.append(write_trajectory(states, traj, cfg, ctx.seed))
    written += sorted(traj.glob("frame_*.csv"))
    last = states[-1].c[0]
    for k, s in enumerate(states):
        written.append(plot_state(s, traj / f"frame_{k:05d}.svg", 0, float(last.min()), float(last.max())))
    final = states[-1]
    summary = {"n_frames": len(states), "t_final": final.t, "area_final": final.mesh.area,
               "rel_std": (final.c.std(axis=1) / np.abs(final.c.mean(axis=1))).tolist()}
    (out / "run_summary.json").write_text(json.dumps(summary, indent=2) + "\n")
    written.append(out / "run_summary.json")
    ctx.manifest(cfg, written)
    print(json.dumps(summary))
    return EXIT_OK


def _area(c):
    from .geometry import signed_area

    return signed_area(c)


def _ccw(c):
    return _area(c) > 0


# --------------------------------------------------------------------------
# Parser

COMMANDS = {"segment": cmd_segment, "map": cmd_map, "mesh": cmd_mesh, "simulate": cmd_simulate,
            "fit": cmd_fit, "plot": cmd_plot, "run": cmd_run}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run config")
    common.add_argument("--out", help="output directory (default: config 'output' or ./morphokit_out)")
    common.add_argument("--seed", type=int, help="random seed (overrides MORPHOKIT_SEED and the config)")
    common.add_argument("--jobs", type=int, default=1, help="worker cap for parallel evaluations")
    common.add_argument("-v", "--verbose", action="count", default=0)

    p = argparse.ArgumentParser(prog="morphokit", description=__doc__.split("\n")[0])
    p.add_argument("--version", action="version", version=f"morphokit {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("segment", parents=[common], help="threshold an image and extract boundary curves")
    s.add_argument("image", nargs="?", help="PGM image")
    s.add_argument("--threshold", action="append", type=parse_threshold, help="LO:HI[:LABEL], repeatable")
    s.add_argument("--blur", type=float, help="Gaussian smoothing radius in pixels")
    s.add_argument("--points", type=int, help="resample each curve to this many points")
    s.add_argument("--pixel-size", type=float, dest="pixel_size", help="um per pixel")

    s = sub.add_parser("map", parents=[common], help="displacement field between two stage boundaries")
    s.add_argument("c1", nargs="?", help="curve at stage t")
    s.add_argument("c2", nargs="?", help="curve at stage t + dt")
    s.add_argument("--method", choices=["auto", "minimal_distance", "uniform", "normal", "reverse_normal",
                                        "diffusion", "reverse_diffusion"])
    s.add_argument("--n", type=int, help="number of boundary samples")
    s.add_argument("--prescale", action="store_true", default=None, help="similarity prescale of c1 toward c2")
    s.add_argument("--align-centroids", action="store_true", default=None, dest="align_centroids")
    s.add_argument("--eps", type=float)
    s.add_argument("--mesh-h", type=float, dest="mesh_h")
    s.add_argument("--n-stream", type=int, dest="n_stream")
    s.add_argument("--t", type=float)
    s.add_argument("--dt", type=float)
    s.add_argument("--name", help="output file stem (default 'field')")
    s.add_argument("--strict", action="store_true", help="exit 1 when the field has crossings")
    s.add_argument("--no-plot", action="store_true", dest="no_plot")

    s = sub.add_parser("mesh", parents=[common], help="triangulate a boundary or check a mesh")
    s.add_argument("input", nargs="?", help="outer curve CSV (or .msh with --check-only)")
    s.add_argument("--inner", action="append", help="inner curve CSV, repeatable")
    s.add_argument("--h", type=float, help="target edge length")
    s.add_argument("--gradient-length", type=float, dest="gradient_length")
    s.add_argument("--factor", type=float)
    s.add_argument("--check-only", action="store_true", dest="check_only")
    s.add_argument("--no-plot", action="store_true", dest="no_plot")

    s = sub.add_parser("simulate", parents=[common], help="reaction-diffusion simulation")
    s.add_argument("--mesh", dest="mesh_file", help="mesh file (overrides the config)")
    s.add_argument("--growth", help="growth series JSON: {times, fields, fixed_labels}")
    s.add_argument("--t-end", type=float, dest="t_end")
    s.add_argument("--dt", type=float)
    s.add_argument("--stride", type=int)
    s.add_argument("--no-plot", action="store_true", dest="no_plot")

    s = sub.add_parser("fit", parents=[common], help="screen and refine model parameters against a target")
    s.add_argument("--mesh", dest="mesh_file")
    s.add_argument("--target", help="target frame CSV")
    s.add_argument("--screen", type=int, help="grid points per parameter")
    s.add_argument("--refine", action="store_true", default=None)
    s.add_argument("--no-refine", action="store_false", dest="refine")

    s = sub.add_parser("plot", parents=[common], help="SVG of curves, a field, a mesh or a frame")
    s.add_argument("inputs", nargs="+")
    s.add_argument("--mesh", dest="mesh_file", help="mesh for frame files")
    s.add_argument("--species", type=int, default=0)
    s.add_argument("-o", "--output", help="SVG file name inside --out")
    s.add_argument("--title")

    s = sub.add_parser("run", parents=[common], help="full pipeline from one config")
    s.add_argument("--mesh", dest="mesh_file", help=argparse.SUPPRESS)
    return p


def main(argv=None) -> int:
    from .fem import SolverError
    from .geometry import CurveError
    from .infer import InferenceError
    from .ingest import ImageFormatError
    from .mapping import MappingError
    from .mapping.tps import SingularLandmarksError
    from .mesh import MeshError

    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    stage = args.command
    try:
        ctx = RunContext(args, stage)
        return COMMANDS[stage](ctx)
    except (UsageError, FileNotFoundError, ImageFormatError, CurveError, json.JSONDecodeError) as exc:
        print(f"morphokit {stage}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ComputationError, MeshError, MappingError, SolverError, InferenceError, SingularLandmarksError,
            np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"morphokit {stage}: failed: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except (ValueError, KeyError) as exc:
        print(f"morphokit {stage}: invalid input: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
