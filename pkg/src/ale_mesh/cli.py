"""Command-line front end: init / evolve / relax / compare.

Configs are flat ``section.key = value`` text files ('#' starts a
comment); ``--set key=value`` overrides file entries.  Every command
writes into the directory given by ``--out``.  Exit codes: 0 success,
2 configuration problem, 3 numerical failure.

The environment variable ALE_MESH_THREADS caps the thread count of the
underlying linear-algebra libraries (0 or unset picks their default).
"""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path

import numpy as np

from .errors import AleMeshError, ConfigError, SurfaceError
from .forces import ForceConfig
from .geometry import (TriMesh, build_mesh, extract_isosurface_mesh,
                       generate_icosphere, generate_torus_mesh, mesh_quality,
                       perturb_positions)
from .obj_io import read_obj, write_obj
from .splitting import (METHOD_TAGS, EvolutionMethod, Trajectory, evolve,
                        relax_static)
from .dae import NewtonSettings
from .surface import project, surface_from_name

CONFIG_DIR = Path(__file__).parent / "configs"

# every key the grammar accepts, with its parser
_KEY_PARSERS = {
    "surface.name": str,
    "init.source": str,
    "init.bounds": "bounds",
    "init.perturb_amplitude": float,
    "init.perturb_seed": int,
    "init.prerelax_steps": int,
    "init.prerelax_k": float,
    "init.prerelax_p": float,
    "init.prerelax_window": float,
    "init.prerelax_substeps": int,
    "init.polish_steps": int,
    "init.polish_p": float,
    "run.mesh": str,
    "run.method": str,
    "run.t0": float,
    "run.T": float,
    "run.tau": float,
    "run.substeps": int,
    "run.snapshot_times": "times",
    "run.skew_threshold": float,
    "dae.stages": int,
    "dae.tau": float,
    "dae.newton_tol": float,
    "dae.newton_max_iter": int,
    "force.k": float,
    "force.p": float,
    "force.k_alpha": float,
    "force.alpha_tol_deg": float,
    "relax.steps": int,
    "relax.window": float,
}


def parse_config_text(text, origin="<config>"):
    """Parse the flat key = value grammar into a raw string dict."""
    raw = {}
    for ln, line in enumerate(text.splitlines(), start=1):
        stripped = line.split("#", 1)[0].strip()
        if not stripped:
            continue
        if "=" not in stripped:
            raise ConfigError(f"{origin}:{ln}: expected 'section.key = value'")
        key, value = (part.strip() for part in stripped.split("=", 1))
        if key not in _KEY_PARSERS:
            raise ConfigError(f"{origin}:{ln}: unknown key {key!r}")
        if key in raw:
            raise ConfigError(f"{origin}:{ln}: duplicate key {key!r}")
        raw[key] = value
    return raw


def _parse_times(value):
    try:
        return tuple(float(p) for p in value.split(",") if p.strip())
    except ValueError as exc:
        raise ConfigError(f"bad time list {value!r}") from exc


def _parse_bounds(value):
    try:
        lo, hi = value.split(":")
        lo = tuple(float(p) for p in lo.split(","))
        hi = tuple(float(p) for p in hi.split(","))
    except ValueError as exc:
        raise ConfigError(
            f"bad bounds {value!r}; expected x,y,z:x,y,z") from exc
    if len(lo) != 3 or len(hi) != 3:
        raise ConfigError(f"bounds {value!r} need three coordinates per corner")
    return (lo, hi)


def typed_config(raw):
    """Convert raw strings to typed values, validating each key."""
    cfg = {}
    for key, value in raw.items():
        parser = _KEY_PARSERS[key]
        if parser == "times":
            cfg[key] = _parse_times(value)
        elif parser == "bounds":
            cfg[key] = _parse_bounds(value)
        else:
            try:
                cfg[key] = parser(value)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {value!r}") from exc
    return cfg


def load_config(path, overrides=()):
    """Read a config file and apply --set overrides, typed and validated."""
    path = Path(path)
    if not path.exists() and (CONFIG_DIR / path.name).exists():
        path = CONFIG_DIR / path.name
    try:
        raw = parse_config_text(path.read_text(), origin=str(path))
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        if key not in _KEY_PARSERS:
            raise ConfigError(f"--set: unknown key {key!r}")
        raw[key] = value
    return typed_config(raw)


def _force_config(cfg):
    return ForceConfig(
        k=cfg.get("force.k", 500.0),
        p=cfg.get("force.p", 0.4),
        k_alpha=cfg.get("force.k_alpha", 0.0),
        alpha_tol_deg=cfg.get("force.alpha_tol_deg", 90.0))


def _surface(cfg):
    try:
        return surface_from_name(cfg.get("surface.name", "dumbbell"))
    except SurfaceError as exc:
        raise ConfigError(str(exc)) from exc


def _source_mesh(cfg, surface):
    """Build or load the raw initial mesh named by init.source."""
    source = cfg.get("init.source")
    if source is None:
        raise ConfigError("init.source is required")
    if source.startswith("icosphere:"):
        n = _positive_int(source.split(":", 1)[1], "icosphere subdivisions")
        return generate_icosphere(n)
    if source.startswith("torus_grid:"):
        parts = source.split(":")
        if len(parts) != 3:
            raise ConfigError(f"mesh source {source!r} must be torus_grid:nu:nv")
        nu = _positive_int(parts[1], "torus grid nu")
        nv = _positive_int(parts[2], "torus grid nv")
        if not surface.name.startswith("torus"):
            raise ConfigError("torus_grid mesh needs a torus surface")
        _, R, r = surface.name.split(":")
        return generate_torus_mesh(nu, nv, float(R), float(r))
    if source.startswith("isosurface:"):
        res = _positive_int(source.split(":", 1)[1], "isosurface resolution")
        bounds = cfg.get("init.bounds", surface.bounds)
        t0 = cfg.get("run.t0", 0.0)
        return extract_isosurface_mesh(lambda x: surface.d(x, t0), bounds, res)
    path = Path(source)
    if not path.exists():
        raise ConfigError(f"mesh file not found: {source}")
    return read_obj(path)


def _positive_int(text, what):
    try:
        value = int(text)
    except ValueError as exc:
        raise ConfigError(f"bad {what}: {text!r}") from exc
    if value < 0:
        raise ConfigError(f"{what} must be nonnegative, got {value}")
    return value


def build_initial_mesh(cfg, surface):
    """Source mesh -> optional perturbation -> projection -> pre-relaxation.

    Pre-relaxation always runs with the angle force off; its spring
    parameters default to the force section's.  An optional shorter
    polish phase with its own band parameter may follow (a wider band
    first, then a short tightening pass settles meshes that a single
    band cannot).
    """
    mesh = _source_mesh(cfg, surface)
    amplitude = cfg.get("init.perturb_amplitude", 0.0)
    if amplitude > 0.0:
        seed = cfg.get("init.perturb_seed", 0)
        mesh = build_mesh(perturb_positions(mesh, amplitude, seed),
                          mesh.triangles)
    t0 = cfg.get("run.t0", 0.0)
    x = project(surface, mesh.vertices, t0, tol=1e-12)
    mesh = build_mesh(x, mesh.triangles)
    substeps = cfg.get("init.prerelax_substeps", cfg.get("run.substeps", 25))
    window = cfg.get("init.prerelax_window", 0.01)
    k = cfg.get("init.prerelax_k", cfg.get("force.k", 500.0))
    phases = (
        (cfg.get("init.prerelax_steps", 0),
         cfg.get("init.prerelax_p", cfg.get("force.p", 0.4))),
        (cfg.get("init.polish_steps", 0),
         cfg.get("init.polish_p", cfg.get("force.p", 0.4))),
    )
    for steps, p in phases:
        if steps <= 0:
            continue
        forces = ForceConfig(k=k, p=p, k_alpha=0.0)
        trajectory = relax_static(mesh, surface, forces, steps=steps,
                                  substeps=substeps, window=window, t=t0)
        mesh = build_mesh(trajectory.snapshots[-1][1], mesh.triangles)
    return mesh


def _evolution_method(cfg):
    tag = cfg.get("run.method")
    if tag is None:
        raise ConfigError("run.method is required")
    if tag not in METHOD_TAGS:
        raise ConfigError(f"unknown method {tag!r}; expected one of "
                          f"{METHOD_TAGS}")
    tau = cfg.get("run.tau", 0.01)
    if tag == "radau":
        tau = cfg.get("dae.tau", tau)
    newton = NewtonSettings(
        tol=cfg.get("dae.newton_tol", NewtonSettings.tol),
        max_iter=cfg.get("dae.newton_max_iter", NewtonSettings.max_iter))
    return EvolutionMethod(
        tag=tag, tau=tau,
        substeps=cfg.get("run.substeps", 25),
        skew_threshold=cfg.get("run.skew_threshold", 0.5),
        forces=_force_config(cfg),
        stages=cfg.get("dae.stages", 3),
        newton=newton,
        snapshot_times=cfg.get("run.snapshot_times", ()))


def _quality_rows(times, quality_series):
    lines = ["# t,r,alpha_min,alpha_max,skew_max"]
    for t, q in zip(times, quality_series):
        lines.append(",".join(repr(float(v)) for v in
                              (t, q.r, q.alpha_min, q.alpha_max, q.skew_max)))
    return "\n".join(lines) + "\n"


def _write_quality_csv(path, trajectory):
    Path(path).write_text(
        _quality_rows(trajectory.times, trajectory.quality_series))


def _write_snapshots(out, mesh, trajectory):
    for t, positions in trajectory.snapshots:
        snap = build_mesh(positions, mesh.triangles)
        write_obj(out / f"mesh_t{t:g}.obj", snap)


def _write_summary(path, lines):
    Path(path).write_text("\n".join(lines) + "\n")


def _summary_lines(trajectory, wall, mesh):
    final = trajectory.quality_series[-1]
    lines = [
        f"method: {trajectory.method}",
        f"steps: {len(trajectory.times) - 1}",
        f"wall time: {wall:.2f} s",
        f"mesh: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles",
        (f"final quality: r={final.r:.6g} alpha_min={final.alpha_min:.6g} "
         f"alpha_max={final.alpha_max:.6g} skew_max={final.skew_max:.6g}"),
        f"classification: {final.classification}",
    ]
    if trajectory.newton_stats is not None:
        lines.append("newton statistics:")
        lines.extend("  " + s for s in trajectory.newton_stats.summary_lines())
    return lines


def cmd_init(cfg, out):
    surface = _surface(cfg)
    mesh = build_initial_mesh(cfg, surface)
    write_obj(out / "mesh0.obj", mesh)
    quality = mesh_quality(mesh)
    residual = np.abs(surface.d(mesh.vertices, cfg.get("run.t0", 0.0))).max()
    _write_summary(out / "summary.txt", [
        f"surface: {surface.name}",
        f"mesh: {mesh.n_vertices} vertices, {mesh.n_triangles} triangles",
        f"constraint residual: {residual:.3e}",
        (f"quality: r={quality.r:.6g} alpha_min={quality.alpha_min:.6g} "
         f"alpha_max={quality.alpha_max:.6g} skew_max={quality.skew_max:.6g}"),
    ])
    print(f"wrote {out / 'mesh0.obj'} ({mesh.n_vertices} vertices, "
          f"skew_max {quality.skew_max:.4f})")
    return 0


def _load_run_mesh(cfg, surface):
    path = cfg.get("run.mesh")
    if path is not None:
        obj = Path(path)
        if not obj.exists():
            raise ConfigError(f"mesh file not found: {path}")
        return read_obj(obj)
    return build_initial_mesh(cfg, surface)


def cmd_evolve(cfg, out):
    surface = _surface(cfg)
    mesh = _load_run_mesh(cfg, surface)
    method = _evolution_method(cfg)
    t0 = cfg.get("run.t0", 0.0)
    t_end = cfg.get("run.T")
    if t_end is None:
        raise ConfigError("run.T is required for evolve")
    start = time.perf_counter()
    try:
        trajectory = evolve(mesh, surface, method, t0, t_end)
    except AleMeshError as err:
        partial = getattr(err, "partial", None)
        if partial is not None:
            _write_quality_csv(out / "quality.csv", partial)
            _write_snapshots(out, mesh, partial)
        _write_summary(out / "summary.txt", [
            f"method: {method.tag}",
            f"FAILED at t={getattr(err, 'failed_at', float('nan')):g}: {err}",
        ])
        raise
    wall = time.perf_counter() - start
    _write_quality_csv(out / "quality.csv", trajectory)
    _write_snapshots(out, mesh, trajectory)
    _write_summary(out / "summary.txt", _summary_lines(trajectory, wall, mesh))
    final = trajectory.quality_series[-1]
    print(f"{method.tag}: {len(trajectory.times) - 1} steps in {wall:.2f} s, "
          f"final skew_max {final.skew_max:.4f}")
    return 0


def cmd_relax(cfg, out):
    surface = _surface(cfg)
    mesh = _load_run_mesh(cfg, surface)
    steps = cfg.get("relax.steps", 25)
    start = time.perf_counter()
    trajectory = relax_static(
        mesh, surface, _force_config(cfg), steps=steps,
        substeps=cfg.get("run.substeps", 25),
        window=cfg.get("relax.window", 0.01),
        t=cfg.get("run.t0", 0.0))
    wall = time.perf_counter() - start
    lines = ["# step,alpha_max"]
    for step, q in enumerate(trajectory.quality_series):
        lines.append(f"{step},{repr(float(q.alpha_max))}")
    (out / "angles.csv").write_text("\n".join(lines) + "\n")
    _write_quality_csv(out / "quality.csv", trajectory)
    final_mesh = build_mesh(trajectory.snapshots[-1][1], mesh.triangles)
    write_obj(out / "mesh_final.obj", final_mesh)
    _write_summary(out / "summary.txt",
                   _summary_lines(trajectory, wall, final_mesh))
    series = [q.alpha_max for q in trajectory.quality_series]
    print(f"relax_static: alpha_max {series[0]:.2f} -> {series[-1]:.2f} "
          f"over {steps} steps in {wall:.2f} s")
    return 0


def cmd_compare(cfgs, out):
    if len(cfgs) < 2:
        raise ConfigError("need at least two runs to compare")
    surfaces = {cfg.get("surface.name", "dumbbell") for cfg in cfgs}
    if len(surfaces) > 1:
        raise ConfigError(f"configs disagree on the surface: {sorted(surfaces)}")
    spans = {(cfg.get("run.t0", 0.0), cfg.get("run.T")) for cfg in cfgs}
    if len(spans) > 1:
        raise ConfigError(f"configs disagree on the time interval: {spans}")

    runs = []
    for index, cfg in enumerate(cfgs):
        if cfg.get("run.T") is None:
            raise ConfigError("run.T is required for compare")
        surface = _surface(cfg)
        mesh = _load_run_mesh(cfg, surface)
        method = _evolution_method(cfg)
        run_dir = out / f"run{index}_{method.tag}"
        run_dir.mkdir(parents=True, exist_ok=True)
        start = time.perf_counter()
        trajectory = evolve(mesh, surface, method,
                            cfg.get("run.t0", 0.0), cfg.get("run.T"))
        wall = time.perf_counter() - start
        _write_quality_csv(run_dir / "quality.csv", trajectory)
        _write_summary(run_dir / "summary.txt",
                       _summary_lines(trajectory, wall, mesh))
        runs.append((method.tag, trajectory))

    # merge on the time grid common to every run
    def keyed(traj):
        return {round(float(t), 9): q
                for t, q in zip(traj.times, traj.quality_series)}
    tables = [keyed(traj) for _, traj in runs]
    common = sorted(set(tables[0]).intersection(*tables[1:]))
    if len(common) < 2:
        raise ConfigError("mismatched time grids: no common recorded times")

    tags = [tag for tag, _ in runs]
    header = "# t," + ",".join(
        f"{tag}_{measure}" for tag in tags
        for measure in ("r", "alpha_min", "alpha_max", "skew_max"))
    lines = [header]
    for t in common:
        row = [repr(float(t))]
        for table in tables:
            q = table[t]
            row.extend(repr(float(v)) for v in
                       (q.r, q.alpha_min, q.alpha_max, q.skew_max))
        lines.append(",".join(row))
    (out / "compare.csv").write_text("\n".join(lines) + "\n")
    print(f"compared {', '.join(tags)} on {len(common)} shared times")
    return 0


def make_parser():
    parser = argparse.ArgumentParser(
        prog="ale-mesh",
        description="Constrained spring-relaxation ALE maps for evolving "
                    "surface meshes.",
        epilog="ALE_MESH_THREADS caps linear-algebra threads (0 = auto).")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, needs_many in (("init", False), ("evolve", False),
                             ("relax", False), ("compare", True)):
        cmd = sub.add_parser(name)
        cmd.add_argument("--config", action="append", required=True,
                         metavar="PATH",
                         help="config file (repeatable for compare)")
        cmd.add_argument("--set", action="append", default=[],
                         metavar="KEY=VALUE", dest="overrides",
                         help="override a config entry")
        cmd.add_argument("--out", required=True, metavar="DIR",
                         help="output directory (created if missing)")
        cmd.set_defaults(many=needs_many)
    return parser


def main(argv=None):
    args = make_parser().parse_args(argv)
    try:
        cfgs = [load_config(path, args.overrides) for path in args.config]
        if not args.many and len(cfgs) != 1:
            raise ConfigError(f"{args.command} takes exactly one --config")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        if args.command == "init":
            return cmd_init(cfgs[0], out)
        if args.command == "evolve":
            return cmd_evolve(cfgs[0], out)
        if args.command == "relax":
            return cmd_relax(cfgs[0], out)
        return cmd_compare(cfgs, out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except AleMeshError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
