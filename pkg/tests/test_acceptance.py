"""End-to-end acceptance checks.

Each test exercises one acceptance criterion on the benchmark problems
shipped as canned configs, prints a single PASS/FAIL line with the
measured numbers, and asserts.  The three dumbbell evolution runs are
expensive (the implicit one takes a few minutes), so they are computed
once in module-scoped fixtures and shared by the first three tests.
"""

import time

import numpy as np
import pytest

from ale_mesh import (
    DAEState, EvolutionMethod, ForceConfig, build_mesh, edge_forces, evolve,
    generate_icosphere, literature_ale_map, mesh_quality, perturb_positions,
    project, radau_step, radau_tableau, relax_static, spring_force,
    spring_force_jacobian, surface_from_name, target_lengths,
)
from ale_mesh.cli import CONFIG_DIR, build_initial_mesh, load_config, main

SNAPSHOT_TIMES = tuple(round(0.1 * i, 10) for i in range(7))


def _verdict(label, ok, detail):
    print(f"\n[acceptance] {label}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, f"{label}: {detail}"


def _worst_residual(surface, trajectory):
    worst = 0.0
    for t, x in trajectory.snapshots:
        worst = max(worst, float(np.abs(surface.d(x, t)).max()))
    return worst


def _timed_evolve(mesh, surface, method, t0, T):
    start = time.perf_counter()
    out = evolve(mesh, surface, method, t0, T)
    return out, time.perf_counter() - start


@pytest.fixture(scope="module")
def dumbbell_case():
    surface = surface_from_name("dumbbell")
    cfg = load_config(CONFIG_DIR / "dumbbell.cfg")
    mesh = build_initial_mesh(cfg, surface)
    return surface, mesh


@pytest.fixture(scope="module")
def dumbbell_runs(dumbbell_case):
    surface, mesh = dumbbell_case
    forces = ForceConfig(k=500.0, p=0.4)
    runs = {}
    runs["splitting"] = _timed_evolve(
        mesh, surface,
        EvolutionMethod(tag="splitting", tau=0.01, substeps=25, forces=forces,
                        snapshot_times=SNAPSHOT_TIMES),
        0.0, 0.6)
    runs["radau"] = _timed_evolve(
        mesh, surface,
        EvolutionMethod(tag="radau", tau=0.01, stages=3, forces=forces,
                        snapshot_times=SNAPSHOT_TIMES),
        0.0, 0.6)
    # pure normal motion baseline, explicit Euler at a fine step
    runs["normal"] = _timed_evolve(
        mesh, surface,
        EvolutionMethod(tag="normal", tau=0.001,
                        snapshot_times=SNAPSHOT_TIMES),
        0.0, 0.6)
    return runs


def test_constraint_fidelity_and_runtime(dumbbell_case, dumbbell_runs):
    surface, _ = dumbbell_case
    split, split_wall = dumbbell_runs["splitting"]
    radau, radau_wall = dumbbell_runs["radau"]
    split_res = _worst_residual(surface, split)
    radau_res = _worst_residual(surface, radau)
    ok = (split_res <= 1e-10 and radau_res <= 1e-8
          and split_wall < 30.0 and radau_wall < 600.0)
    _verdict(
        "dumbbell constraint fidelity", ok,
        f"splitting |d| {split_res:.2e} <= 1e-10 in {split_wall:.1f}s < 30s; "
        f"radau |d| {radau_res:.2e} <= 1e-8 in {radau_wall:.1f}s < 600s")


def test_quality_improvement_over_normal_motion(dumbbell_runs):
    split = dumbbell_runs["splitting"][0]
    radau = dumbbell_runs["radau"][0]
    normal = dumbbell_runs["normal"][0]
    skew_normal = normal.quality_series[-1].skew_max
    margins = {
        "splitting": skew_normal - split.quality_series[-1].skew_max,
        "radau": skew_normal - radau.quality_series[-1].skew_max,
    }
    paths = {
        "splitting": max(q.skew_max for q in split.quality_series),
        "radau": max(q.skew_max for q in radau.quality_series),
    }
    ok = (min(margins.values()) >= 0.05
          and max(paths.values()) <= 0.8 - 0.05)
    _verdict(
        "dumbbell quality improvement", ok,
        f"final skew margins vs normal ({skew_normal:.3f}): "
        f"splitting {margins['splitting']:.3f}, radau {margins['radau']:.3f} "
        f">= 0.05; path skew max splitting {paths['splitting']:.3f}, "
        f"radau {paths['radau']:.3f} <= 0.75")


def test_methods_agree_on_final_quality(dumbbell_runs):
    qs = dumbbell_runs["splitting"][0].quality_series[-1]
    qr = dumbbell_runs["radau"][0].quality_series[-1]
    rel = {
        name: abs(getattr(qr, name) - getattr(qs, name))
        / min(abs(getattr(qr, name)), abs(getattr(qs, name)))
        for name in ("r", "alpha_min", "alpha_max", "skew_max")
    }
    worst = max(rel, key=rel.get)
    ok = rel[worst] <= 0.25
    _verdict(
        "method agreement", ok,
        "radau vs splitting final quality, relative: "
        + ", ".join(f"{k} {v:.1%}" for k, v in rel.items())
        + " (all <= 25%)")


def test_reference_maps_reproduced_exactly():
    worst = 0.0
    for kind in ("dumbbell", "four_hole"):
        surface = surface_from_name(kind)
        rng = np.random.default_rng(17)
        lo, hi = surface.bounds
        pts = []
        while len(pts) < 300:
            cand = rng.uniform(lo, hi, size=(2000, 3))
            keep = np.abs(surface.d(cand, 0.0)) < 0.3
            pts.extend(cand[keep][: 300 - len(pts)])
        # the dumbbell map scales off-surface residuals by up to 2.25,
        # so the seed nodes must sit tighter than the 1e-12 budget
        x0 = project(surface, np.array(pts), 0.0, tol=1e-13)
        for t in np.linspace(0.0, 1.0, 11):
            xt = literature_ale_map(kind, x0, t)
            worst = max(worst, float(np.abs(surface.d(xt, t)).max()))
    ok = worst <= 1e-12
    _verdict(
        "reference map reproduction", ok,
        f"300 nodes per surface, t = 0, 0.1, ..., 1: "
        f"worst |d| {worst:.2e} <= 1e-12")


def test_four_hole_beats_normal_motion():
    surface = surface_from_name("four_hole")
    cfg = load_config(CONFIG_DIR / "four_hole.cfg")
    start = time.perf_counter()
    mesh = build_initial_mesh(cfg, surface)
    split = evolve(
        mesh, surface,
        EvolutionMethod(tag="splitting", tau=cfg["run.tau"],
                        substeps=cfg["run.substeps"],
                        forces=ForceConfig(k=cfg["force.k"],
                                           p=cfg["force.p"])),
        cfg["run.t0"], cfg["run.T"])
    normal = evolve(mesh, surface,
                    EvolutionMethod(tag="normal", tau=0.001),
                    cfg["run.t0"], cfg["run.T"])
    wall = time.perf_counter() - start
    skew_split = split.quality_series[-1].skew_max
    skew_normal = normal.quality_series[-1].skew_max
    margin = skew_normal - skew_split
    ok = margin >= 0.05 and wall < 60.0
    _verdict(
        "four-hole quality contrast", ok,
        f"t = 1 skew: splitting {skew_split:.3f} vs normal "
        f"{skew_normal:.3f}, margin {margin:.3f} >= 0.05; "
        f"{wall:.1f}s < 60s")


def test_acute_remeshing_of_perturbed_torus():
    cfg = load_config(CONFIG_DIR / "torus_acute.cfg")
    surface = surface_from_name(cfg["surface.name"])
    start = time.perf_counter()
    mesh = build_initial_mesh(cfg, surface)
    alpha_start = mesh_quality(mesh).alpha_max
    forces = ForceConfig(k=cfg["force.k"], p=cfg["force.p"],
                         k_alpha=cfg["force.k_alpha"],
                         alpha_tol_deg=cfg["force.alpha_tol_deg"])
    out = relax_static(mesh, surface, forces, steps=cfg["relax.steps"],
                       substeps=cfg["run.substeps"],
                       window=cfg["relax.window"])
    wall = time.perf_counter() - start
    alpha_end = out.quality_series[-1].alpha_max
    drop = alpha_start - alpha_end
    ok = (alpha_start > 95.0 and alpha_end < 90.0 and drop >= 10.0
          and wall < 30.0)
    _verdict(
        "acute remeshing", ok,
        f"alpha_max {alpha_start:.2f} -> {alpha_end:.2f} deg "
        f"(start > 95, end < 90, drop {drop:.2f} >= 10); {wall:.1f}s < 30s")


def test_implicit_integrator_convergence_order():
    surface = surface_from_name("sphere")
    tableau = radau_tableau(3)
    forces = ForceConfig(k=0.0, p=0.4)

    def final_x(tau):
        state = DAEState(x=np.array([[1.0, 0.0, 0.0]]),
                         lam=np.zeros(1), t=0.0)
        for _ in range(round(0.1 / tau)):
            state = radau_step(state, None, surface, forces, tableau, tau)
        return state.x

    start = time.perf_counter()
    reference = final_x(0.0003125)
    taus = np.array([0.02, 0.01, 0.005, 0.0025])
    errors = np.array([np.abs(final_x(tau) - reference).max()
                       for tau in taus])
    wall = time.perf_counter() - start
    exact_gap = np.abs(reference - [np.sqrt(1.1), 0.0, 0.0]).max()
    at_floor = bool((errors <= 1e-12).all())
    if at_floor:
        # errors saturate at roundoff, no meaningful slope to fit
        order = np.inf
        branch = "all errors at the 1e-12 floor"
    else:
        order = float(np.polyfit(np.log(taus), np.log(errors), 1)[0])
        branch = f"fitted order {order:.2f}"
    ok = (at_floor or order >= 4.0) and wall < 5.0 and exact_gap < 1e-10
    _verdict(
        "implicit integrator order", ok,
        f"single-node expanding sphere, errors "
        f"{', '.join(f'{e:.1e}' for e in errors)} vs tau = 0.0003125 "
        f"reference: {branch} (need >= 4 or floor); reference off exact "
        f"solution by {exact_gap:.1e}; {wall:.1f}s < 5s")


def test_force_invariants():
    start = time.perf_counter()
    checks = {}

    base = generate_icosphere(2)
    x = perturb_positions(base, 0.08, seed=11)
    mesh = build_mesh(x, base.triangles)

    checks["net force"] = float(
        np.abs(spring_force(mesh, x, p=0.4).sum(axis=0)).max())

    rng = np.random.default_rng(12)
    q, _ = np.linalg.qr(rng.normal(size=(3, 3)))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    shift = rng.normal(size=3)
    f = spring_force(mesh, x, p=0.4)
    f_moved = spring_force(mesh, x @ q.T + shift, p=0.4)
    checks["equivariance"] = float(np.abs(f_moved - f @ q.T).max())

    # the icosahedron has thirty equal edges: exact equilibrium
    ico = generate_icosphere(0)
    checks["uniform equilibrium"] = float(
        np.abs(spring_force(ico, ico.vertices, p=0.4)).max())

    targets = target_lengths(mesh.edge_lengths(x), 0.4)
    jac = spring_force_jacobian(mesh, x, targets).toarray()
    n = x.shape[0]
    eps = 1e-7
    worst_jac = 0.0
    for col in np.random.default_rng(13).choice(3 * n, size=40,
                                                replace=False):
        dx = np.zeros(3 * n)
        dx[col] = eps
        fp = edge_forces((x.ravel() + dx).reshape(n, 3), mesh.edges, targets)
        fm = edge_forces((x.ravel() - dx).reshape(n, 3), mesh.edges, targets)
        fd = (fp - fm).ravel() / (2 * eps)
        err = np.abs(jac[:, col] - fd).max() / max(np.abs(fd).max(), 1.0)
        worst_jac = max(worst_jac, float(err))
    checks["jacobian vs fd"] = worst_jac

    wall = time.perf_counter() - start
    ok = (checks["net force"] < 1e-12 and checks["equivariance"] < 1e-12
          and checks["uniform equilibrium"] == 0.0
          and checks["jacobian vs fd"] < 1e-6 and wall < 10.0)
    _verdict(
        "force invariants", ok,
        f"net force {checks['net force']:.1e} < 1e-12, equivariance "
        f"{checks['equivariance']:.1e} < 1e-12, uniform equilibrium "
        f"{checks['uniform equilibrium']:.1e} == 0, jacobian vs fd "
        f"{checks['jacobian vs fd']:.1e} < 1e-6; {wall:.1f}s < 10s")


def test_repeated_runs_are_byte_identical(tmp_path):
    outputs = []
    for name in ("first", "second"):
        out = tmp_path / name
        rc = main(["relax", "--config", "torus_acute.cfg",
                   "--out", str(out)])
        assert rc == 0
        outputs.append((out / "quality.csv").read_bytes())
    ok = outputs[0] == outputs[1]
    _verdict(
        "deterministic output", ok,
        f"torus_acute.cfg run twice: quality.csv identical "
        f"({len(outputs[0])} bytes)")
