"""Time evolution drivers: normal transport, Lie splitting, relaxation.

The splitting step first transports nodes with the level-set normal
velocity (explicit Euler) and then relaxes the mesh with the improvement
velocity at the new time: classical RK4 on dx/dt = w(x) over a window of
length tau, split into equal substeps because of the stiffness of the
spring system, with every node projected back onto {d(., t_new) = 0}
after each substep.  The v-then-w order is part of the method; the
reversed order relaxes on the stale surface and is rejected by design.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .dae import DAEState, NewtonSettings, RadauStats, radau_step, radau_tableau
from .errors import AleMeshError, ConfigError
from .forces import ForceConfig, ale_velocity
from .geometry import mesh_quality
from .surface import literature_ale_map, normal_velocity, project

PROJECTION_TOL = 1e-12

METHOD_TAGS = ("normal", "literature", "radau", "splitting",
               "splitting_adaptive", "relax_static")


@dataclass(frozen=True)
class EvolutionMethod:
    """Method tag plus every method-specific knob."""

    tag: str
    tau: float
    substeps: int = 25
    skew_threshold: float = 0.5
    forces: ForceConfig = field(default_factory=ForceConfig)
    stages: int = 3
    newton: NewtonSettings = field(default_factory=NewtonSettings)
    snapshot_times: tuple = ()

    def __post_init__(self):
        if self.tag not in METHOD_TAGS:
            raise ConfigError(
                f"unknown method {self.tag!r}; expected one of {METHOD_TAGS}")
        if self.tau <= 0:
            raise ConfigError("tau must be positive")
        if self.substeps < 1:
            raise ConfigError("substeps must be at least 1")


@dataclass
class Trajectory:
    """Per-step quality record plus position snapshots."""

    method: str
    times: np.ndarray
    quality_series: list
    snapshots: list          # list of (time, positions) pairs
    newton_stats: RadauStats = None

    @property
    def final_quality(self):
        return self.quality_series[-1]


def normal_step(x, t, tau, surface):
    """Explicit Euler transport by the level-set normal velocity."""
    x = np.asarray(x, dtype=float)
    return x + tau * normal_velocity(surface, x, t)


def w_relax_step(mesh, x, t_target, surface, forces, substeps, window,
                 projection_tol=PROJECTION_TOL):
    """RK4 relaxation by w over the window, projecting every substep.

    The surface is frozen at t_target; time enters only through the
    constraint.  With w identically zero the input is returned unchanged
    (the projection leaves on-surface points alone).
    """
    x = np.asarray(x, dtype=float)
    h = window / substeps

    def w(y):
        return ale_velocity(mesh, y, forces)

    for _ in range(substeps):
        k1 = w(x)
        k2 = w(x + 0.5 * h * k1)
        k3 = w(x + 0.5 * h * k2)
        k4 = w(x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        x = project(surface, x, t_target, tol=projection_tol)
    return x


def splitting_step(mesh, x, t, tau, surface, forces, substeps):
    """Normal transport to t + tau, then constrained relaxation there."""
    xv = normal_step(x, t, tau, surface)
    return w_relax_step(mesh, xv, t + tau, surface, forces, substeps,
                        window=tau)


def adaptive_splitting_step(mesh, x, t, tau, surface, forces, substeps,
                            skew_threshold):
    """Splitting step that skips relaxation while the mesh stays good.

    After the transport substep the worst skewness is measured; at or
    under the threshold the nodes are only projected back onto the
    surface, otherwise the full relaxation runs.  threshold = 1 never
    relaxes, threshold = 0 always does.
    """
    xv = normal_step(x, t, tau, surface)
    quality = mesh_quality(mesh, positions=xv)
    if quality.skew_max <= skew_threshold:
        return project(surface, xv, t + tau, tol=PROJECTION_TOL)
    return w_relax_step(mesh, xv, t + tau, surface, forces, substeps,
                        window=tau)


def relax_static(mesh, surface, forces, steps, substeps=25, window=0.01,
                 t=0.0):
    """Pure mesh improvement on a frozen surface.

    Applies w_relax_step ``steps`` times at fixed time t and records the
    quality after every step.  Returns a Trajectory whose times are the
    accumulated pseudo-time i * window.
    """
    x = project(surface, mesh.vertices, t, tol=PROJECTION_TOL)
    reports = [mesh_quality(mesh, positions=x)]
    snapshots = [(0.0, x.copy())]
    for i in range(steps):
        x = w_relax_step(mesh, x, t, surface, forces, substeps, window)
        reports.append(mesh_quality(mesh, positions=x))
    snapshots.append((steps * window, x.copy()))
    return Trajectory(
        method="relax_static",
        times=window * np.arange(steps + 1),
        quality_series=reports,
        snapshots=snapshots)


def evolve(mesh, surface, method: EvolutionMethod, t0, T) -> Trajectory:
    """March the mesh from t0 to T recording quality every step.

    Snapshots are stored at the configured times (matched to the step
    grid within tau/2).  The literature method requires a surface with a
    reference map and t0 = 0.
    """
    tau = method.tau
    n_steps = int(round((T - t0) / tau))
    if n_steps < 1 or abs(t0 + n_steps * tau - T) > 1e-9 * max(1.0, abs(T)):
        raise ConfigError(
            f"time interval [{t0}, {T}] is not an integer number of "
            f"steps of tau = {tau}")
    if method.tag == "relax_static":
        return relax_static(mesh, surface, method.forces, steps=n_steps,
                            substeps=method.substeps, window=tau, t=t0)
    if method.tag == "literature":
        if surface.name not in ("dumbbell", "four_hole"):
            raise ConfigError(
                f"literature method has no map for surface {surface.name!r}")
        if abs(t0) > 0:
            raise ConfigError("literature method must start at t0 = 0")

    times = t0 + tau * np.arange(n_steps + 1)
    x0 = mesh.vertices.copy()
    x = x0.copy()
    state = None
    stats = None
    if method.tag == "radau":
        state = DAEState(x=x.copy(), lam=np.zeros(len(x)), t=t0)
        stats = RadauStats()
        tableau = radau_tableau(method.stages)

    snapshots = []

    def maybe_snapshot(t, positions):
        for ts in method.snapshot_times:
            if abs(t - ts) <= 0.5 * tau and all(
                    abs(rec[0] - ts) > 0.5 * tau for rec in snapshots):
                snapshots.append((t, positions.copy()))

    reports = [mesh_quality(mesh, positions=x)]
    maybe_snapshot(times[0], x)

    for i in range(n_steps):
        t = times[i]
        t_next = times[i + 1]
        try:
            if method.tag == "normal":
                x = normal_step(x, t, tau, surface)
            elif method.tag == "literature":
                x = literature_ale_map(surface.name, x0, t_next)
            elif method.tag == "splitting":
                x = splitting_step(mesh, x, t, tau, surface, method.forces,
                                   method.substeps)
            elif method.tag == "splitting_adaptive":
                x = adaptive_splitting_step(mesh, x, t, tau, surface,
                                            method.forces, method.substeps,
                                            method.skew_threshold)
            elif method.tag == "radau":
                state = radau_step(state, mesh, surface, method.forces,
                                   tableau, tau, newton=method.newton,
                                   stats=stats)
                x = state.x
        except AleMeshError as err:
            # callers can salvage everything recorded before the failure
            err.failed_at = t
            err.partial = Trajectory(
                method=method.tag, times=times[:i + 1],
                quality_series=reports, snapshots=snapshots,
                newton_stats=stats)
            raise
        reports.append(mesh_quality(mesh, positions=x))
        maybe_snapshot(t_next, x)

    return Trajectory(method=method.tag, times=times,
                      quality_series=reports, snapshots=snapshots,
                      newton_stats=stats)
