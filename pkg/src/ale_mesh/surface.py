"""Level-set descriptions of closed evolving surfaces.

A surface is the zero set of a scalar function d(x, t) with nonvanishing
spatial gradient near the zero set.  The catalog covers the two evolving
benchmark shapes (a pulsing dumbbell and a plate with four hole-like
dimples), static tori, and spheres.  The normal velocity of the zero set is

    v(x, t) = -dt_d(x, t) * grad_d(x, t) / |grad_d(x, t)|^2

and nodes are kept on the surface by a damped Newton projection along
the gradient direction.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .errors import ProjectionError, SingularSurfaceError, SurfaceError

GRADIENT_FLOOR = 1e-12


@dataclass(frozen=True)
class LevelSetSurface:
    """Scalar field d plus its analytic derivatives.

    All three callables accept points of shape (..., 3) and a scalar
    time; d and dt_d return shape (...), grad_d returns (..., 3).
    """

    name: str
    d: Callable
    grad_d: Callable
    dt_d: Callable
    time_interval: tuple = (0.0, 1.0)
    bounds: tuple = ((-2.0, -2.0, -2.0), (2.0, 2.0, 2.0))


def dumbbell():
    """Pulsing dumbbell; the zero set of

        d = x1^2 + x2^2 + K(t)^2 G(x3^2 / L(t)^2) - K(t)^2

    with G(s) = 200 s (s - 199/200), L(t) = 1 + 0.2 sin(4 pi t),
    K(t) = 0.1 + 0.05 sin(2 pi t), defined for t in [0, 0.6].
    """
    two_pi = 2.0 * np.pi

    def G(s):
        return 200.0 * s * (s - 0.995)

    def Gp(s):
        return 400.0 * s - 199.0

    def K(t):
        return 0.1 + 0.05 * np.sin(two_pi * t)

    def Kp(t):
        return 0.05 * two_pi * np.cos(two_pi * t)

    def L(t):
        return 1.0 + 0.2 * np.sin(2.0 * two_pi * t)

    def Lp(t):
        return 0.2 * 2.0 * two_pi * np.cos(2.0 * two_pi * t)

    def d(x, t):
        x = np.asarray(x, dtype=float)
        k, l = K(t), L(t)
        s = x[..., 2] ** 2 / l ** 2
        return x[..., 0] ** 2 + x[..., 1] ** 2 + k * k * G(s) - k * k

    def grad_d(x, t):
        x = np.asarray(x, dtype=float)
        k, l = K(t), L(t)
        s = x[..., 2] ** 2 / l ** 2
        g = np.empty_like(x)
        g[..., 0] = 2.0 * x[..., 0]
        g[..., 1] = 2.0 * x[..., 1]
        g[..., 2] = k * k * Gp(s) * 2.0 * x[..., 2] / l ** 2
        return g

    def dt_d(x, t):
        x = np.asarray(x, dtype=float)
        k, l = K(t), L(t)
        kp, lp = Kp(t), Lp(t)
        s = x[..., 2] ** 2 / l ** 2
        return (2.0 * k * kp * (G(s) - 1.0)
                - k * k * Gp(s) * 2.0 * x[..., 2] ** 2 * lp / l ** 3)

    return LevelSetSurface(
        name="dumbbell", d=d, grad_d=grad_d, dt_d=dt_d,
        time_interval=(0.0, 0.6),
        bounds=((-1.3, -1.3, -1.35), (1.3, 1.3, 1.35)))


def four_hole():
    """Flattened plate with four hole-like dimples; the zero set of

        d = x1^2 / K(t)^2 + G(x2^2) + W G(x3^2 / L(t)^2) - 1

    with G(s) = 31.25 s (s - 0.36)(s - 0.95), L(t) = 1 + 0.3 sin(4 pi t),
    K(t) = 0.1 + 0.01 sin(2 pi t), defined for t in [0, 1].  The weight
    W = 0.01 of the third term is held at its t = 0 value so that the
    coordinate scaling map (K(t)/K(0), 1, L(t)/L(0)) reparametrizes the
    zero set exactly for every t.
    """
    two_pi = 2.0 * np.pi
    W = 0.01

    def G(s):
        return 31.25 * s * (s - 0.36) * (s - 0.95)

    def Gp(s):
        return 31.25 * (3.0 * s * s - 2.62 * s + 0.342)

    def K(t):
        return 0.1 + 0.01 * np.sin(two_pi * t)

    def Kp(t):
        return 0.01 * two_pi * np.cos(two_pi * t)

    def L(t):
        return 1.0 + 0.3 * np.sin(2.0 * two_pi * t)

    def Lp(t):
        return 0.3 * 2.0 * two_pi * np.cos(2.0 * two_pi * t)

    def d(x, t):
        x = np.asarray(x, dtype=float)
        k, l = K(t), L(t)
        return (x[..., 0] ** 2 / k ** 2 + G(x[..., 1] ** 2)
                + W * G(x[..., 2] ** 2 / l ** 2) - 1.0)

    def grad_d(x, t):
        x = np.asarray(x, dtype=float)
        k, l = K(t), L(t)
        g = np.empty_like(x)
        g[..., 0] = 2.0 * x[..., 0] / k ** 2
        g[..., 1] = Gp(x[..., 1] ** 2) * 2.0 * x[..., 1]
        g[..., 2] = W * Gp(x[..., 2] ** 2 / l ** 2) * 2.0 * x[..., 2] / l ** 2
        return g

    def dt_d(x, t):
        x = np.asarray(x, dtype=float)
        k, l = K(t), L(t)
        kp, lp = Kp(t), Lp(t)
        s3 = x[..., 2] ** 2 / l ** 2
        return (-2.0 * x[..., 0] ** 2 * kp / k ** 3
                - W * Gp(s3) * 2.0 * x[..., 2] ** 2 * lp / l ** 3)

    return LevelSetSurface(
        name="four_hole", d=d, grad_d=grad_d, dt_d=dt_d,
        time_interval=(0.0, 1.0),
        bounds=((-0.25, -1.15, -2.3), (0.25, 1.15, 2.3)))


def torus(major_radius=1.0, minor_radius=0.4):
    """Static torus around the z axis: d = (|x_12| - R)^2 + x3^2 - r^2."""
    if not (major_radius > minor_radius > 0):
        raise SurfaceError("torus radii must satisfy major > minor > 0")
    R, r = float(major_radius), float(minor_radius)

    def d(x, t):
        x = np.asarray(x, dtype=float)
        q = np.hypot(x[..., 0], x[..., 1])
        return (q - R) ** 2 + x[..., 2] ** 2 - r * r

    def grad_d(x, t):
        x = np.asarray(x, dtype=float)
        q = np.hypot(x[..., 0], x[..., 1])
        safe = np.where(q > 0.0, q, 1.0)
        coef = 2.0 * (q - R) / safe
        g = np.empty_like(x)
        g[..., 0] = coef * x[..., 0]
        g[..., 1] = coef * x[..., 1]
        g[..., 2] = 2.0 * x[..., 2]
        return g

    def dt_d(x, t):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    pad = R + r + 0.2
    return LevelSetSurface(
        name=f"torus:{R:g}:{r:g}", d=d, grad_d=grad_d, dt_d=dt_d,
        time_interval=(0.0, np.inf),
        bounds=((-pad, -pad, -(r + 0.2)), (pad, pad, r + 0.2)))


def expanding_sphere():
    """Sphere of radius sqrt(1 + t): d = |x|^2 - (1 + t)."""

    def d(x, t):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,...i->...", x, x) - (1.0 + t)

    def grad_d(x, t):
        return 2.0 * np.asarray(x, dtype=float)

    def dt_d(x, t):
        x = np.asarray(x, dtype=float)
        return np.full(x.shape[:-1], -1.0)

    return LevelSetSurface(
        name="sphere", d=d, grad_d=grad_d, dt_d=dt_d,
        time_interval=(0.0, np.inf),
        bounds=((-2.0, -2.0, -2.0), (2.0, 2.0, 2.0)))


def static_sphere(radius=1.0):
    """Fixed sphere: d = |x|^2 - radius^2."""
    if radius <= 0:
        raise SurfaceError("sphere radius must be positive")
    rho2 = float(radius) ** 2

    def d(x, t):
        x = np.asarray(x, dtype=float)
        return np.einsum("...i,...i->...", x, x) - rho2

    def grad_d(x, t):
        return 2.0 * np.asarray(x, dtype=float)

    def dt_d(x, t):
        x = np.asarray(x, dtype=float)
        return np.zeros(x.shape[:-1])

    pad = radius + 0.5
    return LevelSetSurface(
        name=f"static_sphere:{radius:g}", d=d, grad_d=grad_d, dt_d=dt_d,
        time_interval=(0.0, np.inf),
        bounds=((-pad, -pad, -pad), (pad, pad, pad)))


def surface_from_name(name: str) -> LevelSetSurface:
    """Catalog lookup: dumbbell | four_hole | torus:R:r | sphere."""
    name = name.strip()
    if name == "dumbbell":
        return dumbbell()
    if name == "four_hole":
        return four_hole()
    if name == "sphere":
        return expanding_sphere()
    if name.startswith("torus"):
        parts = name.split(":")
        if len(parts) != 3:
            raise SurfaceError(f"torus spec must be torus:R:r, got {name!r}")
        try:
            R, r = float(parts[1]), float(parts[2])
        except ValueError as exc:
            raise SurfaceError(f"bad torus radii in {name!r}") from exc
        return torus(R, r)
    raise SurfaceError(f"unknown surface {name!r}")


def normal_velocity(surface, x, t, gradient_floor=GRADIENT_FLOOR):
    """Velocity of the zero set, -dt_d * grad_d / |grad_d|^2.

    Raises
    ------
    SingularSurfaceError
        Where |grad_d| falls under the floor, reporting an offending point.
    """
    x = np.asarray(x, dtype=float)
    g = surface.grad_d(x, t)
    gg = np.einsum("...i,...i->...", g, g)
    small = gg < gradient_floor ** 2
    if np.any(small):
        bad = x[small][0] if x.ndim > 1 else x
        raise SingularSurfaceError(
            f"|grad d| under {gradient_floor:g} on {surface.name} "
            f"at {np.asarray(bad)}", point=np.asarray(bad))
    speed = -surface.dt_d(x, t) / gg
    return speed[..., None] * g


def project(surface, x, t, tol=1e-12, max_iter=50,
            gradient_floor=GRADIENT_FLOOR):
    """Damped Newton projection of points onto {d(., t) = 0}.

    Each update moves along the gradient direction by d/|grad_d|^2,
    halving the step until |d| decreases.  Points already inside the
    tolerance are returned unchanged.

    Raises
    ------
    ProjectionError
        If some point still has |d| > tol after max_iter sweeps.
    SingularSurfaceError
        If the gradient vanishes along the way.
    """
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    pts = np.array(x, dtype=float, copy=True).reshape(-1, 3)
    dval = np.asarray(surface.d(pts, t), dtype=float)

    for _ in range(max_iter):
        active = np.abs(dval) > tol
        if not active.any():
            break
        p = pts[active]
        g = surface.grad_d(p, t)
        gg = np.einsum("ij,ij->i", g, g)
        small = gg < gradient_floor ** 2
        if small.any():
            raise SingularSurfaceError(
                f"|grad d| under {gradient_floor:g} on {surface.name} "
                f"during projection", point=p[small][0])
        full = (dval[active] / gg)[:, None] * g
        old = np.abs(dval[active])
        cand = p - full
        dnew = np.asarray(surface.d(cand, t), dtype=float)
        scale = np.ones(len(p))
        for _ in range(40):
            stuck = (np.abs(dnew) >= old) & (np.abs(dnew) > tol)
            if not stuck.any():
                break
            scale[stuck] *= 0.5
            cand[stuck] = p[stuck] - scale[stuck, None] * full[stuck]
            dnew[stuck] = np.asarray(surface.d(cand[stuck], t), dtype=float)
        pts[active] = cand
        dval[active] = dnew

    worst = float(np.abs(dval).max())
    if worst > tol:
        raise ProjectionError(
            f"projection onto {surface.name} stalled at |d| = {worst:.3e} "
            f"(tol {tol:g})", residual=worst)
    return pts[0] if single else pts.reshape(x.shape)


def literature_ale_map(kind: str, x0, t):
    """Reference coordinate-scaling maps for the two benchmark surfaces.

    dumbbell:  (x1, x2, x3) -> (x1 K(t)/K(0), x2 K(t)/K(0), x3 L(t)/L(0))
    four_hole: (x1, x2, x3) -> (x1 K(t)/K(0), x2,           x3 L(t)/L(0))

    Both reparametrize their zero sets exactly; applied to points on the
    t = 0 surface they land on the t surface to machine precision.
    """
    x0 = np.asarray(x0, dtype=float)
    out = np.array(x0, dtype=float, copy=True)
    two_pi = 2.0 * np.pi
    if kind == "dumbbell":
        k0, kt = 0.1, 0.1 + 0.05 * np.sin(two_pi * t)
        l0, lt = 1.0, 1.0 + 0.2 * np.sin(2.0 * two_pi * t)
        out[..., 0] *= kt / k0
        out[..., 1] *= kt / k0
        out[..., 2] *= lt / l0
    elif kind == "four_hole":
        k0, kt = 0.1, 0.1 + 0.01 * np.sin(two_pi * t)
        l0, lt = 1.0, 1.0 + 0.3 * np.sin(2.0 * two_pi * t)
        out[..., 0] *= kt / k0
        out[..., 2] *= lt / l0
    else:
        raise SurfaceError(
            f"no reference map for surface kind {kind!r} "
            "(available: dumbbell, four_hole)")
    return out
