"""Implicit Runge-Kutta solver for the constrained node-motion system.

The nodes obey the index-2 system

    dx/dt = v(x, t) + w(x) - D(x)^T lam,      d(x_j, t) = 0 for all j,

where v is the level-set normal velocity, w the mesh-improvement
velocity, and D stacks the constraint gradients grad_d(x_j, t)^T row by
row.  One step solves the s-stage Radau IIA collocation equations for
all stage positions and multipliers at once with Newton's method.

At the spring constants of interest the stage equations are stiff and,
through the global min/max clamp of the target lengths, only piecewise
smooth, so a frozen Jacobian held at the step start is not enough: the
production path re-assembles the stage matrix whenever contraction
degrades, evaluates the spring block with a C1-smoothed clamp whose
corner rounding matches the force used in the residual, carries the
rank-2 coupling of the clamp band to the extremal edges and the
multiplier curvature blocks, and guards accepted roots against jumps in
mesh quality (the nonlinear stage system can have spurious solutions on
other sheets of the clamp).  A failed solve is retried with different
predictors and finally with recursive step halving; only when all of
that fails does the step raise.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu

from .errors import StepFailure
from .forces import angle_force, spring_force_jacobian, target_lengths
from .geometry import mesh_quality
from .surface import normal_velocity, project

# Half-width of the quadratic corner rounding of the target-length
# clamp, relative to the band width M - m.  Outside the corners the
# smoothed clamp equals the exact one.
SMOOTHING_REL = 1e-2

# A converged stage solution is rejected when the worst skewness rises
# by more than this over one step; genuine trajectories move quality
# continuously while spurious stage roots jump.
QUALITY_JUMP_TOL = 0.05

_MAX_FACTORIZATIONS = 12
_MAX_HALVINGS = 8
_HESSIAN_EPS = 1e-6
_PREDICTOR_SUBSTEPS = 8


@dataclass(frozen=True)
class ButcherTableau:
    A: np.ndarray
    b: np.ndarray
    c: np.ndarray
    order: int

    @property
    def stages(self):
        return len(self.b)

    @property
    def stiffly_accurate(self):
        return bool(np.allclose(self.A[-1], self.b, rtol=0, atol=1e-15))


def radau_tableau(s=3) -> ButcherTableau:
    """Radau IIA collocation tableau, order 2s - 1, for s in {1, 2, 3}."""
    if s == 1:
        A = np.array([[1.0]])
        c = np.array([1.0])
    elif s == 2:
        A = np.array([[5.0 / 12.0, -1.0 / 12.0],
                      [3.0 / 4.0, 1.0 / 4.0]])
        c = np.array([1.0 / 3.0, 1.0])
    elif s == 3:
        r6 = np.sqrt(6.0)
        A = np.array([
            [(88.0 - 7.0 * r6) / 360.0,
             (296.0 - 169.0 * r6) / 1800.0,
             (-2.0 + 3.0 * r6) / 225.0],
            [(296.0 + 169.0 * r6) / 1800.0,
             (88.0 + 7.0 * r6) / 360.0,
             (-2.0 - 3.0 * r6) / 225.0],
            [(16.0 - r6) / 36.0,
             (16.0 + r6) / 36.0,
             1.0 / 9.0],
        ])
        c = np.array([(4.0 - r6) / 10.0, (4.0 + r6) / 10.0, 1.0])
    else:
        raise ValueError(f"radau_tableau supports s in {{1, 2, 3}}, got {s}")
    return ButcherTableau(A=A, b=A[-1].copy(), c=c, order=2 * s - 1)


@dataclass(frozen=True)
class NewtonSettings:
    tol: float = 1e-10
    max_iter: int = 40


@dataclass
class DAEState:
    """Node positions (N, 3), multipliers (N,), and time."""

    x: np.ndarray
    lam: np.ndarray
    t: float

    def constraint_residual(self, surface):
        return float(np.abs(surface.d(self.x, self.t)).max())


@dataclass
class RadauStats:
    """Mutable accumulator the driver can pass through radau_step."""

    steps: int = 0
    newton_iterations: int = 0
    max_iterations_per_step: int = 0
    factorizations: int = 0
    predictor_retries: int = 0
    halvings: int = 0
    rejected_roots: int = 0
    stage_positions: np.ndarray = None
    stage_multipliers: np.ndarray = None

    def summary_lines(self):
        return [
            f"radau steps taken: {self.steps}",
            f"newton iterations: {self.newton_iterations}",
            f"max iterations in one solve: {self.max_iterations_per_step}",
            f"stage factorizations: {self.factorizations}",
            f"predictor retries: {self.predictor_retries}",
            f"step halvings: {self.halvings}",
            f"rejected stage roots: {self.rejected_roots}",
        ]


def _constraint_gradient_matrix(grads):
    """Sparse D with row j equal to grad_d(x_j)^T in columns 3j..3j+2."""
    n = grads.shape[0]
    rows = np.repeat(np.arange(n), 3)
    cols = np.arange(3 * n)
    return sparse.csr_matrix((grads.ravel(), (rows, cols)), shape=(n, 3 * n))


def assemble_stage_jacobian(mesh, positions, surface, forces, t,
                            tableau, tau):
    """Frozen-coefficient Newton matrix of the coupled stage system.

    Block layout over unknowns [X_1..X_s, Lam_1..Lam_s]:

        [ I - tau (A x Jw)    tau (A x D^T) ]
        [ I_s x D             0             ]

    with Jw = k * (spring Jacobian, targets frozen at the current edge
    lengths) and D the constraint gradient rows at (positions, t).
    dv/dx and the multiplier curvature term are omitted; with k = 0 the
    position block is exactly the identity.  The production solver
    replaces this with per-stage re-assembly (see radau_step); this
    operator documents the baseline scheme and serves the tests.
    """
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    s = tableau.stages

    if forces.k != 0.0 and mesh.n_edges > 0:
        lengths = mesh.edge_lengths(positions)
        frozen = target_lengths(lengths, forces.p)
        Jw = forces.k * spring_force_jacobian(mesh, positions, frozen)
    else:
        Jw = sparse.csr_matrix((3 * n, 3 * n))

    D = _constraint_gradient_matrix(surface.grad_d(positions, t))
    A = sparse.csr_matrix(tableau.A)

    top_left = sparse.identity(s * 3 * n, format="csr") - tau * sparse.kron(A, Jw)
    top_right = tau * sparse.kron(A, D.T)
    bottom_left = sparse.kron(sparse.identity(s, format="csr"), D)
    return sparse.bmat([[top_left, top_right],
                        [bottom_left, None]], format="csc")


def _smoothed_targets(lengths, p):
    """C1 clamp into the global band with quadratic corner rounding.

    Returns the targets t, dt/dL, and the sensitivities dt/dlo, dt/dhi,
    dt/ddelta; the band limits and the corner half-width all move with
    the global extremal edge lengths.
    """
    L = np.asarray(lengths, dtype=float)
    m = L.min()
    M = L.max()
    lo = m + p * (M - m)
    hi = m + (1.0 - p) * (M - m)
    delta = max(SMOOTHING_REL * (M - m), 1e-300)

    t = np.clip(L, lo, hi)
    tp = np.where((L < lo) | (L > hi), 0.0, 1.0)
    dlo = np.where(L < lo, 1.0, 0.0)
    dhi = np.where(L > hi, 1.0, 0.0)
    ddel = np.zeros_like(L)

    zl = np.abs(L - lo) < delta
    if zl.any():
        u = L[zl] - lo + delta
        r = u / (2.0 * delta)
        t[zl] = lo + u * u / (4.0 * delta)
        tp[zl] = r
        dlo[zl] = 1.0 - r
        dhi[zl] = 0.0
        ddel[zl] = r - r * r
    zu = np.abs(L - hi) < delta
    if zu.any():
        u = hi + delta - L[zu]
        r = u / (2.0 * delta)
        t[zu] = hi - u * u / (4.0 * delta)
        tp[zu] = r
        dhi[zu] = 1.0 - r
        dlo[zu] = 0.0
        ddel[zu] = -(r - r * r)
    return t, tp, dlo, dhi, ddel


def _smoothed_spring(mesh, positions, forces):
    """k * spring force with the smoothed target clamp."""
    i, j = mesh.edges[:, 0], mesh.edges[:, 1]
    y = positions[i] - positions[j]
    L = np.linalg.norm(y, axis=1)
    t = _smoothed_targets(L, forces.p)[0]
    f = ((t - L) / L)[:, None] * y
    out = np.zeros_like(positions)
    np.add.at(out, i, f)
    np.add.at(out, j, -f)
    return forces.k * out


def _smoothed_spring_jacobian(mesh, positions, forces):
    """Exact Jacobian of _smoothed_spring, including the band coupling.

    Per edge the block is k (t/L - 1) I + k (t' - t/L) u u^T on the
    endpoint pairs; on top of that the band limits lo, hi depend on the
    global extremal edge lengths, which adds a rank-2 term U_m g_m^T +
    U_M g_M^T tying every clamped edge to the argmin/argmax edges.
    """
    n = positions.shape[0]
    e = mesh.edges
    i, j = e[:, 0], e[:, 1]
    y = positions[i] - positions[j]
    L = np.linalg.norm(y, axis=1)
    u = y / L[:, None]
    t, tp, dlo, dhi, ddel = _smoothed_targets(L, forces.p)
    k = forces.k

    coef_iso = k * (t / L - 1.0)
    coef_uu = k * (tp - t / L)
    idx = np.where((coef_iso != 0.0) | (coef_uu != 0.0))[0]
    if idx.size:
        ue = u[idx]
        uu = ue[:, :, None] * ue[:, None, :]
        eye = np.eye(3)[None, :, :]
        blk = coef_iso[idx, None, None] * eye + coef_uu[idx, None, None] * uu
        ii, jj = i[idx], j[idx]
        r3 = np.repeat(np.arange(3), 3)
        c3 = np.tile(np.arange(3), 3)
        rows, cols, vals = [], [], []
        for a, b, sgn in ((ii, ii, 1.0), (jj, jj, 1.0),
                          (ii, jj, -1.0), (jj, ii, -1.0)):
            rows.append((3 * a[:, None] + r3[None, :]).ravel())
            cols.append((3 * b[:, None] + c3[None, :]).ravel())
            vals.append((sgn * blk).reshape(idx.size, 9).ravel())
        J = sparse.csr_matrix(
            (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
            shape=(3 * n, 3 * n))
    else:
        J = sparse.csr_matrix((3 * n, 3 * n))

    # d lo = (1-p) d m + p d M, d hi = p d m + (1-p) d M, and
    # d delta = R (d M - d m), with m, M the min/max edge lengths; each
    # clamped edge feels them through dt/dlo, dt/dhi, dt/ddelta.
    R = SMOOTHING_REL
    cm = dlo * (1.0 - forces.p) + dhi * forces.p - R * ddel
    cM = dlo * forces.p + dhi * (1.0 - forces.p) + R * ddel
    Um = np.zeros(3 * n)
    UM = np.zeros(3 * n)
    for coeff, U in ((cm, Um), (cM, UM)):
        contrib = k * coeff[:, None] * u
        np.add.at(U.reshape(n, 3), i, contrib)
        np.add.at(U.reshape(n, 3), j, -contrib)
    emin = int(np.argmin(L))
    emax = int(np.argmax(L))
    gm = np.zeros(3 * n)
    gM = np.zeros(3 * n)
    for eid, g in ((emin, gm), (emax, gM)):
        a, b = e[eid]
        g[3 * a:3 * a + 3] = u[eid]
        g[3 * b:3 * b + 3] = -u[eid]
    for U, g in ((Um, gm), (UM, gM)):
        if np.any(U):
            J = J + sparse.csr_matrix(U[:, None]) @ sparse.csr_matrix(g[None, :])
    return J.tocsr()


def _gradient_hessians(surface, positions, t, eps=_HESSIAN_EPS):
    """Central-difference Hessians of d at each node, symmetrized."""
    n = positions.shape[0]
    H = np.zeros((n, 3, 3))
    for a in range(3):
        xp = positions.copy()
        xp[:, a] += eps
        xm = positions.copy()
        xm[:, a] -= eps
        H[:, :, a] = (surface.grad_d(xp, t) - surface.grad_d(xm, t)) / (2 * eps)
    return 0.5 * (H + np.transpose(H, (0, 2, 1)))


def _curvature_blocks(lam, H):
    """Block-diagonal -lam_j H_j, the multiplier curvature term."""
    n = lam.shape[0]
    blocks = -lam[:, None, None] * H
    rows = np.repeat(np.arange(n) * 3, 9) + np.tile(
        np.repeat(np.arange(3), 3), n)
    cols = np.repeat(np.arange(n) * 3, 9) + np.tile(
        np.tile(np.arange(3), 3), n)
    return sparse.csr_matrix((blocks.ravel(), (rows, cols)),
                             shape=(3 * n, 3 * n))


class _StageSolveFailed(Exception):
    def __init__(self, message, residual):
        super().__init__(message)
        self.residual = residual


class _RadauCore:
    """One-step solver; radau_step wraps it."""

    def __init__(self, mesh, surface, forces, tableau, newton, stats):
        self.mesh = mesh
        self.surface = surface
        self.forces = forces
        self.tableau = tableau
        self.newton = newton
        self.stats = stats
        self.s = tableau.stages
        self.has_springs = (forces.k != 0.0 and mesh is not None
                            and mesh.n_edges > 0)
        self.has_angles = (forces.k_alpha != 0.0 and mesh is not None)

    def _w(self, positions):
        w = np.zeros_like(positions)
        if self.has_springs:
            w += _smoothed_spring(self.mesh, positions, self.forces)
        if self.has_angles:
            w += self.forces.k_alpha * angle_force(
                self.mesh, positions, self.forces.alpha_tol_deg)
        return w

    def _field(self, X, Lam, ts):
        out = []
        for i in range(self.s):
            v = normal_velocity(self.surface, X[i], ts[i])
            g = self.surface.grad_d(X[i], ts[i])
            out.append(v + self._w(X[i]) - Lam[i][:, None] * g)
        return out

    def _residual(self, x, X, Lam, ts, tau):
        A = self.tableau.A
        phi = self._field(X, Lam, ts)
        rx = [X[i] - x - tau * sum(A[i, j] * phi[j] for j in range(self.s))
              for i in range(self.s)]
        rc = [np.asarray(self.surface.d(X[i], ts[i])) for i in range(self.s)]
        return rx, rc

    def _factor(self, X, Lam, ts, tau):
        s = self.s
        n = X[0].shape[0]
        n3 = 3 * n
        A = self.tableau.A
        Js, Ds = [], []
        for i in range(s):
            if self.has_springs:
                J = _smoothed_spring_jacobian(self.mesh, X[i], self.forces)
                J = J + _curvature_blocks(
                    Lam[i], _gradient_hessians(self.surface, X[i], ts[i]))
            else:
                J = _curvature_blocks(
                    Lam[i], _gradient_hessians(self.surface, X[i], ts[i]))
            Js.append(J)
            Ds.append(_constraint_gradient_matrix(
                self.surface.grad_d(X[i], ts[i])))
        eye = sparse.identity(n3, format="csr")
        zero = sparse.csr_matrix((n3, n3))
        TL = sparse.bmat([[(eye if i == j else zero)
                           - tau * A[i, j] * Js[j] for j in range(s)]
                          for i in range(s)])
        TR = sparse.bmat([[tau * A[i, j] * Ds[j].T for j in range(s)]
                          for i in range(s)])
        BL = sparse.block_diag(Ds)
        M = sparse.bmat([[TL, TR], [BL, None]], format="csc")
        self.stats.factorizations += 1
        return splu(M)

    def _accept(self, x, x_new):
        if not np.all(np.isfinite(x_new)):
            raise _StageSolveFailed("non-finite stage root", np.inf)
        if self.has_springs and self.mesh.n_triangles > 0:
            before = mesh_quality(self.mesh, positions=x).skew_max
            after = mesh_quality(self.mesh, positions=x_new).skew_max
            if after > before + QUALITY_JUMP_TOL:
                self.stats.rejected_roots += 1
                raise _StageSolveFailed(
                    f"stage root rejected: skewness jumped "
                    f"{before:.3f} -> {after:.3f}", np.nan)
        return x_new

    def _newton(self, x, lam, X, Lam, ts, tau):
        s = self.s
        n = x.shape[0]
        n3 = 3 * n
        A = self.tableau.A
        lu = self._factor(X, Lam, ts, tau)
        nfact = 1
        rinf_prev = None
        rinf0 = None
        it = 0
        while True:
            it += 1
            if it > self.newton.max_iter:
                raise _StageSolveFailed(
                    f"no convergence in {self.newton.max_iter} iterations "
                    f"(residual {rinf_prev:.3e})", rinf_prev)
            rx, rc = self._residual(x, X, Lam, ts, tau)
            rinf = max(max(float(np.abs(r).max()) for r in rx),
                       max(float(np.abs(r).max()) for r in rc))
            self.stats.newton_iterations += 1
            if not np.isfinite(rinf):
                raise _StageSolveFailed("residual lost finiteness", np.inf)
            if rinf0 is None:
                rinf0 = rinf
            if rinf > max(10.0 * rinf0, 1e3):
                raise _StageSolveFailed(f"diverging, residual {rinf:.3e}",
                                        rinf)
            if rinf < self.newton.tol:
                # b-weighted update through A^{-1}: equal to the last
                # stage for stiffly accurate tableaus.
                wts = np.linalg.solve(A.T, self.tableau.b)
                x_new = x + sum(wts[i] * (X[i] - x) for i in range(s))
                lam_new = lam + sum(wts[i] * (Lam[i] - lam) for i in range(s))
                x_new = self._accept(x, x_new)
                self.stats.max_iterations_per_step = max(
                    self.stats.max_iterations_per_step, it)
                self.stats.stage_positions = np.stack(X)
                self.stats.stage_multipliers = np.stack(Lam)
                return x_new, lam_new
            if rinf_prev is not None and rinf > 0.5 * rinf_prev:
                if nfact >= _MAX_FACTORIZATIONS:
                    raise _StageSolveFailed(
                        f"contraction lost, residual {rinf:.3e}", rinf)
                lu = self._factor(X, Lam, ts, tau)
                nfact += 1
            rhs = np.concatenate([-r.ravel() for r in rx] + [-r for r in rc])
            delta = lu.solve(rhs)
            X = [X[i] + delta[i * n3:(i + 1) * n3].reshape(n, 3)
                 for i in range(s)]
            Lam = [Lam[i] + delta[s * n3 + i * n:s * n3 + (i + 1) * n]
                   for i in range(s)]
            rinf_prev = rinf

    def _qs_multiplier(self, x, t):
        """Least-squares multiplier along the constraint gradient."""
        g = self.surface.grad_d(x, t)
        v = normal_velocity(self.surface, x, t)
        rhs = v + self._w(x)
        return (np.einsum("ij,ij->i", g, rhs)
                / np.einsum("ij,ij->i", g, g))

    def _transport_predictor(self, x, t, tau):
        v0 = normal_velocity(self.surface, x, t)
        return [x + self.tableau.c[i] * tau * v0 for i in range(self.s)]

    def _integrated_predictor(self, x, t, tau):
        """Projected RK4 march of the constrained field to each stage
        time; lands on the correct side of spring snap-throughs."""
        def f(xx, tt):
            v = normal_velocity(self.surface, xx, tt)
            rhs = v + self._w(xx)
            g = self.surface.grad_d(xx, tt)
            lqs = (np.einsum("ij,ij->i", g, rhs)
                   / np.einsum("ij,ij->i", g, g))
            return rhs - lqs[:, None] * g

        Xs = []
        xc = x.copy()
        tprev = 0.0
        for ci in self.tableau.c:
            h = (ci - tprev) * tau / _PREDICTOR_SUBSTEPS
            for q in range(_PREDICTOR_SUBSTEPS):
                tq = t + tprev * tau + q * h
                k1 = f(xc, tq)
                k2 = f(xc + 0.5 * h * k1, tq + 0.5 * h)
                k3 = f(xc + 0.5 * h * k2, tq + 0.5 * h)
                k4 = f(xc + h * k3, tq + h)
                xc = xc + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4)
            xc = project(self.surface, xc, t + ci * tau)
            Xs.append(xc.copy())
            tprev = ci
        return Xs

    def step(self, x, lam, t, tau, depth=0):
        ts = t + self.tableau.c * tau
        attempts = []
        X0 = self._transport_predictor(x, t, tau)
        attempts.append((X0, self._qs_multiplier(x, t)))
        attempts.append((X0, lam))
        last = None
        for ia, (X, lam_init) in enumerate(attempts):
            try:
                xn, ln = self._newton(x, lam, [xi.copy() for xi in X],
                                      [lam_init.copy() for _ in range(self.s)],
                                      ts, tau)
                self.stats.steps += 1
                if ia > 0:
                    self.stats.predictor_retries += 1
                return xn, ln
            except _StageSolveFailed as exc:
                last = exc
        try:
            Xi = self._integrated_predictor(x, t, tau)
            lam_init = self._qs_multiplier(x, t)
            xn, ln = self._newton(x, lam, Xi,
                                  [lam_init.copy() for _ in range(self.s)],
                                  ts, tau)
            self.stats.steps += 1
            self.stats.predictor_retries += 1
            return xn, ln
        except _StageSolveFailed as exc:
            last = exc
        if depth >= _MAX_HALVINGS:
            raise last
        self.stats.halvings += 1
        xm, lamm = self.step(x, lam, t, 0.5 * tau, depth + 1)
        return self.step(xm, lamm, t + 0.5 * tau, 0.5 * tau, depth + 1)


def radau_step(state: DAEState, mesh, surface, forces, tableau, tau,
               newton: NewtonSettings = None, stats: RadauStats = None):
    """One implicit step of length tau from state.

    Returns the new DAEState via the b-weighted update with stage slopes
    recovered through A^{-1}; for the stiffly accurate Radau IIA
    tableaus this coincides with the last stage.  mesh may be None when
    both force constants vanish (pure transport).

    Raises
    ------
    StepFailure
        If no predictor converges at any step size down to
        tau / 2**8.
    """
    if newton is None:
        newton = NewtonSettings()
    if stats is None:
        stats = RadauStats()
    core = _RadauCore(mesh, surface, forces, tableau, newton, stats)
    try:
        x_new, lam_new = core.step(state.x, state.lam, state.t, tau)
    except _StageSolveFailed as exc:
        raise StepFailure(
            f"stage solve failed at t = {state.t:g}: {exc}",
            residual=exc.residual) from exc
    return DAEState(x=x_new, lam=lam_new, t=state.t + tau)
