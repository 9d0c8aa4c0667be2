"""Tangential mesh-improvement forces.

The spring force pulls every edge toward a target length computed from
the current global length distribution: with m and M the minimum and
maximum edge length, targets clamp each length into the band
[m + p (M - m), m + (1 - p)(M - m)], p in (0, 1).  The angle force adds
a contraction along edges whose opposite angle exceeds a threshold,
using the law-of-cosines length that would bring the angle back to the
threshold.  The combined ALE velocity is w = k F_spring + k_alpha F_angle.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import sparse

from .errors import DegenerateEdgeError, MeshError
from .geometry import _corner_angles

EDGE_FLOOR = 1e-14


@dataclass(frozen=True)
class ForceConfig:
    k: float = 500.0
    p: float = 0.4
    k_alpha: float = 0.0
    alpha_tol_deg: float = 90.0

    def __post_init__(self):
        if not (0.0 < self.p < 1.0):
            raise MeshError(f"p must lie in (0, 1), got {self.p}")
        if self.k < 0 or self.k_alpha < 0:
            raise MeshError("force constants must be non-negative")
        if not (0.0 < self.alpha_tol_deg < 180.0):
            raise MeshError(
                f"alpha_tol_deg must lie in (0, 180), got {self.alpha_tol_deg}")


def target_lengths(lengths, p):
    """Clamp lengths into the global band [m + p(M-m), m + (1-p)(M-m)]."""
    lengths = np.asarray(lengths, dtype=float)
    if lengths.size == 0:
        raise MeshError("cannot compute target lengths of an empty edge set")
    if np.any(lengths <= 0.0):
        raise MeshError("edge lengths must be positive")
    if not (0.0 < p < 1.0):
        raise MeshError(f"p must lie in (0, 1), got {p}")
    m = lengths.min()
    M = lengths.max()
    lower = m + p * (M - m)
    upper = m + (1.0 - p) * (M - m)
    return np.where(lengths >= upper, upper,
                    np.where(lengths <= lower, lower, lengths))


def edge_forces(positions, edges, targets):
    """Per-node force sum of (target - |e|) unit-edge contributions.

    Equal and opposite on the two endpoints of every edge, so the total
    over all nodes vanishes identically.
    """
    positions = np.asarray(positions, dtype=float)
    i, j = edges[:, 0], edges[:, 1]
    u = positions[i] - positions[j]
    lengths = np.linalg.norm(u, axis=1)
    short = lengths < EDGE_FLOOR
    if short.any():
        e = int(np.nonzero(short)[0][0])
        raise DegenerateEdgeError(
            f"edge {e} ({int(i[e])}, {int(j[e])}) has length "
            f"{lengths[e]:.3e}", edge=e)
    f = ((targets - lengths) / lengths)[:, None] * u
    out = np.zeros_like(positions)
    np.add.at(out, i, f)
    np.add.at(out, j, -f)
    return out


def spring_force(mesh, positions, p):
    """Spring force with targets recomputed from the current lengths."""
    positions = np.asarray(positions, dtype=float)
    lengths = mesh.edge_lengths(positions)
    if np.any(lengths < EDGE_FLOOR):
        e = int(np.argmin(lengths))
        raise DegenerateEdgeError(
            f"edge {e} has length {lengths[e]:.3e}", edge=e)
    return edge_forces(positions, mesh.edges, target_lengths(lengths, p))


def angle_force(mesh, positions, alpha_tol_deg):
    """Contraction along edges whose opposite angle exceeds the threshold.

    For a triangle edge e with opposite angle alpha > alpha_tol and
    adjacent side lengths b, c, the target is
    sqrt(b^2 + c^2 - 2 b c cos(alpha_tol)), and (target - |e|) unit-edge
    contributions act on both endpoints.  Contributions from the two
    triangles sharing an edge accumulate.
    """
    positions = np.asarray(positions, dtype=float)
    tri = mesh.triangles
    p0, p1, p2 = positions[tri[:, 0]], positions[tri[:, 1]], positions[tri[:, 2]]
    angles, _ = _corner_angles(p0, p1, p2)
    cos_tol = np.cos(np.radians(alpha_tol_deg))

    out = np.zeros_like(positions)
    # edge slots opposite each corner: corner 0 <-> edge (1, 2), etc.
    corners = ((0, 1, 2), (1, 2, 0), (2, 0, 1))
    for opp, ea, eb in corners:
        mask = angles[:, opp] > alpha_tol_deg
        if not mask.any():
            continue
        a_idx = tri[mask, ea]
        b_idx = tri[mask, eb]
        o_idx = tri[mask, opp]
        u = positions[a_idx] - positions[b_idx]
        lengths = np.linalg.norm(u, axis=1)
        short = lengths < EDGE_FLOOR
        if short.any():
            raise DegenerateEdgeError("degenerate edge under angle force")
        b2 = np.einsum("ij,ij->i", positions[a_idx] - positions[o_idx],
                       positions[a_idx] - positions[o_idx])
        c2 = np.einsum("ij,ij->i", positions[b_idx] - positions[o_idx],
                       positions[b_idx] - positions[o_idx])
        target = np.sqrt(b2 + c2 - 2.0 * np.sqrt(b2 * c2) * cos_tol)
        f = ((target - lengths) / lengths)[:, None] * u
        np.add.at(out, a_idx, f)
        np.add.at(out, b_idx, -f)
    return out


def ale_velocity(mesh, positions, config: ForceConfig):
    """w = k * spring + k_alpha * angle; each term skipped when its
    constant vanishes."""
    positions = np.asarray(positions, dtype=float)
    w = np.zeros_like(positions)
    if config.k != 0.0:
        w += config.k * spring_force(mesh, positions, config.p)
    if config.k_alpha != 0.0:
        w += config.k_alpha * angle_force(mesh, positions,
                                          config.alpha_tol_deg)
    return w


def spring_force_jacobian(mesh, positions, targets):
    """Analytic Jacobian of edge_forces with the targets held fixed.

    Per edge with difference u and length L the endpoint block is
    (target/L - 1) I - (target/L^3) u u^T, assembled into a sparse
    (3N, 3N) matrix over flattened node coordinates.
    """
    positions = np.asarray(positions, dtype=float)
    n = positions.shape[0]
    i, j = mesh.edges[:, 0], mesh.edges[:, 1]
    u = positions[i] - positions[j]
    L = np.linalg.norm(u, axis=1)
    if np.any(L < EDGE_FLOOR):
        raise DegenerateEdgeError("degenerate edge in Jacobian assembly")
    targets = np.asarray(targets, dtype=float)

    eye = np.eye(3)
    blocks = ((targets / L - 1.0)[:, None, None] * eye
              - (targets / L ** 3)[:, None, None]
              * u[:, :, None] * u[:, None, :])

    data = np.concatenate([blocks, blocks, -blocks, -blocks])
    rows_n = np.concatenate([i, j, i, j])
    cols_n = np.concatenate([i, j, j, i])
    off = np.arange(3)
    rows = (3 * rows_n[:, None, None] + off[None, :, None]
            + np.zeros((1, 1, 3), dtype=int))
    cols = (3 * cols_n[:, None, None] + off[None, None, :]
            + np.zeros((1, 3, 1), dtype=int))
    mat = sparse.coo_matrix(
        (data.ravel(), (rows.ravel(), cols.ravel())),
        shape=(3 * n, 3 * n))
    return mat.tocsr()
