"""Triangulated closed surfaces: construction, quality measures, generators.

Meshes are plain vertex/triangle arrays with derived unique edges.  All
quality numbers come from the same per-element kernel: angles via
atan2(2*area, dot), element size h as the longest edge, sigma as twice
the area over the perimeter, and the skewness

    skew = max((alpha_max - 60) / 120, (60 - alpha_min) / 60)

which is 0 exactly for equilateral elements and 1 for fully collapsed
ones.  A mesh is reported good below 0.5 and non-acceptable above 0.8.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from .errors import DegenerateElementError, MeshError

# Area below AREA_FLOOR * h^2 leaves angles numerically meaningless.
AREA_FLOOR = 1e-14

# h/sigma of an equilateral triangle; lower bound for any element.
EQUILATERAL_RATIO = 2.0 * np.sqrt(3.0)

SKEW_GOOD = 0.5
SKEW_NON_ACCEPTABLE = 0.8

MAX_ICOSPHERE_SUBDIVISIONS = 8


@dataclass(frozen=True)
class TriMesh:
    """Closed triangulated surface.

    Attributes
    ----------
    vertices : (N, 3) float array
        Node coordinates.
    triangles : (M, 3) int array
        Vertex indices per element, consistent orientation not required.
    edges : (E, 2) int array
        Unique undirected edges, each row sorted, rows in lexicographic
        order.  On a closed surface every edge belongs to exactly two
        triangles.
    vertex_edges : tuple of int arrays
        For each vertex, the indices into ``edges`` of incident edges.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    edges: np.ndarray
    vertex_edges: tuple

    @property
    def n_vertices(self):
        return self.vertices.shape[0]

    @property
    def n_triangles(self):
        return self.triangles.shape[0]

    @property
    def n_edges(self):
        return self.edges.shape[0]

    def with_vertices(self, positions):
        """Same connectivity, new node positions (no re-validation)."""
        positions = np.asarray(positions, dtype=float)
        if positions.shape != self.vertices.shape:
            raise MeshError(
                f"positions shape {positions.shape} does not match "
                f"mesh with {self.n_vertices} vertices")
        return TriMesh(positions, self.triangles, self.edges, self.vertex_edges)

    def edge_lengths(self, positions=None):
        x = self.vertices if positions is None else positions
        diff = x[self.edges[:, 0]] - x[self.edges[:, 1]]
        return np.linalg.norm(diff, axis=1)


class TriangleMetrics(NamedTuple):
    angles: np.ndarray  # degrees, per corner
    h: float            # longest edge
    sigma: float        # 2 * area / perimeter
    skew: float


@dataclass(frozen=True)
class QualityReport:
    """Worst-case element measures over a mesh."""

    r: float           # max over elements of h / sigma
    alpha_min: float   # smallest angle anywhere, degrees
    alpha_max: float   # largest angle anywhere, degrees
    skew_max: float

    @property
    def classification(self):
        if self.skew_max < SKEW_GOOD:
            return "good"
        if self.skew_max > SKEW_NON_ACCEPTABLE:
            return "non-acceptable"
        return "acceptable"

    def csv_row(self, t):
        fields = (t, self.r, self.alpha_min, self.alpha_max, self.skew_max)
        return ",".join("%.17g" % v for v in fields)


def build_mesh(vertices, triangles):
    """Validate arrays and derive the edge structure of a closed surface.

    Raises
    ------
    MeshError
        On out-of-range indices, repeated vertices inside a triangle, or
        any edge not shared by exactly two triangles.
    """
    vertices = np.ascontiguousarray(vertices, dtype=float)
    triangles = np.ascontiguousarray(triangles, dtype=np.int64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise MeshError(f"vertices must be (N, 3), got {vertices.shape}")
    if triangles.ndim != 2 or triangles.shape[1] != 3:
        raise MeshError(f"triangles must be (M, 3), got {triangles.shape}")
    if triangles.shape[0] == 0:
        raise MeshError("mesh has no triangles")
    if triangles.min() < 0 or triangles.max() >= vertices.shape[0]:
        raise MeshError("triangle indices out of range")
    same = ((triangles[:, 0] == triangles[:, 1])
            | (triangles[:, 1] == triangles[:, 2])
            | (triangles[:, 0] == triangles[:, 2]))
    if same.any():
        raise MeshError(
            f"triangle {int(np.nonzero(same)[0][0])} repeats a vertex")

    raw = triangles[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2)
    raw = np.sort(raw, axis=1)
    edges, counts = np.unique(raw, axis=0, return_counts=True)
    if not (counts == 2).all():
        bad = edges[counts != 2][0]
        raise MeshError(
            f"edge {tuple(int(i) for i in bad)} lies in "
            f"{int(counts[counts != 2][0])} triangles; surface is not closed")

    incident = [[] for _ in range(vertices.shape[0])]
    for e, (i, j) in enumerate(edges):
        incident[i].append(e)
        incident[j].append(e)
    vertex_edges = tuple(np.array(lst, dtype=np.int64) for lst in incident)
    if any(len(lst) == 0 for lst in incident):
        raise MeshError("mesh has isolated vertices")

    return TriMesh(vertices, triangles, edges, vertex_edges)


def _corner_angles(p0, p1, p2):
    """Angles in degrees at each corner of triangles (rows).

    Uses atan2(|u x v|, u . v); the cross product magnitude is shared by
    all three corners, which keeps the three angles consistent.
    """
    u = p1 - p0
    v = p2 - p0
    w = p2 - p1
    cross = np.cross(u, v)
    twice_area = np.linalg.norm(cross, axis=-1)
    a0 = np.arctan2(twice_area, np.einsum("...i,...i->...", u, v))
    a1 = np.arctan2(twice_area, -np.einsum("...i,...i->...", u, w))
    a2 = np.arctan2(twice_area, np.einsum("...i,...i->...", v, w))
    return np.degrees(np.stack([a0, a1, a2], axis=-1)), twice_area


def _element_metrics(p0, p1, p2):
    """Vectorized per-element measures; returns angles, h, sigma, skew, area."""
    angles, twice_area = _corner_angles(p0, p1, p2)
    lengths = np.stack([
        np.linalg.norm(p1 - p0, axis=-1),
        np.linalg.norm(p2 - p1, axis=-1),
        np.linalg.norm(p0 - p2, axis=-1),
    ], axis=-1)
    h = lengths.max(axis=-1)
    perimeter = lengths.sum(axis=-1)
    area = 0.5 * twice_area
    with np.errstate(divide="ignore", invalid="ignore"):
        sigma = twice_area / perimeter
    amax = angles.max(axis=-1)
    amin = angles.min(axis=-1)
    skew = np.maximum((amax - 60.0) / 120.0, (60.0 - amin) / 60.0)
    return angles, h, sigma, skew, area


def triangle_metrics(a, b, c):
    """Measures of the single triangle (a, b, c).

    Raises
    ------
    DegenerateElementError
        If the area is below AREA_FLOOR * h^2.
    """
    p0 = np.asarray(a, dtype=float)
    p1 = np.asarray(b, dtype=float)
    p2 = np.asarray(c, dtype=float)
    angles, h, sigma, skew, area = _element_metrics(p0, p1, p2)
    if area < AREA_FLOOR * h * h:
        raise DegenerateElementError(
            f"triangle area {area:.3e} below floor for h={h:.3e}")
    return TriangleMetrics(angles, float(h), float(sigma), float(skew))


def mesh_quality(mesh, positions=None):
    """Worst-element QualityReport over the whole mesh.

    Raises
    ------
    DegenerateElementError
        Reporting the first offending element index.
    """
    x = mesh.vertices if positions is None else np.asarray(positions, float)
    tri = mesh.triangles
    p0, p1, p2 = x[tri[:, 0]], x[tri[:, 1]], x[tri[:, 2]]
    angles, h, sigma, skew, area = _element_metrics(p0, p1, p2)
    degenerate = area < AREA_FLOOR * h * h
    if degenerate.any():
        idx = int(np.nonzero(degenerate)[0][0])
        raise DegenerateElementError(
            f"element {idx} has area {area[idx]:.3e}, below floor "
            f"for h={h[idx]:.3e}", element=idx)
    return QualityReport(
        r=float((h / sigma).max()),
        alpha_min=float(angles.min()),
        alpha_max=float(angles.max()),
        skew_max=float(skew.max()),
    )


_ICOSAHEDRON_VERTICES = None
_ICOSAHEDRON_FACES = np.array([
    [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
    [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
    [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
    [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
], dtype=np.int64)


def _icosahedron_vertices():
    global _ICOSAHEDRON_VERTICES
    if _ICOSAHEDRON_VERTICES is None:
        phi = (1.0 + np.sqrt(5.0)) / 2.0
        v = np.array([
            [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
            [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
            [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
        ], dtype=float)
        _ICOSAHEDRON_VERTICES = v / np.linalg.norm(v, axis=1, keepdims=True)
    return _ICOSAHEDRON_VERTICES


def generate_icosphere(subdivisions):
    """Unit-sphere icosphere with 20 * 4**subdivisions triangles."""
    if not isinstance(subdivisions, (int, np.integer)) or subdivisions < 0:
        raise MeshError("subdivisions must be a non-negative integer")
    if subdivisions > MAX_ICOSPHERE_SUBDIVISIONS:
        raise MeshError(
            f"subdivisions > {MAX_ICOSPHERE_SUBDIVISIONS} not supported")

    vertices = list(_icosahedron_vertices())
    faces = _ICOSAHEDRON_FACES.copy()

    for _ in range(subdivisions):
        midpoint = {}

        def midpoint_index(i, j):
            key = (i, j) if i < j else (j, i)
            if key not in midpoint:
                m = vertices[i] + vertices[j]
                m /= np.linalg.norm(m)
                midpoint[key] = len(vertices)
                vertices.append(m)
            return midpoint[key]

        new_faces = np.empty((4 * len(faces), 3), dtype=np.int64)
        for f, (a, b, c) in enumerate(faces):
            ab = midpoint_index(a, b)
            bc = midpoint_index(b, c)
            ca = midpoint_index(c, a)
            new_faces[4 * f:4 * f + 4] = [
                [a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        faces = new_faces

    return build_mesh(np.array(vertices), faces)


def generate_torus_mesh(n_major, n_minor, major_radius, minor_radius):
    """Structured torus triangulation with 2 * n_major * n_minor triangles.

    Vertices sit exactly on the torus of radii (major_radius, minor_radius)
    around the z axis.  Odd rings are staggered by half a cell in the major
    direction and each quad is split along its short diagonal, so in
    parameter space the triangles form a near-equilateral lattice instead
    of right triangles.
    """
    if n_major < 3 or n_minor < 3:
        raise MeshError("torus grid needs at least 3 cells per direction")
    if major_radius <= minor_radius or minor_radius <= 0:
        raise MeshError("torus radii must satisfy major > minor > 0")

    j = np.arange(n_minor)
    offset = 0.5 * (j % 2)
    u = 2.0 * np.pi * (np.arange(n_major)[:, None] + offset[None, :]) / n_major
    vv = 2.0 * np.pi * j / n_minor * np.ones((n_major, 1))
    ring = major_radius + minor_radius * np.cos(vv)
    vertices = np.stack([
        ring * np.cos(u),
        ring * np.sin(u),
        minor_radius * np.sin(vv) * np.ones_like(u),
    ], axis=-1).reshape(-1, 3)

    def vid(i, j):
        return (i % n_major) * n_minor + (j % n_minor)

    faces = []
    for i in range(n_major):
        for j in range(n_minor):
            a = vid(i, j)
            b = vid(i + 1, j)
            c = vid(i + 1, j + 1)
            d = vid(i, j + 1)
            if j % 2 == 0:
                # row above is shifted right: short diagonal is b-d
                faces.append([a, b, d])
                faces.append([b, c, d])
            else:
                faces.append([a, b, c])
                faces.append([a, c, d])
    return build_mesh(vertices, np.array(faces, dtype=np.int64))


def extract_isosurface_mesh(fn: Callable, bounds, resolution):
    """Triangulate the zero level set of ``fn`` by marching cubes.

    ``fn`` maps (..., 3) points to scalar values; ``bounds`` is a pair of
    corner points enclosing the zero set with margin; ``resolution`` is
    the cell count along the longest axis (other axes scale with extent).
    Topology is whatever the level set has, so this also handles surfaces
    no generator covers.
    """
    from skimage.measure import marching_cubes

    lo = np.asarray(bounds[0], dtype=float)
    hi = np.asarray(bounds[1], dtype=float)
    extent = hi - lo
    if resolution < 8:
        raise MeshError("isosurface resolution must be at least 8")
    step = extent.max() / resolution
    counts = np.maximum(np.ceil(extent / step).astype(int) + 1, 8)
    axes = [np.linspace(lo[a], hi[a], counts[a]) for a in range(3)]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
    values = fn(grid)
    if values.min() >= 0 or values.max() <= 0:
        raise MeshError("level set does not cross zero inside the bounds")
    spacing = tuple((hi[a] - lo[a]) / (counts[a] - 1) for a in range(3))
    verts, faces, _, _ = marching_cubes(values, level=0.0, spacing=spacing)
    verts = verts + lo
    return build_mesh(verts, faces.astype(np.int64))


def perturb_positions(mesh, amplitude, seed):
    """Deterministic Gaussian jiggle scaled by the mean edge length."""
    rng = np.random.default_rng(seed)
    h = float(mesh.edge_lengths().mean())
    return mesh.vertices + amplitude * h * rng.standard_normal(
        mesh.vertices.shape)
