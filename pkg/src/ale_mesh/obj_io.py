"""Wavefront OBJ reading and writing for closed triangle meshes.

Only v and f records are honored.  Coordinates go out with 17 significant
digits so a write/read round trip is bit-exact.
"""

from __future__ import annotations

import numpy as np

from .errors import MeshError
from .geometry import TriMesh, build_mesh


def write_obj(path, mesh: TriMesh):
    lines = []
    for x, y, z in mesh.vertices:
        lines.append("v %.17g %.17g %.17g" % (x, y, z))
    for a, b, c in mesh.triangles:
        lines.append("f %d %d %d" % (a + 1, b + 1, c + 1))
    with open(path, "w", newline="\n") as fh:
        fh.write("\n".join(lines))
        fh.write("\n")


def read_obj(path) -> TriMesh:
    vertices = []
    faces = []
    with open(path) as fh:
        for ln, line in enumerate(fh, start=1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshError(f"{path}:{ln}: malformed vertex record")
                vertices.append([float(p) for p in parts[1:4]])
            elif tag == "f":
                idx = [p.split("/")[0] for p in parts[1:]]
                if len(idx) != 3:
                    raise MeshError(
                        f"{path}:{ln}: only triangle faces are supported")
                face = [int(p) for p in idx]
                if any(i < 1 for i in face):
                    raise MeshError(
                        f"{path}:{ln}: face indices must be positive (1-based)")
                faces.append([i - 1 for i in face])
            # all other record types are ignored
    if not vertices or not faces:
        raise MeshError(f"{path}: no usable v/f records")
    return build_mesh(np.array(vertices, dtype=float),
                      np.array(faces, dtype=np.int64))
