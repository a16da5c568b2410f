"""ASCII OBJ and PLY mesh input/output.

Vertex order is preserved exactly on both read and write, so vertex-wise
correspondence between meshes survives a save/load round trip. Coordinates
are written with 17 significant digits, enough to reproduce float64 bits.
"""

from __future__ import annotations

import os

import numpy as np

from .errors import ConfigError
from .mesh import TriangleMesh


def write_obj(mesh: TriangleMesh, path) -> None:
    v = mesh.vertex_array()
    with open(path, "w") as fh:
        fh.write("# meshflow OBJ\n")
        for x, y, z in v:
            fh.write(f"v {x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces:
            fh.write(f"f {a + 1} {b + 1} {c + 1}\n")


def read_obj(path) -> TriangleMesh:
    vertices, faces = [], []
    with open(path) as fh:
        for line in fh:
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if parts[0] == "v":
                vertices.append([float(p) for p in parts[1:4]])
            elif parts[0] == "f":
                idx = [int(p.split("/")[0]) - 1 for p in parts[1:]]
                if len(idx) != 3:
                    raise ConfigError(f"{path}: only triangle faces are supported")
                faces.append(idx)
    if not vertices:
        raise ConfigError(f"{path}: no vertices found")
    return TriangleMesh(np.array(vertices), np.array(faces, dtype=np.int64))


def write_ply(mesh: TriangleMesh, path) -> None:
    v = mesh.vertex_array()
    with open(path, "w") as fh:
        fh.write("ply\nformat ascii 1.0\ncomment meshflow\n")
        fh.write(f"element vertex {mesh.n_vertices}\n")
        fh.write("property double x\nproperty double y\nproperty double z\n")
        fh.write(f"element face {mesh.n_faces}\n")
        fh.write("property list uchar int vertex_indices\n")
        fh.write("end_header\n")
        for x, y, z in v:
            fh.write(f"{x:.17g} {y:.17g} {z:.17g}\n")
        for a, b, c in mesh.faces:
            fh.write(f"3 {a} {b} {c}\n")


def read_ply(path) -> TriangleMesh:
    with open(path) as fh:
        if fh.readline().strip() != "ply":
            raise ConfigError(f"{path}: not a PLY file")
        n_vertices = n_faces = None
        line = fh.readline()
        while line:
            parts = line.split()
            if parts[:1] == ["format"] and parts[1] != "ascii":
                raise ConfigError(f"{path}: only ascii PLY is supported")
            if parts[:2] == ["element", "vertex"]:
                n_vertices = int(parts[2])
            elif parts[:2] == ["element", "face"]:
                n_faces = int(parts[2])
            elif parts[:1] == ["end_header"]:
                break
            line = fh.readline()
        if n_vertices is None or n_faces is None:
            raise ConfigError(f"{path}: incomplete PLY header")
        vertices = np.array(
            [[float(x) for x in fh.readline().split()[:3]] for _ in range(n_vertices)]
        )
        faces = []
        for _ in range(n_faces):
            parts = fh.readline().split()
            if int(parts[0]) != 3:
                raise ConfigError(f"{path}: only triangle faces are supported")
            faces.append([int(p) for p in parts[1:4]])
    return TriangleMesh(vertices, np.array(faces, dtype=np.int64))


_WRITERS = {".obj": write_obj, ".ply": write_ply}
_READERS = {".obj": read_obj, ".ply": read_ply}


def save_mesh(mesh: TriangleMesh, path) -> None:
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in _WRITERS:
        raise ConfigError(f"unsupported mesh format {ext!r} (use .obj or .ply)")
    _WRITERS[ext](mesh, path)


def load_mesh(path) -> TriangleMesh:
    if not os.path.exists(str(path)):
        raise ConfigError(f"mesh file not found: {path}")
    ext = os.path.splitext(str(path))[1].lower()
    if ext not in _READERS:
        raise ConfigError(f"unsupported mesh format {ext!r} (use .obj or .ply)")
    return _READERS[ext](path)
