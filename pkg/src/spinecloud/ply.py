"""Minimal PLY and OBJ readers/writers.

Covers what the pipeline needs: double-precision vertex positions, an
optional per-vertex uint8 ``level`` tag (vertebra membership), and triangle
faces.  PLY supports both ``ascii`` and ``binary_little_endian``; OBJ export
is positions + faces only.  Headers are byte-stable across runs so written
files can be compared for reproducibility.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import FormatError
from .mesh import TriMesh

_PLY_DTYPES = {
    "char": "i1", "int8": "i1", "uchar": "u1", "uint8": "u1",
    "short": "i2", "int16": "i2", "ushort": "u2", "uint16": "u2",
    "int": "i4", "int32": "i4", "uint": "u4", "uint32": "u4",
    "float": "f4", "float32": "f4", "double": "f8", "float64": "f8",
}


def write_ply(path, vertices: np.ndarray, faces: np.ndarray | None = None,
              levels: np.ndarray | None = None, binary: bool = True) -> None:
    """Write points (and optionally faces / per-vertex levels) as PLY."""
    vertices = np.asarray(vertices, dtype=np.float64)
    if vertices.ndim != 2 or vertices.shape[1] != 3:
        raise ValueError(f"vertices must be (N,3), got {vertices.shape}")
    n_faces = 0 if faces is None else len(faces)

    lines = [
        "ply",
        "format binary_little_endian 1.0" if binary else "format ascii 1.0",
        f"element vertex {len(vertices)}",
        "property double x",
        "property double y",
        "property double z",
    ]
    if levels is not None:
        lines.append("property uchar level")
    if faces is not None:
        lines.append(f"element face {n_faces}")
        lines.append("property list uchar int vertex_indices")
    lines.append("end_header")
    header = ("\n".join(lines) + "\n").encode("ascii")

    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(header)
        if binary:
            if levels is not None:
                vdt = np.dtype([("xyz", "<f8", (3,)), ("level", "u1")])
                rec = np.empty(len(vertices), dtype=vdt)
                rec["xyz"] = vertices
                rec["level"] = np.asarray(levels, dtype=np.uint8)
                fh.write(rec.tobytes())
            else:
                fh.write(vertices.astype("<f8").tobytes())
            if faces is not None:
                fdt = np.dtype([("n", "u1"), ("idx", "<i4", (3,))])
                rec = np.empty(n_faces, dtype=fdt)
                rec["n"] = 3
                rec["idx"] = np.asarray(faces, dtype=np.int32)
                fh.write(rec.tobytes())
        else:
            for i, v in enumerate(vertices):
                row = f"{v[0]:.17g} {v[1]:.17g} {v[2]:.17g}"
                if levels is not None:
                    row += f" {int(levels[i])}"
                fh.write((row + "\n").encode("ascii"))
            if faces is not None:
                for f in np.asarray(faces, dtype=np.int64):
                    fh.write(f"3 {f[0]} {f[1]} {f[2]}\n".encode("ascii"))


def read_ply(path) -> tuple[np.ndarray, np.ndarray | None, np.ndarray | None]:
    """Read a PLY file; returns (vertices, faces or None, levels or None)."""
    path = Path(path)
    data = path.read_bytes()
    end = data.find(b"end_header")
    if not data.startswith(b"ply") or end < 0:
        raise FormatError(f"{path}: not a PLY file")
    body_start = data.index(b"\n", end) + 1
    header_lines = data[:end].decode("ascii", errors="replace").splitlines()

    fmt = None
    elements: list[tuple[str, int, list[tuple[str, str]]]] = []
    face_list_dtypes: tuple[str, str] | None = None
    for line in header_lines:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "format":
            fmt = parts[1]
        elif parts[0] == "element":
            elements.append((parts[1], int(parts[2]), []))
        elif parts[0] == "property" and elements:
            if parts[1] == "list":
                face_list_dtypes = (parts[2], parts[3])
                elements[-1][2].append(("__list__", parts[4]))
            else:
                elements[-1][2].append((parts[1], parts[2]))
    if fmt not in ("ascii", "binary_little_endian"):
        raise FormatError(f"{path}: unsupported PLY format '{fmt}'")

    vertices = faces = levels = None
    if fmt == "ascii":
        tokens = data[body_start:].split()
        pos = 0
        for name, count, props in elements:
            width = len(props)
            if name == "vertex":
                names = [p[1] for p in props]
                block = np.array(tokens[pos:pos + count * width], dtype=np.float64)
                if block.size != count * width:
                    raise FormatError(f"{path}: truncated vertex data")
                block = block.reshape(count, width)
                vertices = block[:, [names.index("x"), names.index("y"), names.index("z")]]
                if "level" in names:
                    levels = block[:, names.index("level")].astype(np.uint8)
                pos += count * width
            elif name == "face":
                rows = []
                for _ in range(count):
                    n = int(tokens[pos]); pos += 1
                    if n != 3:
                        raise FormatError(f"{path}: non-triangle face (n={n})")
                    rows.append([int(t) for t in tokens[pos:pos + 3]])
                    pos += 3
                faces = np.array(rows, dtype=np.int64) if rows else None
            else:
                pos += count * width
    else:
        offset = body_start
        for name, count, props in elements:
            if name == "vertex":
                fields = [(p[0], "<" + _PLY_DTYPES[p[1]]) for p in props]
                dt = np.dtype(fields)
                rec = np.frombuffer(data, dtype=dt, count=count, offset=offset)
                if len(rec) != count:
                    raise FormatError(f"{path}: truncated vertex data")
                vertices = np.stack(
                    [rec["x"], rec["y"], rec["z"]], axis=1).astype(np.float64)
                if "level" in dt.names:
                    levels = rec["level"].astype(np.uint8)
                offset += dt.itemsize * count
            elif name == "face":
                cnt_t, idx_t = face_list_dtypes
                dt = np.dtype([("n", "<" + _PLY_DTYPES[cnt_t]),
                               ("idx", "<" + _PLY_DTYPES[idx_t], (3,))])
                rec = np.frombuffer(data, dtype=dt, count=count, offset=offset)
                if len(rec) != count or (count and not np.all(rec["n"] == 3)):
                    raise FormatError(f"{path}: unsupported or truncated face data")
                faces = rec["idx"].astype(np.int64)
                offset += dt.itemsize * count
            else:
                raise FormatError(f"{path}: unsupported element '{name}' in binary PLY")
    if vertices is None:
        raise FormatError(f"{path}: no vertex element")
    return vertices, faces, levels


def write_mesh_ply(path, mesh: TriMesh, binary: bool = True) -> None:
    write_ply(path, mesh.vertices, mesh.faces, mesh.vertex_labels, binary=binary)


def read_mesh_ply(path) -> TriMesh:
    vertices, faces, levels = read_ply(path)
    if faces is None:
        raise FormatError(f"{path}: mesh PLY has no faces")
    return TriMesh(vertices, faces, levels)


def write_cloud_ply(path, points: np.ndarray, levels: np.ndarray | None = None,
                    binary: bool = True) -> None:
    write_ply(path, points, faces=None, levels=levels, binary=binary)


def read_cloud_ply(path) -> tuple[np.ndarray, np.ndarray | None]:
    vertices, _, levels = read_ply(path)
    return vertices, levels


def write_obj(path, mesh: TriMesh) -> None:
    """OBJ export, positions and faces only (indices are 1-based)."""
    with open(path, "w") as fh:
        for v in mesh.vertices:
            fh.write(f"v {v[0]:.17g} {v[1]:.17g} {v[2]:.17g}\n")
        for f in mesh.faces:
            fh.write(f"f {f[0] + 1} {f[1] + 1} {f[2] + 1}\n")
