"""Indexed triangle meshes and the geometry routines the pipeline leans on.

Coordinates are millimetres throughout, in the anatomical frame used by
every module: +x lateral-left, +y posterior, +z cranial.  A mesh may carry
a per-vertex vertebra level (1..5 for L1..L5) so that merged spine meshes
remember which vertebra each triangle came from.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import TopologyError


@dataclass
class TriMesh:
    """Triangle surface: ``vertices`` (V,3) float64 mm, ``faces`` (F,3) int."""

    vertices: np.ndarray
    faces: np.ndarray
    vertex_labels: np.ndarray | None = None  # (V,) uint8 in {1..5}, optional

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64)
        if self.vertex_labels is not None:
            self.vertex_labels = np.ascontiguousarray(self.vertex_labels, dtype=np.uint8)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def copy(self) -> "TriMesh":
        labels = None if self.vertex_labels is None else self.vertex_labels.copy()
        return TriMesh(self.vertices.copy(), self.faces.copy(), labels)

    def transformed(self, rotation: np.ndarray, translation: np.ndarray,
                    pivot: np.ndarray | None = None) -> "TriMesh":
        """Rigidly transform: v -> R (v - pivot) + pivot + t (pivot defaults to 0)."""
        pivot = np.zeros(3) if pivot is None else np.asarray(pivot, dtype=np.float64)
        verts = (self.vertices - pivot) @ np.asarray(rotation, dtype=np.float64).T
        verts += pivot + np.asarray(translation, dtype=np.float64)
        labels = None if self.vertex_labels is None else self.vertex_labels.copy()
        return TriMesh(verts, self.faces.copy(), labels)

    def translated(self, offset) -> "TriMesh":
        labels = None if self.vertex_labels is None else self.vertex_labels.copy()
        return TriMesh(self.vertices + np.asarray(offset, dtype=np.float64),
                       self.faces.copy(), labels)

    def bounds(self) -> tuple[np.ndarray, np.ndarray]:
        return self.vertices.min(axis=0), self.vertices.max(axis=0)


# ---------------------------------------------------------------------------
# Per-face quantities
# ---------------------------------------------------------------------------

def face_corners(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    v = mesh.vertices
    f = mesh.faces
    return v[f[:, 0]], v[f[:, 1]], v[f[:, 2]]


def face_cross(mesh: TriMesh) -> np.ndarray:
    """Unnormalized face normals (cross product of edge vectors)."""
    a, b, c = face_corners(mesh)
    return np.cross(b - a, c - a)


def face_areas(mesh: TriMesh) -> np.ndarray:
    return 0.5 * np.linalg.norm(face_cross(mesh), axis=1)


def face_normals(mesh: TriMesh) -> np.ndarray:
    n = face_cross(mesh)
    norm = np.linalg.norm(n, axis=1, keepdims=True)
    norm[norm == 0.0] = 1.0
    return n / norm


def face_labels(mesh: TriMesh) -> np.ndarray | None:
    """Per-face vertebra level, taken from the first corner's vertex label."""
    if mesh.vertex_labels is None:
        return None
    return mesh.vertex_labels[mesh.faces[:, 0]]


def surface_area(mesh: TriMesh) -> float:
    return float(face_areas(mesh).sum())


def area_centroid(mesh: TriMesh) -> np.ndarray:
    """Area-weighted centroid of the surface (not the vertex mean)."""
    a, b, c = face_corners(mesh)
    centers = (a + b + c) / 3.0
    areas = face_areas(mesh)
    total = areas.sum()
    if total <= 0.0:
        return mesh.vertices.mean(axis=0)
    return (centers * areas[:, None]).sum(axis=0) / total


def enclosed_volume(mesh: TriMesh) -> float:
    """Signed volume via the divergence theorem; positive for outward winding."""
    a, b, c = face_corners(mesh)
    return float(np.einsum("ij,ij->i", a, np.cross(b, c)).sum() / 6.0)


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

def _sorted_edges(mesh: TriMesh) -> np.ndarray:
    f = mesh.faces
    e = np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]], axis=0)
    return np.sort(e, axis=1)


def edge_face_counts(mesh: TriMesh) -> np.ndarray:
    """How many faces border each unique undirected edge."""
    _, counts = np.unique(_sorted_edges(mesh), axis=0, return_counts=True)
    return counts


def is_watertight(mesh: TriMesh) -> bool:
    """Closed manifold test: every edge borders exactly two faces."""
    if mesh.n_faces == 0:
        return False
    return bool(np.all(edge_face_counts(mesh) == 2))


def euler_characteristic(mesh: TriMesh) -> int:
    n_edges = len(np.unique(_sorted_edges(mesh), axis=0))
    return mesh.n_vertices - n_edges + mesh.n_faces


def validate_mesh(mesh: TriMesh, min_area: float = 1e-12) -> None:
    """Raise TopologyError on out-of-range indices or degenerate faces."""
    f = mesh.faces
    if f.size and f.max() >= mesh.n_vertices:
        raise TopologyError("face index exceeds vertex count")
    if f.size and f.min() < 0:
        raise TopologyError("negative face index")
    same = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    if same.any():
        raise TopologyError(f"{int(same.sum())} faces with repeated vertices")
    tiny = face_areas(mesh) <= min_area
    if tiny.any():
        raise TopologyError(f"{int(tiny.sum())} faces with area <= {min_area} mm^2")


def orient_outward(mesh: TriMesh) -> TriMesh:
    """Flip winding globally if the signed enclosed volume is negative."""
    if enclosed_volume(mesh) < 0.0:
        flipped = mesh.faces[:, [0, 2, 1]].copy()
        return TriMesh(mesh.vertices.copy(), flipped,
                       None if mesh.vertex_labels is None else mesh.vertex_labels.copy())
    return mesh


def merge_meshes(meshes: list[TriMesh]) -> TriMesh:
    """Concatenate meshes, keeping per-vertex labels when every part has them."""
    verts, faces, labels = [], [], []
    offset = 0
    all_labeled = all(m.vertex_labels is not None for m in meshes)
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        if all_labeled:
            labels.append(m.vertex_labels)
        offset += m.n_vertices
    return TriMesh(np.concatenate(verts), np.concatenate(faces),
                   np.concatenate(labels) if all_labeled else None)


def dihedral_angles(mesh: TriMesh) -> np.ndarray:
    """Angle (radians) between face normals across every interior edge.

    Flat surfaces give 0; staircase artifacts show up as a heavy pi/2 mode.
    """
    f = mesh.faces
    edges = _sorted_edges(mesh)
    owner = np.tile(np.arange(len(f)), 3)
    order = np.lexsort((edges[:, 1], edges[:, 0]))
    edges, owner = edges[order], owner[order]
    same = np.all(edges[1:] == edges[:-1], axis=1)
    fa, fb = owner[:-1][same], owner[1:][same]
    n = face_normals(mesh)
    cosang = np.clip(np.einsum("ij,ij->i", n[fa], n[fb]), -1.0, 1.0)
    return np.arccos(cosang)


# ---------------------------------------------------------------------------
# Smoothing
# ---------------------------------------------------------------------------

def _vertex_adjacency(mesh: TriMesh) -> tuple[np.ndarray, np.ndarray]:
    """Directed neighbor pairs (row vertex, col vertex) from face edges."""
    f = mesh.faces
    src = np.concatenate([f[:, 0], f[:, 1], f[:, 1], f[:, 2], f[:, 2], f[:, 0]])
    dst = np.concatenate([f[:, 1], f[:, 0], f[:, 2], f[:, 1], f[:, 0], f[:, 2]])
    pairs = np.unique(np.stack([src, dst], axis=1), axis=0)
    return pairs[:, 0], pairs[:, 1]


def smooth_mesh(mesh: TriMesh, iterations: int = 10, strength: float = 0.5) -> TriMesh:
    """Gaussian-weighted Laplacian vertex relaxation.

    Each vertex moves toward the Gaussian-weighted mean of its one-ring by
    ``strength`` (in (0,1)); weights use sigma = mean edge length, recomputed
    per iteration.  The face list is untouched, so topology is preserved, and
    every new position is a convex combination of old positions, so vertices
    never leave the input's convex hull.

    Raises TopologyError when the input is not a closed manifold.
    """
    if not (0.0 < strength < 1.0):
        raise ValueError(f"strength must be in (0,1), got {strength}")
    if iterations < 0:
        raise ValueError("iterations must be >= 0")
    if not np.all(edge_face_counts(mesh) == 2):
        raise TopologyError("smoothing requires a closed manifold mesh")
    if iterations == 0:
        return mesh.copy()

    rows, cols = _vertex_adjacency(mesh)
    verts = mesh.vertices.copy()
    nv = mesh.n_vertices
    for _ in range(iterations):
        delta = verts[cols] - verts[rows]
        d2 = np.einsum("ij,ij->i", delta, delta)
        sigma2 = max(d2.mean(), 1e-30)
        w = np.exp(-d2 / (2.0 * sigma2))
        wsum = np.bincount(rows, weights=w, minlength=nv)
        target = np.stack(
            [np.bincount(rows, weights=w * verts[cols, k], minlength=nv) for k in range(3)],
            axis=1,
        )
        has_nb = wsum > 0
        target[has_nb] /= wsum[has_nb, None]
        target[~has_nb] = verts[~has_nb]
        verts = verts + strength * (target - verts)

    labels = None if mesh.vertex_labels is None else mesh.vertex_labels.copy()
    return TriMesh(verts, mesh.faces.copy(), labels)


# ---------------------------------------------------------------------------
# Primitive meshes (test shapes and demo scenes)
# ---------------------------------------------------------------------------

def icosphere(radius: float = 1.0, center=(0.0, 0.0, 0.0), subdivisions: int = 4) -> TriMesh:
    """Geodesic sphere from a subdivided icosahedron, outward winding."""
    phi = (1.0 + np.sqrt(5.0)) / 2.0
    verts = np.array([
        [-1, phi, 0], [1, phi, 0], [-1, -phi, 0], [1, -phi, 0],
        [0, -1, phi], [0, 1, phi], [0, -1, -phi], [0, 1, -phi],
        [phi, 0, -1], [phi, 0, 1], [-phi, 0, -1], [-phi, 0, 1],
    ], dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array([
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ], dtype=np.int64)

    for _ in range(subdivisions):
        edge_cache: dict[tuple[int, int], int] = {}
        new_verts = [verts]
        next_idx = len(verts)

        def midpoint(i, j):
            nonlocal next_idx
            key = (i, j) if i < j else (j, i)
            if key in edge_cache:
                return edge_cache[key]
            m = verts[i] + verts[j]
            m /= np.linalg.norm(m)
            new_verts.append(m[None, :])
            edge_cache[key] = next_idx
            next_idx += 1
            return edge_cache[key]

        new_faces = []
        for a, b, c in faces:
            ab, bc, ca = midpoint(a, b), midpoint(b, c), midpoint(c, a)
            new_faces += [[a, ab, ca], [b, bc, ab], [c, ca, bc], [ab, bc, ca]]
        verts = np.concatenate(new_verts, axis=0)
        faces = np.array(new_faces, dtype=np.int64)

    out = TriMesh(verts * radius + np.asarray(center, dtype=np.float64), faces)
    return orient_outward(out)


def quad_patch(center=(0.0, 0.0, 0.0), half_x: float = 10.0, half_z: float = 10.0,
               divisions: int = 10) -> TriMesh:
    """Flat rectangle in the y=const plane with normals facing +y."""
    cx, cy, cz = center
    xs = np.linspace(cx - half_x, cx + half_x, divisions + 1)
    zs = np.linspace(cz - half_z, cz + half_z, divisions + 1)
    gx, gz = np.meshgrid(xs, zs, indexing="ij")
    verts = np.stack([gx.ravel(), np.full(gx.size, float(cy)), gz.ravel()], axis=1)
    n = divisions + 1
    i, j = np.meshgrid(np.arange(divisions), np.arange(divisions), indexing="ij")
    v00 = (i * n + j).ravel()
    v01, v10, v11 = v00 + 1, v00 + n, v00 + n + 1
    # winding chosen so cross(e1, e2) points along +y
    faces = np.concatenate([
        np.stack([v00, v01, v10], axis=1),
        np.stack([v10, v01, v11], axis=1),
    ])
    return TriMesh(verts, faces.astype(np.int64))
