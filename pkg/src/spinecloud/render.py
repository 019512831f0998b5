"""Ultrasound-consistent partial views via occlusion ray-casting.

The acoustic model: a virtual transducer sweeps transversally above the
spine, so rays travel along -y (posterior to anterior).  Candidate points
are drawn uniformly by area on the mesh surface; a candidate survives when

* the -y ray through it meets no other surface first (acoustic shadowing),
* the angle between its outward normal and the reversed ray stays below
  the incidence threshold (no echo from grazing interfaces), and

scattering is emulated by adding a laterally/anteriorly shifted copy of the
spine to the occluder scene: points of the original mesh shadowed by the
copy disappear, exactly like off-plane echo artifacts eat into the view.
The shifted copy never contributes points of its own, so every scattered
cloud is a subset of the unscattered one.

Because rays are parallel to -y, ray/triangle intersection reduces to a 2D
point-in-triangle test in the (x,z) plane plus a depth interpolation; a
uniform (x,z) grid over projected triangles provides the candidate sets.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyInputError, LabelError
from .mesh import TriMesh, face_areas, face_cross, face_labels

# canonical scattering shifts (lateral, anterior-posterior) in mm; the
# lateral magnitudes are used on one side, mirror them in the config for
# a bilateral set
DEFAULT_SHIFT_PAIRS: tuple[tuple[float, float], ...] = tuple(
    (lat, ap) for lat in (-5.0, -7.0, -10.0) for ap in (-1.0, -5.0, -10.0))

OCCLUSION_EPS_MM = 1e-6


@dataclass
class AcquisitionConfig:
    """Knobs of the virtual acquisition; defaults match the standard setup."""

    camera_standoff_mm: float = 100.0
    ray_grid_spacing_mm: float = 0.5
    incidence_max_deg: float = 85.0
    physics_enabled: bool = True
    shift_pairs_mm: tuple = DEFAULT_SHIFT_PAIRS
    sample_seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.incidence_max_deg <= 90.0:
            raise ValueError(
                f"incidence_max_deg must be in (0, 90], got {self.incidence_max_deg}")
        if self.ray_grid_spacing_mm <= 0.0:
            raise ValueError("ray_grid_spacing_mm must be positive")
        pairs = tuple((float(a), float(b)) for a, b in self.shift_pairs_mm)
        self.shift_pairs_mm = pairs

    def to_dict(self) -> dict:
        return {
            "camera_standoff_mm": self.camera_standoff_mm,
            "ray_grid_spacing_mm": self.ray_grid_spacing_mm,
            "incidence_max_deg": self.incidence_max_deg,
            "physics_enabled": self.physics_enabled,
            "shift_pairs_mm": [list(p) for p in self.shift_pairs_mm],
            "sample_seed": self.sample_seed,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AcquisitionConfig":
        kwargs = dict(d)
        if "shift_pairs_mm" in kwargs:
            kwargs["shift_pairs_mm"] = tuple(tuple(p) for p in kwargs["shift_pairs_mm"])
        return cls(**kwargs)

    def hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class PartialCloud:
    """Rendered point set plus where it came from."""

    points_mm: np.ndarray
    level_hint: np.ndarray | None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.points_mm = np.asarray(self.points_mm, dtype=np.float64).reshape(-1, 3)
        if self.level_hint is not None:
            self.level_hint = np.asarray(self.level_hint, dtype=np.uint8)
        for key in ("deformation_id", "config_hash"):
            if not self.provenance.get(key):
                raise ValueError(f"provenance field '{key}' must be non-empty")

    def __len__(self) -> int:
        return len(self.points_mm)


# ---------------------------------------------------------------------------
# Camera placement
# ---------------------------------------------------------------------------

def place_camera(spine: TriMesh, level: int, standoff_mm: float = 100.0) -> np.ndarray:
    """Camera origin above the spinous process apex of one vertebra.

    The apex is the labeled vertex with maximum posterior (+y) coordinate;
    ties go to the smaller |lateral| coordinate, then the smaller cranial
    coordinate.  The camera sits ``standoff_mm`` above it along +y.
    """
    if spine.vertex_labels is None:
        raise LabelError("spine mesh carries no vertex labels")
    idx = np.where(spine.vertex_labels == np.uint8(level))[0]
    if idx.size == 0:
        raise LabelError(f"level {level} absent from spine mesh")
    v = spine.vertices[idx]
    order = np.lexsort((v[:, 2], np.abs(v[:, 0]), -v[:, 1]))
    apex = v[order[0]]
    return apex + np.array([0.0, standoff_mm, 0.0])


# ---------------------------------------------------------------------------
# Surface sampling
# ---------------------------------------------------------------------------

@dataclass
class SurfaceSamples:
    points: np.ndarray    # (N,3)
    normals: np.ndarray   # (N,3) outward face normals
    face_idx: np.ndarray  # (N,)
    levels: np.ndarray | None


def sample_surface(mesh: TriMesh, spacing_mm: float, seed: int) -> SurfaceSamples:
    """Uniform-by-area surface samples, about one per spacing^2 of area.

    Per-face counts use stochastic rounding of area/spacing^2 and barycentric
    coordinates are drawn per face in a fixed order, so for a fixed seed the
    samples are reproducible and transform exactly with the mesh under rigid
    motion.
    """
    if mesh.n_faces == 0:
        raise EmptyInputError("cannot sample an empty mesh")
    rng = np.random.default_rng(seed)
    areas = face_areas(mesh)
    expected = areas / float(spacing_mm) ** 2
    counts = np.floor(expected + rng.random(len(areas))).astype(np.int64)
    total = int(counts.sum())
    if total == 0:
        # degenerate pitch for a tiny mesh: fall back to one sample on the
        # largest face so downstream code never sees an empty candidate set
        counts[np.argmax(areas)] = 1
        total = 1

    face_idx = np.repeat(np.arange(mesh.n_faces), counts)
    r1 = rng.random(total)
    r2 = rng.random(total)
    su = np.sqrt(r1)
    b0, b1, b2 = 1.0 - su, su * (1.0 - r2), su * r2

    tri = mesh.vertices[mesh.faces[face_idx]]
    points = b0[:, None] * tri[:, 0] + b1[:, None] * tri[:, 1] + b2[:, None] * tri[:, 2]

    cross = face_cross(mesh)
    norms = np.linalg.norm(cross, axis=1, keepdims=True)
    norms[norms == 0.0] = 1.0
    normals = (cross / norms)[face_idx]

    flabels = face_labels(mesh)
    levels = None if flabels is None else flabels[face_idx]
    return SurfaceSamples(points=points, normals=normals, face_idx=face_idx, levels=levels)


# ---------------------------------------------------------------------------
# Occlusion queries: parallel -y rays against projected triangles
# ---------------------------------------------------------------------------

class ProjectedTriangleGrid:
    """Triangles of one mesh binned on a uniform (x,z) grid for depth queries."""

    def __init__(self, vertices: np.ndarray, faces: np.ndarray,
                 max_cells_per_axis: int = 1024):
        tri = vertices[faces]
        self.ax, self.ay, self.az = tri[:, 0, 0], tri[:, 0, 1], tri[:, 0, 2]
        self.bx, self.by, self.bz = tri[:, 1, 0], tri[:, 1, 1], tri[:, 1, 2]
        self.cx, self.cy, self.cz = tri[:, 2, 0], tri[:, 2, 1], tri[:, 2, 2]
        # signed doubled area of the (x,z) projection; 0 for walls parallel
        # to the rays, which cannot occlude anything of nonzero measure
        self.denom = ((self.bx - self.ax) * (self.cz - self.az)
                      - (self.bz - self.az) * (self.cx - self.ax))

        tminx = np.minimum(np.minimum(self.ax, self.bx), self.cx)
        tmaxx = np.maximum(np.maximum(self.ax, self.bx), self.cx)
        tminz = np.minimum(np.minimum(self.az, self.bz), self.cz)
        tmaxz = np.maximum(np.maximum(self.az, self.bz), self.cz)

        self.x0 = float(tminx.min())
        self.z0 = float(tminz.min())
        extent_x = max(float(tmaxx.max()) - self.x0, 1e-9)
        extent_z = max(float(tmaxz.max()) - self.z0, 1e-9)
        mean_tri = max(float((tmaxx - tminx).mean()), float((tmaxz - tminz).mean()), 1e-9)
        self.cell = max(mean_tri, extent_x / max_cells_per_axis,
                        extent_z / max_cells_per_axis)
        self.nx = int(np.floor(extent_x / self.cell)) + 1
        self.nz = int(np.floor(extent_z / self.cell)) + 1

        ix0 = np.clip(((tminx - self.x0) / self.cell).astype(np.int64), 0, self.nx - 1)
        ix1 = np.clip(((tmaxx - self.x0) / self.cell).astype(np.int64), 0, self.nx - 1)
        iz0 = np.clip(((tminz - self.z0) / self.cell).astype(np.int64), 0, self.nz - 1)
        iz1 = np.clip(((tmaxz - self.z0) / self.cell).astype(np.int64), 0, self.nz - 1)
        span_x, span_z = ix1 - ix0 + 1, iz1 - iz0 + 1

        cells, tris = [], []
        tri_ids = np.arange(len(faces))
        for dx in range(int(span_x.max())):
            for dz in range(int(span_z.max())):
                m = (span_x > dx) & (span_z > dz)
                if not m.any():
                    continue
                cells.append((ix0[m] + dx) * self.nz + (iz0[m] + dz))
                tris.append(tri_ids[m])
        cells = np.concatenate(cells)
        tris = np.concatenate(tris)
        order = np.argsort(cells, kind="stable")
        self.cell_tris = tris[order]
        self.cell_start = np.searchsorted(cells[order], np.arange(self.nx * self.nz + 1))

    def _candidates(self, px: np.ndarray, pz: np.ndarray):
        cx = np.clip(((px - self.x0) / self.cell).astype(np.int64), 0, self.nx - 1)
        cz = np.clip(((pz - self.z0) / self.cell).astype(np.int64), 0, self.nz - 1)
        cell = cx * self.nz + cz
        start = self.cell_start[cell]
        count = self.cell_start[cell + 1] - start
        total = int(count.sum())
        if total == 0:
            return (np.empty(0, np.int64),) * 2
        point_of_pair = np.repeat(np.arange(len(px)), count)
        base = np.repeat(start, count)
        offset = np.arange(total) - np.repeat(np.cumsum(count) - count, count)
        return point_of_pair, self.cell_tris[base + offset]

    def occluded(self, px: np.ndarray, pz: np.ndarray, y_above: np.ndarray,
                 y_limit: np.ndarray | float, chunk: int = 262_144) -> np.ndarray:
        """True where some triangle covers (px,pz) with y_above < depth <= y_limit."""
        n = len(px)
        out = np.zeros(n, dtype=bool)
        y_limit = np.broadcast_to(np.asarray(y_limit, dtype=np.float64), (n,))
        for lo in range(0, n, chunk):
            hi = min(lo + chunk, n)
            pts, tris = self._candidates(px[lo:hi], pz[lo:hi])
            if len(pts) == 0:
                continue
            qx, qz = px[lo:hi][pts], pz[lo:hi][pts]
            ax, az = self.ax[tris], self.az[tris]
            bx, bz = self.bx[tris], self.bz[tris]
            cxx, czz = self.cx[tris], self.cz[tris]
            den = self.denom[tris]

            wa = (bx - qx) * (czz - qz) - (bz - qz) * (cxx - qx)
            wb = (cxx - qx) * (az - qz) - (czz - qz) * (ax - qx)
            wc = (ax - qx) * (bz - qz) - (az - qz) * (bx - qx)
            with np.errstate(divide="ignore", invalid="ignore"):
                wa, wb, wc = wa / den, wb / den, wc / den
            inside = (den != 0.0) & (wa >= -1e-12) & (wb >= -1e-12) & (wc >= -1e-12)

            y_hit = wa * self.ay[tris] + wb * self.by[tris] + wc * self.cy[tris]
            blocking = inside & (y_hit > y_above[lo:hi][pts]) & (y_hit <= y_limit[lo:hi][pts])
            if blocking.any():
                hit_counts = np.bincount(pts[blocking], minlength=hi - lo)
                out[lo:hi] |= hit_counts > 0
        return out


# ---------------------------------------------------------------------------
# Renders
# ---------------------------------------------------------------------------

def _visibility(samples: SurfaceSamples, grid: ProjectedTriangleGrid,
                y_start: float, shift_mm: tuple[float, float] | None) -> np.ndarray:
    p = samples.points
    eps = OCCLUSION_EPS_MM
    visible = p[:, 1] <= y_start
    occ = grid.occluded(p[:, 0], p[:, 2], p[:, 1] + eps, y_start)
    if shift_mm is not None and (shift_mm[0] != 0.0 or shift_mm[1] != 0.0):
        # the copy is the same geometry translated by (lat, ap, 0): query the
        # original grid at shifted coordinates and offset the depth window; a
        # zero shift is skipped because the coincident copy's first hits tie
        # with the original's and ties belong to the original
        lat, ap = shift_mm
        occ_copy = grid.occluded(p[:, 0] - lat, p[:, 2],
                                 p[:, 1] - ap + eps, y_start - ap)
        occ = occ | occ_copy
    return visible & ~occ


def _incidence_keep(samples: SurfaceSamples, config: AcquisitionConfig) -> np.ndarray:
    if not config.physics_enabled:
        return np.ones(len(samples.points), dtype=bool)
    cos_max = np.cos(np.deg2rad(config.incidence_max_deg))
    return samples.normals[:, 1] >= cos_max


def _finalize(samples: SurfaceSamples, keep: np.ndarray,
              config: AcquisitionConfig, deformation_id: str,
              shift_mm: tuple[float, float] | None) -> PartialCloud:
    return PartialCloud(
        points_mm=samples.points[keep],
        level_hint=None if samples.levels is None else samples.levels[keep],
        provenance={
            "deformation_id": deformation_id,
            "shift_mm": None if shift_mm is None else [float(shift_mm[0]), float(shift_mm[1])],
            "config_hash": config.hash(),
        },
    )


def raycast_visible(spine: TriMesh, camera: np.ndarray, config: AcquisitionConfig,
                    deformation_id: str = "adhoc") -> PartialCloud:
    """Partial view of the spine alone: shadowing plus incidence culling."""
    if spine.n_faces == 0:
        raise EmptyInputError("cannot render an empty mesh")
    samples = sample_surface(spine, config.ray_grid_spacing_mm, config.sample_seed)
    grid = ProjectedTriangleGrid(spine.vertices, spine.faces)
    keep = _visibility(samples, grid, float(camera[1]), None)
    keep &= _incidence_keep(samples, config)
    return _finalize(samples, keep, config, deformation_id, None)


def raycast_with_scattering(spine: TriMesh, camera: np.ndarray,
                            config: AcquisitionConfig,
                            shift_mm: tuple[float, float],
                            deformation_id: str = "adhoc") -> PartialCloud:
    """Partial view with a shifted spine copy added to the occluder scene.

    Output points always belong to the original mesh and form a subset of
    the unshifted render; shift (0,0) reproduces it exactly.
    """
    if spine.n_faces == 0:
        raise EmptyInputError("cannot render an empty mesh")
    samples = sample_surface(spine, config.ray_grid_spacing_mm, config.sample_seed)
    grid = ProjectedTriangleGrid(spine.vertices, spine.faces)
    keep = _visibility(samples, grid, float(camera[1]), tuple(shift_mm))
    keep &= _incidence_keep(samples, config)
    return _finalize(samples, keep, config, deformation_id, tuple(shift_mm))


def render_shift_series(spine: TriMesh, camera: np.ndarray, config: AcquisitionConfig,
                        deformation_id: str = "adhoc"
                        ) -> list[tuple[tuple[float, float], PartialCloud]]:
    """One scattered render per configured shift pair (9 by default).

    Shares the candidate samples and the occluder grid across shifts, so a
    full series costs little more than a single render.
    """
    if spine.n_faces == 0:
        raise EmptyInputError("cannot render an empty mesh")
    samples = sample_surface(spine, config.ray_grid_spacing_mm, config.sample_seed)
    grid = ProjectedTriangleGrid(spine.vertices, spine.faces)
    inc = _incidence_keep(samples, config)
    out = []
    for shift in config.shift_pairs_mm:
        keep = _visibility(samples, grid, float(camera[1]), tuple(shift)) & inc
        out.append((tuple(shift), _finalize(samples, keep, config, deformation_id, shift)))
    return out


def spine_camera_plane(spine: TriMesh, config: AcquisitionConfig) -> np.ndarray:
    """Camera for whole-spine renders: over each spinous process in turn.

    Under parallel -y rays every per-level camera sees the same first-hit
    geometry, so the union of per-level renders equals a single render from
    the most posterior camera plane; that camera is returned.
    """
    if spine.vertex_labels is None:
        raise LabelError("spine mesh carries no vertex labels")
    cameras = [place_camera(spine, int(lv), config.camera_standoff_mm)
               for lv in np.unique(spine.vertex_labels)]
    return cameras[int(np.argmax([c[1] for c in cameras]))]
