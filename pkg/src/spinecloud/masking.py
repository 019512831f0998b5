"""Splitting a spine render into per-vertebra partial inputs.

With fusion on, a box centered on the target vertebra's center of mass
stretches half-way to each neighboring centroid plus a margin along the
cranial axis (and covers the whole cloud laterally and in depth), so the
crop deliberately carries a sliver of the adjacent vertebrae - imitating
how poorly vertebra levels separate in real ultrasound.  With fusion off
the crop is the vertebra's own bounding box restricted to points actually
belonging to it, a clean separation used by the ablation experiments.

Box membership is lower-inclusive / upper-exclusive, so zero-margin boxes
of adjacent levels partition the cloud.
"""

from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree

from .errors import EmptyInputError, EmptyMaskError, LabelError
from .mesh import TriMesh, area_centroid
from .render import PartialCloud

BOUND_INFLATE_MM = 1e-6  # keeps extreme surface points inside half-open boxes


def _as_level_dict(gt_meshes) -> dict[int, TriMesh]:
    if isinstance(gt_meshes, dict):
        return {int(k): v for k, v in gt_meshes.items()}
    out = {}
    for i, mesh in enumerate(gt_meshes):
        if mesh.vertex_labels is not None and len(mesh.vertex_labels):
            out[int(mesh.vertex_labels[0])] = mesh
        else:
            out[i + 1] = mesh
    return out


def attribute_levels(points: np.ndarray, meshes: dict[int, TriMesh]) -> np.ndarray:
    """Nearest-mesh vertebra attribution by vertex distance."""
    levels = sorted(meshes)
    dists = np.stack([cKDTree(meshes[lv].vertices).query(points)[0] for lv in levels])
    return np.asarray(levels, dtype=np.uint8)[np.argmin(dists, axis=0)]


def mask_vertebra(spine_cloud: PartialCloud, gt_meshes, level: int,
                  fusion: bool = True, margin_mm: float = 5.0) -> np.ndarray:
    """Crop one vertebra's partial input out of a whole-spine cloud.

    ``gt_meshes`` are the (deformed) per-level surfaces, as a dict keyed by
    level or a labeled list; they provide the centers of mass and, with
    fusion off, the per-point vertebra attribution (the cloud's own level
    hints are used when present).
    """
    points = spine_cloud.points_mm
    if len(points) == 0:
        raise EmptyInputError("spine cloud is empty")
    meshes = _as_level_dict(gt_meshes)
    if level not in meshes:
        raise LabelError(f"level {level} not among ground-truth meshes {sorted(meshes)}")

    center = area_centroid(meshes[level])
    if fusion:
        lo = points.min(axis=0).copy()
        hi = points.max(axis=0) + BOUND_INFLATE_MM
        own_lo, own_hi = meshes[level].bounds()
        if level - 1 in meshes:
            up = np.linalg.norm(area_centroid(meshes[level - 1]) - center)
            hi[2] = center[2] + 0.5 * up + margin_mm
        else:
            hi[2] = own_hi[2] + margin_mm
        if level + 1 in meshes:
            down = np.linalg.norm(area_centroid(meshes[level + 1]) - center)
            lo[2] = center[2] - 0.5 * down - margin_mm
        else:
            lo[2] = own_lo[2] - margin_mm
        keep = np.all((points >= lo) & (points < hi), axis=1)
    else:
        lo, hi = meshes[level].bounds()
        hi = hi + BOUND_INFLATE_MM
        keep = np.all((points >= lo) & (points < hi), axis=1)
        if spine_cloud.level_hint is not None:
            keep &= spine_cloud.level_hint == np.uint8(level)
        else:
            keep &= attribute_levels(points, meshes) == np.uint8(level)

    if not keep.any():
        raise EmptyMaskError(f"mask for level {level} selected no points")
    return points[keep]


def resample(cloud: np.ndarray, n: int, rng_seed: int) -> np.ndarray:
    """Bring a cloud to exactly ``n`` points.

    Larger clouds are reduced by farthest-point sampling (a spatially even
    subset of the input); same-size clouds are permuted; smaller clouds keep
    every input point and pad by sampling with replacement, so the output
    support equals the input support.
    """
    cloud = np.asarray(cloud, dtype=np.float64).reshape(-1, 3)
    if n <= 0:
        raise ValueError(f"target count must be positive, got {n}")
    if len(cloud) == 0:
        raise EmptyInputError("cannot resample an empty cloud")
    rng = np.random.default_rng(rng_seed)
    m = len(cloud)
    if m == n:
        return cloud[rng.permutation(m)]
    if m < n:
        extra = rng.integers(0, m, size=n - m)
        return np.concatenate([cloud, cloud[extra]], axis=0)
    return cloud[farthest_point_indices(cloud, n, int(rng.integers(m)))]


def farthest_point_indices(points: np.ndarray, n: int, start: int = 0) -> np.ndarray:
    """Greedy farthest-point subset of size n, beginning at ``start``."""
    m = len(points)
    chosen = np.empty(n, dtype=np.int64)
    chosen[0] = start
    d2 = ((points - points[start]) ** 2).sum(axis=1)
    for i in range(1, n):
        nxt = int(np.argmax(d2))
        chosen[i] = nxt
        cand = ((points - points[nxt]) ** 2).sum(axis=1)
        np.minimum(d2, cand, out=d2)
    return chosen
