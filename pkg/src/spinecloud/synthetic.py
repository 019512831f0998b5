"""Desk-scale synthetic lumbar volumes.

Stand-ins for labeled abdominal CT: five stacked vertebra-like bodies, each
an anterior ellipsoid body plus a posterior arch, a spinous process (the
posterior-most landmark, giving every level a well-defined camera apex),
superior/inferior articular nubs (facet attachment regions) and transverse
wings.  Per-volume randomness varies sizes, spacing and a mild curvature so
atlases built from different volumes are distinguishable.
"""

from __future__ import annotations

import numpy as np

from .labelmap import LabelMap

DEFAULT_DIMS = (56, 64, 112)


def _paint_ellipsoid(vox: np.ndarray, center, radii, label: int) -> None:
    """Label voxels inside an axis-aligned ellipsoid (first label wins)."""
    cx, cy, cz = center
    rx, ry, rz = radii
    x0, x1 = max(int(cx - rx) - 1, 0), min(int(cx + rx) + 2, vox.shape[0])
    y0, y1 = max(int(cy - ry) - 1, 0), min(int(cy + ry) + 2, vox.shape[1])
    z0, z1 = max(int(cz - rz) - 1, 0), min(int(cz + rz) + 2, vox.shape[2])
    xs = np.arange(x0, x1)[:, None, None]
    ys = np.arange(y0, y1)[None, :, None]
    zs = np.arange(z0, z1)[None, None, :]
    inside = (((xs - cx) / rx) ** 2 + ((ys - cy) / ry) ** 2 + ((zs - cz) / rz) ** 2) <= 1.0
    region = vox[x0:x1, y0:y1, z0:z1]
    region[inside & (region == 0)] = label


def make_spine_labelmap(seed: int = 0, dims=DEFAULT_DIMS,
                        spacing_mm=(1.0, 1.0, 1.0), origin_mm=(0.0, 0.0, 0.0),
                        levels: int = 5) -> LabelMap:
    """A labeled toy lumbar spine; ``seed`` controls the anatomy variation."""
    rng = np.random.default_rng(seed)
    vox = np.zeros(dims, dtype=np.uint8)
    cx = dims[0] / 2.0
    body_y = dims[1] * 0.32
    scale = rng.uniform(0.9, 1.1)
    curve_amp = rng.uniform(0.0, 3.0)
    curve_phase = rng.uniform(0.0, 2.0 * np.pi)

    z_top = dims[2] - 10.0
    z = z_top
    for i in range(1, levels + 1):
        height = rng.uniform(15.0, 18.0) * scale
        gap = rng.uniform(3.0, 4.5)
        cz = z - height / 2.0
        cy = body_y + curve_amp * np.sin(curve_phase + i * 0.9)

        rx = (8.5 + 0.4 * i) * scale * rng.uniform(0.95, 1.05)
        ry = 6.0 * scale * rng.uniform(0.95, 1.05)
        rz = height / 2.0 - 0.5

        # vertebral body
        _paint_ellipsoid(vox, (cx, cy, cz), (rx, ry, rz), i)
        # posterior arch
        arch_y = cy + ry + 2.5
        _paint_ellipsoid(vox, (cx, arch_y, cz), (rx * 0.72, 3.2, rz * 0.62), i)
        # spinous process: posterior-most structure of the level
        sp_len = rng.uniform(5.0, 7.0) * scale
        _paint_ellipsoid(vox, (cx, arch_y + 3.0 + sp_len / 2.0, cz - 1.0),
                         (2.2, sp_len / 2.0 + 1.5, rz * 0.42), i)
        # articular nubs near the superior/inferior posterior corners
        nub_dx = rx * 0.62
        for sx in (-1.0, 1.0):
            for sz in (-1.0, 1.0):
                _paint_ellipsoid(
                    vox,
                    (cx + sx * nub_dx, arch_y + 0.5, cz + sz * (rz - 0.5)),
                    (2.4, 2.4, 2.8), i)
        # transverse wings
        for sx in (-1.0, 1.0):
            _paint_ellipsoid(vox, (cx + sx * (rx + 3.0), cy + ry * 0.7, cz),
                             (3.6, 1.8, 1.8), i)

        z = cz - height / 2.0 - gap

    return LabelMap(dims=dims, spacing_mm=np.asarray(spacing_mm, dtype=np.float64),
                    origin_mm=np.asarray(origin_mm, dtype=np.float64), voxels=vox)
