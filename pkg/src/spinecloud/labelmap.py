"""Raw labeled-volume format: a JSON header next to a dense u8 voxel file.

Header schema::

    {"dims": [nx, ny, nz], "spacing_mm": [sx, sy, sz],
     "origin_mm": [ox, oy, oz],
     "axes": "LPS-like x=lateral,y=posterior,z=cranial",
     "labels": {"1": "L1", ..., "5": "L5"}}

The data file is the voxel array with x fastest-varying (Fortran order),
one unsigned byte per voxel, 0 = background, 1..5 = L1..L5.  Voxel (i,j,k)
is centered at ``origin_mm + (i,j,k) * spacing_mm``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConsistencyError, FormatError, LabelError

AXES_NOTE = "LPS-like x=lateral,y=posterior,z=cranial"
DEFAULT_LABEL_NAMES = {str(i): f"L{i}" for i in range(1, 6)}
SCHEMA_VERSION = 1


@dataclass
class LabelMap:
    """Dense voxel grid with per-voxel vertebra labels."""

    dims: tuple[int, int, int]
    spacing_mm: np.ndarray
    origin_mm: np.ndarray
    voxels: np.ndarray  # shape dims, uint8, C-contiguity not required
    axes: str = AXES_NOTE
    labels: dict = field(default_factory=lambda: dict(DEFAULT_LABEL_NAMES))

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing_mm = np.asarray(self.spacing_mm, dtype=np.float64)
        self.origin_mm = np.asarray(self.origin_mm, dtype=np.float64)
        self.voxels = np.asarray(self.voxels, dtype=np.uint8)
        if len(self.dims) != 3 or any(d <= 0 for d in self.dims):
            raise FormatError(f"dims must be 3 positive integers, got {self.dims}")
        if np.any(self.spacing_mm <= 0):
            raise FormatError(f"spacing must be strictly positive, got {self.spacing_mm}")
        if self.voxels.shape != self.dims:
            raise ConsistencyError(
                f"voxel array shape {self.voxels.shape} != dims {self.dims}")
        bad = np.unique(self.voxels[self.voxels > 5])
        if bad.size:
            raise LabelError(f"labels outside {{0..5}} present: {bad.tolist()}")

    def present_labels(self) -> list[int]:
        return sorted(int(v) for v in np.unique(self.voxels) if v != 0)

    def voxel_volume_mm3(self) -> float:
        return float(np.prod(self.spacing_mm))


def load_labelmap(header_path, data_path) -> LabelMap:
    """Read a header/data pair, validating shape, size and label range."""
    header_path, data_path = Path(header_path), Path(data_path)
    try:
        header = json.loads(header_path.read_text())
    except (json.JSONDecodeError, OSError) as exc:
        raise FormatError(f"cannot parse header {header_path}: {exc}") from exc
    for key in ("dims", "spacing_mm", "origin_mm"):
        if key not in header:
            raise FormatError(f"header {header_path} missing field '{key}'")
    dims = tuple(int(d) for d in header["dims"])
    if len(dims) != 3:
        raise FormatError(f"dims must have 3 entries, got {header['dims']}")

    raw = np.fromfile(data_path, dtype=np.uint8)
    expected = int(np.prod(dims))
    if raw.size != expected:
        raise ConsistencyError(
            f"{data_path}: {raw.size} bytes but dims {dims} imply {expected}")
    voxels = raw.reshape(dims, order="F")
    return LabelMap(
        dims=dims,
        spacing_mm=np.asarray(header["spacing_mm"], dtype=np.float64),
        origin_mm=np.asarray(header["origin_mm"], dtype=np.float64),
        voxels=voxels,
        axes=header.get("axes", AXES_NOTE),
        labels=header.get("labels", dict(DEFAULT_LABEL_NAMES)),
    )


def save_labelmap(labelmap: LabelMap, header_path, data_path) -> None:
    header = {
        "schema_version": SCHEMA_VERSION,
        "dims": list(labelmap.dims),
        "spacing_mm": labelmap.spacing_mm.tolist(),
        "origin_mm": labelmap.origin_mm.tolist(),
        "axes": labelmap.axes,
        "labels": labelmap.labels,
    }
    Path(header_path).write_text(json.dumps(header, indent=2, sort_keys=True) + "\n")
    labelmap.voxels.ravel(order="F").tofile(data_path)
