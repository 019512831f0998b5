"""Completion metrics: Chamfer distance, EMD, F1, and anatomy-level checks.

General metrics operate on clouds normalized against the ground truth
(translate by the GT centroid, scale by its maximum radius); the applied
transform is recorded so results stay auditable.  Conventions:

* Chamfer distance: mean squared nearest-neighbor distance in both
  directions, summed, then scaled by 1e4 for readability.
* EMD: mean Euclidean distance under the minimum-cost perfect matching of
  equal-size clouds.  Exact assignment up to 512 points; above that an
  epsilon-scaling auction solver guarantees a total within 1 percent of
  optimal.
* F1: harmonic mean of precision/recall at a distance threshold, default
  1 percent of the GT bounding-box diagonal.

Anatomy metrics: the spinous-process centerline Chamfer distance (same CD
formula on annotated centerlines), and the facet-joint center distance in
millimetres with a 5 mm clinical pass threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.optimize import linear_sum_assignment
from scipy.spatial import cKDTree
from scipy.spatial.distance import cdist

from .errors import DegeneracyError, FormatError

CD_SCALE = 1e4
FACET_PASS_THRESHOLD_MM = 5.0
EXACT_EMD_MAX_POINTS = 512
SPINOUS_CENTERLINE = "spinous-centerline"
FACET_CENTER = "facet-center"


def _check_cloud(name: str, cloud: np.ndarray) -> np.ndarray:
    cloud = np.asarray(cloud, dtype=np.float64)
    if cloud.ndim != 2 or cloud.shape[1] != 3 or len(cloud) == 0:
        raise ValueError(f"{name} must be a nonempty (N,3) cloud, got shape {cloud.shape}")
    return cloud


# ---------------------------------------------------------------------------
# Normalization
# ---------------------------------------------------------------------------

@dataclass
class NormalizationRecord:
    """Transform applied to both clouds: p -> (p + translation) * scale."""

    translation: np.ndarray
    scale: float

    def apply(self, points: np.ndarray) -> np.ndarray:
        return (np.asarray(points, dtype=np.float64) + self.translation) * self.scale

    def to_dict(self) -> dict:
        return {"translation": self.translation.tolist(), "scale": self.scale}


def normalize_pair(gt: np.ndarray, other: np.ndarray):
    """Center on the GT centroid and scale by the GT max radius.

    Returns (gt_normalized, other_normalized, record); the same transform is
    applied to both clouds, which makes the general metrics invariant under
    any common rigid motion of the pair.
    """
    gt = _check_cloud("gt", gt)
    other = _check_cloud("other", other)
    centroid = gt.mean(axis=0)
    radius = float(np.linalg.norm(gt - centroid, axis=1).max())
    if radius < 1e-12:
        raise DegeneracyError("ground-truth cloud has zero radius")
    record = NormalizationRecord(translation=-centroid, scale=1.0 / radius)
    return record.apply(gt), record.apply(other), record


# ---------------------------------------------------------------------------
# General metrics
# ---------------------------------------------------------------------------

def chamfer(p: np.ndarray, q: np.ndarray, scale: float = CD_SCALE) -> float:
    """Symmetric mean squared nearest-neighbor distance, times ``scale``."""
    p = _check_cloud("p", p)
    q = _check_cloud("q", q)
    d_pq = cKDTree(q).query(p)[0]
    d_qp = cKDTree(p).query(q)[0]
    return float(((d_pq ** 2).mean() + (d_qp ** 2).mean()) * scale)


def f1_score(p: np.ndarray, q: np.ndarray, tau: float) -> float:
    """Harmonic mean of precision (p covered by q) and recall (q covered by p)."""
    p = _check_cloud("p", p)
    q = _check_cloud("q", q)
    if tau <= 0.0:
        raise ValueError(f"tau must be positive, got {tau}")
    precision = float((cKDTree(q).query(p)[0] <= tau).mean())
    recall = float((cKDTree(p).query(q)[0] <= tau).mean())
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def default_f1_tau(gt: np.ndarray, fraction: float = 0.01) -> float:
    gt = _check_cloud("gt", gt)
    diag = float(np.linalg.norm(gt.max(axis=0) - gt.min(axis=0)))
    return max(fraction * diag, 1e-12)


def emd(p: np.ndarray, q: np.ndarray, method: str = "auto",
        rel_tol: float = 0.01) -> float:
    """Mean matched distance under the optimal point-to-point bijection.

    ``method``: "exact" (Hungarian assignment), "auction" (epsilon-scaling
    approximation with relative error <= rel_tol), or "auto", which uses the
    exact solver up to 512 points and the auction above.
    """
    p = _check_cloud("p", p)
    q = _check_cloud("q", q)
    if len(p) != len(q):
        raise ValueError(f"EMD needs equal cardinalities, got {len(p)} vs {len(q)}; "
                         "resample first")
    cost = cdist(p, q)
    if method == "auto":
        method = "exact" if len(p) <= EXACT_EMD_MAX_POINTS else "auction"
    if method == "exact":
        rows, cols = linear_sum_assignment(cost)
        return float(cost[rows, cols].mean())
    if method == "auction":
        cols = auction_assignment(cost, rel_tol=rel_tol)
        return float(cost[np.arange(len(p)), cols].mean())
    raise ValueError(f"unknown EMD method '{method}'")


def auction_assignment(cost: np.ndarray, rel_tol: float = 0.01,
                       max_rounds: int = 2_000_000) -> np.ndarray:
    """Epsilon-scaling auction for the minimum-cost perfect matching.

    The final epsilon is chosen from a lower bound of the optimal total
    (sum of per-column minima), so the returned matching total exceeds the
    optimum by at most ``rel_tol`` relatively.  Returns the column assigned
    to each row.
    """
    n = cost.shape[0]
    if cost.shape != (n, n):
        raise ValueError(f"cost matrix must be square, got {cost.shape}")
    benefit = -cost
    span = float(cost.max() - cost.min())
    lower = float(cost.min(axis=0).sum())
    eps_final = max(rel_tol * lower / n, 1e-12 * max(span, 1.0), 1e-300)
    eps = max(span / 4.0, eps_final)

    price = np.zeros(n)
    owner = np.full(n, -1, dtype=np.int64)     # column -> row
    assigned_col = np.full(n, -1, dtype=np.int64)  # row -> column
    rounds = 0
    while True:
        owner.fill(-1)
        assigned_col.fill(-1)
        while (assigned_col < 0).any():
            rounds += 1
            if rounds > max_rounds:
                # pathological instance; fall back to the exact solver
                rows, cols = linear_sum_assignment(cost)
                out = np.empty(n, dtype=np.int64)
                out[rows] = cols
                return out
            bidders = np.where(assigned_col < 0)[0]
            values = benefit[bidders] - price[None, :]
            best = np.argmax(values, axis=1)
            ridx = np.arange(len(bidders))
            v1 = values[ridx, best]
            values[ridx, best] = -np.inf
            v2 = values.max(axis=1) if n > 1 else v1 - eps
            bids = price[best] + (v1 - v2) + eps

            order = np.lexsort((bids, best))
            objs = best[order]
            last = np.r_[objs[1:] != objs[:-1], True]
            win_rows = bidders[order[last]]
            win_objs = objs[last]
            win_bids = bids[order[last]]

            prev = owner[win_objs]
            assigned_col[prev[prev >= 0]] = -1
            owner[win_objs] = win_rows
            assigned_col[win_rows] = win_objs
            price[win_objs] = win_bids
        if eps <= eps_final:
            return assigned_col
        eps = max(eps / 5.0, eps_final)


# ---------------------------------------------------------------------------
# Anatomy-specific metrics
# ---------------------------------------------------------------------------

@dataclass
class LandmarkAnnotation:
    """Annotated landmark: a spinous-process centerline or a facet center."""

    kind: str
    level: int
    points_mm: np.ndarray
    side: str | None = None  # "left"/"right" for facet centers

    def __post_init__(self):
        self.points_mm = np.asarray(self.points_mm, dtype=np.float64).reshape(-1, 3)
        if self.kind == SPINOUS_CENTERLINE:
            if len(self.points_mm) < 2:
                raise ValueError("centerline annotation needs at least 2 points")
        elif self.kind == FACET_CENTER:
            if len(self.points_mm) != 1:
                raise ValueError("facet-center annotation must hold exactly 1 point")
        else:
            raise ValueError(f"unknown annotation kind '{self.kind}'")

    def to_dict(self) -> dict:
        return {"kind": self.kind, "level": self.level, "side": self.side,
                "points_mm": self.points_mm.tolist()}


def load_landmark(path) -> LandmarkAnnotation:
    try:
        d = json.loads(Path(path).read_text())
        return LandmarkAnnotation(kind=d["kind"], level=int(d["level"]),
                                  points_mm=d["points_mm"], side=d.get("side"))
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise FormatError(f"bad landmark file {path}: {exc}") from exc


def save_landmark(annotation: LandmarkAnnotation, path) -> None:
    payload = {"schema_version": 1, **annotation.to_dict()}
    Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def sp_cd(completion_centerline: LandmarkAnnotation,
          input_centerline: LandmarkAnnotation, scale: float = CD_SCALE) -> float:
    """Chamfer distance between annotated spinous-process centerlines."""
    for ann in (completion_centerline, input_centerline):
        if ann.kind != SPINOUS_CENTERLINE:
            raise ValueError(f"expected {SPINOUS_CENTERLINE} annotations, got '{ann.kind}'")
    if completion_centerline.level != input_centerline.level:
        raise ValueError("centerline annotations are for different levels")
    return chamfer(completion_centerline.points_mm, input_centerline.points_mm, scale)


def facet_distance(completion_center: LandmarkAnnotation,
                   gt_center: LandmarkAnnotation,
                   threshold_mm: float = FACET_PASS_THRESHOLD_MM) -> tuple[float, bool]:
    """Facet-center error in mm and whether it passes the clinical threshold."""
    for ann in (completion_center, gt_center):
        if ann.kind != FACET_CENTER:
            raise ValueError(f"expected {FACET_CENTER} annotations, got '{ann.kind}'")
    if completion_center.level != gt_center.level:
        raise ValueError("facet annotations are for different levels")
    if completion_center.side != gt_center.side:
        raise ValueError("facet annotations are for different sides")
    dist = float(np.linalg.norm(completion_center.points_mm[0] - gt_center.points_mm[0]))
    return dist, dist <= threshold_mm


# ---------------------------------------------------------------------------
# Report container
# ---------------------------------------------------------------------------

@dataclass
class MetricsReport:
    cd_scaled: float
    emd: float
    f1: float
    f1_tau: float
    normalization: NormalizationRecord
    sp_cd: float | None = None
    facet_dist_mm: dict = field(default_factory=dict)   # side -> (mm, passed)
    facet_threshold_mm: float = FACET_PASS_THRESHOLD_MM

    def to_dict(self) -> dict:
        return {
            "cd_scaled": self.cd_scaled,
            "emd": self.emd,
            "f1": self.f1,
            "f1_tau": self.f1_tau,
            "normalization": self.normalization.to_dict(),
            "sp_cd": self.sp_cd,
            "facet_dist_mm": {side: {"distance_mm": d, "passed": ok}
                              for side, (d, ok) in self.facet_dist_mm.items()},
            "facet_threshold_mm": self.facet_threshold_mm,
        }


def evaluate_pair(gt: np.ndarray, prediction: np.ndarray,
                  f1_tau_fraction: float = 0.01, cd_scale: float = CD_SCALE,
                  emd_method: str = "auto", emd_points: int | None = None,
                  emd_seed: int = 0, emd_rel_tol: float = 0.01) -> MetricsReport:
    """All general metrics for one GT/prediction pair (normalized internally).

    ``emd_points`` resamples both normalized clouds to a common cardinality
    before the matching (EMD requires equal sizes anyway); None keeps the
    inputs as-is and requires them to match.
    """
    from .masking import resample  # local import to avoid a cycle

    gt_n, pred_n, record = normalize_pair(gt, prediction)
    tau = default_f1_tau(gt_n, f1_tau_fraction)
    cd_value = chamfer(gt_n, pred_n, cd_scale)
    f1_value = f1_score(pred_n, gt_n, tau)
    if emd_points is not None:
        a = resample(gt_n, emd_points, emd_seed)
        b = resample(pred_n, emd_points, emd_seed + 1)
    else:
        a, b = gt_n, pred_n
    emd_value = emd(a, b, method=emd_method, rel_tol=emd_rel_tol)
    return MetricsReport(cd_scaled=cd_value, emd=emd_value, f1=f1_value,
                         f1_tau=tau, normalization=record)
