"""Shape completion: a retrieval baseline and the external-completer hook.

The baseline is deliberately not a learned model: it holds an atlas of
complete vertebra clouds (the training split's ground truths), rigidly
aligns every candidate to the partial input with point-to-point ICP and
returns the best-scoring candidate in the input's frame.  That is enough to
exercise the full generate -> complete -> evaluate loop deterministically;
learned completers plug in through ``run_external_completer`` or any
callable with the same signature.

ICP initialization compensates the posterior bias of ultrasound-like
partial views: candidate and partial are matched on their lateral/cranial
centroids but on their posterior extremes along y, since the anterior side
of the partial is missing by construction.
"""

from __future__ import annotations

import json
import subprocess
import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial import cKDTree

from .errors import AtlasError, ExternalCompleterError, FormatError
from .ply import read_cloud_ply, write_cloud_ply


@dataclass
class Atlas:
    """Complete vertebra clouds at a common cardinality, tagged by level."""

    ids: list[str]
    levels: np.ndarray        # (E,)
    clouds: list[np.ndarray]  # each (n,3)

    def __post_init__(self):
        self.levels = np.asarray(self.levels, dtype=np.int64)
        if len(self.ids) != len(self.clouds) or len(self.ids) != len(self.levels):
            raise AtlasError("ids, levels and clouds must have equal length")
        if len(set(self.ids)) != len(self.ids):
            raise AtlasError("atlas ids must be unique")
        cards = {len(c) for c in self.clouds}
        if len(cards) > 1:
            raise AtlasError(f"atlas entries disagree on cardinality: {sorted(cards)}")
        if len(self.levels) and not np.all((self.levels >= 1) & (self.levels <= 5)):
            raise AtlasError("atlas levels must be in 1..5")

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def cardinality(self) -> int:
        return len(self.clouds[0]) if self.clouds else 0

    def subset(self, level: int | None) -> list[int]:
        if level is None:
            return list(range(len(self.ids)))
        return [i for i in range(len(self.ids)) if self.levels[i] == level]


def save_atlas(atlas: Atlas, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    entries = []
    for i, aid in enumerate(atlas.ids):
        fname = f"entry_{i:04d}.ply"
        write_cloud_ply(directory / fname, atlas.clouds[i])
        entries.append({"id": aid, "level": int(atlas.levels[i]), "file": fname})
    index = {"schema_version": 1, "entries": entries}
    (directory / "index.json").write_text(json.dumps(index, indent=2, sort_keys=True) + "\n")


def load_atlas(directory) -> Atlas:
    directory = Path(directory)
    index_path = directory / "index.json"
    if not index_path.exists():
        raise AtlasError(f"no index.json in {directory}")
    index = json.loads(index_path.read_text())
    ids, levels, clouds = [], [], []
    for entry in index["entries"]:
        ids.append(entry["id"])
        levels.append(int(entry["level"]))
        clouds.append(read_cloud_ply(directory / entry["file"])[0])
    return Atlas(ids=ids, levels=np.array(levels), clouds=clouds)


# ---------------------------------------------------------------------------
# Rigid alignment
# ---------------------------------------------------------------------------

def _kabsch(source: np.ndarray, target: np.ndarray):
    """Rigid (R, t) minimizing |R source + t - target|^2 over paired points."""
    sc = source.mean(axis=0)
    tc = target.mean(axis=0)
    H = (source - sc).T @ (target - tc)
    U, _, Vt = np.linalg.svd(H)
    d = np.sign(np.linalg.det(Vt.T @ U.T))
    S = np.diag([1.0, 1.0, d])
    R = Vt.T @ S @ U.T
    return R, tc - R @ sc


def icp_align(source: np.ndarray, target: np.ndarray, max_iterations: int = 50,
              tol: float = 1e-6, init: tuple[np.ndarray, np.ndarray] | None = None):
    """Point-to-point ICP moving ``source`` onto ``target``.

    Correspondences run from every target point to its nearest source point,
    which is the right direction when the target is a partial view of the
    complete source: only observed regions constrain the fit.  Returns
    (rotation, translation, mse) where mse is the final mean squared
    correspondence distance.
    """
    source = np.asarray(source, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    R = np.eye(3) if init is None else np.asarray(init[0], dtype=np.float64)
    t = np.zeros(3) if init is None else np.asarray(init[1], dtype=np.float64)

    tree = cKDTree(source)
    prev_mse = np.inf
    mse = np.inf
    for _ in range(max_iterations):
        back = (target - t) @ R  # R^-1 (target - t)
        idx = tree.query(back)[1]
        matched = source[idx]
        R, t = _kabsch(matched, target)
        residual = matched @ R.T + t - target
        mse = float((residual ** 2).sum(axis=1).mean())
        if abs(prev_mse - mse) <= tol * max(prev_mse, 1e-30):
            break
        prev_mse = mse
    return R, t, mse


def _posterior_biased_init(candidate: np.ndarray, partial: np.ndarray):
    t = partial.mean(axis=0) - candidate.mean(axis=0)
    t[1] = partial[:, 1].max() - candidate[:, 1].max()
    return np.eye(3), t


@dataclass
class CompletionResult:
    completion: np.ndarray
    chosen_atlas_id: str
    rotation: np.ndarray
    translation: np.ndarray
    score: float            # one-sided mean squared distance, partial -> completion


def one_sided_score(partial: np.ndarray, candidate: np.ndarray) -> float:
    """Mean squared distance from each partial point to the candidate."""
    return float((cKDTree(candidate).query(partial)[0] ** 2).mean())


def complete(partial: np.ndarray, atlas: Atlas, level_hint: int | None = None,
             max_iterations: int = 50, tol: float = 1e-6) -> CompletionResult:
    """Retrieve and align the atlas entry that best explains the partial view."""
    partial = np.asarray(partial, dtype=np.float64)
    if len(partial) == 0:
        raise ValueError("partial cloud is empty")
    indices = atlas.subset(level_hint)
    if not indices:
        raise AtlasError(f"atlas has no entries for level {level_hint}")

    best = None
    for i in indices:
        candidate = atlas.clouds[i]
        init = _posterior_biased_init(candidate, partial)
        R, t, _ = icp_align(candidate, partial, max_iterations=max_iterations,
                            tol=tol, init=init)
        aligned = candidate @ R.T + t
        score = one_sided_score(partial, aligned)
        if best is None or score < best[0]:
            best = (score, i, R, t, aligned)

    score, i, R, t, aligned = best
    return CompletionResult(completion=aligned, chosen_atlas_id=atlas.ids[i],
                            rotation=R, translation=t, score=score)


# ---------------------------------------------------------------------------
# External completer hook
# ---------------------------------------------------------------------------

def run_external_completer(partial, command_template: str,
                           expected_points: int | None = None,
                           timeout_s: float = 600.0) -> np.ndarray:
    """Run an external completion command on one partial cloud.

    ``partial`` is an (N,3) array or a PLY path.  The template must contain
    ``{in}`` and ``{out}`` placeholders; the command is executed through the
    shell with those replaced by temporary PLY paths, and the output cloud is
    validated (finite coordinates, nonempty, optional cardinality).
    """
    if "{in}" not in command_template or "{out}" not in command_template:
        raise ValueError("command template must contain {in} and {out} placeholders")

    with tempfile.TemporaryDirectory(prefix="spinecloud_ext_") as tmp:
        tmp = Path(tmp)
        if isinstance(partial, (str, Path)):
            in_path = Path(partial)
        else:
            in_path = tmp / "partial.ply"
            write_cloud_ply(in_path, np.asarray(partial, dtype=np.float64))
        out_path = tmp / "completion.ply"
        cmd = command_template.replace("{in}", str(in_path)).replace("{out}", str(out_path))
        proc = subprocess.run(cmd, shell=True, capture_output=True, text=True,
                              timeout=timeout_s)
        if proc.returncode != 0:
            raise ExternalCompleterError(
                f"completer exited {proc.returncode}\ncommand: {cmd}\n"
                f"stdout: {proc.stdout.strip()}\nstderr: {proc.stderr.strip()}")
        if not out_path.exists():
            raise ExternalCompleterError(f"completer produced no output file: {cmd}")
        points, _ = read_cloud_ply(out_path)
        if len(points) == 0:
            raise FormatError("external completion is empty")
        if not np.isfinite(points).all():
            raise FormatError("external completion contains non-finite coordinates")
        if expected_points is not None and len(points) != expected_points:
            raise FormatError(
                f"external completion has {len(points)} points, expected {expected_points}")
        return points
