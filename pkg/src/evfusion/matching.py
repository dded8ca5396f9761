"""Pairing of 3D and 2D candidates through the projected-IoU matching grid."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .evidence import Opinion, combine_opinions, opinion_from_evidence
from .geometry import Box2D, Box3D, Calibration, iou_axis_aligned, planar_distance_normalized, project_to_image

NO_MATCH_SCORE = -10.0


def _scores(values):
    arr = np.array(values, dtype=np.float64)
    if arr.ndim != 1 or not np.all(np.isfinite(arr)) or np.any(arr < 0):
        raise ValueError("class scores must be a finite non-negative vector")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class Detection3D:
    box: Box3D
    objectness: float
    class_scores: np.ndarray
    class_label: int
    image_box: Box2D | None = None  # 2D box reported by the 3D detector, if any

    def __post_init__(self):
        object.__setattr__(self, "class_scores", _scores(self.class_scores))
        if not np.isfinite(self.objectness):
            raise ValueError("objectness must be finite")
        if not 0 <= self.class_label < len(self.class_scores):
            raise ValueError(f"class label {self.class_label} out of range")

    @property
    def num_classes(self):
        return len(self.class_scores)


@dataclass(frozen=True, eq=False)
class Detection2D:
    box: Box2D
    objectness: float
    class_scores: np.ndarray
    class_label: int

    def __post_init__(self):
        object.__setattr__(self, "class_scores", _scores(self.class_scores))
        if not np.isfinite(self.objectness):
            raise ValueError("objectness must be finite")
        if not 0 <= self.class_label < len(self.class_scores):
            raise ValueError(f"class label {self.class_label} out of range")

    @property
    def num_classes(self):
        return len(self.class_scores)


@dataclass(frozen=True)
class MatchEntry:
    iou: float
    objs3d: float
    objs2d: float
    dis: float

    def as_tuple(self):
        return (self.iou, self.objs3d, self.objs2d, self.dis)


@dataclass(frozen=True, eq=False)
class HypotheticalPair:
    i: int
    j: int | None
    entry: MatchEntry
    opinion3d: Opinion
    opinion2d: Opinion | None
    fused: Opinion

    @property
    def is_matched(self):
        return self.j is not None

    def features(self):
        """Per-pair input of the score network: iou, objs3d, objs2d, dis, fused u."""
        return np.array([*self.entry.as_tuple(), self.fused.uncertainty])


@dataclass(frozen=True, eq=False)
class MatchGrid:
    entries: np.ndarray  # (m, n, 4): iou, objs3d, objs2d, dis
    projections: list
    distances: np.ndarray

    @property
    def shape(self):
        return self.entries.shape[:2]

    def entry(self, i, j):
        return MatchEntry(*(float(v) for v in self.entries[i, j]))


def build_match_matrix(dets3d, dets2d, calib: Calibration, max_range=80.0) -> MatchGrid:
    m, n = len(dets3d), len(dets2d)
    sizes = {d.num_classes for d in dets3d} | {d.num_classes for d in dets2d}
    if len(sizes) > 1:
        raise ValueError(f"inconsistent class counts across detections: {sorted(sizes)}")
    projections = [project_to_image(d.box, calib) for d in dets3d]
    distances = np.array([planar_distance_normalized(d.box, calib, max_range) for d in dets3d])
    grid = np.zeros((m, n, 4))
    for i, d3 in enumerate(dets3d):
        grid[i, :, 1] = d3.objectness
        grid[i, :, 3] = distances[i]
        proj = projections[i]
        for j, d2 in enumerate(dets2d):
            grid[i, j, 0] = 0.0 if proj is None else iou_axis_aligned(proj, d2.box)
            grid[i, j, 2] = d2.objectness
    return MatchGrid(grid, projections, distances.reshape(m))


class IdentityEvidence:
    """Use detector class scores as evidence unchanged."""

    def evidence_3d(self, scores):
        return np.asarray(scores, dtype=np.float64)

    def evidence_2d(self, scores):
        return np.asarray(scores, dtype=np.float64)


def fuse_pair_classes(pair: HypotheticalPair) -> HypotheticalPair:
    if pair.opinion2d is None:
        raise ValueError("cannot fuse a pair without a 2D opinion")
    fused = combine_opinions(pair.opinion3d, pair.opinion2d)
    return HypotheticalPair(pair.i, pair.j, pair.entry, pair.opinion3d, pair.opinion2d, fused)


def enumerate_pairs(grid: MatchGrid, dets3d, dets2d, evidence_heads=None, iou_floor=0.0):
    """All hypothetical pairs, row-major over the grid.

    A cell becomes a pair when its IoU exceeds ``iou_floor``. Every 3D
    candidate without any such cell gets one fallback pair whose 2D score is
    the sentinel ``-10`` and whose fused opinion is the 3D opinion itself.
    """
    heads = evidence_heads if evidence_heads is not None else IdentityEvidence()
    m, n = grid.shape
    op3 = [opinion_from_evidence(heads.evidence_3d(d.class_scores)) for d in dets3d]
    op2 = [opinion_from_evidence(heads.evidence_2d(d.class_scores)) for d in dets2d]
    pairs = []
    for i in range(m):
        matched = False
        for j in range(n):
            iou = grid.entries[i, j, 0]
            if iou > iou_floor:
                matched = True
                pair = HypotheticalPair(i, j, grid.entry(i, j), op3[i], op2[j], op3[i])
                pairs.append(fuse_pair_classes(pair))
        if not matched:
            entry = MatchEntry(0.0, float(dets3d[i].objectness), NO_MATCH_SCORE, float(grid.distances[i]))
            pairs.append(HypotheticalPair(i, None, entry, op3[i], None, op3[i]))
    return pairs
