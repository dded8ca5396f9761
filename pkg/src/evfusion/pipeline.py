"""Per-frame fusion, post-processing and the training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import ConfigError
from .evidence import opinion_from_evidence
from .fusion_net import (
    AdamState,
    EvidenceHeads,
    FusionModel,
    PairBatch,
    ScoreNet,
    adam_step,
    init_params,
    score_forward,
    sgd_step,
    total_loss,
)
from .geometry import Box2D, Box3D, Calibration, iou_axis_aligned, project_to_image, rotated_bev_iou
from .matching import NO_MATCH_SCORE, build_match_matrix, enumerate_pairs

log = logging.getLogger(__name__)

DEFAULT_CLASSES = ("Car", "Pedestrian", "Cyclist")


@dataclass
class PipelineConfig:
    conf_threshold: float = 0.95
    nms_iou: float = 0.4
    u_max: float = 0.10
    max_range: float = 80.0
    pair_iou_floor: float = 0.0
    target_iou_car: float = 0.5
    target_iou_small: float = 0.25
    lambda_anneal_epochs: int = 10
    kappa: float = 25.0
    epochs: int = 20
    seed: int = 0
    lr: float = 0.003
    classes: tuple = DEFAULT_CLASSES

    def __post_init__(self):
        self.classes = tuple(self.classes)
        self.validate()

    def validate(self):
        unit = ("conf_threshold", "nms_iou", "pair_iou_floor", "target_iou_car", "target_iou_small")
        for name in unit:
            v = getattr(self, name)
            if not (isinstance(v, (int, float)) and 0.0 <= v <= 1.0):
                raise ConfigError(f"{name} must lie in [0, 1], got {v!r}", name)
        checks = {
            "u_max": lambda v: 0.0 < v <= 1.0,
            "max_range": lambda v: v > 0 and math.isfinite(v),
            "kappa": lambda v: v > 0 and math.isfinite(v),
            "lr": lambda v: v > 0 and math.isfinite(v),
            "lambda_anneal_epochs": lambda v: isinstance(v, int) and v >= 1,
            "epochs": lambda v: isinstance(v, int) and v >= 0,
            "seed": lambda v: isinstance(v, int) and v >= 0,
        }
        for name, ok in checks.items():
            v = getattr(self, name)
            if not ok(v):
                raise ConfigError(f"{name} has invalid value {v!r}", name)
        if len(self.classes) < 2 or len(set(self.classes)) != len(self.classes):
            raise ConfigError("classes must list at least two distinct names", "classes")

    @property
    def num_classes(self):
        return len(self.classes)

    def target_iou(self, class_name):
        return self.target_iou_car if class_name == "Car" else self.target_iou_small

    def lambda_at(self, epoch):
        return min(1.0, epoch / self.lambda_anneal_epochs)

    def replace(self, **changes):
        values = {f.name: getattr(self, f.name) for f in fields(self)}
        values.update({k: v for k, v in changes.items() if v is not None})
        return PipelineConfig(**values)


@dataclass(frozen=True, eq=False)
class FusedDetection:
    box3d: Box3D
    score: float
    beliefs: np.ndarray
    uncertainty: float
    class_label: int
    source_pair: tuple
    box2d: Box2D | None = None


@dataclass(eq=False)
class Frame:
    frame_id: str
    dets3d: list
    dets2d: list
    calib: Calibration
    labels: list | None = None


@dataclass(eq=False)
class ScoredPairs:
    pairs: list
    features: np.ndarray
    scores: np.ndarray
    projections: list = field(default_factory=list)


def score_pairs(dets3d, dets2d, calib, model: FusionModel, cfg: PipelineConfig) -> ScoredPairs:
    """Steps 1 and 2: hypothetical pairs, class fusion and fused objectness."""
    if not dets3d:
        return ScoredPairs([], np.zeros((0, 5)), np.zeros(0))
    grid = build_match_matrix(dets3d, dets2d, calib, cfg.max_range)
    pairs = enumerate_pairs(grid, dets3d, dets2d, model.heads, cfg.pair_iou_floor)
    feats = np.array([p.features() for p in pairs])
    scores = np.atleast_1d(score_forward(model.net, feats))
    return ScoredPairs(pairs, feats, scores, grid.projections)


def select_best_per_candidate(pairs, scores):
    """Highest-scoring pair per 3D candidate; ties go to larger IoU, then lower j."""
    best = {}
    for pair, score in zip(pairs, scores):
        j = -1 if pair.j is None else pair.j
        key = (float(score), pair.entry.iou, -j)
        cur = best.get(pair.i)
        if cur is None or key > cur[0]:
            best[pair.i] = (key, pair, float(score))
    return [(best[i][1], best[i][2]) for i in sorted(best)]


def nms(dets, iou_thresh):
    """Greedy class-wise suppression on rotated BEV boxes, by descending score."""
    order = sorted(range(len(dets)), key=lambda k: -dets[k].score)
    kept = []
    for k in order:
        d = dets[k]
        if all(o.class_label != d.class_label or rotated_bev_iou(o.box3d, d.box3d) < iou_thresh for o in kept):
            kept.append(d)
    return kept


def filter_uncertainty(dets, u_max):
    if not 0.0 < u_max <= 1.0:
        raise ValueError(f"u_max must lie in (0, 1], got {u_max}")
    return [d for d in dets if d.uncertainty <= u_max]


def fuse_frame(dets3d, dets2d, calib, model: FusionModel, cfg: PipelineConfig | None = None):
    cfg = cfg or PipelineConfig()
    scored = score_pairs(dets3d, dets2d, calib, model, cfg)
    out = []
    for pair, score in select_best_per_candidate(scored.pairs, scored.scores):
        if score < cfg.conf_threshold:
            continue
        fused = pair.fused
        out.append(FusedDetection(
            box3d=dets3d[pair.i].box,
            score=score,
            beliefs=fused.belief,
            uncertainty=fused.uncertainty,
            class_label=fused.label,
            source_pair=(pair.i, pair.j),
            box2d=scored.projections[pair.i],
        ))
    out = nms(out, cfg.nms_iou)
    out = filter_uncertainty(out, cfg.u_max)
    return sorted(out, key=lambda d: -d.score)


def detections_3d_only(dets3d, calib, heads: EvidenceHeads | None = None):
    """The unfused 3D detector output, with its own opinion as uncertainty."""
    out = []
    for i, d in enumerate(dets3d):
        ev = heads.evidence_3d(d.class_scores) if heads is not None else d.class_scores
        op = opinion_from_evidence(ev)
        out.append(FusedDetection(d.box, float(d.objectness), op.belief, op.uncertainty, d.class_label,
                                  (i, None), project_to_image(d.box, calib)))
    return out


# ---------------------------------------------------------------------------
# training


def assign_targets(projections, labels, cfg: PipelineConfig):
    """Objectness target and class label per 3D candidate.

    A candidate is positive when its projected box overlaps a labelled object
    of a configured class by at least that class's IoU threshold; its class
    label is then the class of the best-overlapping such object.
    """
    targets = np.zeros(len(projections))
    classes = np.full(len(projections), -1, dtype=int)
    gts = [g for g in labels if g.type in cfg.classes]
    for i, proj in enumerate(projections):
        if proj is None:
            continue
        best, best_iou = None, 0.0
        for g in gts:
            iou = iou_axis_aligned(proj, g.bbox)
            if iou > best_iou:
                best, best_iou = g, iou
        if best is not None and best_iou >= cfg.target_iou(best.type):
            targets[i] = 1.0
            classes[i] = cfg.classes.index(best.type)
    return targets, classes


def build_batch(frame: Frame, cfg: PipelineConfig) -> PairBatch:
    """Model-independent arrays for one frame's hypothetical pairs."""
    h = cfg.num_classes
    if not frame.dets3d:
        z = np.zeros((0, h))
        return PairBatch(z, z.copy(), np.zeros(0, dtype=bool), np.zeros((0, 4)), np.zeros(0),
                         np.zeros(0, dtype=int))
    grid = build_match_matrix(frame.dets3d, frame.dets2d, frame.calib, cfg.max_range)
    targets, classes = assign_targets(grid.projections, frame.labels or [], cfg)
    s3, s2, matched, geom, idx = [], [], [], [], []
    m, n = grid.shape
    for i in range(m):
        hit = False
        for j in range(n):
            if grid.entries[i, j, 0] > cfg.pair_iou_floor:
                hit = True
                s3.append(frame.dets3d[i].class_scores)
                s2.append(frame.dets2d[j].class_scores)
                matched.append(True)
                geom.append(grid.entries[i, j])
                idx.append((i, j))
        if not hit:
            s3.append(frame.dets3d[i].class_scores)
            s2.append(np.zeros(h))
            matched.append(False)
            geom.append([0.0, frame.dets3d[i].objectness, NO_MATCH_SCORE, grid.distances[i]])
            idx.append((i, None))
    rows = [i for i, _ in idx]
    return PairBatch(np.array(s3), np.array(s2), np.array(matched), np.array(geom, dtype=np.float64),
                     targets[rows], classes[rows], idx)


@dataclass
class TrainResult:
    model: FusionModel
    losses: list
    skipped: int


def train(frames, cfg: PipelineConfig | None = None, seed=None, model: FusionModel | None = None, callback=None):
    """Fit evidence heads (Adam) and score net (SGD), one frame per step.

    The KL weight is annealed per epoch, but the logged epoch loss is the mean
    pre-step frame loss at full KL weight so that epochs stay comparable.
    Frames without labels are skipped and counted. ``callback(epoch, loss)``
    is invoked after each epoch.
    """
    cfg = cfg or PipelineConfig()
    seed = cfg.seed if seed is None else seed
    if model is None:
        model = init_params(seed, cfg.num_classes, cfg.kappa)
    else:
        model = model.copy()
    usable = [f for f in frames if f.labels is not None]
    skipped = len(frames) - len(usable)
    if skipped:
        log.warning("skipping %d frame(s) without ground truth", skipped)
    if not usable and cfg.epochs > 0:
        raise ValueError("no frames with ground truth to train on")
    batches = [build_batch(f, cfg) for f in usable]
    heads_p = model.heads.params()
    net_p = model.net.params()
    adam = AdamState.for_params(heads_p)
    losses = []
    for epoch in range(1, cfg.epochs + 1):
        lam = cfg.lambda_at(epoch)
        total, count = 0.0, 0
        for batch in batches:
            if len(batch) == 0:
                continue
            cur = FusionModel(EvidenceHeads.from_params(heads_p), ScoreNet.from_params(net_p))
            loss, grads = total_loss(cur, batch, lam, with_grad=True)
            if lam != 1.0:
                loss = total_loss(cur, batch, 1.0)
            heads_p, adam = adam_step(heads_p, {k: grads[k] for k in heads_p}, adam, cfg.lr)
            net_p = sgd_step(net_p, {k: grads[k] for k in net_p}, cfg.lr)
            total += loss
            count += 1
        mean = total / count if count else 0.0
        losses.append(mean)
        if callback is not None:
            callback(epoch, mean)
    model = FusionModel(EvidenceHeads.from_params(heads_p), ScoreNet.from_params(net_p))
    return TrainResult(model, losses, skipped)
