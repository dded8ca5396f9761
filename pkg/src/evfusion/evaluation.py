"""KITTI-style detection evaluation and uncertainty statistics."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .geometry import iou_3d, iou_axis_aligned, rotated_bev_iou


@dataclass(frozen=True)
class DifficultyBucket:
    name: str
    min_height: float
    max_occlusion: int
    max_truncation: float


EASY = DifficultyBucket("Easy", 40, 0, 0.15)
MODERATE = DifficultyBucket("Moderate", 25, 1, 0.30)
HARD = DifficultyBucket("Hard", 25, 2, 0.50)
BUCKETS = (EASY, MODERATE, HARD)

CLASS_IOU = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
NEIGHBOUR_CLASS = {"Car": "Van", "Pedestrian": "Person_sitting"}
METRICS = ("2d", "aos", "bev", "3d")
DONTCARE_MIN_OVERLAP = 0.5


def bucket_by_name(name):
    for b in BUCKETS:
        if b.name.lower() == str(name).lower():
            return b
    raise ValueError(f"unknown difficulty {name!r}")


def iou_function(metric):
    if metric in ("2d", "aos"):
        return lambda p, g: iou_axis_aligned(p.bbox, g.bbox)
    if metric == "bev":
        return lambda p, g: rotated_bev_iou(p.box3d, g.box3d)
    if metric == "3d":
        return lambda p, g: iou_3d(p.box3d, g.box3d)
    raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")


def _ioa(det_box, region):
    iw = min(det_box.x2, region.x2) - max(det_box.x1, region.x1)
    ih = min(det_box.y2, region.y2) - max(det_box.y1, region.y1)
    if iw <= 0 or ih <= 0 or det_box.area <= 0:
        return 0.0
    return iw * ih / det_box.area


@dataclass
class MatchResult:
    tp: np.ndarray
    fp: np.ndarray
    matched_gt: np.ndarray  # per prediction, -1 when unmatched
    gt_matched: np.ndarray


def match_greedy(preds, gts, iou_fn, iou_threshold, dontcare_regions=(), gt_ignored=None, pred_ignored=None):
    """Assign predictions (already sorted by descending score) to ground truth.

    Each prediction takes the highest-IoU unmatched ground truth at or above
    the threshold and becomes a true positive. A prediction that can only
    match an ignored ground truth, or that lies inside a DontCare region, is
    neither TP nor FP. Everything else is a false positive.
    """
    n_p, n_g = len(preds), len(gts)
    gt_ignored = np.zeros(n_g, bool) if gt_ignored is None else np.asarray(gt_ignored, bool)
    pred_ignored = np.zeros(n_p, bool) if pred_ignored is None else np.asarray(pred_ignored, bool)
    tp = np.zeros(n_p, bool)
    fp = np.zeros(n_p, bool)
    matched_gt = np.full(n_p, -1)
    taken = np.zeros(n_g, bool)
    ious = np.array([[iou_fn(p, g) for g in gts] for p in preds]).reshape(n_p, n_g)
    for k in range(n_p):
        if pred_ignored[k]:
            continue
        best, best_iou = -1, -1.0
        for ignored_pass in (False, True):
            for g in range(n_g):
                if taken[g] or gt_ignored[g] != ignored_pass:
                    continue
                if ious[k, g] >= iou_threshold and ious[k, g] > best_iou:
                    best, best_iou = g, ious[k, g]
            if best >= 0:
                break
        if best >= 0:
            taken[best] = True
            if not gt_ignored[best]:
                tp[k] = True
                matched_gt[k] = best
            continue
        if any(_ioa(preds[k].bbox, r) >= DONTCARE_MIN_OVERLAP for r in dontcare_regions):
            continue
        fp[k] = True
    return MatchResult(tp, fp, matched_gt, taken & ~gt_ignored)


def pr_curve(scores, tp, fp, num_gt, similarity=None):
    """Pooled (recall, precision) points, one per distinct score threshold.

    Predictions sharing a score enter together, as with a score cut-off.
    With ``similarity`` (per-prediction orientation similarity of true
    positives) the "precision" entries are orientation similarities instead.
    """
    scores = np.asarray(scores, dtype=np.float64)
    counted = np.asarray(tp, bool) | np.asarray(fp, bool)
    if num_gt == 0:
        return []
    order = np.argsort(-scores[counted], kind="stable")
    s = scores[counted][order]
    tp_c = np.asarray(tp, bool)[counted][order]
    gain = tp_c.astype(np.float64)
    if similarity is not None:
        gain = np.where(tp_c, np.asarray(similarity, dtype=np.float64)[counted][order], 0.0)
    n_tp = np.cumsum(tp_c)
    acc = np.cumsum(gain)
    points = []
    for k in range(len(s)):
        if k + 1 < len(s) and s[k + 1] == s[k]:
            continue
        points.append((float(n_tp[k] / num_gt), float(acc[k] / (k + 1))))
    return points


def ap_interp(curve, points=11):
    """Interpolated AP in percent from (recall, precision) points."""
    if points == 11:
        samples = [k / 10 for k in range(11)]
    elif points == 40:
        samples = [k / 40 for k in range(1, 41)]
    else:
        raise ValueError("interpolation must use 11 or 40 points")
    if not curve:
        return 0.0
    rec = np.array([r for r, _ in curve])
    prec = np.array([p for _, p in curve])
    total = 0.0
    for r in samples:
        mask = rec >= r
        total += float(prec[mask].max()) if mask.any() else 0.0
    return 100.0 * total / len(samples)


def orientation_similarity(pred_alpha, gt_alpha):
    return (1.0 + math.cos(pred_alpha - gt_alpha)) / 2.0


def _split_gts(gts, class_name, bucket):
    valid, ignored, dontcare = [], [], []
    neighbour = NEIGHBOUR_CLASS.get(class_name)
    for g in gts:
        if g.type == "DontCare":
            dontcare.append(g.bbox)
        elif g.type == class_name:
            ok = (g.bbox.height >= bucket.min_height and g.occlusion <= bucket.max_occlusion
                  and g.truncation <= bucket.max_truncation)
            (valid if ok else ignored).append(g)
        elif g.type == neighbour:
            ignored.append(g)
    return valid, ignored, dontcare


def _frame_matches(preds, gts, metric, class_name, bucket):
    iou_fn = iou_function(metric)
    valid, ignored, dontcare = _split_gts(gts, class_name, bucket)
    cand = sorted((p for p in preds if p.type == class_name), key=lambda p: -p.score)
    all_gts = valid + ignored
    gt_ign = [False] * len(valid) + [True] * len(ignored)
    pred_ign = [p.bbox.height < bucket.min_height for p in cand]
    res = match_greedy(cand, all_gts, iou_fn, CLASS_IOU[class_name], dontcare, gt_ign, pred_ign)
    sim = np.zeros(len(cand))
    for k, g in enumerate(res.matched_gt):
        if g >= 0:
            sim[k] = orientation_similarity(cand[k].alpha, all_gts[g].alpha)
    return [p.score for p in cand], res, sim, len(valid)


def evaluate(preds_by_frame, gts_by_frame, metric, class_name, bucket=MODERATE, interp=11):
    """Pooled AP (or AOS) in percent for one class and difficulty."""
    if class_name not in CLASS_IOU:
        raise ValueError(f"unknown class {class_name!r}")
    if metric not in METRICS:
        raise ValueError(f"unknown metric {metric!r}; expected one of {METRICS}")
    if isinstance(bucket, str):
        bucket = bucket_by_name(bucket)
    extra = set(preds_by_frame) - set(gts_by_frame)
    if extra:
        raise ValueError(f"predictions for frames without ground truth: {sorted(extra)[:5]}")
    scores, tps, fps, sims = [], [], [], []
    num_gt = 0
    for fid in sorted(gts_by_frame):
        s, res, sim, n = _frame_matches(preds_by_frame.get(fid, []), gts_by_frame[fid], metric, class_name, bucket)
        scores.extend(s)
        tps.extend(res.tp)
        fps.extend(res.fp)
        sims.extend(sim)
        num_gt += n
    curve = pr_curve(scores, tps, fps, num_gt, sims if metric == "aos" else None)
    return ap_interp(curve, interp)


def evaluate_table(preds_by_frame, gts_by_frame, metric, classes, interp=11):
    return {
        c: {b.name: evaluate(preds_by_frame, gts_by_frame, metric, c, b, interp) for b in BUCKETS}
        for c in classes
    }


def format_table(table, metric):
    title = {"2d": "2D detection AP (%)", "aos": "2D orientation AOS (%)",
             "bev": "BEV AP (%)", "3d": "3D detection AP (%)"}[metric]
    header = f"{'class':<12}" + "".join(f"{b.name:>10}" for b in BUCKETS)
    lines = [title, header]
    for cls, row in table.items():
        lines.append(f"{cls:<12}" + "".join(f"{row[b.name]:>10.2f}" for b in BUCKETS))
    return "\n".join(lines)


def table_json(table, metric, interp):
    return json.dumps({"metric": metric, "interp": interp, "ap": table}, indent=2, sort_keys=True)


def mean_uncertainty_per_class(dets_by_frame, classes=None):
    """Arithmetic mean uncertainty per class name.

    Detections are either objects with ``class_label``/``uncertainty`` (mapped
    through ``classes``) or ``(class_name, uncertainty)`` tuples. Classes
    without detections are absent from the result.
    """
    sums, counts = {}, {}
    for dets in dets_by_frame.values():
        for d in dets:
            if isinstance(d, tuple):
                name, u = d
            else:
                name, u = classes[d.class_label], d.uncertainty
            sums[name] = sums.get(name, 0.0) + float(u)
            counts[name] = counts.get(name, 0) + 1
    return {k: sums[k] / counts[k] for k in sums}
