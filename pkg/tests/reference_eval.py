"""Independent brute-force KITTI evaluation used as a test oracle.

For each distinct score threshold the frames are re-matched from scratch
using only predictions at or above it, giving one (recall, precision)
point per threshold. Nothing is shared with the package beyond the IoU
functions and the record types.
"""

import math

from evfusion.geometry import iou_3d, iou_axis_aligned, rotated_bev_iou

THRESH = {"Car": 0.7, "Pedestrian": 0.5, "Cyclist": 0.5}
NEIGHBOUR = {"Car": "Van", "Pedestrian": "Person_sitting"}
DIFFICULTY = {"Easy": (40, 0, 0.15), "Moderate": (25, 1, 0.30), "Hard": (25, 2, 0.50)}


def _overlap(metric, p, g):
    if metric in ("2d", "aos"):
        return iou_axis_aligned(p.bbox, g.bbox)
    if metric == "bev":
        return rotated_bev_iou(p.box3d, g.box3d)
    return iou_3d(p.box3d, g.box3d)


def _inside_dontcare(p, regions):
    b = p.bbox
    area = (b.x2 - b.x1) * (b.y2 - b.y1)
    for r in regions:
        w = min(b.x2, r.x2) - max(b.x1, r.x1)
        h = min(b.y2, r.y2) - max(b.y1, r.y1)
        if w > 0 and h > 0 and area > 0 and w * h / area >= 0.5:
            return True
    return False


def _frame_counts(preds, gts, metric, cls, diff, thr):
    min_h, max_occ, max_trunc = DIFFICULTY[diff]
    care, ignore, regions = [], [], []
    for g in gts:
        if g.type == "DontCare":
            regions.append(g.bbox)
        elif g.type == cls:
            good = g.bbox.y2 - g.bbox.y1 >= min_h and g.occlusion <= max_occ and g.truncation <= max_trunc
            (care if good else ignore).append(g)
        elif g.type == NEIGHBOUR.get(cls):
            ignore.append(g)
    mine = [p for p in preds if p.type == cls and p.score >= thr]
    mine.sort(key=lambda p: -p.score)
    used = set()
    tp = fp = 0
    sim = 0.0
    for p in mine:
        if p.bbox.y2 - p.bbox.y1 < min_h:
            continue
        pick = None
        for group in (care, ignore):
            best = -1.0
            for g in group:
                if id(g) in used:
                    continue
                o = _overlap(metric, p, g)
                if o >= THRESH[cls] and o > best:
                    best, pick = o, g
            if pick is not None:
                break
        if pick is not None:
            used.add(id(pick))
            if any(pick is g for g in care):
                tp += 1
                sim += (1 + math.cos(p.alpha - pick.alpha)) / 2
        elif not _inside_dontcare(p, regions):
            fp += 1
    return tp, fp, sim, len(care)


def reference_ap(preds_by_frame, gts_by_frame, metric, cls, diff="Moderate", points=11):
    frames = sorted(gts_by_frame)
    n_gt = sum(_frame_counts([], gts_by_frame[f], metric, cls, diff, 0)[3] for f in frames)
    if n_gt == 0:
        return 0.0
    thresholds = sorted({p.score for f in frames for p in preds_by_frame.get(f, []) if p.type == cls},
                        reverse=True)
    curve = []
    for t in thresholds:
        tp = fp = 0
        sim = 0.0
        for f in frames:
            a, b, s, _ = _frame_counts(preds_by_frame.get(f, []), gts_by_frame[f], metric, cls, diff, t)
            tp, fp, sim = tp + a, fp + b, sim + s
        if tp + fp:
            curve.append((tp / n_gt, (sim if metric == "aos" else tp) / (tp + fp)))
    samples = [k / 10 for k in range(11)] if points == 11 else [k / 40 for k in range(1, 41)]
    total = 0.0
    for r in samples:
        best = [p for rec, p in curve if rec >= r]
        total += max(best) if best else 0.0
    return 100.0 * total / len(samples)
