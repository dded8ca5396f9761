"""Seeded synthetic KITTI-like scenes for tests and demos.

3D detections carry accurate geometry but unreliable class scores; 2D
detections carry reliable class scores. Both include false positives.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .geometry import Box2D, Box3D, Calibration, project_to_image, wrap_angle
from .kitti_io import GroundTruthRecord
from .matching import Detection2D, Detection3D
from .pipeline import DEFAULT_CLASSES, Frame

# mean (h, w, l) per class, metres
CLASS_DIMS = ((1.52, 1.63, 3.88), (1.76, 0.66, 0.84), (1.74, 0.60, 1.76))
CLASS_PRIOR = (0.5, 0.25, 0.25)


def kitti_calibration() -> Calibration:
    p2 = np.array([
        [721.5377, 0.0, 609.5593, 44.85728],
        [0.0, 721.5377, 172.854, 0.2163791],
        [0.0, 0.0, 1.0, 0.002745884],
    ])
    tr = np.array([
        [0.0, -1.0, 0.0, 0.0],
        [0.0, 0.0, -1.0, -0.08],
        [1.0, 0.0, 0.0, -0.27],
    ])
    return Calibration(p2, np.eye(3), tr, 1242.0, 375.0)


def _sample_objects(rng, calib, count):
    objs = []
    tries = 0
    while len(objs) < count and tries < 200:
        tries += 1
        cls = int(rng.choice(3, p=CLASS_PRIOR))
        h, w, l = (d * rng.uniform(0.92, 1.08) for d in CLASS_DIMS[cls])  # noqa: E741
        z = rng.uniform(6.0, 38.0)
        x = rng.uniform(-0.6, 0.6) * z
        ry = rng.uniform(-math.pi, math.pi)
        box = Box3D(x, 1.65 + rng.normal(0, 0.05), z, h, w, l, ry)
        radius = 0.5 * math.hypot(l, w)
        if any(math.hypot(x - o.x, z - o.z) < radius + 0.5 * math.hypot(o.l, o.w) + 0.5 for _, o, _ in objs):
            continue
        bbox = project_to_image(box, calib)
        if bbox is None or bbox.height < 26 or bbox.x1 <= 0 or bbox.x2 >= calib.image_width:
            continue
        objs.append((cls, box, bbox))
    return objs


def _noisy_scores(rng, true_cls, flip_prob, h=3):
    scores = rng.uniform(0.0, 0.15, size=h)
    if rng.uniform() < flip_prob:
        wrong = int(rng.choice([c for c in range(h) if c != true_cls]))
        scores[wrong] = rng.uniform(0.5, 0.8)
        scores[true_cls] = rng.uniform(0.2, 0.45)
    else:
        scores[true_cls] = rng.uniform(0.5, 0.9)
    return scores


def _clean_scores(rng, true_cls, h=3):
    scores = rng.uniform(0.0, 0.05, size=h)
    scores[true_cls] = rng.uniform(0.85, 1.0)
    return scores


def _jitter_box2d(rng, b, calib, px=3.0):
    x1, y1, x2, y2 = (v + rng.uniform(-px, px) for v in (b.x1, b.y1, b.x2, b.y2))
    x1, x2 = sorted((min(max(x1, 0.0), calib.image_width), min(max(x2, 0.0), calib.image_width)))
    y1, y2 = sorted((min(max(y1, 0.0), calib.image_height), min(max(y2, 0.0), calib.image_height)))
    return Box2D(x1, y1, x2 + 1e-3, y2 + 1e-3)


def make_frame(rng, frame_id, calib=None, classes=DEFAULT_CLASSES, flip_prob=0.4, detect_3d=0.92,
               detect_2d=0.9, fp_3d=1.0, fp_2d=1.0) -> Frame:
    calib = calib or kitti_calibration()
    objs = _sample_objects(rng, calib, int(rng.integers(3, 8)))
    labels, dets3d, dets2d = [], [], []
    for cls, box, bbox in objs:
        alpha = wrap_angle(box.ry - math.atan2(box.x, box.z))
        labels.append(GroundTruthRecord(classes[cls], 0.0, 0, alpha, bbox, box.h, box.w, box.l,
                                        box.x, box.y, box.z, box.ry))
        if rng.uniform() < detect_3d:
            jb = Box3D(box.x + rng.normal(0, 0.04), box.y, box.z + rng.normal(0, 0.04),
                       box.h * (1 + rng.normal(0, 0.01)), box.w * (1 + rng.normal(0, 0.01)),
                       box.l * (1 + rng.normal(0, 0.01)), wrap_angle(box.ry + rng.normal(0, 0.02)))
            scores = _noisy_scores(rng, cls, flip_prob)
            dets3d.append(Detection3D(jb, rng.uniform(0.55, 0.95), scores, int(np.argmax(scores))))
        if rng.uniform() < detect_2d:
            scores = _clean_scores(rng, cls)
            dets2d.append(Detection2D(_jitter_box2d(rng, bbox, calib), rng.uniform(0.75, 1.0), scores,
                                      int(np.argmax(scores))))
    for _ in range(int(rng.poisson(fp_3d))):
        cls = int(rng.integers(3))
        z = rng.uniform(6.0, 38.0)
        h, w, l = CLASS_DIMS[cls]  # noqa: E741
        box = Box3D(rng.uniform(-0.6, 0.6) * z, 1.65, z, h, w, l, rng.uniform(-math.pi, math.pi))
        scores = rng.uniform(0.0, 0.7, size=3)
        dets3d.append(Detection3D(box, rng.uniform(0.3, 0.85), scores, int(np.argmax(scores))))
    for _ in range(int(rng.poisson(fp_2d))):
        cx, cy = rng.uniform(50, calib.image_width - 50), rng.uniform(120, 300)
        bw, bh = rng.uniform(20, 120), rng.uniform(30, 100)
        scores = rng.uniform(0.0, 0.6, size=3)
        box = Box2D(cx - bw / 2, max(cy - bh / 2, 0.0), cx + bw / 2, min(cy + bh / 2, calib.image_height))
        dets2d.append(Detection2D(box, rng.uniform(0.05, 0.5), scores, int(np.argmax(scores))))
    return Frame(frame_id, dets3d, dets2d, calib, labels)


def make_dataset(num_frames=200, seed=0, **kw):
    rng = np.random.default_rng(seed)
    calib = kitti_calibration()
    return [make_frame(rng, f"{k:06d}", calib, **kw) for k in range(num_frames)]


def write_dataset(frames, root, classes=DEFAULT_CLASSES, include_labels=True):
    """Write frames as det3d/, det2d/, calib/ (and label/) directories under ``root``."""
    from .kitti_io import format_calib, format_det2d, format_det3d, format_labels, frame_path, write_atomic

    dirs = {name: os.path.join(root, name) for name in ("det3d", "det2d", "calib", "label")}
    for name, d in dirs.items():
        if name != "label" or include_labels:
            os.makedirs(d, exist_ok=True)
    for f in frames:
        write_atomic(frame_path(dirs["det3d"], f.frame_id), format_det3d(f.dets3d, classes))
        write_atomic(frame_path(dirs["det2d"], f.frame_id), format_det2d(f.dets2d, classes))
        write_atomic(frame_path(dirs["calib"], f.frame_id), format_calib(f.calib))
        if include_labels and f.labels is not None:
            write_atomic(frame_path(dirs["label"], f.frame_id), format_labels(f.labels))
    return dirs
