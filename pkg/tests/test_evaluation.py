import math

import numpy as np
import pytest

from evfusion.evaluation import (
    BUCKETS,
    METRICS,
    ap_interp,
    evaluate,
    evaluate_table,
    format_table,
    match_greedy,
    mean_uncertainty_per_class,
    orientation_similarity,
    pr_curve,
    table_json,
)
from evfusion.geometry import Box2D
from evfusion.kitti_io import GroundTruthRecord
from helpers import random_eval_scene
from reference_eval import reference_ap


def rec(t, x1, y1, x2, y2, score=None, alpha=0.0, occ=0, trunc=0.0, x=0.0, z=20.0, ry=0.0):
    return GroundTruthRecord(t, trunc, occ, alpha, Box2D(x1, y1, x2, y2), 1.5, 1.6, 3.9, x, 1.65, z, ry, score)


def as_pred(g, score=1.0):
    return GroundTruthRecord(g.type, -1, -1, g.alpha, g.bbox, g.h, g.w, g.l, g.x, g.y, g.z, g.ry, score)


def iou2d(p, g):
    from evfusion.geometry import iou_axis_aligned
    return iou_axis_aligned(p.bbox, g.bbox)


def test_match_examples():
    gts = [rec("Car", 0, 0, 10, 10), rec("Car", 20, 0, 30, 10)]
    res = match_greedy(gts, gts, iou2d, 0.7)
    assert res.tp.all() and not res.fp.any() and res.gt_matched.all()
    res = match_greedy([gts[0], gts[0]], gts[:1], iou2d, 0.7)
    assert res.tp.tolist() == [True, False] and res.fp.tolist() == [False, True]


def _brute_greedy(preds, gts, thr):
    taken, out = set(), []
    for p in preds:
        cands = [(iou2d(p, g), -k, k) for k, g in enumerate(gts) if k not in taken and iou2d(p, g) >= thr]
        if cands:
            k = max(cands)[2]
            taken.add(k)
            out.append(k)
        else:
            out.append(-1)
    return out


def test_match_against_brute_force(rng):
    for _ in range(300):
        gts = [rec("Car", *(lambda a, b: (a, b, a + rng.uniform(5, 20), b + rng.uniform(5, 20)))(
            rng.uniform(0, 30), rng.uniform(0, 30))) for _ in range(4)]
        preds = []
        for _ in range(6):
            g = gts[int(rng.integers(4))].bbox
            j = rng.normal(0, 2, 4)
            preds.append(rec("Car", g.x1 + j[0], g.y1 + j[1], g.x2 + abs(j[2]) + 0.1, g.y2 + abs(j[3]) + 0.1))
        res = match_greedy(preds, gts, iou2d, 0.5)
        assert res.matched_gt.tolist() == _brute_greedy(preds, gts, 0.5)
        assert (res.tp == (res.matched_gt >= 0)).all() and (res.fp == ~res.tp).all()


def test_dontcare_and_ignored():
    gts = [rec("Car", 0, 0, 100, 100), rec("Van", 200, 0, 300, 100), rec("DontCare", 400, 0, 500, 100)]
    preds = [rec("Car", 0, 0, 100, 100, 0.9), rec("Car", 200, 0, 300, 100, 0.8), rec("Car", 410, 10, 490, 90, 0.7),
             rec("Car", 600, 0, 700, 100, 0.6)]
    res = match_greedy(preds, gts[:2], iou2d, 0.7, [gts[2].bbox], gt_ignored=[False, True])
    assert res.tp.tolist() == [True, False, False, False]
    assert res.fp.tolist() == [False, False, False, True]


def test_ap_interp_examples():
    assert ap_interp([(r / 10, 1.0) for r in range(1, 11)]) == 100.0
    assert ap_interp([]) == 0.0
    assert ap_interp([(0.5, 1.0), (1.0, 0.5)]) == pytest.approx(77.27, abs=5e-3)
    assert ap_interp([(0.5, 1.0), (1.0, 0.5)]) == pytest.approx((6 + 2.5) / 11 * 100, abs=1e-12)
    assert ap_interp([(1.0, 1.0)], points=40) == 100.0
    with pytest.raises(ValueError):
        ap_interp([(1.0, 1.0)], points=7)


def test_pr_curve_groups_ties():
    assert pr_curve([0.5, 0.5], [True, False], [False, True], 1) == [(1.0, 0.5)]
    assert pr_curve([1.0], [True], [False], 0) == []


def test_orientation_similarity():
    assert orientation_similarity(0.3, 0.3) == 1.0
    assert orientation_similarity(0.0, math.pi) == pytest.approx(0.0, abs=1e-15)


def _perfect_scene():
    gts = {"000000": [rec("Car", 0, 100, 100, 200), rec("Pedestrian", 300, 100, 340, 200, alpha=1.0, z=10, x=2),
                      rec("Cyclist", 500, 100, 560, 200, alpha=-2.0, x=-3, z=15)]}
    gts["000001"] = [rec("Car", 100, 150, 250, 240, x=4, z=30, ry=1.0)]
    preds = {k: [as_pred(g) for g in v] for k, v in gts.items()}
    return preds, gts


def test_perfect_and_empty_predictions():
    preds, gts = _perfect_scene()
    for metric in METRICS:
        for cls in ("Car", "Pedestrian", "Cyclist"):
            assert evaluate(preds, gts, metric, cls, "Moderate") == 100.0
            assert evaluate({}, gts, metric, cls, "Moderate") == 0.0


def test_aos_examples():
    preds, gts = _perfect_scene()
    flipped = {k: [GroundTruthRecord(p.type, -1, -1, p.alpha + math.pi, p.bbox, p.h, p.w, p.l, p.x, p.y, p.z, p.ry,
                                     1.0) for p in v] for k, v in preds.items()}
    assert evaluate(flipped, gts, "aos", "Car") == pytest.approx(0.0, abs=1e-12)
    assert evaluate(flipped, gts, "2d", "Car") == 100.0


def test_evaluate_errors():
    preds, gts = _perfect_scene()
    with pytest.raises(ValueError):
        evaluate(preds, gts, "3d", "Truck")
    with pytest.raises(ValueError):
        evaluate(preds, gts, "4d", "Car")
    with pytest.raises(ValueError):
        evaluate({"999999": []}, gts, "2d", "Car")


def test_against_reference_evaluator():
    rng = np.random.default_rng(2024)
    for _ in range(10):
        preds, gts = random_eval_scene(rng)
        for metric in METRICS:
            for cls in ("Car", "Pedestrian", "Cyclist"):
                for b in ("Easy", "Moderate", "Hard"):
                    got = evaluate(preds, gts, metric, cls, b)
                    assert abs(got - reference_ap(preds, gts, metric, cls, b)) <= 1e-9


def test_invariants():
    rng = np.random.default_rng(77)
    for _ in range(20):
        preds, gts = random_eval_scene(rng, 4)
        for cls in ("Car", "Pedestrian"):
            ap2d = evaluate(preds, gts, "2d", cls)
            assert 0.0 <= ap2d <= 100.0
            assert evaluate(preds, gts, "aos", cls) <= ap2d + 1e-12
            shuffled = dict(reversed(list(gts.items())))
            assert evaluate(preds, shuffled, "2d", cls) == ap2d
            worst = min([p.score for v in preds.values() for p in v] + [1.0]) / 2
            extra = {k: list(v) for k, v in preds.items()}
            extra["000000"].append(rec(cls, 1100, 100, 1180, 200, score=worst))
            assert evaluate(extra, gts, "2d", cls) <= ap2d + 1e-12


def test_table_outputs():
    preds, gts = _perfect_scene()
    table = evaluate_table(preds, gts, "bev", ["Car", "Cyclist"])
    text = format_table(table, "bev")
    assert text.splitlines()[0] == "BEV AP (%)"
    assert [b.name for b in BUCKETS] == text.splitlines()[1].split()[1:]
    import json
    assert json.loads(table_json(table, "bev", 11))["ap"]["Car"]["Moderate"] == 100.0


def test_mean_uncertainty_per_class():
    assert mean_uncertainty_per_class({"0": [("Car", 0.11827)]}) == {"Car": 0.11827}
    assert mean_uncertainty_per_class({"0": [("Car", 0.02)], "1": [("Car", 0.04)]})["Car"] == pytest.approx(0.03)
    assert "Cyclist" not in mean_uncertainty_per_class({"0": [("Car", 0.02)]})
