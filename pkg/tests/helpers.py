"""Shared oracles and random-case generators for the test suite."""

import numpy as np

from evfusion.fusion_net import EvidenceHeads, FusionModel, PairBatch, ScoreNet, init_params


def random_model(rng, h=3):
    base = init_params(int(rng.integers(1 << 30)), h, kappa=float(rng.uniform(2, 25)))
    hp = {k: v + rng.normal(0, 0.5, v.shape) for k, v in base.heads.params().items()}
    npar = {k: v * rng.uniform(0.5, 2.0) for k, v in base.net.params().items()}
    return FusionModel(EvidenceHeads.from_params(hp), ScoreNet.from_params(npar))


def random_batch(rng, h=3, k=None):
    k = int(rng.integers(1, 9)) if k is None else k
    matched = rng.uniform(size=k) < 0.7
    s3 = rng.uniform(0, 1, (k, h))
    s2 = np.where(matched[:, None], rng.uniform(0, 1, (k, h)), 0.0)
    geom = np.column_stack([
        np.where(matched, rng.uniform(0.01, 1, k), 0.0),
        rng.uniform(0, 1, k),
        np.where(matched, rng.uniform(0, 1, k), -10.0),
        rng.uniform(0, 1, k),
    ])
    targets = (rng.uniform(size=k) < 0.5).astype(float)
    labels = np.where(targets == 1, rng.integers(0, h, k), -1)
    return PairBatch(s3, s2, matched, geom, targets, labels, [(i, None) for i in range(k)])


def rel_err(a, b, floor=1e-5):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.abs(a - b) / np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)


def central_diff(f, params, step=1e-5):
    """Central finite differences of scalar ``f(params)`` for every entry of a param dict."""
    out = {}
    for name, p in params.items():
        g = np.zeros_like(p)
        for idx in np.ndindex(p.shape):
            orig = p[idx]
            p[idx] = orig + step
            up = f(params)
            p[idx] = orig - step
            down = f(params)
            p[idx] = orig
            g[idx] = (up - down) / (2 * step)
        out[name] = g
    return out


def total_loss_fd_error(model, batch, lambda_t, total_loss):
    """Worst relative error between analytic and central-difference gradients of ``total_loss``."""
    model = model.copy()
    params = {**model.heads.params(), **model.net.params()}  # shared with ``model``, perturbed in place
    _, grads = total_loss(model, batch, lambda_t, with_grad=True)
    num = central_diff(lambda p: total_loss(model, batch, lambda_t), params)
    return max(float(rel_err(grads[k], num[k]).max()) for k in params)


def brute_force_nms(dets, thr, iou_fn):
    """Reference NMS: repeatedly take the best remaining box and drop same-class overlaps."""
    pool = sorted(dets, key=lambda d: -d.score)
    kept = []
    while pool:
        best = pool.pop(0)
        kept.append(best)
        pool = [d for d in pool if d.class_label != best.class_label or iou_fn(best.box3d, d.box3d) < thr]
    return kept


def random_eval_scene(rng, n_frames=3):
    """Small random KITTI-like GT/prediction sets exercising every matching rule."""
    import math

    from evfusion.geometry import Box2D
    from evfusion.kitti_io import GroundTruthRecord

    types = ["Car", "Car", "Pedestrian", "Cyclist", "Van", "Person_sitting", "DontCare"]
    gts, preds = {}, {}
    for f in range(n_frames):
        fid = f"{f:06d}"
        g_list, p_list = [], []
        for _ in range(int(rng.integers(1, 8))):
            t = types[int(rng.integers(len(types)))]
            x1, y1 = rng.uniform(0, 1000), rng.uniform(100, 250)
            bb = Box2D(x1, y1, x1 + rng.uniform(20, 120), y1 + rng.uniform(20, 90))
            x, z = rng.uniform(-10, 10), rng.uniform(5, 40)
            h, w, l = rng.uniform(1.4, 1.8), rng.uniform(0.5, 1.8), rng.uniform(0.5, 4.2)  # noqa: E741
            ry = rng.uniform(-math.pi, math.pi)
            alpha = rng.uniform(-math.pi, math.pi)
            trunc = float(rng.choice([0.0, 0.0, 0.1, 0.2, 0.4]))
            occ = int(rng.choice([0, 0, 1, 2, 3]))
            g_list.append(GroundTruthRecord(t, trunc, occ, alpha, bb, h, w, l, x, 1.65, z, ry))
            if t != "DontCare" and rng.uniform() < 0.8:
                for _ in range(1 + int(rng.uniform() < 0.2)):  # occasional duplicate
                    jit = rng.normal(0, 3, 4)
                    pb = Box2D(bb.x1 + jit[0], bb.y1 + jit[1], bb.x2 + abs(jit[2]) + 1, bb.y2 + abs(jit[3]) + 1)
                    pt = t if t in ("Car", "Pedestrian", "Cyclist") else "Car"
                    p_list.append(GroundTruthRecord(
                        pt, -1, -1, alpha + rng.normal(0, 0.5), pb, h * (1 + rng.normal(0, 0.05)), w, l,
                        x + rng.normal(0, 0.1), 1.65 + rng.normal(0, 0.03), z + rng.normal(0, 0.1),
                        float(np.clip(ry + rng.normal(0, 0.1), -math.pi, math.pi)),
                        score=round(float(rng.uniform()), 1)))
        for _ in range(int(rng.integers(0, 3))):
            x1, y1 = rng.uniform(0, 1000), rng.uniform(100, 250)
            pb = Box2D(x1, y1, x1 + rng.uniform(20, 100), y1 + rng.uniform(10, 80))
            p_list.append(GroundTruthRecord(
                ["Car", "Pedestrian", "Cyclist"][int(rng.integers(3))], -1, -1, 0.0, pb, 1.5, 1.6, 3.9,
                rng.uniform(-10, 10), 1.65, rng.uniform(5, 40), 0.0, score=round(float(rng.uniform()), 2)))
        gts[fid], preds[fid] = g_list, p_list
    return preds, gts


KINK_MARGIN = 1e-3


def relu_margin(net, features):
    """Smallest |pre-activation| of the score net's ReLUs over a feature batch."""
    x = np.atleast_2d(features)
    z1 = x @ net.w1.T + net.b1
    z2 = np.maximum(z1, 0) @ net.w2.T + net.b2
    return float(min(np.abs(z1).min(), np.abs(z2).min()))


def batch_features(model, batch):
    from evfusion.fusion_net import forward_pairs, score_features

    return score_features(batch, forward_pairs(model, batch)["uf"])


def smooth_case(rng, draw):
    """Redraw until no ReLU sits within ``KINK_MARGIN`` of its kink, where central differences are invalid.

    ``draw(rng)`` returns ``(net, features, payload)``. Returns ``(payload, redraws)``.
    """
    redraws = 0
    while True:
        net, feats, payload = draw(rng)
        if relu_margin(net, feats) > KINK_MARGIN:
            return payload, redraws
        redraws += 1
