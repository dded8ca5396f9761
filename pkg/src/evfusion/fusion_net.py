"""Trainable parameters: evidence heads, score network, losses and optimizers.

Everything here is plain numpy with hand-written reverse-mode gradients.
The score network is a per-pair MLP 5 -> 18 -> 36 -> 1 (a stack of 1x1
convolutions over the pair axis is the same map). Evidence heads turn raw
detector class scores into non-negative evidence with ``softplus(W s + c)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import digamma, gammaln, zeta

from .errors import DimensionError, InvalidFeatureError, InvalidParameterError, ParseError

SCORE_LAYERS = (5, 18, 36, 1)
CHECKPOINT_MAGIC = "mmlf-ckpt v1"


def softplus(x):
    return np.logaddexp(0.0, x)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass(eq=False)
class ScoreNet:
    w1: np.ndarray
    b1: np.ndarray
    w2: np.ndarray
    b2: np.ndarray
    w3: np.ndarray
    b3: np.ndarray

    NAMES = ("w1", "b1", "w2", "b2", "w3", "b3")

    def __post_init__(self):
        shapes = {
            "w1": (18, 5), "b1": (18,), "w2": (36, 18), "b2": (36,), "w3": (1, 36), "b3": (1,),
        }
        for name, shape in shapes.items():
            arr = np.asarray(getattr(self, name), dtype=np.float64)
            if arr.shape != shape:
                raise DimensionError(f"score net {name} must have shape {shape}, got {arr.shape}")
            setattr(self, name, arr)

    def params(self):
        return {n: getattr(self, n) for n in self.NAMES}

    @classmethod
    def from_params(cls, p):
        return cls(**{n: p[n] for n in cls.NAMES})

    @classmethod
    def zeros(cls):
        return cls(
            np.zeros((18, 5)), np.zeros(18), np.zeros((36, 18)), np.zeros(36), np.zeros((1, 36)), np.zeros(1)
        )


@dataclass(eq=False)
class EvidenceHeads:
    """One affine + softplus head per modality, mapping class scores to evidence."""

    w3d: np.ndarray
    b3d: np.ndarray
    w2d: np.ndarray
    b2d: np.ndarray

    NAMES = ("w3d", "b3d", "w2d", "b2d")

    def __post_init__(self):
        for name in self.NAMES:
            setattr(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        h = self.w3d.shape[0]
        if self.w3d.shape != (h, h) or self.w2d.shape != (h, h) or self.b3d.shape != (h,) or self.b2d.shape != (h,):
            raise DimensionError("evidence heads must be HxH weights with length-H biases")

    @property
    def num_classes(self):
        return self.w3d.shape[0]

    def evidence_3d(self, scores):
        return softplus(np.asarray(scores, dtype=np.float64) @ self.w3d.T + self.b3d)

    def evidence_2d(self, scores):
        return softplus(np.asarray(scores, dtype=np.float64) @ self.w2d.T + self.b2d)

    def params(self):
        return {n: getattr(self, n) for n in self.NAMES}

    @classmethod
    def from_params(cls, p):
        return cls(**{n: p[n] for n in cls.NAMES})


@dataclass(eq=False)
class FusionModel:
    heads: EvidenceHeads
    net: ScoreNet

    @property
    def num_classes(self):
        return self.heads.num_classes

    def copy(self):
        return FusionModel(
            EvidenceHeads.from_params({k: v.copy() for k, v in self.heads.params().items()}),
            ScoreNet.from_params({k: v.copy() for k, v in self.net.params().items()}),
        )


def init_params(seed=0, num_classes=3, kappa=25.0) -> FusionModel:
    """Seeded initial model.

    Score-net weights and biases are uniform in ``+-1/sqrt(fan_in)``. Evidence
    heads start as ``kappa * I`` with zero bias, so initial evidence is
    ``softplus(kappa * scores)``.
    """
    rng = np.random.default_rng(seed)
    blocks = []
    for fan_in, fan_out in zip(SCORE_LAYERS[:-1], SCORE_LAYERS[1:]):
        bound = math.sqrt(1.0 / fan_in)
        blocks.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)))
        blocks.append(rng.uniform(-bound, bound, size=fan_out))
    net = ScoreNet(*blocks)
    eye = np.eye(num_classes) * kappa
    heads = EvidenceHeads(eye.copy(), np.zeros(num_classes), eye.copy(), np.zeros(num_classes))
    return FusionModel(heads, net)


# ---------------------------------------------------------------------------
# score network


def _check_features(x):
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x = np.atleast_2d(x)
    if x.shape[-1] != 5 or x.ndim != 2:
        raise DimensionError(f"score features must have 5 channels, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise InvalidFeatureError("score features must be finite")
    return x, single


def _score_logits(net, x):
    z1 = x @ net.w1.T + net.b1
    a1 = np.maximum(z1, 0.0)
    z2 = a1 @ net.w2.T + net.b2
    a2 = np.maximum(z2, 0.0)
    z3 = (a2 @ net.w3.T + net.b3)[:, 0]
    return z3, (x, z1, a1, z2, a2)


def score_forward(net: ScoreNet, features):
    """Fused objectness in (0, 1) for one 5-vector or a (K, 5) batch."""
    x, single = _check_features(features)
    z, _ = _score_logits(net, x)
    p = sigmoid(z)
    return float(p[0]) if single else p


def _bce_with_logits(z, t):
    return softplus(z) - t * z


def _objective_masks(x, targets, ignore):
    t = np.asarray(targets, dtype=np.float64).reshape(-1)
    if t.shape[0] != x.shape[0]:
        raise DimensionError("one target per feature row is required")
    if not np.all((t == 0) | (t == 1)):
        raise InvalidParameterError("targets must be 0 or 1")
    keep = np.ones_like(t, dtype=bool) if ignore is None else ~np.asarray(ignore, dtype=bool)
    return t, keep & (t == 1), keep & (t == 0)


def score_loss(net: ScoreNet, features, targets, ignore=None):
    """Objectness loss only; see :func:`score_backward`."""
    x, _ = _check_features(features)
    t, pos, neg = _objective_masks(x, targets, ignore)
    z, _ = _score_logits(net, x)
    bce = _bce_with_logits(z, t)
    return sum(float(bce[mask].sum() / mask.sum()) for mask in (pos, neg) if mask.any())


def score_backward(net: ScoreNet, features, targets, ignore=None):
    """Objectness loss and its gradients.

    The loss is the mean BCE over positive targets plus the mean BCE over
    negative targets; an empty side contributes zero. ``ignore`` optionally
    drops entries from both sides.

    Returns ``(loss, grads, dfeatures)``.
    """
    x, _ = _check_features(features)
    t, pos, neg = _objective_masks(x, targets, ignore)
    z, (x, z1, a1, z2, a2) = _score_logits(net, x)
    bce = _bce_with_logits(z, t)
    loss = 0.0
    weight = np.zeros_like(t)
    for mask in (pos, neg):
        cnt = int(mask.sum())
        if cnt:
            loss += float(bce[mask].sum() / cnt)
            weight[mask] = 1.0 / cnt
    dz3 = (sigmoid(z) - t) * weight
    g = {}
    g["w3"] = dz3[None, :] @ a2
    g["b3"] = np.array([dz3.sum()])
    da2 = dz3[:, None] * net.w3
    dz2 = da2 * (z2 > 0)
    g["w2"] = dz2.T @ a1
    g["b2"] = dz2.sum(axis=0)
    da1 = dz2 @ net.w2
    dz1 = da1 * (z1 > 0)
    g["w1"] = dz1.T @ x
    g["b1"] = dz1.sum(axis=0)
    dx = dz1 @ net.w1
    return loss, g, dx


# ---------------------------------------------------------------------------
# sample-specific (evidential) loss


def _trigamma(x):
    return zeta(2.0, x)


def _kl_uniform(alpha, with_grad=True):
    """KL(Dir(alpha) || Dir(1, ..., 1)) row-wise, with its gradient."""
    h = alpha.shape[-1]
    s = alpha.sum(axis=-1)
    kl = (
        gammaln(s) - gammaln(alpha).sum(axis=-1) - gammaln(h)
        + ((alpha - 1.0) * (digamma(alpha) - digamma(s)[..., None])).sum(axis=-1)
    )
    if not with_grad:
        return kl, None
    grad = (alpha - 1.0) * _trigamma(alpha) - ((s - h) * _trigamma(s))[..., None]
    return kl, grad


def _ssl_rows(alpha, y, lambda_t, with_grad=True):
    s = alpha.sum(axis=-1)
    ce = (y * (digamma(s)[..., None] - digamma(alpha))).sum(axis=-1)
    adjusted = y + (1.0 - y) * alpha
    kl, dkl = _kl_uniform(adjusted, with_grad)
    value = ce + lambda_t * kl
    if not with_grad:
        return value, None
    dce = y.sum(axis=-1)[..., None] * _trigamma(s)[..., None] - y * _trigamma(alpha)
    grad = dce + lambda_t * dkl * (1.0 - y)
    return value, grad


def _check_ssl(alpha, y, lambda_t):
    alpha = np.asarray(alpha, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if alpha.shape != y.shape:
        raise DimensionError(f"alpha {alpha.shape} and target {y.shape} differ in shape")
    if not np.all(np.isfinite(alpha)) or np.any(alpha < 1.0):
        raise InvalidParameterError("Dirichlet parameters must be finite and >= 1")
    if lambda_t < 0:
        raise InvalidParameterError("lambda_t must be non-negative")
    return alpha, y


def ssl_loss(alpha, y, lambda_t=1.0):
    """Adjusted cross-entropy plus annealed KL to the uniform Dirichlet.

    Works on a single vector or row-wise on a batch (returns the sum).
    """
    alpha, y = _check_ssl(alpha, y, lambda_t)
    value, _ = _ssl_rows(alpha, y, lambda_t, with_grad=False)
    return float(np.sum(value))


def ssl_loss_grad(alpha, y, lambda_t=1.0):
    alpha, y = _check_ssl(alpha, y, lambda_t)
    value, grad = _ssl_rows(alpha, y, lambda_t)
    return float(np.sum(value)), grad


# ---------------------------------------------------------------------------
# per-frame batch and total loss


@dataclass(eq=False)
class PairBatch:
    """Arrays describing the K hypothetical pairs of one frame.

    ``geom`` holds iou, objs3d, objs2d and dis per pair. ``labels`` is the
    ground-truth class index of a pair or -1 when the pair has none; only
    labelled pairs contribute classification terms.
    """

    scores3d: np.ndarray
    scores2d: np.ndarray
    matched: np.ndarray
    geom: np.ndarray
    targets: np.ndarray
    labels: np.ndarray
    pair_index: list = field(default_factory=list)

    def __len__(self):
        return self.geom.shape[0]


def _opinion_arrays(r):
    e = softplus(r)
    h = e.shape[-1]
    s = e.sum(axis=-1) + h
    return e, s, e / s[:, None], h / s


def forward_pairs(model: FusionModel, batch: PairBatch):
    """Vectorised class fusion for a batch. Returns a dict of intermediates."""
    hd = model.heads
    h = model.num_classes
    r3 = batch.scores3d @ hd.w3d.T + hd.b3d
    r2 = batch.scores2d @ hd.w2d.T + hd.b2d
    e3, s3, b3, u3 = _opinion_arrays(r3)
    e2, s2, b2, u2 = _opinion_arrays(r2)
    m = batch.matched
    c = b3.sum(axis=1) * b2.sum(axis=1) - (b3 * b2).sum(axis=1)
    d = 1.0 - c
    num = b3 * b2 + b3 * u2[:, None] + b2 * u3[:, None]
    bf = np.where(m[:, None], num / d[:, None], b3)
    uf = np.where(m, u3 * u2 / d, u3)
    ef = bf * (h / uf)[:, None]
    return dict(
        r3=r3, r2=r2, e3=e3, s3=s3, b3=b3, u3=u3, e2=e2, s2=s2, b2=b2, u2=u2,
        c=c, d=d, num=num, bf=bf, uf=uf, ef=ef,
    )


def score_features(batch: PairBatch, uf):
    return np.column_stack([batch.geom, uf])


def total_loss(model: FusionModel, batch: PairBatch, lambda_t=1.0, with_grad=False):
    """Frame loss: evidential terms over labelled pairs plus objectness BCE.

    Matched pairs add the loss of the fused, 3D and 2D Dirichlets; fallback
    pairs add only the 3D term.
    """
    if not lambda_t >= 0:
        raise InvalidParameterError("lambda_t must be non-negative")
    h = model.num_classes
    k = len(batch)
    if k == 0:
        if not with_grad:
            return 0.0
        return 0.0, {n: np.zeros_like(v) for n, v in {**model.heads.params(), **model.net.params()}.items()}
    fw = forward_pairs(model, batch)
    m = batch.matched
    labelled = batch.labels >= 0
    y = np.zeros((k, h))
    y[labelled, batch.labels[labelled]] = 1.0

    # fused, 2D and 3D Dirichlets stacked into one evaluation; alpha >= 1 by construction
    rows_m = labelled & m
    parts = ((fw["e3"], labelled), (fw["e2"], rows_m), (fw["ef"], rows_m))
    alpha = np.concatenate([e[rows] for e, rows in parts]) + 1.0
    yy = np.concatenate([y[rows] for _, rows in parts])
    loss = 0.0
    g_alpha = None
    if alpha.shape[0]:
        v, g_alpha = _ssl_rows(alpha, yy, lambda_t, with_grad)
        loss = float(v.sum())

    feats = score_features(batch, fw["uf"])
    if not with_grad:
        return loss + score_loss(model.net, feats, batch.targets)
    obj_loss, net_grads, dx = score_backward(model.net, feats, batch.targets)
    loss += obj_loss
    ga3, ga2, gaf = (np.zeros((k, h)) for _ in range(3))
    start = 0
    for out, (_, rows) in zip((ga3, ga2, gaf), parts):
        n = int(rows.sum())
        out[rows] = g_alpha[start:start + n] if n else 0.0
        start += n

    # back through fused evidence ef = H * bf / uf
    uf, bf = fw["uf"], fw["bf"]
    g_bf = gaf * (h / uf)[:, None]
    g_uf = dx[:, 4] - (gaf * bf).sum(axis=1) * h / uf**2

    # Dempster combination, matched rows only
    d, num = fw["d"], fw["num"]
    b3, u3, b2, u2 = fw["b3"], fw["u3"], fw["b2"], fw["u2"]
    mm = m.astype(np.float64)
    g_num = g_bf / d[:, None] * mm[:, None]
    g_d = (-(g_bf * num).sum(axis=1) / d**2 - g_uf * u3 * u2 / d**2) * mm
    g_c = -g_d
    g_b3 = g_num * (b2 + u2[:, None]) + g_c[:, None] * (b2.sum(axis=1)[:, None] - b2)
    g_b2 = g_num * (b3 + u3[:, None]) + g_c[:, None] * (b3.sum(axis=1)[:, None] - b3)
    g_u3 = mm * (g_uf * u2 / d + (g_num * b2).sum(axis=1))
    g_u2 = mm * (g_uf * u3 / d + (g_num * b3).sum(axis=1))
    # fallback rows pass the 3D opinion through unchanged
    fb = 1.0 - mm
    g_b3 = g_b3 + fb[:, None] * g_bf
    g_u3 = g_u3 + fb * g_uf

    grads = dict(net_grads)
    for tag, e, s, gb, gu, ga, scores in (
        ("3d", fw["e3"], fw["s3"], g_b3, g_u3, ga3, batch.scores3d),
        ("2d", fw["e2"], fw["s2"], g_b2, g_u2, ga2, batch.scores2d),
    ):
        g_s = -(gb * e).sum(axis=1) / s**2 - gu * h / s**2
        g_e = gb / s[:, None] + g_s[:, None] + ga
        if tag == "2d":
            g_e = g_e * mm[:, None]
        g_r = g_e * sigmoid(fw["r" + tag[0]])
        grads["w" + tag] = g_r.T @ scores
        grads["b" + tag] = g_r.sum(axis=0)
    return loss, grads


# ---------------------------------------------------------------------------
# optimizers


@dataclass(eq=False)
class AdamState:
    m: dict
    v: dict
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kw):
        return cls({k: np.zeros_like(p) for k, p in params.items()},
                   {k: np.zeros_like(p) for k, p in params.items()}, **kw)


def _check_shapes(params, grads):
    for k, p in params.items():
        if k not in grads or np.shape(grads[k]) != np.shape(p):
            raise DimensionError(f"gradient for {k!r} missing or mis-shaped")


def adam_step(params, grads, state: AdamState, lr=0.003, bias_correction=True):
    """One bias-corrected Adam update. Returns ``(new_params, new_state)``."""
    _check_shapes(params, grads)
    t = state.t + 1
    new_p, new_m, new_v = {}, {}, {}
    for k, p in params.items():
        g = np.asarray(grads[k], dtype=np.float64)
        m = state.beta1 * state.m[k] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[k] + (1.0 - state.beta2) * g * g
        if bias_correction:
            m_hat = m / (1.0 - state.beta1**t)
            v_hat = v / (1.0 - state.beta2**t)
        else:
            m_hat, v_hat = m, v
        new_p[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
        new_m[k], new_v[k] = m, v
    return new_p, AdamState(new_m, new_v, t, state.beta1, state.beta2, state.eps)


def sgd_step(params, grads, lr=0.003):
    _check_shapes(params, grads)
    return {k: p - lr * np.asarray(grads[k], dtype=np.float64) for k, p in params.items()}


# ---------------------------------------------------------------------------
# checkpoints


def _blocks(model):
    hp = model.heads.params()
    np_ = model.net.params()
    yield "head3d.weight", hp["w3d"]
    yield "head3d.bias", hp["b3d"].reshape(1, -1)
    yield "head2d.weight", hp["w2d"]
    yield "head2d.bias", hp["b2d"].reshape(1, -1)
    for i in (1, 2, 3):
        yield f"score.l{i}.weight", np_[f"w{i}"]
        yield f"score.l{i}.bias", np_[f"b{i}"].reshape(1, -1)


def dump_checkpoint(model: FusionModel) -> str:
    lines = [f"{CHECKPOINT_MAGIC} H={model.num_classes}"]
    for name, arr in _blocks(model):
        arr = np.atleast_2d(arr)
        lines.append(f"{name} {arr.shape[0]} {arr.shape[1]}")
        for row in arr:
            lines.append(" ".join(repr(float(v)) for v in row))
    return "\n".join(lines) + "\n"


def load_checkpoint(text: str, source=None) -> FusionModel:
    lines = text.splitlines()
    if not lines or not lines[0].startswith(CHECKPOINT_MAGIC + " H="):
        raise ParseError("missing checkpoint header", 1, source)
    try:
        h = int(lines[0][len(CHECKPOINT_MAGIC) + 3:])
    except ValueError:
        raise ParseError("bad class count in header", 1, source) from None
    if h < 2:
        raise ParseError("class count must be >= 2", 1, source)
    expected = {
        "head3d.weight": (h, h), "head3d.bias": (1, h), "head2d.weight": (h, h), "head2d.bias": (1, h),
        "score.l1.weight": (18, 5), "score.l1.bias": (1, 18), "score.l2.weight": (36, 18),
        "score.l2.bias": (1, 36), "score.l3.weight": (1, 36), "score.l3.bias": (1, 1),
    }
    blocks = {}
    pos = 1
    while pos < len(lines):
        if not lines[pos].strip():
            pos += 1
            continue
        parts = lines[pos].split()
        if len(parts) != 3 or parts[0] not in expected:
            raise ParseError(f"unexpected block header {lines[pos]!r}", pos + 1, source)
        name = parts[0]
        try:
            shape = (int(parts[1]), int(parts[2]))
        except ValueError:
            raise ParseError(f"bad shape for {name}", pos + 1, source) from None
        if shape != expected[name]:
            raise ParseError(f"{name} has shape {shape}, expected {expected[name]}", pos + 1, source)
        rows = []
        for r in range(shape[0]):
            ln = pos + 1 + r
            if ln >= len(lines):
                raise ParseError(f"truncated block {name}", ln + 1, source)
            try:
                row = [float(v) for v in lines[ln].split()]
            except ValueError:
                raise ParseError(f"non-numeric value in {name}", ln + 1, source) from None
            if len(row) != shape[1] or not all(math.isfinite(v) for v in row):
                raise ParseError(f"row of {name} must hold {shape[1]} finite values", ln + 1, source)
            rows.append(row)
        blocks[name] = np.array(rows)
        pos += 1 + shape[0]
    missing = set(expected) - set(blocks)
    if missing:
        raise ParseError(f"missing blocks: {', '.join(sorted(missing))}", None, source)
    heads = EvidenceHeads(blocks["head3d.weight"], blocks["head3d.bias"][0],
                          blocks["head2d.weight"], blocks["head2d.bias"][0])
    net = ScoreNet(*(blocks[f"score.l{i}.{kind}"] if kind == "weight" else blocks[f"score.l{i}.bias"][0]
                     for i in (1, 2, 3) for kind in ("weight", "bias")))
    return FusionModel(heads, net)
