"""Text formats in the KITTI object-detection convention.

Detector outputs extend the usual lines with per-class score columns:

* 3D: the 15 label fields, the objectness, then H class scores.
* 2D: ``type x1 y1 x2 y2 objectness s1 ... sH``.

Fused results are plain 16-field KITTI result lines; uncertainties go to a
``<frame>.unc.txt`` sidecar with ``<line-index> <uncertainty>`` lines.
"""

from __future__ import annotations

import math
import os
import re
import tempfile
from dataclasses import dataclass, fields

import numpy as np

from .errors import ConfigError, ParseError
from .geometry import Box2D, Box3D, Calibration, wrap_angle
from .matching import Detection2D, Detection3D
from .pipeline import DEFAULT_CLASSES, PipelineConfig

FRAME_RE = re.compile(r"^(\d{6})\.txt$")
DONTCARE = "DontCare"


class DetectionList(list):
    """A list of parsed records that also remembers how many lines were skipped."""

    def __init__(self, items=(), skipped=0):
        super().__init__(items)
        self.skipped = skipped


@dataclass(frozen=True)
class GroundTruthRecord:
    type: str
    truncation: float
    occlusion: int
    alpha: float
    bbox: Box2D
    h: float
    w: float
    l: float  # noqa: E741
    x: float
    y: float
    z: float
    ry: float
    score: float | None = None

    @property
    def is_dontcare(self):
        return self.type == DONTCARE

    @property
    def box3d(self) -> Box3D:
        return Box3D(self.x, self.y, self.z, self.h, self.w, self.l, self.ry)


def _num(tok):
    v = float(tok)
    if not math.isfinite(v):
        raise ValueError(f"non-finite value {tok!r}")
    return v


def _int(tok):
    v = _num(tok)
    if v != int(v):
        raise ValueError(f"expected an integer, got {tok!r}")
    return int(v)


def _lines(text):
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if line:
            yield no, line


# ---------------------------------------------------------------------------
# calibration

_CALIB_KEYS = {"P2": 12, "R0_rect": 9, "Tr_velo_to_cam": 12}


def parse_calib(text: str, source=None) -> Calibration:
    values = {}
    size = (1242.0, 375.0)
    for no, line in _lines(text):
        if ":" not in line:
            raise ParseError("expected 'KEY: values'", no, source)
        key, _, rest = line.partition(":")
        key = key.strip()
        toks = rest.split()
        try:
            nums = [_num(t) for t in toks]
        except ValueError:
            raise ParseError(f"non-numeric value for {key}", no, source) from None
        if key == "image_size":
            if len(nums) != 2 or nums[0] <= 0 or nums[1] <= 0:
                raise ParseError("image_size needs two positive values", no, source)
            size = (nums[0], nums[1])
        elif key in _CALIB_KEYS:
            if len(nums) != _CALIB_KEYS[key]:
                raise ParseError(f"{key} needs {_CALIB_KEYS[key]} values, got {len(nums)}", no, source)
            values[key] = nums
    for key in _CALIB_KEYS:
        if key not in values:
            raise ParseError(f"missing calibration key {key}", None, source)
    return Calibration(
        p2=np.array(values["P2"]).reshape(3, 4),
        r0=np.array(values["R0_rect"]).reshape(3, 3),
        tr_velo_to_cam=np.array(values["Tr_velo_to_cam"]).reshape(3, 4),
        image_width=size[0],
        image_height=size[1],
    )


def format_calib(calib: Calibration) -> str:
    def row(key, arr):
        return f"{key}: " + " ".join(f"{v:.12e}" for v in np.ravel(arr))

    return "\n".join([
        row("P2", calib.p2),
        row("R0_rect", calib.r0),
        row("Tr_velo_to_cam", calib.tr_velo_to_cam),
        f"image_size: {calib.image_width:.12e} {calib.image_height:.12e}",
    ]) + "\n"


# ---------------------------------------------------------------------------
# detections


def _box3d_fields(toks):
    h, w, l, x, y, z, ry = (_num(t) for t in toks[8:15])  # noqa: E741
    return Box3D(x, y, z, h, w, l, ry)


def _box2d_fields(toks):
    return Box2D(*(_num(t) for t in toks))


def _class_index(name, classes, num_classes):
    if name not in classes:
        return None
    idx = classes.index(name)
    return idx if idx < num_classes else None


def parse_det3d(text: str, num_classes: int, classes=DEFAULT_CLASSES, source=None) -> DetectionList:
    expected = 16 + num_classes
    out = DetectionList()
    for no, line in _lines(text):
        toks = line.split()
        if len(toks) != expected:
            raise ParseError(f"expected {expected} fields, got {len(toks)}", no, source)
        idx = _class_index(toks[0], classes, num_classes)
        try:
            for t in toks[1:4]:
                _num(t)
            bbox = _box2d_fields(toks[4:8])
            box = _box3d_fields(toks)
            objectness = _num(toks[15])
            scores = [_num(t) for t in toks[16:]]
            if idx is None:
                out.skipped += 1
                continue
            out.append(Detection3D(box, objectness, scores, idx, bbox))
        except (ValueError, OverflowError) as exc:
            raise ParseError(str(exc), no, source) from None
    return out


def parse_det2d(text: str, num_classes: int, classes=DEFAULT_CLASSES, source=None) -> DetectionList:
    expected = 6 + num_classes
    out = DetectionList()
    for no, line in _lines(text):
        toks = line.split()
        if len(toks) != expected:
            raise ParseError(f"expected {expected} fields, got {len(toks)}", no, source)
        idx = _class_index(toks[0], classes, num_classes)
        try:
            box = _box2d_fields(toks[1:5])
            objectness = _num(toks[5])
            scores = [_num(t) for t in toks[6:]]
            if idx is None:
                out.skipped += 1
                continue
            out.append(Detection2D(box, objectness, scores, idx))
        except (ValueError, OverflowError) as exc:
            raise ParseError(str(exc), no, source) from None
    return out


def _r4(v):
    return float(f"{v:.4f}")


def _r4_angle(a):
    # rounding must not push a yaw outside [-pi, pi]
    r = _r4(a)
    if abs(r) > math.pi:
        r = math.copysign(3.1415, r)
    return r


def observation_angle(x, z, ry):
    return wrap_angle(ry - math.atan2(x, z))


def _label_line(type_, trunc, occ, box2d, box3d, extra=()):
    x, y, z, ry = _r4(box3d.x), _r4(box3d.y), _r4(box3d.z), _r4_angle(box3d.ry)
    alpha = observation_angle(x, z, ry)
    bb = box2d.as_array() if box2d is not None else np.zeros(4)
    nums = [trunc] + [None] + [alpha, *bb, box3d.h, box3d.w, box3d.l, x, y, z, ry, *extra]
    parts = [type_]
    for k, v in enumerate(nums):
        parts.append(str(occ) if k == 1 else f"{v:.4f}")
    return " ".join(parts)


def format_det3d(dets, classes=DEFAULT_CLASSES) -> str:
    lines = []
    for d in dets:
        extra = (d.objectness, *d.class_scores)
        lines.append(_label_line(classes[d.class_label], -1.0, -1, d.image_box, d.box, extra))
    return "".join(line + "\n" for line in lines)


def format_det2d(dets, classes=DEFAULT_CLASSES) -> str:
    lines = []
    for d in dets:
        nums = [*d.box.as_array(), d.objectness, *d.class_scores]
        lines.append(" ".join([classes[d.class_label]] + [f"{v:.4f}" for v in nums]))
    return "".join(line + "\n" for line in lines)


def write_results(dets, calib: Calibration | None = None, classes=DEFAULT_CLASSES, include_class_scores=False):
    """KITTI result text and uncertainty sidecar text for fused detections.

    With ``include_class_scores`` the fused beliefs are appended, which makes
    the output readable by :func:`parse_det3d`.
    """
    lines, unc = [], []
    for k, d in enumerate(dets):
        extra = (d.score, *d.beliefs) if include_class_scores else (d.score,)
        lines.append(_label_line(classes[d.class_label], -1.0, -1, d.box2d, d.box3d, extra))
        unc.append(f"{k} {d.uncertainty:.6f}")
    return "".join(s + "\n" for s in lines), "".join(s + "\n" for s in unc)


def parse_uncertainty(text: str, source=None) -> dict:
    out = {}
    for no, line in _lines(text):
        toks = line.split()
        if len(toks) != 2:
            raise ParseError("expected '<line-index> <uncertainty>'", no, source)
        try:
            idx, u = _int(toks[0]), _num(toks[1])
        except (ValueError, OverflowError):
            raise ParseError("malformed uncertainty line", no, source) from None
        if idx < 0 or not 0.0 <= u <= 1.0:
            raise ParseError("index must be >= 0 and uncertainty in [0, 1]", no, source)
        out[idx] = u
    return out


# ---------------------------------------------------------------------------
# labels / results


def _parse_objects(text, source, strict):
    out = []
    for no, line in _lines(text):
        toks = line.split()
        if len(toks) not in (15, 16):
            raise ParseError(f"expected 15 or 16 fields, got {len(toks)}", no, source)
        try:
            trunc = _num(toks[1])
            occ = _int(toks[2])
            alpha = _num(toks[3])
            bbox = _box2d_fields(toks[4:8])
            h, w, l, x, y, z, ry = (_num(t) for t in toks[8:15])  # noqa: E741
            score = _num(toks[15]) if len(toks) == 16 else None
            rec = GroundTruthRecord(toks[0], trunc, occ, alpha, bbox, h, w, l, x, y, z, ry, score)
            if strict and not rec.is_dontcare:
                if not 0.0 <= trunc <= 1.0:
                    raise ValueError(f"truncation {trunc} outside [0, 1]")
                if occ not in (0, 1, 2, 3):
                    raise ValueError(f"occlusion {occ} not in 0..3")
                rec.box3d  # validates dimensions and yaw
        except (ValueError, OverflowError) as exc:
            raise ParseError(str(exc), no, source) from None
        out.append(rec)
    return out


def parse_gt_labels(text: str, source=None):
    """KITTI label lines; ``DontCare`` rows are kept and flagged."""
    return _parse_objects(text, source, strict=True)


def parse_results(text: str, source=None):
    """KITTI result lines (label fields plus a score); -1 placeholders allowed."""
    return _parse_objects(text, source, strict=False)


def format_labels(records) -> str:
    lines = []
    for r in records:
        nums = [r.truncation, None, r.alpha, *r.bbox.as_array(), r.h, r.w, r.l, r.x, r.y, r.z, r.ry]
        if r.score is not None:
            nums.append(r.score)
        parts = [r.type] + [str(r.occlusion) if k == 1 else f"{v:.4f}" for k, v in enumerate(nums)]
        lines.append(" ".join(parts))
    return "".join(line + "\n" for line in lines)


# ---------------------------------------------------------------------------
# config

_INT_KEYS = {"epochs", "seed", "lambda_anneal_epochs"}


def load_config(text: str, base: PipelineConfig | None = None) -> PipelineConfig:
    """Parse ``key = value`` lines (``#`` starts a comment) onto defaults."""
    known = {f.name for f in fields(PipelineConfig)}
    values = {}
    for no, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {no}: expected 'key = value'")
        key, _, val = (s.strip() for s in line.partition("="))
        if key not in known:
            raise ConfigError(f"line {no}: unknown key {key!r}", key)
        try:
            if key == "classes":
                values[key] = tuple(s.strip() for s in val.split(",") if s.strip())
            elif key in _INT_KEYS:
                values[key] = int(val)
            else:
                v = float(val)
                if not math.isfinite(v):
                    raise ValueError
                values[key] = v
        except ValueError:
            raise ConfigError(f"line {no}: invalid value {val!r} for {key}", key) from None
    return (base or PipelineConfig()).replace(**values)


def dump_config(cfg: PipelineConfig) -> str:
    out = []
    for f in fields(PipelineConfig):
        v = getattr(cfg, f.name)
        if f.name == "classes":
            out.append(f"classes = {','.join(v)}")
        else:
            out.append(f"{f.name} = {v!r}")
    return "\n".join(out) + "\n"


# ---------------------------------------------------------------------------
# directories


def list_frames(directory) -> list:
    if not os.path.isdir(directory):
        return []
    ids = [m.group(1) for name in os.listdir(directory) if (m := FRAME_RE.match(name))]
    return sorted(ids)


def frame_path(directory, frame_id, suffix=".txt"):
    return os.path.join(directory, f"{frame_id}{suffix}")


def read_text(path):
    with open(path, encoding="utf-8", errors="replace") as fh:
        return fh.read()


def write_atomic(path, text):
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
