"""Box geometry in the KITTI rectified camera frame.

Camera axes: x right, y down, z forward. A 3D box location is the centre of
its bottom face, so the box occupies ``[y - h, y]`` vertically. Bird's-eye
view (BEV) geometry lives in the x-z plane.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CalibrationError

MIN_DEPTH = 0.1


@dataclass(frozen=True)
class Box2D:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        vals = (self.x1, self.y1, self.x2, self.y2)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite 2D box {vals}")
        if self.x1 > self.x2 or self.y1 > self.y2:
            raise ValueError(f"2D box corners out of order {vals}")

    @property
    def width(self):
        return self.x2 - self.x1

    @property
    def height(self):
        return self.y2 - self.y1

    @property
    def area(self):
        return self.width * self.height

    def as_array(self):
        return np.array([self.x1, self.y1, self.x2, self.y2])


@dataclass(frozen=True)
class Box3D:
    x: float
    y: float
    z: float
    h: float
    w: float
    l: float  # noqa: E741
    ry: float

    def __post_init__(self):
        vals = (self.x, self.y, self.z, self.h, self.w, self.l, self.ry)
        if not all(math.isfinite(v) for v in vals):
            raise ValueError(f"non-finite 3D box {vals}")
        if self.h <= 0 or self.w <= 0 or self.l <= 0:
            raise ValueError(f"3D box dimensions must be positive, got h={self.h} w={self.w} l={self.l}")
        if not -math.pi - 1e-9 <= self.ry <= math.pi + 1e-9:
            raise ValueError(f"yaw must lie in [-pi, pi], got {self.ry}")

    @property
    def center(self):
        """Geometric centre (the stored location is the bottom-face centre)."""
        return np.array([self.x, self.y - self.h / 2.0, self.z])

    @property
    def volume(self):
        return self.h * self.w * self.l

    def translated(self, dx=0.0, dy=0.0, dz=0.0):
        return Box3D(self.x + dx, self.y + dy, self.z + dz, self.h, self.w, self.l, self.ry)


def wrap_angle(a):
    """Map an angle into ``[-pi, pi]``."""
    a = math.fmod(a + math.pi, 2.0 * math.pi)
    if a < 0:
        a += 2.0 * math.pi
    return a - math.pi


@dataclass(frozen=True, eq=False)
class Calibration:
    p2: np.ndarray
    r0: np.ndarray = field(default_factory=lambda: np.eye(3))
    tr_velo_to_cam: np.ndarray = field(
        default_factory=lambda: np.array([[0.0, -1.0, 0.0, 0.0], [0.0, 0.0, -1.0, 0.0], [1.0, 0.0, 0.0, 0.0]])
    )
    image_width: float = 1242.0
    image_height: float = 375.0

    def __post_init__(self):
        for name, shape in (("p2", (3, 4)), ("r0", (3, 3)), ("tr_velo_to_cam", (3, 4))):
            m = np.array(getattr(self, name), dtype=np.float64)
            if m.shape != shape:
                raise CalibrationError(f"{name} must have shape {shape}, got {m.shape}")
            if not np.all(np.isfinite(m)):
                raise CalibrationError(f"{name} contains non-finite values")
            m.setflags(write=False)
            object.__setattr__(self, name, m)
        if not (self.image_width > 0 and self.image_height > 0):
            raise CalibrationError("image dimensions must be positive")

    def rect_to_velo(self, pts):
        """Map (N, 3) rectified-camera points into the LiDAR frame."""
        t = np.eye(4)
        t[:3, :4] = self.tr_velo_to_cam
        r = np.eye(4)
        r[:3, :3] = self.r0
        full = r @ t
        if not np.isfinite(np.linalg.cond(full)) or np.linalg.cond(full) > 1e12:
            raise CalibrationError("rectification/velodyne transform is singular")
        inv = np.linalg.inv(full)
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        homo = np.hstack([pts, np.ones((pts.shape[0], 1))])
        return (homo @ inv.T)[:, :3]

    def velo_to_rect(self, pts):
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        cam = pts @ self.tr_velo_to_cam[:, :3].T + self.tr_velo_to_cam[:, 3]
        return cam @ self.r0.T


def box3d_corners(b: Box3D) -> np.ndarray:
    """The 8 cuboid corners as an (8, 3) array; bottom face first."""
    l, w, h = b.l / 2.0, b.w / 2.0, b.h  # noqa: E741
    xs = np.array([l, l, -l, -l, l, l, -l, -l])
    ys = np.array([0.0, 0.0, 0.0, 0.0, -h, -h, -h, -h])
    zs = np.array([w, -w, -w, w, w, -w, -w, w])
    c, s = math.cos(b.ry), math.sin(b.ry)
    rot = np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])
    return (rot @ np.vstack([xs, ys, zs])).T + np.array([b.x, b.y, b.z])


def project_points(pts, p2):
    pts = np.atleast_2d(pts)
    homo = np.hstack([pts, np.ones((pts.shape[0], 1))]) @ np.asarray(p2).T
    return homo[:, :2] / homo[:, 2:3]


def projected_hull(b: Box3D, calib: Calibration):
    """Unclipped image-plane hull ``(x1, y1, x2, y2)`` or None.

    Corners at depth <= ``MIN_DEPTH`` are dropped; at least two must remain.
    """
    corners = box3d_corners(b)
    front = corners[corners[:, 2] > MIN_DEPTH]
    if front.shape[0] < 2:
        return None
    uv = project_points(front, calib.p2)
    return float(uv[:, 0].min()), float(uv[:, 1].min()), float(uv[:, 0].max()), float(uv[:, 1].max())


def project_to_image(b: Box3D, calib: Calibration):
    """Axis-aligned image box of a projected 3D box, clipped to the image.

    Returns None when the box is behind the camera or falls outside the image.
    """
    hull = projected_hull(b, calib)
    if hull is None:
        return None
    x1 = min(max(hull[0], 0.0), calib.image_width)
    y1 = min(max(hull[1], 0.0), calib.image_height)
    x2 = min(max(hull[2], 0.0), calib.image_width)
    y2 = min(max(hull[3], 0.0), calib.image_height)
    if x2 <= x1 or y2 <= y1:
        return None
    return Box2D(x1, y1, x2, y2)


def iou_axis_aligned(a: Box2D, b: Box2D) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    union = a.area + b.area - inter
    if union <= 0:
        return 0.0
    return min(1.0, inter / union)


def bev_polygon(b: Box3D) -> np.ndarray:
    """Footprint of the box in the x-z plane as a (4, 2) counter-clockwise polygon."""
    poly = box3d_corners(b)[:4][:, [0, 2]]
    if _signed_area(poly) < 0:
        poly = poly[::-1]
    return poly


def _signed_area(poly):
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(poly) -> float:
    if len(poly) < 3:
        return 0.0
    return abs(_signed_area(np.asarray(poly)))


def clip_convex(subject, clip):
    """Sutherland-Hodgman clipping of ``subject`` against convex CCW ``clip``."""
    out = [tuple(p) for p in subject]
    n = len(clip)
    for k in range(n):
        if not out:
            break
        ax, ay = clip[k]
        bx, by = clip[(k + 1) % n]
        ex, ey = bx - ax, by - ay
        inp, out = out, []

        def side(p):
            return ex * (p[1] - ay) - ey * (p[0] - ax)

        prev = inp[-1]
        sp = side(prev)
        for cur in inp:
            sc = side(cur)
            if sc >= 0:
                if sp < 0:
                    out.append(_intersect(prev, cur, sp, sc))
                out.append(cur)
            elif sp >= 0:
                out.append(_intersect(prev, cur, sp, sc))
            prev, sp = cur, sc
    return np.array(out) if out else np.zeros((0, 2))


def _intersect(p, q, sp, sq):
    t = sp / (sp - sq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def bev_intersection_area(a: Box3D, b: Box3D) -> float:
    # cheap reject on circumscribed circles
    ra = 0.5 * math.hypot(a.l, a.w)
    rb = 0.5 * math.hypot(b.l, b.w)
    if math.hypot(a.x - b.x, a.z - b.z) >= ra + rb:
        return 0.0
    return polygon_area(clip_convex(bev_polygon(a), bev_polygon(b)))


def _ordered(value_fn, a, b):
    # canonical argument order keeps both IoUs exactly symmetric
    ka = (a.x, a.y, a.z, a.h, a.w, a.l, a.ry)
    kb = (b.x, b.y, b.z, b.h, b.w, b.l, b.ry)
    return value_fn(a, b) if ka <= kb else value_fn(b, a)


def rotated_bev_iou(a: Box3D, b: Box3D) -> float:
    def _iou(p, q):
        inter = bev_intersection_area(p, q)
        if inter <= 0:
            return 0.0
        union = p.l * p.w + q.l * q.w - inter
        return 0.0 if union <= 0 else min(1.0, max(0.0, inter / union))

    return _ordered(_iou, a, b)


def iou_3d(a: Box3D, b: Box3D) -> float:
    """Volumetric IoU: BEV overlap area times vertical interval overlap."""

    def _iou(p, q):
        dy = min(p.y, q.y) - max(p.y - p.h, q.y - q.h)
        if dy <= 0:
            return 0.0
        inter = bev_intersection_area(p, q) * dy
        if inter <= 0:
            return 0.0
        union = p.volume + q.volume - inter
        return 0.0 if union <= 0 else min(1.0, max(0.0, inter / union))

    return _ordered(_iou, a, b)


def planar_distance_normalized(b: Box3D, calib: Calibration, max_range: float = 80.0) -> float:
    """Ground-plane distance of the box centre from the LiDAR, scaled to [0, 1]."""
    if not max_range > 0:
        raise ValueError("max_range must be positive")
    p = calib.rect_to_velo(b.center)[0]
    return min(1.0, math.hypot(p[0], p[1]) / max_range)
