"""Oriented-rectangle and axis-aligned box geometry in double precision."""

from __future__ import annotations

import math
from typing import Optional, Sequence

import numpy as np

from .scene import GraspRect, ObjectBox

EPS = 1e-9

Point = tuple[float, float]


class ConvexPolygon:
    """Counter-clockwise convex polygon."""

    __slots__ = ("vertices",)

    def __init__(self, vertices: Sequence[Point]):
        pts = [(float(x), float(y)) for x, y in vertices]
        if len(pts) < 3:
            raise ValueError("polygon needs at least 3 vertices")
        if signed_area(pts) < 0:
            pts.reverse()
        self.vertices = tuple(pts)

    def area(self) -> float:
        return signed_area(self.vertices)

    def __repr__(self):
        return f"ConvexPolygon({list(self.vertices)!r})"


def signed_area(pts: Sequence[Point]) -> float:
    """Shoelace formula; positive for counter-clockwise order."""
    n = len(pts)
    if n < 3:
        return 0.0
    s = 0.0
    for i in range(n):
        x0, y0 = pts[i]
        x1, y1 = pts[(i + 1) % n]
        s += x0 * y1 - x1 * y0
    return 0.5 * s


def rect_corners(r: GraspRect) -> list[Point]:
    t = math.radians(r.theta_deg)
    c, s = math.cos(t), math.sin(t)
    hw, hh = 0.5 * r.w, 0.5 * r.h
    out = []
    for lx, ly in ((-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)):
        out.append((r.cx + c * lx - s * ly, r.cy + s * lx + c * ly))
    return out


def rect_to_polygon(r: GraspRect) -> ConvexPolygon:
    return ConvexPolygon(rect_corners(r))


def _clip(subject: list[Point], a: Point, b: Point) -> list[Point]:
    # keep the left side of a->b (interior of a CCW clip polygon); boundary counts as inside
    ax, ay = a
    ex, ey = b[0] - ax, b[1] - ay
    norm = math.hypot(ex, ey)
    if norm == 0.0:
        return subject

    def side(p: Point) -> float:
        return (ex * (p[1] - ay) - ey * (p[0] - ax)) / norm

    out: list[Point] = []
    n = len(subject)
    for i in range(n):
        cur = subject[i]
        prev = subject[i - 1]
        dc, dp = side(cur), side(prev)
        cur_in, prev_in = dc >= -EPS, dp >= -EPS
        if cur_in:
            if not prev_in:
                out.append(_lerp(prev, cur, dp, dc))
            out.append(cur)
        elif prev_in:
            out.append(_lerp(prev, cur, dp, dc))
    return out


def _lerp(p: Point, q: Point, dp: float, dq: float) -> Point:
    t = dp / (dp - dq)
    return (p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1]))


def clip_polygon(a: ConvexPolygon, b: ConvexPolygon) -> list[Point]:
    """Sutherland-Hodgman: the part of ``a`` inside ``b``."""
    poly = list(a.vertices)
    vb = b.vertices
    for i in range(len(vb)):
        if not poly:
            break
        poly = _clip(poly, vb[i], vb[(i + 1) % len(vb)])
    return poly


def convex_intersection_area(a: ConvexPolygon, b: ConvexPolygon) -> float:
    poly = clip_polygon(a, b)
    if len(poly) < 3:
        return 0.0
    area = signed_area(poly)
    if area <= EPS:
        return 0.0
    return min(area, a.area(), b.area())


def jaccard_rotated(r1: GraspRect, r2: GraspRect) -> float:
    """Intersection over union of two oriented rectangles."""
    p1, p2 = rect_to_polygon(r1), rect_to_polygon(r2)
    inter = convex_intersection_area(p1, p2)
    union = r1.w * r1.h + r2.w * r2.h - inter
    if union <= 0.0:
        return 0.0
    return min(1.0, max(0.0, inter / union))


def grasp_angle_diff(t1_deg: float, t2_deg: float) -> float:
    """Distance between two line orientations (180 degree periodic), in [0, 90]."""
    d = math.fmod(abs(float(t1_deg) - float(t2_deg)), 180.0)
    return min(d, 180.0 - d)


def aabb_iou(a: ObjectBox, b: ObjectBox) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


def aabb_iou_array(boxes: np.ndarray, box: np.ndarray) -> np.ndarray:
    """IoU of each row of ``boxes`` (N x 4, corner form) against one box."""
    iw = np.minimum(boxes[:, 2], box[2]) - np.maximum(boxes[:, 0], box[0])
    ih = np.minimum(boxes[:, 3], box[3]) - np.maximum(boxes[:, 1], box[1])
    inter = np.clip(iw, 0, None) * np.clip(ih, 0, None)
    area = (boxes[:, 2] - boxes[:, 0]) * (boxes[:, 3] - boxes[:, 1])
    barea = (box[2] - box[0]) * (box[3] - box[1])
    return inter / np.maximum(area + barea - inter, 1e-12)


def box_union(a: ObjectBox, b: ObjectBox) -> ObjectBox:
    return ObjectBox(
        id=-1,
        cls=-1,
        x1=min(a.x1, b.x1),
        y1=min(a.y1, b.y1),
        x2=max(a.x2, b.x2),
        y2=max(a.y2, b.y2),
    )


def box_intersection(a: ObjectBox, b: ObjectBox) -> Optional[ObjectBox]:
    """Overlap box, or ``None`` when the overlap has no positive area."""
    x1, y1 = max(a.x1, b.x1), max(a.y1, b.y1)
    x2, y2 = min(a.x2, b.x2), min(a.y2, b.y2)
    if x2 <= x1 or y2 <= y1:
        return None
    return ObjectBox(id=-1, cls=-1, x1=x1, y1=y1, x2=x2, y2=y2)
