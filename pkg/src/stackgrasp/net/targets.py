"""Training targets and output decoding for the dense detector and grasp heads."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from ..geometry import aabb_iou_array
from ..scene import GraspRect, ObjectBox, SceneAnnotation, normalize_angle
from ..tensor.ops import _sigmoid
from .config import ModelConfig


def angle_bin(theta_deg: float, n_bins: int = 19) -> int:
    """Bin of an angle in (-90, 90]; bins are 180/n_bins wide starting at -90."""
    t = normalize_angle(theta_deg)
    k = int(math.floor((t + 90.0) / (180.0 / n_bins)))
    return min(max(k, 0), n_bins - 1)


def bin_center(k: int, n_bins: int = 19) -> float:
    return -90.0 + (k + 0.5) * (180.0 / n_bins)


def _anchor_iou(w: float, h: float, aw: float, ah: float) -> float:
    inter = min(w, aw) * min(h, ah)
    return inter / (w * h + aw * ah - inter)


@dataclass
class GraspTargets:
    """Per (anchor, row, col) targets at the grasp-head scale."""

    positive: np.ndarray  # (A, H, W) bool
    offset_xy: np.ndarray  # (A, 2, H, W) in [0, 1)
    log_wh: np.ndarray  # (A, 2, H, W)
    angle: np.ndarray  # (A, H, W) int bin
    cls: np.ndarray  # (A, H, W) int


def assign_grasp_targets(scene: SceneAnnotation, cfg: ModelConfig) -> GraspTargets:
    """Each grasp goes to the cell holding its centre and the anchor of best box IoU.

    When that anchor is already taken in the cell, the next best free anchor is used.
    """
    s = cfg.grasp_stride
    hh, ww = cfg.input_hw[0] // s, cfg.input_hw[1] // s
    na = len(cfg.anchors)
    t = GraspTargets(
        positive=np.zeros((na, hh, ww), dtype=bool),
        offset_xy=np.zeros((na, 2, hh, ww), dtype=np.float32),
        log_wh=np.zeros((na, 2, hh, ww), dtype=np.float32),
        angle=np.zeros((na, hh, ww), dtype=np.int64),
        cls=np.zeros((na, hh, ww), dtype=np.int64),
    )
    for g in scene.grasps:
        col, row = int(math.floor(g.cx / s)), int(math.floor(g.cy / s))
        if not (0 <= row < hh and 0 <= col < ww):
            continue
        ious = [_anchor_iou(g.w, g.h, aw, ah) for aw, ah in cfg.anchors]
        for a in sorted(range(na), key=lambda k: (-ious[k], k)):
            if not t.positive[a, row, col]:
                break
        else:
            continue
        t.positive[a, row, col] = True
        t.offset_xy[a, 0, row, col] = g.cx / s - col
        t.offset_xy[a, 1, row, col] = g.cy / s - row
        aw, ah = cfg.anchors[a]
        t.log_wh[a, 0, row, col] = math.log(g.w / aw)
        t.log_wh[a, 1, row, col] = math.log(g.h / ah)
        t.angle[a, row, col] = angle_bin(g.theta_deg, cfg.n_angle_bins)
        t.cls[a, row, col] = g.cls
    return t


def split_grasp_output(raw: np.ndarray, cfg: ModelConfig) -> dict[str, np.ndarray]:
    """(A*K, H, W) -> named blocks with a leading anchor axis."""
    na = len(cfg.anchors)
    k = cfg.grasp_channels_per_anchor
    r = raw.reshape(na, k, *raw.shape[-2:])
    nb = cfg.n_angle_bins
    return {
        "txy": r[:, 0:2],
        "twh": r[:, 2:4],
        "conf": r[:, 4],
        "angle": r[:, 5 : 5 + nb],
        "cls": r[:, 5 + nb :],
    }


def decode_grasps(raw: np.ndarray, cfg: ModelConfig, conf_thresh: float) -> list[GraspRect]:
    """Grasp rectangles for every anchor whose confidence reaches ``conf_thresh``."""
    s = cfg.grasp_stride
    parts = split_grasp_output(np.asarray(raw, dtype=np.float64), cfg)
    conf = _sigmoid(parts["conf"])
    out = []
    for a, row, col in zip(*np.nonzero(conf >= conf_thresh)):
        aw, ah = cfg.anchors[a]
        sx, sy = _sigmoid(parts["txy"][a, :, row, col])
        tw, th = parts["twh"][a, :, row, col]
        k = int(np.argmax(parts["angle"][a, :, row, col]))
        out.append(
            GraspRect(
                cx=float((col + sx) * s),
                cy=float((row + sy) * s),
                w=float(aw * np.exp(tw)),
                h=float(ah * np.exp(th)),
                theta_deg=bin_center(k, cfg.n_angle_bins),
                cls=int(np.argmax(parts["cls"][a, :, row, col])),
                confidence=float(conf[a, row, col]),
            )
        )
    out.sort(key=lambda g: -g.confidence)
    return out


@dataclass
class DetTargets:
    cls: np.ndarray  # (H, W) int, 0 = background, else class + 1
    positive: np.ndarray  # (H, W) bool
    log_ltrb: np.ndarray  # (4, H, W)


def assign_det_targets(objects: Sequence[ObjectBox], cfg: ModelConfig) -> DetTargets:
    """Cells near a box centre (within ``det_pos_radius`` strides, inside the box) regress that box.

    Overlapping claims go to the box whose centre is nearest in stride units.
    """
    s = cfg.det_stride
    hh, ww = cfg.input_hw[0] // s, cfg.input_hw[1] // s
    ys = (np.arange(hh) + 0.5) * s
    xs = (np.arange(ww) + 0.5) * s
    cx, cy = np.meshgrid(xs, ys)
    best = np.full((hh, ww), np.inf)
    cls = np.zeros((hh, ww), dtype=np.int64)
    ltrb = np.zeros((4, hh, ww), dtype=np.float32)
    r = cfg.det_pos_radius * s
    for o in objects:
        ox, oy = o.center
        dx, dy = np.abs(cx - ox), np.abs(cy - oy)
        inside = (cx > o.x1) & (cx < o.x2) & (cy > o.y1) & (cy < o.y2)
        near = (dx <= r) & (dy <= r) & inside
        if not near.any():
            # tiny boxes still get the cell holding their centre
            col = min(max(int(ox // s), 0), ww - 1)
            row = min(max(int(oy // s), 0), hh - 1)
            near = np.zeros_like(inside)
            near[row, col] = True
        dist = np.maximum(dx, dy) / s
        take = near & (dist < best)
        best[take] = dist[take]
        cls[take] = o.cls + 1
        for k, v in enumerate((cx - o.x1, cy - o.y1, o.x2 - cx, o.y2 - cy)):
            ltrb[k][take] = np.log(np.maximum(v[take], 0.5) / s)
    return DetTargets(cls=cls, positive=cls > 0, log_ltrb=ltrb)


def nms(boxes: np.ndarray, scores: np.ndarray, iou: float) -> list[int]:
    order = list(np.argsort(-scores, kind="stable"))
    keep = []
    while order:
        i = order.pop(0)
        keep.append(i)
        if not order:
            break
        rest = np.array(order)
        ious = aabb_iou_array(boxes[rest], boxes[i])
        order = [j for j, v in zip(rest, ious) if v <= iou]
    return keep


def decode_detections(raw: np.ndarray, cfg: ModelConfig, score_thresh: float) -> list[ObjectBox]:
    """Dense detector output (C+1+4, H, W) -> scored boxes after class-wise NMS."""
    s = cfg.det_stride
    nc = cfg.n_classes + 1
    logits = np.asarray(raw[:nc], dtype=np.float64)
    reg = np.asarray(raw[nc : nc + 4], dtype=np.float64)
    z = logits - logits.max(axis=0, keepdims=True)
    prob = np.exp(z) / np.exp(z).sum(axis=0, keepdims=True)
    fg = prob[1:]
    cls = fg.argmax(axis=0)
    score = fg.max(axis=0)
    hh, ww = score.shape
    h_img, w_img = cfg.input_hw
    rows, cols = np.nonzero(score >= score_thresh)
    if len(rows) == 0:
        return []
    cx = (cols + 0.5) * s
    cy = (rows + 0.5) * s
    d = np.exp(np.clip(reg[:, rows, cols], -10, 10)) * s
    boxes = np.stack(
        [
            np.clip(cx - d[0], 0, w_img),
            np.clip(cy - d[1], 0, h_img),
            np.clip(cx + d[2], 0, w_img),
            np.clip(cy + d[3], 0, h_img),
        ],
        axis=1,
    )
    scores = score[rows, cols]
    classes = cls[rows, cols]
    valid = (boxes[:, 2] > boxes[:, 0]) & (boxes[:, 3] > boxes[:, 1])
    boxes, scores, classes = boxes[valid], scores[valid], classes[valid]
    kept: list[tuple[float, int, np.ndarray]] = []
    for c in np.unique(classes):
        idx = np.nonzero(classes == c)[0]
        for k in nms(boxes[idx], scores[idx], cfg.nms_iou):
            kept.append((float(scores[idx[k]]), int(c), boxes[idx[k]]))
    kept.sort(key=lambda t: (-t[0], t[1]))
    return [
        ObjectBox(i, c, float(b[0]), float(b[1]), float(b[2]), float(b[3]), score=sc)
        for i, (sc, c, b) in enumerate(kept)
    ]
