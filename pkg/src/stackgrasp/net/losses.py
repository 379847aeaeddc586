"""Detector, grasp and relation losses and their weighted total."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..tensor import losses as L
from ..tensor import ops
from ..tensor.core import Tensor
from .config import ModelConfig
from .targets import DetTargets, GraspTargets


@dataclass
class LossBreakdown:
    l_o: Optional[Tensor] = None
    l_g: Optional[Tensor] = None
    l_r: Optional[Tensor] = None
    total: Optional[Tensor] = None

    def values(self) -> dict[str, float]:
        def v(t):
            return float(t.data) if t is not None else 0.0

        return {"L_O": v(self.l_o), "L_G": v(self.l_g), "L_R": v(self.l_r), "total": v(self.total)}


def _onehot(idx: np.ndarray, n: int, dtype) -> np.ndarray:
    out = np.zeros((idx.size, n), dtype=dtype)
    out[np.arange(idx.size), idx.reshape(-1)] = 1
    return out


def detection_loss(raw: Tensor, targets: Sequence[DetTargets], cfg: ModelConfig) -> Tensor:
    """Smooth L1 on box log-distances of positive cells plus cross-entropy over all cells."""
    nc = cfg.n_classes + 1
    n, _, hh, ww = raw.shape
    red = cfg.loss_reduction
    logits_map, reg_map = ops.split(raw, [nc, 4], axis=1)
    logits = ops.reshape(ops.transpose(logits_map, (0, 2, 3, 1)), (n * hh * ww, nc))
    cls = np.stack([t.cls for t in targets]).reshape(-1)
    ce = L.cross_entropy(_onehot(cls, nc, raw.dtype), logits, reduction=red)

    pos = np.stack([t.positive for t in targets])
    if not pos.any():
        return ce
    reg = ops.transpose(reg_map, (0, 2, 3, 1))
    sel = np.nonzero(pos)
    pred = ops.index(reg, sel)
    tgt = np.stack([t.log_ltrb for t in targets]).transpose(0, 2, 3, 1)[sel].astype(raw.dtype)
    box = L.smooth_l1(tgt, pred)
    if red == "sum":
        box = ops.scale(box, float(tgt.size))
    return ops.add(box, ce)


def grasp_loss(raw: Tensor, targets: Sequence[GraspTargets], cfg: ModelConfig) -> Tensor:
    """Binary cross-entropy over the grasp-head targets.

    Confidence covers every anchor (positives and negatives normalised
    separately under "mean"); offsets, angle bins and classes cover positives
    only. Width/height log-ratios use smooth L1 since they are not probabilities.
    """
    na = len(cfg.anchors)
    k = cfg.grasp_channels_per_anchor
    nb = cfg.n_angle_bins
    n, _, hh, ww = raw.shape
    dt = raw.dtype
    mean = cfg.loss_reduction == "mean"
    rows = ops.reshape(ops.transpose(ops.reshape(raw, (n, na, k, hh, ww)), (0, 1, 3, 4, 2)), (-1, k))

    pos = np.stack([t.positive for t in targets]).reshape(-1)
    conf_t = pos.astype(dt)
    npos, nneg = int(pos.sum()), int((~pos).sum())
    if mean:
        w = np.where(pos, 1.0 / max(npos, 1), 1.0 / max(nneg, 1)).astype(dt)
    else:
        w = np.ones_like(conf_t)
    conf = ops.index(rows, (slice(None), 4))
    terms = [L.bce_with_logits(conf_t, conf, reduction="sum", weight=w)]
    if npos:
        pidx = np.nonzero(pos)[0]
        p = ops.index(rows, pidx)

        def gather(field_fn):
            return np.concatenate([field_fn(t) for t in targets])[pos]

        xy_t = gather(lambda t: t.offset_xy.transpose(0, 2, 3, 1).reshape(-1, 2)).astype(dt)
        wh_t = gather(lambda t: t.log_wh.transpose(0, 2, 3, 1).reshape(-1, 2)).astype(dt)
        ang_t = _onehot(gather(lambda t: t.angle.reshape(-1)), nb, dt)
        cls_t = _onehot(gather(lambda t: t.cls.reshape(-1)), cfg.n_classes, dt)
        row_w = np.full((npos, 1), 1.0 / npos if mean else 1.0, dtype=dt)
        terms.append(L.bce_with_logits(xy_t, ops.index(p, (slice(None), slice(0, 2))), "sum", np.broadcast_to(row_w, xy_t.shape)))
        wh = L.smooth_l1(wh_t, ops.index(p, (slice(None), slice(2, 4))))
        terms.append(ops.scale(wh, 2.0 if mean else float(wh_t.size)))
        terms.append(L.bce_with_logits(ang_t, ops.index(p, (slice(None), slice(5, 5 + nb))), "sum", np.broadcast_to(row_w, ang_t.shape)))
        terms.append(L.bce_with_logits(cls_t, ops.index(p, (slice(None), slice(5 + nb, k))), "sum", np.broadcast_to(row_w, cls_t.shape)))
    return ops.add_n(terms) if len(terms) > 1 else terms[0]


def relation_loss(logits: Tensor, labels: np.ndarray, cfg: ModelConfig) -> Tensor:
    """Negative log-likelihood of the true relation for each ordered pair."""
    probs = ops.softmax(logits, axis=-1)
    return L.nll_relation(probs, labels, reduction=cfg.loss_reduction)


def total_loss(l_o: Optional[Tensor], l_g: Optional[Tensor], l_r: Optional[Tensor], cfg: ModelConfig) -> Tensor:
    """L_O + alpha * L_G + beta * L_R over whichever parts are present."""
    parts = []
    if l_o is not None:
        parts.append(l_o)
    if l_g is not None:
        parts.append(ops.scale(l_g, cfg.alpha))
    if l_r is not None:
        parts.append(ops.scale(l_r, cfg.beta))
    if not parts:
        raise ValueError("no loss terms")
    return ops.add_n(parts) if len(parts) > 1 else parts[0]
