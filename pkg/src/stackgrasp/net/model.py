"""Backbone, multi-scale feature aggregation, and the three task heads."""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from ..geometry import box_intersection, box_union
from ..scene import ObjectBox
from ..tensor import ops
from ..tensor.core import ShapeError, Tensor
from ..tensor.params import ParamStore
from .config import ModelConfig

BACKBONE = "backbone."
MSFA = "msfa."
DETECTOR = "det."
GRASP = "grasp."
RELATION = "rel."


def _he(rng, shape, fan_in, gain=2.0):
    return rng.normal(0.0, np.sqrt(gain / fan_in), size=shape).astype(np.float32)


def init_params(cfg: ModelConfig, seed: Optional[int] = None) -> ParamStore:
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    ps = ParamStore()
    c0, c1, c2 = cfg.channels
    f = cfg.fusion_channels

    def conv(name, cin, cout, k, bias=True, gain=2.0):
        ps.add(name + ".w", _he(rng, (cout, cin, k, k), cin * k * k, gain))
        if bias:
            ps.add(name + ".b", np.zeros(cout, dtype=np.float32))

    conv(BACKBONE + "stem", 3, c0, 3)
    conv(BACKBONE + "block0", c0, c0, 3)
    conv(BACKBONE + "block1", c0, c1, 3)
    conv(BACKBONE + "block2", c1, c2, 3)

    if cfg.msfa:
        for i, c in enumerate(cfg.channels):
            conv(f"{MSFA}lateral{i}", c, f, 1, bias=False, gain=1.0)
        for i in range(3):
            conv(f"{MSFA}fuse{i}", f, f, 3, bias=False, gain=1.0)

    head_in = f if cfg.msfa else c1
    conv(DETECTOR + "conv", head_in, head_in, 3)
    conv(DETECTOR + "out", head_in, cfg.n_classes + 1 + 4, 1, gain=0.1)
    b = ps[DETECTOR + "out.b"].data
    b[0] = 2.0  # background favoured at init: an untrained model detects nothing

    conv(GRASP + "conv", head_in, head_in, 3)
    conv(GRASP + "out", head_in, len(cfg.anchors) * cfg.grasp_channels_per_anchor, 1, gain=0.1)
    gb = ps[GRASP + "out.b"].data
    for a in range(len(cfg.anchors)):
        gb[a * cfg.grasp_channels_per_anchor + 4] = -2.0

    rel_in = 4 * (f if cfg.msfa else c1)
    conv(RELATION + "conv", rel_in, cfg.relation_channels, 3)
    pooled = cfg.relation_pool // 2
    fc_in = cfg.relation_channels * pooled * pooled
    ps.add(RELATION + "fc1.w", _he(rng, (cfg.relation_hidden, fc_in), fc_in))
    ps.add(RELATION + "fc1.b", np.zeros(cfg.relation_hidden, dtype=np.float32))
    ps.add(RELATION + "fc2.w", _he(rng, (3, cfg.relation_hidden), cfg.relation_hidden, 1.0))
    ps.add(RELATION + "fc2.b", np.zeros(3, dtype=np.float32))
    return ps


def msfa_param_count(cfg: ModelConfig) -> int:
    """Analytic size of the lateral 1x1 and fusion 3x3 convolutions."""
    f = cfg.fusion_channels
    return sum(c * f for c in cfg.channels) + 3 * f * f * 9


def _p(ps: ParamStore, name: str) -> Tensor:
    return ps[name]


def _conv(ps, name, x, pad, relu=True, bias=True):
    y = ops.conv2d(x, ps[name + ".w"], ps[name + ".b"] if bias else None, stride=1, pad=pad)
    return ops.relu(y) if relu else y


def images_to_tensor(images: Sequence[np.ndarray]) -> Tensor:
    """uint8 H x W x 3 images -> (N, 3, H, W) floats in [0, 1]."""
    arr = np.stack([np.asarray(im) for im in images]).astype(np.float32) / 255.0
    return Tensor(arr.transpose(0, 3, 1, 2).copy())


def backbone_forward(ps: ParamStore, cfg: ModelConfig, x: Tensor) -> list[Tensor]:
    """Three maps at input / stride for each configured stride, fine to coarse."""
    if x.data.ndim != 4 or x.shape[1] != 3 or tuple(x.shape[2:]) != tuple(cfg.input_hw):
        raise ShapeError(f"backbone expects (N, 3, {cfg.input_hw[0]}, {cfg.input_hw[1]}), got {x.shape}")
    h, w = cfg.input_hw
    y = _conv(ps, BACKBONE + "stem", x, 1)
    maps = []
    for i, s in enumerate(cfg.scale_strides):
        y = ops.adaptive_maxpool2d(y, (h // s, w // s))
        y = _conv(ps, f"{BACKBONE}block{i}", y, 1)
        maps.append(y)
    return maps


def _downsample(x: Tensor, hw) -> Tensor:
    return ops.adaptive_maxpool2d(x, hw)


def msfa_aggregate(ps: ParamStore, cfg: ModelConfig, maps: Sequence[Tensor]) -> list[Tensor]:
    """Lateral projection, then top-down and bottom-up fusion passes, then a 3x3 fusion conv per scale.

    Everything here is linear and bias-free, apart from the max in the
    bottom-up downsampling.
    """
    if len(maps) != 3:
        raise ShapeError("msfa needs exactly three maps")
    for i, m in enumerate(maps):
        if m.shape[1] != cfg.channels[i]:
            raise ShapeError(f"msfa input {i} has {m.shape[1]} channels, expected {cfg.channels[i]}")
    feats = [ops.conv2d(m, ps[f"{MSFA}lateral{i}.w"]) for i, m in enumerate(maps)]
    sizes = [tuple(m.shape[2:]) for m in maps]
    for _ in range(cfg.fusion_rounds):
        # top-down: coarse context into finer maps
        td = [None, None, feats[2]]
        td[1] = ops.add(feats[1], ops.upsample_nearest(td[2], sizes[1]))
        td[0] = ops.add(feats[0], ops.upsample_nearest(td[1], sizes[0]))
        # bottom-up: fine detail into coarser maps
        bu = [td[0], None, None]
        bu[1] = ops.add(td[1], _downsample(bu[0], sizes[1]))
        bu[2] = ops.add(td[2], _downsample(bu[1], sizes[2]))
        feats = bu
    return [ops.conv2d(m, ps[f"{MSFA}fuse{i}.w"], None, pad=1) for i, m in enumerate(feats)]


def features(ps: ParamStore, cfg: ModelConfig, x: Tensor) -> list[Tensor]:
    maps = backbone_forward(ps, cfg, x)
    if cfg.msfa:
        return msfa_aggregate(ps, cfg, maps)
    return maps


def head_map(cfg: ModelConfig, feats: Sequence[Tensor]) -> Tensor:
    """Map consumed by the detector and grasp heads (middle scale)."""
    return feats[1]


def relation_map(cfg: ModelConfig, feats: Sequence[Tensor]) -> Tensor:
    """Map cropped for relation reasoning: finest fused map, or raw middle map without MSFA."""
    return feats[0] if cfg.msfa else feats[1]


def detector_head(ps: ParamStore, cfg: ModelConfig, fmap: Tensor) -> Tensor:
    """(N, C+1+4, H, W): class logits (index 0 = background) then 4 box log-distances."""
    y = _conv(ps, DETECTOR + "conv", fmap, 1)
    return _conv(ps, DETECTOR + "out", y, 0, relu=False)


def grasp_head(ps: ParamStore, cfg: ModelConfig, fmap: Tensor) -> Tensor:
    """(N, A*(4+1+bins+C), H, W) raw grasp outputs."""
    y = _conv(ps, GRASP + "conv", fmap, 1)
    return _conv(ps, GRASP + "out", y, 0, relu=False)


def relation_rois(
    cfg: ModelConfig, batch_index: int, a: ObjectBox, b: ObjectBox, stride: int
) -> tuple[np.ndarray, bool]:
    """Four ROI rows (obj a, obj b, union, intersection) in feature cells and the empty-intersection flag."""
    u = box_union(a, b)
    inter = box_intersection(a, b)
    rows = []
    for box in (a, b, u, inter if inter is not None else u):
        rows.append([batch_index, box.x1 / stride, box.y1 / stride, box.x2 / stride, box.y2 / stride])
    return np.array(rows, dtype=float), inter is None


def relation_features(
    cfg: ModelConfig, fmap: Tensor, pairs: Sequence[tuple[int, ObjectBox, ObjectBox]], stride: int
) -> Tensor:
    """Pooled (R, 4F, P, P) blocks for ordered pairs ``(batch_index, a, b)``."""
    p = cfg.relation_pool
    rois = []
    empty = []
    for bi, a, b in pairs:
        r, e = relation_rois(cfg, bi, a, b, stride)
        rois.append(r)
        empty.append(e)
    rois = np.concatenate(rois, axis=0)
    pooled = ops.roi_pool(fmap, rois, (p, p))
    n, c = len(pairs), fmap.shape[1]
    # zero the intersection block where the boxes do not overlap
    mask = np.ones((n, 4, 1, 1, 1), dtype=pooled.dtype)
    mask[np.array(empty, dtype=bool), 3] = 0
    grouped = ops.reshape(pooled, (n, 4, c, p, p))
    grouped = ops.mul(grouped, Tensor(np.broadcast_to(mask, grouped.shape).copy(), dtype=pooled.dtype))
    return ops.reshape(grouped, (n, 4 * c, p, p))


def relation_logits(ps: ParamStore, cfg: ModelConfig, pooled: Tensor) -> Tensor:
    y = _conv(ps, RELATION + "conv", pooled, 1)
    y = ops.maxpool2d(y, 2)
    y = ops.reshape(y, (y.shape[0], -1))
    y = ops.relu(ops.linear(y, ps[RELATION + "fc1.w"], ps[RELATION + "fc1.b"]))
    return ops.linear(y, ps[RELATION + "fc2.w"], ps[RELATION + "fc2.b"])
