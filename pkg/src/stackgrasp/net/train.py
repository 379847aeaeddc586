"""Two-stage training: detector first, then grasp and relation heads on frozen features."""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence

import numpy as np

from ..data.augment import augment
from ..geometry import box_intersection
from ..scene import ObjectBox, SceneAnnotation, relation_inverse, validate_scene
from ..tensor import Adam, ParamStore, backward, no_grad, sgd_step, step_lr
from ..tensor.core import Tensor
from .config import ModelConfig
from .losses import LossBreakdown, detection_loss, grasp_loss, relation_loss, total_loss
from .model import (
    BACKBONE,
    DETECTOR,
    MSFA,
    detector_head,
    features,
    grasp_head,
    head_map,
    images_to_tensor,
    init_params,
    relation_features,
    relation_logits,
    relation_map,
)
from .targets import assign_det_targets, assign_grasp_targets

log = logging.getLogger(__name__)

FROZEN_IN_STAGE2 = (BACKBONE, MSFA, DETECTOR)


class DataError(ValueError):
    pass


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def add(self, iteration: int, lr: float, vals: dict[str, float]):
        self.rows.append({"iteration": iteration, "lr": lr, **vals})

    def column(self, key: str) -> list[float]:
        return [r[key] for r in self.rows]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["iteration", "lr", "L_O", "L_G", "L_R", "total"])
        for r in self.rows:
            w.writerow([r["iteration"], f"{r['lr']:.6g}"] + [f"{r[k]:.6f}" for k in ("L_O", "L_G", "L_R", "total")])
        return buf.getvalue()

    def save(self, path):
        Path(path).write_text(self.to_csv(), encoding="utf-8")


def check_dataset(scenes: Sequence[SceneAnnotation], cfg: ModelConfig):
    if not scenes:
        raise DataError("dataset is empty")
    for k, s in enumerate(scenes):
        problems = validate_scene(s)
        if problems:
            raise DataError(f"scene {k}: " + "; ".join(problems))
        if s.pixels is None:
            raise DataError(f"scene {k}: no pixel data loaded")
        if tuple(s.pixels.shape[:2]) != tuple(cfg.input_hw):
            raise DataError(f"scene {k}: image {s.pixels.shape[:2]} does not match input {cfg.input_hw}")
        for o in s.objects:
            if o.cls >= cfg.n_classes:
                raise DataError(f"scene {k}: class {o.cls} >= n_classes {cfg.n_classes}")


def relation_pairs(
    scenes: Sequence[SceneAnnotation], cfg: ModelConfig
) -> tuple[list[tuple[int, ObjectBox, ObjectBox]], np.ndarray]:
    """Ordered ground-truth pairs of every scene, with relation labels (0 on, 1 under, 2 none).

    With the short-circuit on, pairs whose boxes do not overlap are left out:
    their output is fixed, so they carry no gradient.
    """
    pairs, labels = [], []
    for bi, s in enumerate(scenes):
        rel = s.relation_map()
        objs = sorted(s.objects, key=lambda o: o.id)
        for a in objs:
            for b in objs:
                if a.id == b.id:
                    continue
                if cfg.short_circuit and box_intersection(a, b) is None:
                    continue
                if a.id < b.id:
                    kind = rel[(a.id, b.id)]
                else:
                    kind = relation_inverse(rel[(b.id, a.id)])
                pairs.append((bi, a, b))
                labels.append(kind.index)
    return pairs, np.array(labels, dtype=np.int64)


def jitter_boxes(scene: SceneAnnotation, rng: np.random.Generator, frac: float) -> SceneAnnotation:
    """Each box edge moved by up to ``frac`` of the box size, clipped to the image.

    Relation training sees these in place of the exact boxes, so the head
    copes with the looser boxes the detector produces at inference.
    """
    out = []
    for o in scene.objects:
        dx = rng.uniform(-frac, frac, 2) * o.width
        dy = rng.uniform(-frac, frac, 2) * o.height
        x1 = min(max(o.x1 + dx[0], 0.0), scene.width - 1.0)
        y1 = min(max(o.y1 + dy[0], 0.0), scene.height - 1.0)
        x2 = max(min(o.x2 + dx[1], float(scene.width)), x1 + 1.0)
        y2 = max(min(o.y2 + dy[1], float(scene.height)), y1 + 1.0)
        out.append(ObjectBox(o.id, o.cls, x1, y1, x2, y2, o.score))
    return scene.replace(objects=tuple(out))


def _batches(n: int, batch: int, iterations: int, seed: int):
    """Index lists per iteration: the whole set when it fits, else seeded reshuffled epochs."""
    if n <= batch:
        for _ in range(iterations):
            yield list(range(n))
        return
    rng = np.random.default_rng(seed)
    perm, pos = rng.permutation(n), 0
    for _ in range(iterations):
        if pos + batch > n:
            perm, pos = rng.permutation(n), 0
        yield [int(i) for i in perm[pos : pos + batch]]
        pos += batch


def _prepare(scenes, idx, cfg: ModelConfig, iteration: int):
    batch = [scenes[i] for i in idx]
    if cfg.augment:
        out = []
        for k, s in enumerate(batch):
            seed = (cfg.seed * 1_000_003 + iteration) * 64 + k
            s2, _ = augment(s, s.pixels, seed, tuple(cfg.input_hw))
            out.append(s2)
        batch = out
    return batch


class _Optimizer:
    def __init__(self, ps: ParamStore, cfg: ModelConfig):
        self.cfg = cfg
        self.ps = ps
        self.adam = Adam(ps) if cfg.optimizer == "adam" else None
        self.state: dict = {}

    def step(self, lr: float):
        if self.adam is not None:
            self.adam.step(lr)
        else:
            sgd_step(self.ps, lr, momentum=self.cfg.momentum, state=self.state)


def stage1_losses(ps: ParamStore, cfg: ModelConfig, batch: Sequence[SceneAnnotation]) -> LossBreakdown:
    x = images_to_tensor([s.pixels for s in batch])
    feats = features(ps, cfg, x)
    raw = detector_head(ps, cfg, head_map(cfg, feats))
    l_o = detection_loss(raw, [assign_det_targets(s.objects, cfg) for s in batch], cfg)
    return LossBreakdown(l_o=l_o, total=l_o)


def stage2_losses(
    ps: ParamStore,
    cfg: ModelConfig,
    batch: Sequence[SceneAnnotation],
    cached: Optional[tuple[Tensor, Optional[Tensor], np.ndarray]] = None,
    jitter_rng: Optional[np.random.Generator] = None,
) -> tuple[LossBreakdown, tuple[Tensor, Optional[Tensor], np.ndarray]]:
    """Grasp + relation losses; ``cached`` holds frozen head-map features and pooled relation crops.

    With ``jitter_rng`` the relation pairs use jittered boxes (see ``jitter_boxes``).
    """
    if cached is None:
        with no_grad():
            x = images_to_tensor([s.pixels for s in batch])
            feats = features(ps, cfg, x)
            hmap = Tensor(head_map(cfg, feats).data)
            rel_scenes = batch
            if jitter_rng is not None and cfg.relation_jitter > 0:
                rel_scenes = [jitter_boxes(s, jitter_rng, cfg.relation_jitter) for s in batch]
            pairs, labels = relation_pairs(rel_scenes, cfg)
            pooled = None
            if pairs:
                rmap = relation_map(cfg, feats)
                pooled = Tensor(relation_features(cfg, rmap, pairs, cfg.relation_stride).data)
        cached = (hmap, pooled, labels)
    hmap, pooled, labels = cached
    raw = grasp_head(ps, cfg, hmap)
    l_g = grasp_loss(raw, [assign_grasp_targets(s, cfg) for s in batch], cfg)
    l_r = None
    if pooled is not None:
        l_r = relation_loss(relation_logits(ps, cfg, pooled), labels, cfg)
    total = total_loss(None, l_g, l_r, cfg)
    return LossBreakdown(l_g=l_g, l_r=l_r, total=total), cached


def train_stage1(
    scenes: Sequence[SceneAnnotation],
    cfg: ModelConfig,
    params: Optional[ParamStore] = None,
    progress: Optional[Callable[[int, dict], None]] = None,
) -> tuple[ParamStore, TrainLog]:
    """Backbone, MSFA and detector trained on the detection loss alone."""
    check_dataset(scenes, cfg)
    ps = params or init_params(cfg)
    for name in ps:
        ps.set_trainable(name, name.startswith(FROZEN_IN_STAGE2))
    opt = _Optimizer(ps, cfg)
    tlog = TrainLog()
    ps.zero_grad()
    for it, idx in enumerate(_batches(len(scenes), cfg.batch, cfg.iterations, cfg.seed)):
        lr = step_lr(cfg.lr, it, cfg.lr_decay_every, cfg.lr_decay_factor)
        batch = _prepare(scenes, idx, cfg, it)
        lb = stage1_losses(ps, cfg, batch)
        backward(lb.total)
        opt.step(lr)
        vals = lb.values()
        tlog.add(it, lr, vals)
        if progress:
            progress(it, vals)
    return ps, tlog


def train_stage2(
    scenes: Sequence[SceneAnnotation],
    cfg: ModelConfig,
    stage1_params: ParamStore,
    progress: Optional[Callable[[int, dict], None]] = None,
) -> tuple[ParamStore, TrainLog]:
    """Grasp and relation heads trained with alpha * L_G + beta * L_R; everything else frozen."""
    check_dataset(scenes, cfg)
    ps = stage1_params
    for name in ps:
        ps.set_trainable(name, not name.startswith(FROZEN_IN_STAGE2))
    opt = _Optimizer(ps, cfg)
    tlog = TrainLog()
    cache: dict[tuple[int, ...], tuple] = {}
    jitter_rng = np.random.default_rng(cfg.seed + 2) if cfg.augment else None
    ps.zero_grad()
    for it, idx in enumerate(_batches(len(scenes), cfg.batch, cfg.iterations, cfg.seed + 1)):
        lr = step_lr(cfg.lr, it, cfg.lr_decay_every, cfg.lr_decay_factor)
        batch = _prepare(scenes, idx, cfg, it)
        key = tuple(idx)
        lb, feats = stage2_losses(ps, cfg, batch, None if cfg.augment else cache.get(key), jitter_rng)
        if not cfg.augment:
            cache[key] = feats
        backward(lb.total)
        opt.step(lr)
        vals = lb.values()
        tlog.add(it, lr, vals)
        if progress:
            progress(it, vals)
    return ps, tlog
