"""End-to-end gradient check of the full training loss on a tiny model."""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..data.synth import synth_dataset
from ..tensor.core import Tensor
from ..tensor.gradcheck import GradCheckReport, grad_check
from .config import ModelConfig
from .losses import detection_loss, grasp_loss, relation_loss, total_loss
from .model import detector_head, features, grasp_head, head_map, images_to_tensor, init_params, relation_features, relation_logits, relation_map
from .targets import assign_det_targets, assign_grasp_targets
from .train import relation_pairs


def micro_config(**kw) -> ModelConfig:
    """48x48 input, a handful of channels; small enough for finite differences over every tensor."""
    base = dict(
        input_hw=(48, 48),
        channels=(4, 6, 6),
        fusion_channels=6,
        n_classes=3,
        anchors=((8, 4), (14, 6), (20, 8)),
        relation_channels=4,
        relation_hidden=8,
        short_circuit=False,
        augment=False,
    )
    base.update(kw)
    return ModelConfig(**base)


def micro_scenes(seed: int = 0):
    return synth_dataset(1, seed, width=48, height=48, min_objects=2, max_objects=2, size_min=12, size_max=20, n_classes=3, min_center_dist=6.0)


# settings carried over from a user config; geometry stays micro-sized
LOSS_FIELDS = ("alpha", "beta", "loss_reduction", "msfa", "fusion_rounds")


def end_to_end_check(
    draws: int = 5,
    tolerance: float = 1e-2,
    max_entries: int = 6,
    h: float = 1e-5,
    base: Optional[ModelConfig] = None,
    seed: int = 0,
) -> list[GradCheckReport]:
    """Total loss (detector + grasp + relation) against central differences for ``draws`` parameter draws.

    Entries where a relu or max switches inside the step are detected from
    their one-sided slopes and reported as excluded; the comparison runs in
    float64 throughout.
    """
    cfg = micro_config(**({k: getattr(base, k) for k in LOSS_FIELDS} if base is not None else {}))
    scenes = micro_scenes()
    image = images_to_tensor([s.pixels for s in scenes]).data.astype(np.float64)
    det_t = [assign_det_targets(s.objects, cfg) for s in scenes]
    grasp_t = [assign_grasp_targets(s, cfg) for s in scenes]
    pairs, labels = relation_pairs(scenes, cfg)
    reports = []
    for draw in range(seed, seed + draws):
        ps = init_params(cfg, seed=1000 + draw)
        names = list(ps)
        rng = np.random.default_rng(draw)
        # move biases off zero so dead units do not make every gradient vanish
        arrays = [ps[n].data.astype(np.float64) + (0.05 * rng.normal(size=ps[n].shape) if n.endswith(".b") else 0.0) for n in names]

        def fn(*ts):
            p = dict(zip(names, ts))
            feats = features(p, cfg, Tensor(image))
            hmap = head_map(cfg, feats)
            l_o = detection_loss(detector_head(p, cfg, hmap), det_t, cfg)
            l_g = grasp_loss(grasp_head(p, cfg, hmap), grasp_t, cfg)
            pooled = relation_features(cfg, relation_map(cfg, feats), pairs, cfg.relation_stride)
            l_r = relation_loss(relation_logits(p, cfg, pooled), labels, cfg)
            return total_loss(l_o, l_g, l_r, cfg)

        reports.append(
            grad_check(
                fn,
                arrays,
                tolerance=tolerance,
                h=h,
                name=f"end_to_end[{draw}]",
                max_entries=max_entries,
                rng=np.random.default_rng(draw),
                skip_kinks=True,
            )
        )
    return reports
