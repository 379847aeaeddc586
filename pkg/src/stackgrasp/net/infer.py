"""Inference: detections, grasps, pairwise relations and the resulting clearing order."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from ..geometry import box_intersection
from ..metrics import ScenePrediction, grasp_match
from ..planner import PairPrediction, RelationGraph, build_graph, full_clearing_order, pair_confidence, symmetrize_pair
from ..scene import GraspRect, ObjectBox, RelationKind, SceneAnnotation
from ..tensor import ParamStore, no_grad
from ..tensor.core import Tensor
from .config import ModelConfig
from .model import detector_head, features, grasp_head, head_map, images_to_tensor, relation_features, relation_logits, relation_map
from .targets import decode_detections, decode_grasps

NO_REL_PROBS = np.array([0.0, 0.0, 1.0])


@dataclass
class InferenceResult:
    objects: list[ObjectBox]
    grasps: list[GraspRect]
    pairs: list[PairPrediction]
    graph: RelationGraph
    order: list[int]

    def prediction(self) -> ScenePrediction:
        return prediction_from_pairs(self.objects, self.grasps, self.pairs)


def _feats(ps: ParamStore, cfg: ModelConfig, images: Sequence[np.ndarray]):
    with no_grad():
        return features(ps, cfg, images_to_tensor(images))


def detect_objects(ps: ParamStore, cfg: ModelConfig, feats, index: int = 0) -> list[ObjectBox]:
    with no_grad():
        raw = detector_head(ps, cfg, head_map(cfg, feats)).data[index]
    return decode_detections(raw, cfg, cfg.det_score_thresh)


def relation_probs(
    ps: ParamStore, cfg: ModelConfig, rmap: Tensor, pairs: Sequence[tuple[int, ObjectBox, ObjectBox]]
) -> np.ndarray:
    """(R, 3) probabilities over (on, under, no_rel) for ordered pairs ``(batch_index, a, b)``.

    With the short-circuit enabled, pairs whose boxes do not overlap get
    exactly (0, 0, 1) and never reach the network.
    """
    out = np.tile(NO_REL_PROBS, (len(pairs), 1))
    run = [k for k, (_, a, b) in enumerate(pairs) if not (cfg.short_circuit and box_intersection(a, b) is None)]
    if run:
        with no_grad():
            pooled = relation_features(cfg, rmap, [pairs[k] for k in run], cfg.relation_stride)
            logits = relation_logits(ps, cfg, pooled).data.astype(np.float64)
        z = np.exp(logits - logits.max(axis=1, keepdims=True))
        out[run] = z / z.sum(axis=1, keepdims=True)
    return out


def relation_forward(ps: ParamStore, cfg: ModelConfig, rmap: Tensor, a: ObjectBox, b: ObjectBox, index: int = 0) -> np.ndarray:
    return relation_probs(ps, cfg, rmap, [(index, a, b)])[0]


def pair_predictions(
    ps: ParamStore, cfg: ModelConfig, rmap: Tensor, objects: Sequence[ObjectBox], index: int = 0
) -> list[PairPrediction]:
    """Both directions of every unordered pair, keyed by ascending id."""
    objs = sorted(objects, key=lambda o: o.id)
    combos = [(a, b) for i, a in enumerate(objs) for b in objs[i + 1 :]]
    if not combos:
        return []
    ordered = []
    for a, b in combos:
        ordered += [(index, a, b), (index, b, a)]
    probs = relation_probs(ps, cfg, rmap, ordered)
    return [PairPrediction((a.id, b.id), probs[2 * k], probs[2 * k + 1]) for k, (a, b) in enumerate(combos)]


def assign_grasps(grasps: Sequence[GraspRect], objects: Sequence[ObjectBox]) -> list[GraspRect]:
    """Give each grasp an owner: an object containing its centre, same class preferred, then higher score, then smaller area."""
    out = []
    for g in grasps:
        inside = [o for o in objects if o.x1 <= g.cx <= o.x2 and o.y1 <= g.cy <= o.y2]
        if not inside:
            continue
        best = min(inside, key=lambda o: (o.cls != g.cls, -(o.score or 0.0), o.area, o.id))
        out.append(GraspRect(g.cx, g.cy, g.w, g.h, g.theta_deg, cls=best.cls, confidence=g.confidence, owner=best.id))
    return out


def keep_grasps(owned: Sequence[GraspRect], conf_thresh: float) -> list[GraspRect]:
    """Owned grasps at or above ``conf_thresh``, plus the best grasp of any object left with none."""
    best: dict[int, GraspRect] = {}
    for g in owned:
        if g.owner not in best or g.confidence > best[g.owner].confidence:
            best[g.owner] = g
    covered = {g.owner for g in owned if g.confidence >= conf_thresh}
    return [g for g in owned if g.confidence >= conf_thresh or (g.owner not in covered and g is best[g.owner])]


def relation_graph(objects: Sequence[ObjectBox], pairs: Sequence[PairPrediction]) -> RelationGraph:
    rels, weights = [], {}
    for p in pairs:
        r = symmetrize_pair(p)
        rels.append(r)
        if r.kind is not RelationKind.NO_REL:
            edge = (r.from_id, r.to_id) if r.kind is RelationKind.ON else (r.to_id, r.from_id)
            weights[edge] = pair_confidence(p, r.kind)
    return build_graph(objects, rels, weights)


def predict_scene(
    image: np.ndarray, ps: ParamStore, cfg: ModelConfig, objects: Optional[Sequence[ObjectBox]] = None
) -> tuple[list[ObjectBox], list[GraspRect], list[PairPrediction]]:
    """Detections (or the given ``objects``), owned grasps and pair predictions for one image."""
    feats = _feats(ps, cfg, [image])
    objs = list(objects) if objects is not None else detect_objects(ps, cfg, feats)
    with no_grad():
        graw = grasp_head(ps, cfg, head_map(cfg, feats)).data[0]
    grasps = keep_grasps(assign_grasps(decode_grasps(graw, cfg, 0.0), objs), cfg.grasp_conf_thresh)
    pairs = pair_predictions(ps, cfg, relation_map(cfg, feats), objs)
    return objs, grasps, pairs


def infer_scene(image: np.ndarray, ps: ParamStore, cfg: ModelConfig, objects: Optional[Sequence[ObjectBox]] = None) -> InferenceResult:
    """Full pipeline on one image; ``objects`` replaces the detector output when given.

    Raises CycleError (from the planner) when the predicted relations are cyclic.
    """
    objs, grasps, pairs = predict_scene(image, ps, cfg, objects)
    graph = relation_graph(objs, pairs)
    return InferenceResult(objs, grasps, pairs, graph, full_clearing_order(graph))


def prediction_from_pairs(objs, grasps, pairs: Sequence[PairPrediction]) -> ScenePrediction:
    rels = {}
    for p in pairs:
        r = symmetrize_pair(p)
        rels[(r.from_id, r.to_id)] = r.kind
    return ScenePrediction(objects=list(objs), grasps=list(grasps), relations=rels)


def training_fit(ps: ParamStore, cfg: ModelConfig, scenes: Sequence[SceneAnnotation]) -> dict[str, float]:
    """Relation accuracy and top-1 grasp rate measured with ground-truth boxes.

    Relation accuracy counts every unordered pair after symmetrisation.
    The grasp rate asks, per object, whether the most confident grasp whose
    centre falls in that object passes the rectangle metric; all grasps are
    decoded, whatever their confidence.
    """
    rel_hit = rel_total = g_hit = g_total = 0
    for s in scenes:
        feats = _feats(ps, cfg, [s.pixels])
        pairs = pair_predictions(ps, cfg, relation_map(cfg, feats), s.objects)
        gt = s.relation_map()
        for p in pairs:
            rel_total += 1
            rel_hit += symmetrize_pair(p).kind is gt[p.pair]
        with no_grad():
            graw = grasp_head(ps, cfg, head_map(cfg, feats)).data[0]
        owned = assign_grasps(decode_grasps(graw, cfg, 0.0), s.objects)
        for o in s.objects:
            gts = s.grasps_of(o.id)
            if not gts:
                continue
            g_total += 1
            mine = [g for g in owned if g.owner == o.id]
            if mine:
                top = max(mine, key=lambda g: g.confidence)
                g_hit += grasp_match(top, gts)
    return {
        "relation_accuracy": rel_hit / rel_total if rel_total else 1.0,
        "grasp_top1": g_hit / g_total if g_total else 1.0,
    }
