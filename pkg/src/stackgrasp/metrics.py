"""Evaluation: rectangle metric, detection mAP, and relation OR / OP / IA."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .geometry import aabb_iou, grasp_angle_diff, jaccard_rotated
from .scene import GraspRect, ObjectBox, RelationKind, RELATION_KINDS, SceneAnnotation, relation_inverse

JACCARD_THRESH = 0.25
ANGLE_THRESH_DEG = 30.0
DET_IOU = 0.5


@dataclass
class ScenePrediction:
    """Model output for one image, in the same vocabulary as the annotation.

    ``relations`` maps a canonical pair of *predicted* object ids (min, max) to
    the predicted kind. Pairs missing from the map count as NoRel.
    """

    objects: list[ObjectBox]
    grasps: list[GraspRect] = field(default_factory=list)
    relations: dict[tuple[int, int], RelationKind] = field(default_factory=dict)

    @classmethod
    def from_ground_truth(cls, scene: SceneAnnotation) -> "ScenePrediction":
        return cls(
            objects=[_with_score(o, 1.0) for o in scene.objects],
            grasps=[_with_conf(g, 1.0) for g in scene.grasps],
            relations=scene.relation_map(),
        )


def _with_score(o: ObjectBox, s: float) -> ObjectBox:
    return ObjectBox(o.id, o.cls, o.x1, o.y1, o.x2, o.y2, score=s if o.score is None else o.score)


def _with_conf(g: GraspRect, c: float) -> GraspRect:
    return GraspRect(g.cx, g.cy, g.w, g.h, g.theta_deg, g.cls, c if g.confidence is None else g.confidence, g.owner)


@dataclass
class EvalReport:
    map: float = 0.0
    or_recall: float = 0.0
    op_precision: float = 0.0
    ia_accuracy: float = 0.0
    grasp_accuracy: float = 0.0
    per_class_ap: dict[int, float] = field(default_factory=dict)
    per_count_ia: dict[int, float] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "map": self.map,
            "or_recall": self.or_recall,
            "op_precision": self.op_precision,
            "ia_accuracy": self.ia_accuracy,
            "grasp_accuracy": self.grasp_accuracy,
            "per_class_ap": {str(k): v for k, v in sorted(self.per_class_ap.items())},
            "per_count_ia": {str(k): v for k, v in sorted(self.per_count_ia.items())},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    def table(self) -> str:
        head = ["mAP(%)", "OR(%)", "OP(%)", "IA(%)", "Grasp(%)"]
        vals = [self.map, self.or_recall, self.op_precision, self.ia_accuracy, self.grasp_accuracy]
        lines = [
            " | ".join(f"{h:>8}" for h in head),
            " | ".join(f"{100 * v:8.1f}" for v in vals),
            "",
            "IA by object number per image",
            " | ".join(f"{n:>6}" for n in (2, 3, 4, 5)),
            " | ".join(
                f"{100 * self.per_count_ia[n]:6.1f}" if n in self.per_count_ia else f"{'-':>6}"
                for n in (2, 3, 4, 5)
            ),
        ]
        return "\n".join(lines)


def grasp_match(pred: GraspRect, gts: Sequence[GraspRect]) -> bool:
    """Rectangle metric: Jaccard strictly above 0.25 and angle within 30 degrees of some gt."""
    for gt in gts:
        if pred.cls != gt.cls:
            continue
        if grasp_angle_diff(pred.theta_deg, gt.theta_deg) > ANGLE_THRESH_DEG:
            continue
        if jaccard_rotated(pred, gt) > JACCARD_THRESH:
            return True
    return False


def _score_order(preds: Sequence[ObjectBox]) -> list[int]:
    # stable: equal scores keep input order
    return sorted(range(len(preds)), key=lambda i: -(preds[i].score if preds[i].score is not None else 0.0))


def match_detections(
    preds: Sequence[ObjectBox], gts: Sequence[ObjectBox], iou_thresh: float = DET_IOU
) -> list[tuple[ObjectBox, Optional[ObjectBox]]]:
    """Greedy matching by descending score; output follows that score order."""
    used: set[int] = set()
    out = []
    for i in _score_order(preds):
        p = preds[i]
        best, best_iou = None, iou_thresh
        for k, g in enumerate(gts):
            if k in used or g.cls != p.cls:
                continue
            iou = aabb_iou(p, g)
            if iou >= best_iou and (best is None or iou > best_iou):
                best, best_iou = k, iou
        if best is not None:
            used.add(best)
            out.append((p, gts[best]))
        else:
            out.append((p, None))
    return out


def average_precision(scores: np.ndarray, tp: np.ndarray, n_gt: int) -> float:
    """All-points interpolated AP from per-detection TP flags."""
    if n_gt == 0:
        return 0.0
    if len(scores) == 0:
        return 0.0
    order = np.argsort(-scores, kind="stable")
    tp = tp[order].astype(float)
    ctp = np.cumsum(tp)
    cfp = np.cumsum(1.0 - tp)
    recall = ctp / n_gt
    precision = ctp / (ctp + cfp)
    mrec = np.concatenate([[0.0], recall, [1.0]])
    mpre = np.concatenate([[0.0], precision, [0.0]])
    for i in range(len(mpre) - 2, -1, -1):
        mpre[i] = max(mpre[i], mpre[i + 1])
    idx = np.nonzero(mrec[1:] != mrec[:-1])[0]
    return float(np.sum((mrec[idx + 1] - mrec[idx]) * mpre[idx + 1]))


def detection_map(
    scenes: Sequence[tuple[Sequence[ObjectBox], Sequence[ObjectBox]]], iou_thresh: float = DET_IOU
) -> tuple[float, dict[int, float]]:
    """Mean AP over classes present in the ground truth."""
    n_gt: dict[int, int] = {}
    dets: dict[int, list[tuple[float, bool]]] = {}
    for preds, gts in scenes:
        for g in gts:
            n_gt[g.cls] = n_gt.get(g.cls, 0) + 1
        for p, g in match_detections(preds, gts, iou_thresh):
            dets.setdefault(p.cls, []).append((p.score if p.score is not None else 0.0, g is not None))
    per_class = {}
    for c in sorted(n_gt):
        d = dets.get(c, [])
        scores = np.array([s for s, _ in d], dtype=float)
        tp = np.array([t for _, t in d], dtype=bool)
        per_class[c] = average_precision(scores, tp, n_gt[c])
    if not per_class:
        return 0.0, {}
    return float(np.mean(list(per_class.values()))), per_class


def _gt_to_pred(pred: ScenePrediction, gt: SceneAnnotation) -> dict[int, int]:
    """gt object id -> matched predicted object id."""
    return {g.id: p.id for p, g in match_detections(pred.objects, gt.objects) if g is not None}


def _pred_kind(pred: ScenePrediction, a: int, b: int) -> RelationKind:
    """Predicted relation of predicted objects a -> b (any order)."""
    if a < b:
        return pred.relations.get((a, b), RelationKind.NO_REL)
    return relation_inverse(pred.relations.get((b, a), RelationKind.NO_REL))


def _pair_outcomes(pred: ScenePrediction, gt: SceneAnnotation) -> list[bool]:
    m = _gt_to_pred(pred, gt)
    out = []
    for (i, j), kind in sorted(gt.relation_map().items()):
        if i not in m or j not in m:
            out.append(False)
        else:
            out.append(_pred_kind(pred, m[i], m[j]) is kind)
    return out


def relation_or(scenes: Sequence[tuple[ScenePrediction, SceneAnnotation]]) -> float:
    correct = total = 0
    for pred, gt in scenes:
        res = _pair_outcomes(pred, gt)
        correct += sum(res)
        total += len(res)
    return correct / total if total else 0.0


def relation_op(scenes: Sequence[tuple[ScenePrediction, SceneAnnotation]]) -> float:
    """Macro-averaged precision over On / Under / NoRel.

    Every unordered pair of predicted objects is a prediction. A kind never
    predicted scores 1 if the ground truth never contains it, else 0.
    """
    predicted = {k: 0 for k in RELATION_KINDS}
    correct = {k: 0 for k in RELATION_KINDS}
    required = {k: False for k in RELATION_KINDS}
    for pred, gt in scenes:
        gt_rel = gt.relation_map()
        for k in gt_rel.values():
            required[k] = True
        p2g = {v: k for k, v in _gt_to_pred(pred, gt).items()}
        ids = sorted(o.id for o in pred.objects)
        for x in range(len(ids)):
            for y in range(x + 1, len(ids)):
                a, b = ids[x], ids[y]
                kind = _pred_kind(pred, a, b)
                predicted[kind] += 1
                if a in p2g and b in p2g:
                    ga, gb = p2g[a], p2g[b]
                    if ga < gb:
                        truth = gt_rel.get((ga, gb))
                    else:
                        truth = gt_rel.get((gb, ga))
                        truth = relation_inverse(truth) if truth is not None else None
                    if truth is kind:
                        correct[kind] += 1
    precs = []
    for k in RELATION_KINDS:
        if predicted[k]:
            precs.append(correct[k] / predicted[k])
        else:
            precs.append(0.0 if required[k] else 1.0)
    return float(np.mean(precs))


def relation_ia(scenes: Sequence[tuple[ScenePrediction, SceneAnnotation]]) -> tuple[float, dict[int, float]]:
    hits: dict[int, list[bool]] = {}
    allres = []
    for pred, gt in scenes:
        m = _gt_to_pred(pred, gt)
        ok = len(m) == len(gt.objects) and all(_pair_outcomes(pred, gt))
        allres.append(ok)
        hits.setdefault(len(gt.objects), []).append(ok)
    if not allres:
        return 0.0, {}
    return sum(allres) / len(allres), {n: sum(v) / len(v) for n, v in sorted(hits.items())}


def grasp_accuracy(scenes: Sequence[tuple[ScenePrediction, SceneAnnotation]]) -> float:
    """Fraction of gt objects whose most confident predicted grasp passes the rectangle metric."""
    hit = total = 0
    for pred, gt in scenes:
        m = _gt_to_pred(pred, gt)
        for obj in gt.objects:
            gts = gt.grasps_of(obj.id)
            if not gts:
                continue
            total += 1
            if obj.id not in m:
                continue
            cand = [g for g in pred.grasps if g.owner == m[obj.id]]
            if not cand:
                continue
            top = max(cand, key=lambda g: g.confidence if g.confidence is not None else 0.0)
            hit += grasp_match(top, gts)
    return hit / total if total else 0.0


def evaluate(scenes: Sequence[tuple[ScenePrediction, SceneAnnotation]]) -> EvalReport:
    if not scenes:
        raise ValueError("no scenes to evaluate")
    mAP, per_class = detection_map([(p.objects, g.objects) for p, g in scenes])
    ia, per_count = relation_ia(scenes)
    return EvalReport(
        map=mAP,
        or_recall=relation_or(scenes),
        op_precision=relation_op(scenes),
        ia_accuracy=ia,
        grasp_accuracy=grasp_accuracy(scenes),
        per_class_ap=per_class,
        per_count_ia=per_count,
    )
