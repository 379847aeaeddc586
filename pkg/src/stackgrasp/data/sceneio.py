"""Scene JSON files: canonical writer and tolerant reader."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Any, Optional

import numpy as np

from ..scene import GraspRect, ObjectBox, Relation, RelationKind, SceneAnnotation, validate_scene


class ParseError(ValueError):
    pass


class ValidationError(ValueError):
    def __init__(self, violations: list[str]):
        self.violations = violations
        super().__init__("invalid scene: " + "; ".join(violations))


def _f(v: float) -> str:
    s = f"{float(v):.6f}"
    return "0.000000" if s == "-0.000000" else s


def dumps_scene(scene: SceneAnnotation) -> str:
    """Canonical text: fixed key order, floats with six decimals, one item per line."""
    lines = ["{"]
    lines.append(f'  "image": {json.dumps(scene.image_ref)},')
    lines.append(f'  "width": {int(scene.width)},')
    lines.append(f'  "height": {int(scene.height)},')

    objs = []
    for o in scene.objects:
        item = f'{{"id": {int(o.id)}, "cls": {int(o.cls)}, "bbox": [{_f(o.x1)}, {_f(o.y1)}, {_f(o.x2)}, {_f(o.y2)}]'
        if o.score is not None:
            item += f', "score": {_f(o.score)}'
        objs.append("    " + item + "}")
    lines.append('  "objects": [' + ("\n" + ",\n".join(objs) + "\n  ]," if objs else "],"))

    grasps = []
    for g in scene.grasps:
        owner = "null" if g.owner is None else str(int(g.owner))
        item = (
            f'{{"owner": {owner}, "cx": {_f(g.cx)}, "cy": {_f(g.cy)}, '
            f'"w": {_f(g.w)}, "h": {_f(g.h)}, "theta": {_f(g.theta_deg)}'
        )
        if g.confidence is not None:
            item += f', "confidence": {_f(g.confidence)}'
        grasps.append("    " + item + "}")
    lines.append('  "grasps": [' + ("\n" + ",\n".join(grasps) + "\n  ]," if grasps else "],"))

    rels = [
        f'    {{"from": {int(r.from_id)}, "to": {int(r.to_id)}, "kind": "{r.kind.value}"}}'
        for r in sorted(scene.relations, key=lambda r: (r.from_id, r.to_id))
    ]
    lines.append('  "relations": [' + ("\n" + ",\n".join(rels) + "\n  ]" if rels else "]"))
    lines.append("}")
    return "\n".join(lines) + "\n"


def _need(doc: dict, key: str, where: str) -> Any:
    if not isinstance(doc, dict):
        raise ParseError(f"{where}: expected an object")
    if key not in doc:
        raise ParseError(f"{where}: missing key {key!r}")
    return doc[key]


def _num(v: Any, where: str) -> float:
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ParseError(f"{where}: expected a number, got {v!r}")
    return float(v)


def _int(v: Any, where: str) -> int:
    if isinstance(v, bool) or not isinstance(v, (int, float)) or int(v) != v:
        raise ParseError(f"{where}: expected an integer, got {v!r}")
    return int(v)


def _list(v: Any, where: str) -> list:
    if not isinstance(v, list):
        raise ParseError(f"{where}: expected a list")
    return v


def parse_scene(doc: dict) -> SceneAnnotation:
    """Build a scene from decoded JSON; unknown keys are ignored."""
    image = _need(doc, "image", "scene")
    if not isinstance(image, str):
        raise ParseError("scene.image: expected a string")
    width = _int(_need(doc, "width", "scene"), "scene.width")
    height = _int(_need(doc, "height", "scene"), "scene.height")

    objects = []
    for k, o in enumerate(_list(_need(doc, "objects", "scene"), "scene.objects")):
        where = f"objects[{k}]"
        bbox = _list(_need(o, "bbox", where), f"{where}.bbox")
        if len(bbox) != 4:
            raise ParseError(f"{where}.bbox: expected 4 numbers")
        x1, y1, x2, y2 = (_num(v, f"{where}.bbox") for v in bbox)
        score = o.get("score")
        objects.append(
            ObjectBox(
                id=_int(_need(o, "id", where), f"{where}.id"),
                cls=_int(_need(o, "cls", where), f"{where}.cls"),
                x1=x1,
                y1=y1,
                x2=x2,
                y2=y2,
                score=None if score is None else _num(score, f"{where}.score"),
            )
        )
    cls_of = {o.id: o.cls for o in objects}

    grasps = []
    for k, g in enumerate(_list(_need(doc, "grasps", "scene"), "scene.grasps")):
        where = f"grasps[{k}]"
        owner_raw = _need(g, "owner", where)
        owner = None if owner_raw is None else _int(owner_raw, f"{where}.owner")
        conf = g.get("confidence")
        grasps.append(
            GraspRect(
                cx=_num(_need(g, "cx", where), f"{where}.cx"),
                cy=_num(_need(g, "cy", where), f"{where}.cy"),
                w=_num(_need(g, "w", where), f"{where}.w"),
                h=_num(_need(g, "h", where), f"{where}.h"),
                theta_deg=_num(_need(g, "theta", where), f"{where}.theta"),
                cls=cls_of.get(owner, 0),
                confidence=None if conf is None else _num(conf, f"{where}.confidence"),
                owner=owner,
            )
        )

    relations = []
    for k, r in enumerate(_list(_need(doc, "relations", "scene"), "scene.relations")):
        where = f"relations[{k}]"
        kind_raw = _need(r, "kind", where)
        try:
            kind = RelationKind(kind_raw)
        except ValueError:
            raise ParseError(f"{where}.kind: unknown relation {kind_raw!r}") from None
        relations.append(
            Relation(_int(_need(r, "from", where), f"{where}.from"), _int(_need(r, "to", where), f"{where}.to"), kind)
        )

    return SceneAnnotation(
        width=width, height=height, objects=objects, grasps=grasps, relations=relations, image_ref=image
    )


def loads_scene(text: str, validate: bool = True) -> SceneAnnotation:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ParseError(f"line {e.lineno} column {e.colno}: {e.msg}") from None
    scene = parse_scene(doc)
    if validate:
        problems = validate_scene(scene)
        if problems:
            raise ValidationError(problems)
    return scene


def load_scene(path, validate: bool = True, with_pixels: bool = False) -> SceneAnnotation:
    path = Path(path)
    try:
        scene = loads_scene(path.read_text(encoding="utf-8"), validate=validate)
    except ParseError as e:
        raise ParseError(f"{path}: {e}") from None
    if with_pixels and scene.image_ref != "embedded":
        from .images import read_png

        img_path = Path(scene.image_ref)
        if not img_path.is_absolute():
            img_path = path.parent / img_path
        scene = scene.replace(pixels=read_png(img_path))
    return scene


def save_scene(scene: SceneAnnotation, path) -> None:
    Path(path).write_text(dumps_scene(scene), encoding="utf-8")


def scene_pixels(scene: SceneAnnotation, base: Optional[Path] = None) -> np.ndarray:
    if scene.pixels is not None:
        return scene.pixels
    if scene.image_ref == "embedded":
        raise ParseError("scene has no pixel data")
    from .images import read_png

    p = Path(scene.image_ref)
    if base is not None and not p.is_absolute():
        p = base / p
    return read_png(p)
