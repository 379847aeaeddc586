"""Best-effort importer for VMRD-style directories.

Expected layout (public VMRD conventions, all parts optional except annotations)::

    <root>/Annotations/<name>.xml   VOC objects with <index> and <father> lists
    <root>/Grasps/<name>.txt        one grasp per line: 8 corner coords, then owner index
    <root>/JPEGImages/<name>.jpg|png

An object's ``<father>`` entries name the objects it rests on, so each father
``f`` of object ``o`` yields On(o, f). Every unordered pair without such an
entry becomes NoRel. Bad files or lines are skipped with a warning; the import
itself never aborts.
"""

from __future__ import annotations

import logging
import math
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

from ..scene import GraspRect, ObjectBox, Relation, RelationKind, SceneAnnotation, validate_scene

log = logging.getLogger(__name__)


@dataclass
class ImportReport:
    parsed: int = 0
    skipped: int = 0
    grasps_skipped: int = 0
    warnings: list[str] = field(default_factory=list)

    def warn(self, msg: str):
        self.warnings.append(msg)
        log.warning(msg)

    def text(self) -> str:
        lines = [
            f"scenes parsed: {self.parsed}",
            f"scenes skipped: {self.skipped}",
            f"grasp lines skipped: {self.grasps_skipped}",
        ]
        if self.parsed == 0 and self.skipped == 0:
            lines.append("no annotation files found")
        lines.extend(f"warning: {w}" for w in self.warnings)
        return "\n".join(lines) + "\n"


def _int_text(node, tag: str):
    el = node.find(tag)
    if el is None or el.text is None:
        raise ValueError(f"missing <{tag}>")
    return int(float(el.text.strip()))


def grasp_from_corners(pts: list[tuple[float, float]], cls: int, owner: int) -> GraspRect:
    """Rectangle from 4 ordered corners; the first edge is the gripper opening."""
    (x0, y0), (x1, y1), (x2, y2), (x3, y3) = pts
    w = math.hypot(x1 - x0, y1 - y0)
    h = math.hypot(x2 - x1, y2 - y1)
    theta = math.degrees(math.atan2(y1 - y0, x1 - x0))
    cx = (x0 + x1 + x2 + x3) / 4
    cy = (y0 + y1 + y2 + y3) / 4
    return GraspRect(cx, cy, w, h, theta, cls=cls, owner=owner)


def _parse_annotation(text: str, class_ids: dict[str, int]):
    root = ET.fromstring(text)
    size = root.find("size")
    width = _int_text(size, "width") if size is not None else 0
    height = _int_text(size, "height") if size is not None else 0
    filename = (root.findtext("filename") or "").strip()
    objects = []
    fathers: dict[int, list[int]] = {}
    for k, obj in enumerate(root.findall("object")):
        name = (obj.findtext("name") or "unknown").strip()
        cls = class_ids.setdefault(name, len(class_ids))
        bb = obj.find("bndbox")
        if bb is None:
            raise ValueError(f"object {k} lacks <bndbox>")
        x1, y1, x2, y2 = (float(bb.findtext(t)) for t in ("xmin", "ymin", "xmax", "ymax"))
        idx_text = obj.findtext("index")
        oid = int(float(idx_text)) if idx_text is not None else k
        objects.append(ObjectBox(oid, cls, x1, y1, x2, y2))
        fl = []
        fnode = obj.find("father")
        if fnode is not None:
            for n in fnode.findall("num"):
                fl.append(int(float(n.text)))
            if not fl and fnode.text and fnode.text.strip():
                fl.extend(int(float(t)) for t in fnode.text.split())
        fathers[oid] = fl
    if not width or not height:
        width = int(math.ceil(max((o.x2 for o in objects), default=1)))
        height = int(math.ceil(max((o.y2 for o in objects), default=1)))
    return filename, width, height, objects, fathers


def _relations(objects: list[ObjectBox], fathers: dict[int, list[int]]) -> list[Relation]:
    on: set[tuple[int, int]] = set()
    ids = {o.id for o in objects}
    for child, fl in fathers.items():
        for f in fl:
            if f in ids and f != child:
                on.add((child, f))
    rels = []
    order = sorted(ids)
    for a in range(len(order)):
        for b in range(a + 1, len(order)):
            i, j = order[a], order[b]
            if (i, j) in on and (j, i) not in on:
                rels.append(Relation(i, j, RelationKind.ON))
            elif (j, i) in on and (i, j) not in on:
                rels.append(Relation(i, j, RelationKind.UNDER))
            else:
                rels.append(Relation(i, j, RelationKind.NO_REL))
    return rels


def _parse_grasps(text: str, cls_of: dict[int, int], report: ImportReport, where: str) -> list[GraspRect]:
    out = []
    for ln, line in enumerate(text.splitlines(), 1):
        toks = line.split()
        if not toks:
            continue
        try:
            coords = [float(t) for t in toks[:8]]
            if len(coords) != 8 or len(toks) < 9:
                raise ValueError("expected 8 coordinates and an owner index")
            owner = int(float(toks[8]))
            if owner not in cls_of:
                raise ValueError(f"owner {owner} not among objects")
            pts = [(coords[2 * k], coords[2 * k + 1]) for k in range(4)]
            g = grasp_from_corners(pts, cls_of[owner], owner)
            if not (g.w > 0 and g.h > 0 and math.isfinite(g.cx) and math.isfinite(g.cy)):
                raise ValueError("degenerate rectangle")
            out.append(g)
        except (ValueError, OverflowError) as e:
            report.grasps_skipped += 1
            report.warn(f"{where}:{ln}: grasp skipped ({e})")
    return out


def import_vmrd(root) -> tuple[list[SceneAnnotation], ImportReport]:
    root = Path(root)
    report = ImportReport()
    scenes: list[SceneAnnotation] = []
    ann_dir = root / "Annotations"
    files = sorted(ann_dir.glob("*.xml")) if ann_dir.is_dir() else []
    class_ids: dict[str, int] = {}
    for path in files:
        try:
            text = path.read_text(encoding="utf-8", errors="replace")
            filename, width, height, objects, fathers = _parse_annotation(text, class_ids)
            cls_of = {o.id: o.cls for o in objects}
            grasps: list[GraspRect] = []
            gpath = root / "Grasps" / (path.stem + ".txt")
            if gpath.is_file():
                grasps = _parse_grasps(gpath.read_text(encoding="utf-8", errors="replace"), cls_of, report, gpath.name)
            image_ref = "embedded"
            for cand in (filename, path.stem + ".jpg", path.stem + ".png"):
                if cand and (root / "JPEGImages" / cand).is_file():
                    image_ref = str(root / "JPEGImages" / cand)
                    break
            scene = SceneAnnotation(
                width=width,
                height=height,
                objects=objects,
                grasps=grasps,
                relations=_relations(objects, fathers),
                image_ref=image_ref,
            )
            problems = validate_scene(scene)
            if problems:
                raise ValueError("; ".join(problems[:3]))
            scenes.append(scene)
            report.parsed += 1
        except Exception as e:  # tolerant importer: one bad file never stops the rest
            report.skipped += 1
            report.warn(f"{path.name}: skipped ({type(e).__name__}: {e})")
    return scenes, report
