"""Deterministic SVG drawings of scenes: boxes, grasp rectangles and a relation-tree inset."""

from __future__ import annotations

from typing import Optional
from xml.sax.saxutils import escape

from .data.synth import PALETTE
from .geometry import rect_corners
from .planner import RelationGraph, build_graph
from .scene import SceneAnnotation

INSET_W = 160
NODE_R = 9


def _color(cls: int) -> str:
    r, g, b = PALETTE[cls % len(PALETTE)]
    return f"#{r:02x}{g:02x}{b:02x}"


def _n(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


def _layers(g: RelationGraph) -> dict[int, int]:
    """Depth of each node: 0 for objects nothing rests on, else 1 + deepest object above it.

    Nodes on a cycle keep whatever depth they reached when the sweep stops.
    """
    depth = {n: 0 for n in g.nodes}
    for _ in range(len(g.nodes)):
        changed = False
        for a, b in sorted(g.edges):
            if depth[b] < depth[a] + 1 and depth[a] + 1 < len(g.nodes):
                depth[b] = depth[a] + 1
                changed = True
        if not changed:
            break
    return depth


def _scene_layer(scene: SceneAnnotation, dashed: bool, tag: str) -> list[str]:
    dash = ' stroke-dasharray="4 2"' if dashed else ""
    out = [f'<g class="{tag}">']
    for o in sorted(scene.objects, key=lambda o: o.id):
        out.append(
            f'<rect x="{_n(o.x1)}" y="{_n(o.y1)}" width="{_n(o.width)}" height="{_n(o.height)}" '
            f'fill="none" stroke="{_color(o.cls)}" stroke-width="1.5"{dash} data-id="{o.id}"/>'
        )
        out.append(f'<text x="{_n(o.x1 + 2)}" y="{_n(o.y1 + 9)}" font-size="8" fill="#000">{o.id}</text>')
    for g in scene.grasps:
        pts = " ".join(f"{_n(x)},{_n(y)}" for x, y in rect_corners(g))
        out.append(f'<polygon points="{pts}" fill="none" stroke="#202020" stroke-width="0.8"{dash}/>')
    out.append("</g>")
    return out


def _tree_inset(scene: SceneAnnotation, x0: float, height: float, dashed: bool, tag: str) -> list[str]:
    g = build_graph(scene.objects, scene.relations)
    depth = _layers(g)
    rows: dict[int, list[int]] = {}
    for n in g.nodes:
        rows.setdefault(depth[n], []).append(n)
    n_rows = max(rows) + 1 if rows else 1
    pos = {}
    for d, ids in rows.items():
        for k, n in enumerate(sorted(ids)):
            pos[n] = (x0 + INSET_W * (k + 1) / (len(ids) + 1), 20 + (height - 40) * (d + 0.5) / n_rows)
    dash = ' stroke-dasharray="4 2"' if dashed else ""
    cls = {o.id: o.cls for o in scene.objects}
    out = [f'<g class="{tag}">']
    for a, b in sorted(g.edges):
        (xa, ya), (xb, yb) = pos[a], pos[b]
        out.append(f'<line x1="{_n(xa)}" y1="{_n(ya)}" x2="{_n(xb)}" y2="{_n(yb)}" stroke="#404040"{dash}/>')
    for n in g.nodes:
        x, y = pos[n]
        out.append(f'<circle cx="{_n(x)}" cy="{_n(y)}" r="{NODE_R}" fill="{_color(cls[n])}"/>')
        out.append(f'<text x="{_n(x)}" y="{_n(y + 3)}" font-size="9" text-anchor="middle" fill="#fff">{n}</text>')
    out.append("</g>")
    return out


def render_svg(scene: SceneAnnotation, pred: Optional[SceneAnnotation] = None, title: str = "") -> str:
    """SVG text for a scene; ``pred`` is overlaid dashed, and its tree shares the inset."""
    w, h = scene.width, scene.height
    total_w = w + INSET_W
    parts = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{total_w}" height="{h}" viewBox="0 0 {total_w} {h}">',
    ]
    if title:
        parts.append(f"<title>{escape(title)}</title>")
    # background as a path so that <rect> elements are exactly the object boxes
    parts.append(f'<path class="frame" d="M0 0H{w}V{h}H0Z" fill="#ebebeb"/>')
    parts += _scene_layer(scene, dashed=False, tag="gt")
    if pred is not None:
        parts += _scene_layer(pred, dashed=True, tag="pred")
    parts.append(f'<line x1="{w}" y1="0" x2="{w}" y2="{h}" stroke="#999"/>')
    if pred is None:
        parts += _tree_inset(scene, w, h, dashed=False, tag="gt-tree")
    else:
        half = h / 2
        parts += _tree_inset(scene, w, half, dashed=False, tag="gt-tree")
        parts += [f'<g transform="translate(0,{_n(half)})">'] + _tree_inset(pred, w, half, dashed=True, tag="pred-tree") + ["</g>"]
    parts.append("</svg>")
    return "\n".join(parts) + "\n"
