"""Domain types shared across the workbench: grasps, boxes, relations, scenes."""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np


def normalize_angle(theta_deg: float) -> float:
    """Map an angle onto the half-open interval (-90, 90] by adding multiples of 180."""
    t = math.fmod(float(theta_deg), 180.0)
    if t <= -90.0:
        t += 180.0
    elif t > 90.0:
        t -= 180.0
    return t


class RelationKind(enum.Enum):
    ON = "on"
    UNDER = "under"
    NO_REL = "no_rel"

    @property
    def index(self) -> int:
        return _KIND_ORDER.index(self)

    @classmethod
    def from_index(cls, i: int) -> "RelationKind":
        return _KIND_ORDER[i]


_KIND_ORDER = (RelationKind.ON, RelationKind.UNDER, RelationKind.NO_REL)
RELATION_KINDS = _KIND_ORDER


def relation_inverse(kind: RelationKind) -> RelationKind:
    """Relation seen from the other object of the pair."""
    if kind is RelationKind.ON:
        return RelationKind.UNDER
    if kind is RelationKind.UNDER:
        return RelationKind.ON
    return RelationKind.NO_REL


@dataclass(frozen=True)
class GraspRect:
    """Oriented grasp rectangle.

    ``w`` runs along the gripper opening direction, ``h`` along the finger width.
    ``theta_deg`` is normalized into (-90, 90] on construction.
    """

    cx: float
    cy: float
    w: float
    h: float
    theta_deg: float
    cls: int = 0
    confidence: Optional[float] = None
    owner: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "theta_deg", normalize_angle(self.theta_deg))


@dataclass(frozen=True)
class ObjectBox:
    id: int
    cls: int
    x1: float
    y1: float
    x2: float
    y2: float
    score: Optional[float] = None

    @property
    def width(self) -> float:
        return self.x2 - self.x1

    @property
    def height(self) -> float:
        return self.y2 - self.y1

    @property
    def area(self) -> float:
        return max(0.0, self.width) * max(0.0, self.height)

    @property
    def center(self) -> tuple[float, float]:
        return (0.5 * (self.x1 + self.x2), 0.5 * (self.y1 + self.y2))

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.x1, self.y1, self.x2, self.y2)


@dataclass(frozen=True)
class Relation:
    from_id: int
    to_id: int
    kind: RelationKind

    def canonical(self) -> "Relation":
        """Same fact expressed in the min-id -> max-id direction."""
        if self.from_id <= self.to_id:
            return self
        return Relation(self.to_id, self.from_id, relation_inverse(self.kind))


@dataclass(frozen=True, eq=False)
class SceneAnnotation:
    """One annotated image.

    ``image_ref`` is a path string or ``"embedded"``; ``pixels`` optionally holds
    the H x W x 3 uint8 buffer. Relations are kept in canonical direction.
    """

    width: int
    height: int
    objects: tuple[ObjectBox, ...] = ()
    grasps: tuple[GraspRect, ...] = ()
    relations: tuple[Relation, ...] = ()
    image_ref: str = "embedded"
    pixels: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        object.__setattr__(self, "objects", tuple(self.objects))
        object.__setattr__(self, "grasps", tuple(self.grasps))
        object.__setattr__(self, "relations", tuple(r.canonical() for r in self.relations))

    def __eq__(self, other):
        if not isinstance(other, SceneAnnotation):
            return NotImplemented
        return (
            self.width == other.width
            and self.height == other.height
            and self.objects == other.objects
            and self.grasps == other.grasps
            and self.relations == other.relations
            and self.image_ref == other.image_ref
        )

    def object_by_id(self, oid: int) -> ObjectBox:
        for o in self.objects:
            if o.id == oid:
                return o
        raise KeyError(oid)

    def grasps_of(self, oid: int) -> list[GraspRect]:
        return [g for g in self.grasps if g.owner == oid]

    def relation_map(self) -> dict[tuple[int, int], RelationKind]:
        """Canonical (min_id, max_id) -> kind."""
        return {(r.from_id, r.to_id): r.kind for r in self.relations}

    def replace(self, **changes) -> "SceneAnnotation":
        kw = dict(
            width=self.width,
            height=self.height,
            objects=self.objects,
            grasps=self.grasps,
            relations=self.relations,
            image_ref=self.image_ref,
            pixels=self.pixels,
        )
        kw.update(changes)
        return SceneAnnotation(**kw)


def validate_scene(scene: SceneAnnotation) -> list[str]:
    """Return human-readable invariant violations; empty when the scene is valid."""
    problems: list[str] = []
    ids = [o.id for o in scene.objects]
    seen: set[int] = set()
    for o in scene.objects:
        if o.id in seen:
            problems.append(f"object id {o.id} duplicated")
        seen.add(o.id)
        if not o.x1 < o.x2:
            problems.append(f"object {o.id} x1 >= x2")
        if not o.y1 < o.y2:
            problems.append(f"object {o.id} y1 >= y2")
        if o.cls < 0:
            problems.append(f"object {o.id} cls negative")
        if o.score is not None and not 0.0 <= o.score <= 1.0:
            problems.append(f"object {o.id} score out of [0,1]")

    for g in scene.grasps:
        if g.owner is None or g.owner not in seen:
            problems.append(f"grasp owner {g.owner} missing")
        tag = f"grasp of object {g.owner}"
        if not g.w > 0:
            problems.append(f"{tag} w <= 0")
        if not g.h > 0:
            problems.append(f"{tag} h <= 0")
        if not -90.0 < g.theta_deg <= 90.0:
            problems.append(f"{tag} theta_deg out of (-90,90]")
        if g.cls < 0:
            problems.append(f"{tag} cls negative")
        if g.confidence is not None and not 0.0 <= g.confidence <= 1.0:
            problems.append(f"{tag} confidence out of [0,1]")

    n = len(ids)
    expected = n * (n - 1) // 2
    pairs: set[tuple[int, int]] = set()
    for r in scene.relations:
        if r.from_id == r.to_id:
            problems.append(f"self relation on object {r.from_id}")
            continue
        for end in (r.from_id, r.to_id):
            if end not in seen:
                problems.append(f"relation references missing object {end}")
        key = (min(r.from_id, r.to_id), max(r.from_id, r.to_id))
        if key in pairs:
            problems.append(f"relation pair {key[0]}-{key[1]} duplicated")
        pairs.add(key)
    if len(scene.relations) != expected:
        problems.append(f"relation coverage {len(scene.relations)} != {expected}")
    return problems
