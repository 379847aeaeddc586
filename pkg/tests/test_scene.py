import math

import pytest
from hypothesis import given
from hypothesis import strategies as st

from stackgrasp.scene import (
    GraspRect,
    ObjectBox,
    Relation,
    RelationKind,
    SceneAnnotation,
    normalize_angle,
    relation_inverse,
    validate_scene,
)


def two_object_scene(**kw):
    base = dict(
        width=40,
        height=40,
        objects=[ObjectBox(0, 1, 0, 0, 10, 10), ObjectBox(1, 2, 5, 5, 20, 20)],
        grasps=[GraspRect(5, 5, 8, 3, 0, cls=1, owner=0), GraspRect(12, 12, 10, 3, 90, cls=2, owner=1)],
        relations=[Relation(0, 1, RelationKind.ON)],
    )
    base.update(kw)
    return SceneAnnotation(**base)


def test_valid_scene_has_no_violations():
    assert validate_scene(two_object_scene()) == []


def test_missing_grasp_owner_is_reported():
    s = two_object_scene(grasps=[GraspRect(5, 5, 8, 3, 0, owner=7)])
    assert validate_scene(s) == ["grasp owner 7 missing"]


def test_relation_coverage_is_counted():
    objs = [ObjectBox(i, i, 10 * i, 0, 10 * i + 5, 5) for i in range(3)]
    rels = [Relation(0, 1, RelationKind.NO_REL), Relation(1, 2, RelationKind.NO_REL)]
    s = SceneAnnotation(40, 40, objs, [], rels)
    assert validate_scene(s) == ["relation coverage 2 != 3"]


def test_violations_name_the_object():
    s = two_object_scene(objects=[ObjectBox(0, 1, 5, 0, 5, 10), ObjectBox(1, 2, 5, 5, 20, 20)])
    assert validate_scene(s) == ["object 0 x1 >= x2"]


def test_self_and_duplicate_relations():
    objs = [ObjectBox(0, 0, 0, 0, 5, 5), ObjectBox(1, 1, 1, 1, 6, 6)]
    rels = [Relation(0, 1, RelationKind.ON), Relation(1, 0, RelationKind.UNDER), Relation(1, 1, RelationKind.ON)]
    problems = validate_scene(SceneAnnotation(10, 10, objs, [], rels))
    assert "relation pair 0-1 duplicated" in problems
    assert "self relation on object 1" in problems


def test_relations_are_stored_canonically():
    s = two_object_scene(relations=[Relation(1, 0, RelationKind.ON)])
    assert s.relations == (Relation(0, 1, RelationKind.UNDER),)


@pytest.mark.parametrize(
    "kind, expected",
    [(RelationKind.ON, RelationKind.UNDER), (RelationKind.UNDER, RelationKind.ON), (RelationKind.NO_REL, RelationKind.NO_REL)],
)
def test_relation_inverse(kind, expected):
    assert relation_inverse(kind) is expected
    assert relation_inverse(relation_inverse(kind)) is kind


def test_relation_kind_index_roundtrip():
    for k in RelationKind:
        assert RelationKind.from_index(k.index) is k


@given(st.floats(min_value=-1e4, max_value=1e4, allow_nan=False))
def test_normalize_angle_range_and_period(t):
    n = normalize_angle(t)
    assert -90.0 < n <= 90.0
    # differs from the input by a multiple of 180
    k = (t - n) / 180.0
    assert abs(k - round(k)) < 1e-9
    assert normalize_angle(n) == n


def test_normalize_angle_endpoints():
    assert normalize_angle(90.0) == 90.0
    assert normalize_angle(-90.0) == 90.0
    assert normalize_angle(270.0) == 90.0
    assert math.isclose(normalize_angle(-179.0), 1.0)


def test_grasp_angle_normalized_on_construction():
    assert GraspRect(0, 0, 2, 1, -90).theta_deg == 90.0


def test_equality_ignores_pixels():
    import numpy as np

    a = two_object_scene()
    b = a.replace(pixels=np.zeros((40, 40, 3), dtype=np.uint8))
    assert a == b
