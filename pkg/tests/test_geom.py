import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from geodiag.geom import (
    ANGLE_MARKS,
    BAR_MARKS,
    PARALLEL_MARKS,
    REL_TYPES,
    SYMBOL_CLASSES,
    TEXT_CLASSES,
    Box,
    Circle,
    CircleShape,
    GeometryError,
    KnowledgeRules,
    Line,
    Point,
    Relation,
    Scene,
    Segment,
    Symbol,
    Text,
    box_iou,
    canonical_angle,
    canonical_line_name,
    dist_point_circle,
    dist_point_line,
    point_on_ray,
    rel_group,
)

coord = st.floats(-500, 500, allow_nan=False)


def dense_segment_distance(p, a, b, n=200001):
    t = np.linspace(0.0, 1.0, n)[:, None]
    pts = np.asarray(a) + t * (np.asarray(b) - np.asarray(a))
    return float(np.min(np.linalg.norm(pts - np.asarray(p), axis=1)))


def scene_of(points, lines=()):
    return Scene(points=tuple(Point(k, float(x), float(y)) for k, (x, y) in points.items()), lines=tuple(lines))


# --- distances -------------------------------------------------------------


def test_dist_point_line_examples():
    seg = Segment(0, 0, 10, 0)
    assert dist_point_line((3, 4), seg) == pytest.approx(4.0)
    assert dist_point_line((0, 0), Segment(0, -1, 0, 1)) == pytest.approx(0.0)
    assert dist_point_line((12, 5), seg) == pytest.approx(math.sqrt(29), abs=1e-12)
    assert dense_segment_distance((12, 5), (0, 0), (10, 0)) == pytest.approx(math.sqrt(29), abs=1e-6)


def test_degenerate_segment_rejected():
    with pytest.raises(GeometryError):
        Segment(1, 1, 1, 1)


def test_dist_point_circle_examples():
    c = CircleShape(0, 0, 5)
    assert dist_point_circle((5, 0), c) == 0.0
    assert dist_point_circle((0, 0), c) == 5.0
    small = CircleShape(0, 0, 2)
    assert dist_point_circle((3, 4), small) == pytest.approx(3.0)
    res = minimize_scalar(
        lambda th: math.hypot(3 - 2 * math.cos(th), 4 - 2 * math.sin(th)), bounds=(0, 2 * math.pi), method="bounded"
    )
    assert res.fun == pytest.approx(3.0, abs=1e-6)


def test_circle_radius_must_be_positive():
    with pytest.raises(GeometryError):
        CircleShape(0, 0, 0)


@given(coord, coord, coord, coord, coord, coord)
def test_dist_point_line_against_sampling(px, py, ax, ay, bx, by):
    if math.hypot(bx - ax, by - ay) < 1e-3:
        return
    got = dist_point_line((px, py), Segment(ax, ay, bx, by))
    ref = dense_segment_distance((px, py), (ax, ay), (bx, by), n=20001)
    step = math.hypot(bx - ax, by - ay) / 20000
    assert got <= ref + 1e-9
    assert ref - got <= step + 1e-9


def _rigid(theta, tx, ty):
    c, s = math.cos(theta), math.sin(theta)

    def f(x, y):
        return (c * x - s * y + tx, s * x + c * y + ty)

    return f


@given(coord, coord, coord, coord, coord, coord, st.floats(0, 2 * math.pi), coord, coord)
def test_point_line_distance_is_rigid_invariant(px, py, ax, ay, bx, by, th, tx, ty):
    if math.hypot(bx - ax, by - ay) < 1e-3:
        return
    f = _rigid(th, tx, ty)
    d0 = dist_point_line((px, py), Segment(ax, ay, bx, by))
    d1 = dist_point_line(f(px, py), Segment(*f(ax, ay), *f(bx, by)))
    assert d1 == pytest.approx(d0, abs=1e-9 * max(1.0, d0) * 1e3)


@given(coord, coord, coord, coord, st.floats(0.1, 300), st.floats(0, 2 * math.pi), coord, coord)
def test_point_circle_distance_is_rigid_invariant(px, py, cx, cy, r, th, tx, ty):
    f = _rigid(th, tx, ty)
    d0 = dist_point_circle((px, py), CircleShape(cx, cy, r))
    d1 = dist_point_circle(f(px, py), CircleShape(*f(cx, cy), r))
    assert d1 == pytest.approx(d0, abs=1e-9 * 1e3)


# --- rays ------------------------------------------------------------------


def test_point_on_ray_examples():
    assert point_on_ray((0, 0), (1, 0), (5, 0), 2)
    assert not point_on_ray((0, 0), (1, 0), (-5, 0), 2)
    assert point_on_ray((0, 0), (3, 4), (6, 8.5), 1)
    assert not point_on_ray((0, 0), (1, 0), (0, 0), 2)


def test_point_on_ray_projection_oracle():
    # offset of (6, 8.5) from the ray through (3, 4): cross product / |arm|
    off = abs(3 * 8.5 - 4 * 6) / 5
    assert off == pytest.approx(0.3)
    assert not point_on_ray((0, 0), (3, 4), (6, 8.5), 0.29)
    assert point_on_ray((0, 0), (3, 4), (6, 8.5), 0.31)


def test_point_on_ray_rejects_degenerate_arm():
    with pytest.raises(GeometryError):
        point_on_ray((1, 1), (1, 1), (2, 2))


# --- canonical naming --------------------------------------------------------


def test_canonical_angle_farther_point_on_ray():
    # P on one arm, Q and then N further along the other
    sc = scene_of({"R": (0, 0), "P": (10, 0), "Q": (0, 5), "N": (0, 12)})
    via_q = canonical_angle("R", ["P"], ["Q", "N"], sc)
    assert set(via_q) == {"P", "R", "N"} and via_q[1] == "R"
    assert canonical_angle("R", ["P"], ["N", "Q"], sc) == via_q
    assert canonical_angle("R", ["Q", "N"], ["P"], sc) == via_q


def test_canonical_angle_single_candidates():
    sc = scene_of({"V": (0, 0), "A": (5, 0), "B": (0, 5)})
    assert canonical_angle("V", ["A"], ["B"], sc) == ("A", "V", "B")


def test_canonical_angle_is_the_single_fixed_point():
    sc = scene_of({"V": (0, 0), "A": (5, 0), "C": (9, 0), "B": (0, 4)})
    got = canonical_angle("V", ["A", "C"], ["B"], sc)
    assert got == ("B", "V", "C")
    # every way of naming the angle: any on-ray point per arm, either arm order
    outs = set()
    for x in ("A", "C"):
        outs.add(canonical_angle("V", [x, "A", "C"], ["B"], sc))
        outs.add(canonical_angle("V", ["B"], [x, "C", "A"], sc))
    assert outs == {got}
    assert canonical_angle("V", [got[0]], [got[2]], sc) == got


def test_canonical_angle_empty_arm():
    sc = scene_of({"V": (0, 0), "A": (5, 0)})
    with pytest.raises(GeometryError):
        canonical_angle("V", [], ["A"], sc)


@given(
    st.floats(0, 2 * math.pi),
    st.floats(0.3, math.pi - 0.3),
    st.lists(st.floats(3, 200), min_size=1, max_size=4, unique=True),
    st.lists(st.floats(3, 200), min_size=1, max_size=4, unique=True),
    st.randoms(use_true_random=False),
)
def test_canonical_angle_idempotent_over_namings(a0, span, d1, d2, rnd):
    pts = {"V": (0.0, 0.0)}
    u1 = (math.cos(a0), math.sin(a0))
    u2 = (math.cos(a0 + span), math.sin(a0 + span))
    names = [f"X{i}" for i in range(len(d1) + len(d2))]
    rnd.shuffle(names)
    arm1, arm2 = names[: len(d1)], names[len(d1) :]
    for n, d in zip(arm1, d1):
        pts[n] = (d * u1[0], d * u1[1])
    for n, d in zip(arm2, d2):
        pts[n] = (d * u2[0], d * u2[1])
    sc = scene_of(pts)
    ref = canonical_angle("V", arm1, arm2, sc)
    for x, y in itertools.product(arm1, arm2):
        # naming the angle through any pair of on-ray points, with full candidate lists
        assert canonical_angle("V", [x] + arm1, [y] + arm2, sc) == ref
        assert canonical_angle("V", [y] + arm2, [x] + arm1, sc) == ref
    assert canonical_angle("V", [ref[0]], [ref[2]], sc) == ref


def test_canonical_line_name_examples():
    sc = scene_of({"A": (0, 0), "B": (5, 0), "M": (2, 0)}, [Line("L0", ("A", "B"), ("M",))])
    assert canonical_line_name("L0", sc) == ("A", "B")
    sc2 = scene_of({"A": (0, 0), "B": (5, 0)}, [Line("L0", ("B", "A"))])
    assert canonical_line_name("L0", sc2) == ("A", "B")


def test_canonical_line_name_brute_force():
    pts = {"D": (-1, 0), "A": (0, 0), "C": (3, 0), "B": (7, 0)}
    sc = scene_of(pts, [Line("L0", ("A", "C"), ("D", "B"))])
    best = max(itertools.combinations(pts, 2), key=lambda ab: abs(pts[ab[0]][0] - pts[ab[1]][0]))
    assert canonical_line_name("L0", sc) == tuple(sorted(best)) == ("B", "D")


def test_canonical_line_name_needs_two_points():
    from geodiag.geom import extreme_pair

    sc = scene_of({"A": (0, 0)})
    with pytest.raises(GeometryError):
        extreme_pair(["A"], sc)


@given(
    st.floats(0, math.pi), st.lists(st.floats(-300, 300), min_size=2, max_size=7, unique=True), st.randoms(use_true_random=False)
)
def test_canonical_line_name_permutation_invariant(theta, ts, rnd):
    srt = sorted(ts)
    if min(b - a for a, b in zip(srt, srt[1:])) < 1e-3:
        return  # coincident points tie-break by name, covered elsewhere
    u = (math.cos(theta), math.sin(theta))
    pts = {f"Q{i}": (t * u[0], t * u[1]) for i, t in enumerate(ts)}
    ids = list(pts)
    sc = scene_of(pts)
    from geodiag.geom import extreme_pair

    ref = extreme_pair(ids, sc)
    rnd.shuffle(ids)
    assert extreme_pair(ids, sc) == ref
    by_t = sorted(pts, key=lambda k: ts[int(k[1:])])
    assert set(ref) == {by_t[0], by_t[-1]}


# --- boxes and relations ---------------------------------------------------


def test_box_invariants_and_iou():
    with pytest.raises(GeometryError):
        Box(1, 0, 1, 5)
    a = Box(0, 0, 10, 10)
    assert box_iou(a, a) == 1.0
    assert box_iou(a, Box(5, 0, 15, 10)) == pytest.approx(50 / 150)
    assert box_iou(a, Box(20, 20, 30, 30)) == 0.0


def test_relation_shape():
    with pytest.raises(GeometryError):
        Relation("P0", (), "PointOnLine")
    with pytest.raises(GeometryError):
        Relation("P0", ("L0",), "PointNearLine")
    assert rel_group("Perpendicular") == "Sym2Geo"


def _kind_scene():
    pts = tuple(Point(f"P{i}", 10.0 * i, 3.0 * i * i) for i in range(3))
    return Scene(
        points=pts,
        lines=(Line("L0", ("P0", "P1")),),
        circles=(Circle("C0", 50, 50, 20),),
        symbols=tuple(Symbol(f"S{i}", c, Box(0, 0, 5, 5)) for i, c in enumerate(SYMBOL_CLASSES) if c != "text"),
        texts=tuple(Text(f"T{i}", "x", Box(0, 0, 5, 5), c) for i, c in enumerate(TEXT_CLASSES)),
    )


KIND_IDS = {"point": ["P0", "P1", "P2"], "line": ["L0"], "circle": ["C0"]}


def _expected_admissible(rtype, subj_kind, subj_cls, obj_kinds, obj_ids, scene):
    """Independent table of subject/object classes per relation type."""
    point3 = ("point", "point", "point")
    table = {
        "PointOnLine": ("point", None, [("line",)]),
        "PointOnCircle": ("point", None, [("circle",)]),
        "CenterOfCircle": ("point", None, [("circle",)]),
        "Text2Point": ("text", {"point"}, [("point",)]),
        "Text2Line": ("text", {"line"}, [("line",)]),
        "Text2Angle": ("text", {"angle"}, [point3]),
        "Text2Degree": ("text", {"degree"}, [point3, ("circle", "point", "point")]),
        "Text2Len": ("text", {"len"}, [("line", "point", "point"), ("circle", "point", "point")]),
        "Text2Area": ("text", {"area"}, [("circle",)]),
        "Perpendicular": ("symbol", {"perpendicular"}, [("line", "line")]),
        "AngleEquality": ("symbol", set(ANGLE_MARKS), [point3]),
        "BarEquality": ("symbol", set(BAR_MARKS), [("line", "point", "point"), ("circle", "point", "point")]),
        "ParallelEquality": ("symbol", set(PARALLEL_MARKS), [("line",)]),
        "ArrowIndication": ("text", None, [("symbol",)]),
    }
    sk, classes, shapes = table[rtype]
    if sk != subj_kind or (classes is not None and subj_cls not in classes):
        return False
    if tuple(obj_kinds) not in shapes:
        return False
    return rtype != "ArrowIndication" or scene.get(obj_ids[0]).cls in ("head", "head_len")


@given(st.data())
def test_knowledge_rules_match_class_table(data):
    sc = _kind_scene()
    K = KnowledgeRules()
    all_ids = [p.id for p in sc.points] + ["L0", "C0"] + [s.id for s in sc.symbols] + [t.id for t in sc.texts]
    rtype = data.draw(st.sampled_from(REL_TYPES))
    subj = data.draw(st.sampled_from(all_ids))
    objs = tuple(data.draw(st.lists(st.sampled_from(all_ids), min_size=1, max_size=3)))
    rel = Relation(subj, objs, rtype)
    obj = sc.get(subj)
    subj_cls = getattr(obj, "cls", None)
    exp = _expected_admissible(rtype, sc.kind_of(subj), subj_cls, [sc.kind_of(o) for o in objs], objs, sc)
    assert K.admits_kinds(rel, sc) == exp


def test_knowledge_rules_reject_unknown_ids():
    sc = _kind_scene()
    assert not KnowledgeRules().admits_kinds(Relation("P9", ("L0",), "PointOnLine"), sc)


def test_knowledge_rules_geometric_predicate():
    sc = Scene(
        points=(Point("P0", 0, 0), Point("P1", 100, 0), Point("P2", 50, 2), Point("P3", 50, 9)),
        lines=(Line("L0", ("P0", "P1")),),
    )
    K = KnowledgeRules()
    assert K.admits(Relation("P2", ("L0",), "PointOnLine"), sc)
    assert not K.admits(Relation("P3", ("L0",), "PointOnLine"), sc)


def test_scene_ids_unique():
    sc = Scene(points=(Point("P0", 0, 0), Point("P0", 1, 1)))
    with pytest.raises(GeometryError):
        sc.get("P0")
