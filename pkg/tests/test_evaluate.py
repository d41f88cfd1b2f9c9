import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from geodiag.evaluate import (
    FL_GROUPS,
    INDICATORS,
    MANNER1_DISTANCE,
    Counts,
    EvalReport,
    eval_formal_language,
    eval_manner1,
    eval_manner2,
    eval_relations,
    evaluate_corpus,
    indicators,
    line_cost,
    mask_iou,
    match_instances,
    point_cost,
    primitive_mapping,
)
from geodiag.geom import Box, GeometryError, Line, Point, Relation, Scene, Symbol, box_iou
from geodiag.synth import rasterize


def brute_force(C, threshold):
    """Every partial one-to-one matching over feasible pairs; most pairs, then
    least total cost."""
    n, m = C.shape
    best = (0, 0.0, ())
    for k in range(1, min(n, m) + 1):
        for rows in itertools.combinations(range(n), k):
            for cols in itertools.permutations(range(m), k):
                if any(C[r, c] > threshold for r, c in zip(rows, cols)):
                    continue
                cost = float(sum(C[r, c] for r, c in zip(rows, cols)))
                if k > best[0] or (k == best[0] and cost < best[1] - 1e-12):
                    best = (k, cost, tuple(zip(rows, cols)))
    return best


def points_scene(pts, W=400, H=400):
    return Scene(width=W, height=H, points=tuple(Point(f"P{i}", x, y) for i, (x, y) in enumerate(pts)))


def lines_scene(segs, W=400, H=400):
    pts, lines = [], []
    for k, (a, b) in enumerate(segs):
        pts += [Point(f"P{2 * k}", *a), Point(f"P{2 * k + 1}", *b)]
        lines.append(Line(f"L{k}", (f"P{2 * k}", f"P{2 * k + 1}")))
    return Scene(width=W, height=H, points=tuple(pts), lines=tuple(lines))


# --- counts ----------------------------------------------------------------


def test_counts_formulas():
    c = Counts(tp=4, fp=1, fn=0)
    assert c.precision == 0.8 and c.recall == 1.0
    assert c.f1 == pytest.approx(2 * 0.8 / 1.8)
    z = Counts()
    assert z.precision == z.recall == z.f1 == 0.0


@given(st.integers(0, 50), st.integers(0, 50), st.integers(0, 50))
def test_counts_bounds(tp, fp, fn):
    c = Counts(tp, fp, fn)
    for v in (c.precision, c.recall, c.f1):
        assert 0.0 <= v <= 1.0
    if c.precision + c.recall:
        assert c.f1 == pytest.approx(2 * c.precision * c.recall / (c.precision + c.recall))


# --- assignment ------------------------------------------------------------


def test_match_single():
    r = match_instances({"a": 0}, {"x": 0}, lambda p, g: 3.0, 15)
    assert r.pairs == [("a", "x", 3.0)]


def test_match_crossing_costs():
    cost = {("a", "x"): 1, ("a", "y"): 2, ("b", "x"): 2, ("b", "y"): 10}
    r = match_instances({"a": "a", "b": "b"}, {"x": "x", "y": "y"}, lambda p, g: cost[p, g], 15)
    assert {(p, g) for p, g, _ in r.pairs} == {("a", "y"), ("b", "x")}


def test_match_empty_preds():
    r = match_instances({}, {"x": 0, "y": 1}, point_cost, 15)
    assert r.pairs == [] and r.unmatched_gts == ["x", "y"]


def test_match_above_threshold_unmatched():
    r = match_instances({"a": (0, 0)}, {"x": (100, 0)}, point_cost, 15)
    assert r.pairs == [] and r.unmatched_preds == ["a"] and r.unmatched_gts == ["x"]


@given(st.integers(0, 7), st.integers(0, 7), st.integers(0, 2**32 - 1), st.booleans())
def test_match_equals_brute_force(n, m, seed, integer):
    rng = np.random.default_rng(seed)
    C = rng.integers(0, 25, (n, m)).astype(float) if integer else rng.uniform(0, 25, (n, m))
    preds = {f"p{i}": i for i in range(n)}
    gts = {f"g{j}": j for j in range(m)}
    r = match_instances(preds, gts, lambda i, j: C[i, j], 15.0)
    k, cost, _ = brute_force(C, 15.0)
    assert len(r.pairs) == k
    assert sum(c for _, _, c in r.pairs) == pytest.approx(cost)
    assert all(c <= 15.0 for _, _, c in r.pairs)
    assert len({p for p, _, _ in r.pairs}) == len({g for _, g, _ in r.pairs}) == k


def test_match_deterministic_under_input_order():
    rng = np.random.default_rng(3)
    C = rng.integers(0, 5, (6, 6)).astype(float)
    preds = {f"p{i}": i for i in range(6)}
    gts = {f"g{j}": j for j in range(6)}
    a = match_instances(preds, gts, lambda i, j: C[i, j], 3.0)
    b = match_instances(dict(reversed(preds.items())), dict(reversed(gts.items())), lambda i, j: C[i, j], 3.0)
    assert a == b


# --- manner 1 --------------------------------------------------------------


def test_cost_functions():
    assert point_cost((100, 100), (110, 110)) == pytest.approx(math.sqrt(200))
    # endpoints given in opposite order still pair up
    assert line_cost(((0, 0), (10, 0)), ((10, 1), (0, 2))) == pytest.approx(2.0)


def test_manner1_identity(scenes):
    for sc in scenes(10):
        for c in eval_manner1(sc, sc).values():
            assert c.fp == c.fn == 0
            assert c.tp == 0 or c.f1 == 1.0


def test_manner1_point_within_threshold():
    c = eval_manner1(points_scene([(110, 110)]), points_scene([(100, 100)]))["point"]
    assert (c.tp, c.fp, c.fn) == (1, 0, 0)


def test_manner1_spurious_line():
    gt_segs = [((20, 20), (200, 30)), ((20, 100), (180, 200)), ((300, 20), (320, 300)), ((40, 350), (250, 380))]
    gt = lines_scene(gt_segs)
    pred = lines_scene(gt_segs + [((100, 250), (200, 260))])
    c = eval_manner1(pred, gt)["line"]
    assert c.precision == 0.8 and c.recall == 1.0
    assert c.f1 == pytest.approx(0.8889, abs=1e-4)


def test_manner1_collinear_pieces_form_one_instance():
    gt = lines_scene([((20, 50), (100, 50)), ((100, 50), (300, 50))])
    pred = lines_scene([((20, 51), (300, 49))])
    c = eval_manner1(pred, gt)["line"]
    assert (c.tp, c.fp, c.fn) == (1, 0, 0)


def test_manner1_frame_mismatch():
    with pytest.raises(ValueError):
        eval_manner1(points_scene([(1, 1)], W=100), points_scene([(1, 1)], W=200))


@pytest.mark.parametrize("dy,ok", [(12.0, True), (12.0 - 1e-6, True), (12.0 + 1e-6, False)])
def test_manner1_distance_boundary(dy, ok):
    # 9-12-15 triangle puts the pair exactly on the threshold
    c = eval_manner1(points_scene([(109, 100 + dy)]), points_scene([(100, 100)]))["point"]
    assert c.tp == int(ok)
    assert MANNER1_DISTANCE == 15


# --- manner 2 --------------------------------------------------------------


def _masks(n_in, n_total=100):
    a = np.zeros((10, 20), bool)
    b = np.zeros((10, 20), bool)
    b.flat[:n_total] = True
    a.flat[:n_in] = True
    return a, b


def test_mask_iou_values():
    a, b = _masks(75)
    assert mask_iou(a, b) == 0.75
    assert mask_iou(b, b) == 1.0
    with pytest.raises(ValueError):
        mask_iou(np.zeros((3, 3), bool), np.zeros((3, 4), bool))


def test_box_iou_third():
    assert box_iou(Box(0, 0, 10, 10), Box(5, 0, 15, 10)) == pytest.approx(1 / 3)


def _one_line(W=20, H=10):
    return Scene(width=W, height=H, points=(Point("A", 1, 1), Point("B", 9, 1)), lines=(Line("L0", ("A", "B")),))


@pytest.mark.parametrize("n_in,ok", [(75, True), (76, True), (74, False)])
def test_manner2_geo_boundary(n_in, ok):
    a, b = _masks(n_in)
    c = eval_manner2(_one_line(), {"L0": a}, _one_line(), {"L0": b})["line"]
    assert c.tp == int(ok)


def _sym_scene(box):
    return Scene(width=64, height=64, symbols=(Symbol("S0", "bar", box),))


@pytest.mark.parametrize("x2,ok", [(20, True), (19, True), (21, False)])
def test_manner2_nongeo_boundary(x2, ok):
    # gt box 10x10 inside a pred box x2 wide: IOU = 100 / (10 * x2)
    c = eval_manner2(_sym_scene(Box(0, 0, x2, 10)), {}, _sym_scene(Box(0, 0, 10, 10)), {})["bar"]
    assert c.tp == int(ok)


def test_manner2_absent_class_zero():
    c = eval_manner2(_one_line(), {}, _one_line(), {})["angle"]
    assert (c.precision, c.recall, c.f1) == (0.0, 0.0, 0.0)


def test_manner2_identity(scenes):
    for sc in scenes(5):
        m = rasterize(sc).masks
        for c in eval_manner2(sc, m, sc, m).values():
            assert c.fp == c.fn == 0


# --- relations -------------------------------------------------------------


def test_bar_equality_splits_into_three_terms():
    r = Relation("S0", ("L0", "L1", "L2"), "BarEquality")
    assert r.binary_terms() == [("S0", "L0", "BarEquality"), ("S0", "L1", "BarEquality"), ("S0", "L2", "BarEquality")]


def test_relations_identity_and_complete(scenes):
    for sc in scenes(20):
        m = primitive_mapping(sc, sc)
        assert all(k == v for k, v in m.items())
        counts, complete = eval_relations(sc, sc, m)
        assert complete
        assert counts["All"].fp == counts["All"].fn == 0


def test_complete_accuracy_eight_of_ten(scenes):
    items = []
    for k, sc in enumerate(scenes(10)):
        pred = sc.with_relations(sc.relations[1:]) if k < 2 else sc
        items.append({"pred": pred, "gt": sc})
    assert evaluate_corpus(items).complete_accuracy == pytest.approx(0.8)


def test_relations_unknown_id_raises():
    sc = _one_line()
    bad = Scene(width=20, height=10, points=sc.points, lines=sc.lines, relations=(Relation("Z", ("L0",), "PointOnLine"),))
    with pytest.raises(GeometryError):
        eval_relations(bad, sc, {})


@given(st.integers(0, 2**32 - 1))
def test_relations_monotone(seed):
    from conftest import default_scene

    rng = np.random.default_rng(seed)
    sc = default_scene(int(rng.integers(0, 30)))
    if not sc.relations:
        return
    m = primitive_mapping(sc, sc)
    full, _ = eval_relations(sc, sc, m)
    drop = int(rng.integers(0, len(sc.relations)))
    fewer = sc.with_relations([r for i, r in enumerate(sc.relations) if i != drop])
    less, _ = eval_relations(fewer, sc, m)
    assert less["All"].recall <= full["All"].recall
    # a spurious term: some point claimed on a line it is not on
    extra = Relation(sc.points[0].id, (sc.lines[0].id,), "PointOnLine") if sc.lines else None
    if extra is not None and extra not in sc.relations:
        more, _ = eval_relations(sc.with_relations(sc.relations + (extra,)), sc, m)
        assert more["All"].precision <= full["All"].precision


# --- formal language -------------------------------------------------------


def _fl_scene():
    pts = {"R": (50, 300), "Q": (150, 300), "N": (300, 300), "P": (50, 150), "A": (200, 100)}
    return Scene(
        width=400,
        height=400,
        points=tuple(Point(k, *v) for k, v in pts.items()),
        lines=(Line("L1", ("R", "N"), ("Q",)), Line("L2", ("R", "P"))),
    )


def _ident(sc):
    return {p.id: p.id for p in sc.points}


def test_formal_identity():
    sc = _fl_scene()
    gt = ["Point(A)", "Line(N, R)", "Equals(MeasureOf(Angle(N, R, P)), 30)"]
    s = eval_formal_language(gt, gt, sc, sc, _ident(sc))["All"]
    assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)
    assert all(indicators(s).values())


def test_formal_one_spurious():
    sc = _fl_scene()
    gt = ["Point(A)", "Point(P)", "Point(R)"]
    s = eval_formal_language(gt + ["Point(Q)"], gt, sc, sc, _ident(sc))["All"]
    assert s.recall == 1.0 and s.precision == 0.75
    assert s.f1 == pytest.approx(6 / 7)
    assert indicators(s) == {"likely_same": True, "almost_same": True, "perfect_recall": True, "totally_same": False}


def test_formal_equivalent_angle_names_match():
    sc = _fl_scene()
    gt = ["Equals(MeasureOf(Angle(P, R, N)), 30)"]
    pred = ["Equals(MeasureOf(Angle(P, R, Q)), 30)"]
    assert eval_formal_language(pred, gt, sc, sc, _ident(sc))["All"].f1 == 1.0


def test_formal_bad_line_penalized_not_raised():
    sc = _fl_scene()
    gt = ["Point(A)", "Point(P)"]
    s = eval_formal_language(gt + ["Angle(A, B"], gt, sc, sc, _ident(sc))["All"]
    assert s.recall == 1.0 and s.precision < 1.0 and s.errors == 1


def test_formal_groups_split():
    sc = _fl_scene()
    gt = ["Point(A)", "Equals(MeasureOf(Angle(N, R, P)), 30)"]
    pred = ["Point(A)"]
    out = eval_formal_language(pred, gt, sc, sc, _ident(sc))
    assert out["Geo2Geo"].f1 == 1.0
    assert out["Non-geo2Geo"].recall == 0.0


@given(st.lists(st.tuples(st.booleans(), st.integers(0, 3)), min_size=1, max_size=30))
def test_indicator_ordering(plan):
    # each entry: keep all gt props?, number of spurious props
    sc = _fl_scene()
    names = [p.id for p in sc.points]
    gt = [f"Point({n})" for n in names[:3]]
    rep = EvalReport()
    for keep, extra in plan:
        pred = (gt if keep else gt[:1]) + [f"Point({n})" for n in names[3:3 + extra]]
        rep.add(sc, sc, pred_props=pred, gt_props=gt)
    for g in FL_GROUPS:
        f = rep.formal[g]
        assert f["totally_same"] <= f["almost_same"] <= f["likely_same"]
        assert f["totally_same"] <= f["perfect_recall"]


# --- report ----------------------------------------------------------------


def test_corpus_self_identity(scenes):
    items = []
    for sc in scenes(20):
        m = rasterize(sc).masks
        items.append({"pred": sc, "gt": sc, "pred_masks": m, "gt_masks": m})
    rep = evaluate_corpus(items)
    for section in (rep.manner1, rep.manner2, rep.relations):
        for c in section.values():
            assert c.fp == c.fn == 0
            assert c.support == 0 or c.f1 == 1.0
    assert rep.complete_accuracy == 1.0
    assert all(v == 1.0 for d in rep.formal_rates().values() for v in d.values())


def test_report_sections():
    rep = EvalReport()
    d = rep.to_dict(["manner1"])
    assert set(d) == {"diagrams", "manner1"}
    assert "formal_language" in rep.to_dict()
    assert set(rep.formal_rates()["All"]) == set(INDICATORS)
    assert "manner1" in rep.to_text(["manner1"]) and "relation" not in rep.to_text(["manner1"])
    with pytest.raises(ValueError):
        rep.to_dict(["bogus"])
