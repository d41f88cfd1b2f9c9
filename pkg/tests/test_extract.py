import itertools
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from geodiag import glyphs
from geodiag.extract import (
    ExtractionConfig,
    binarize,
    detect_circles,
    detect_nongeo,
    detect_segments,
    extract,
    mean_shift,
    skeletonize,
)
from geodiag.geom import Box, Circle, Line, Point, Scene, Symbol, Text
from geodiag.synth import rasterize

CFG = ExtractionConfig()


def render(scene, width=2):
    return rasterize(scene, stroke_width=width)


def seg_scene(W, H, *segs, style="solid"):
    pts, lines = [], []
    for k, (a, b) in enumerate(segs):
        pts += [Point(f"P{2 * k}", *a), Point(f"P{2 * k + 1}", *b)]
        lines.append(Line(f"L{k}", (f"P{2 * k}", f"P{2 * k + 1}"), style=style))
    return Scene(width=W, height=H, points=tuple(pts), lines=tuple(lines))


def circle_scene(W, H, *circles):
    return Scene(width=W, height=H, circles=tuple(Circle(f"C{i}", x, y, r) for i, (x, y, r) in enumerate(circles)))


def ends_match(seg, a, b, tol):
    p, q = np.asarray(a, float), np.asarray(b, float)
    d1 = max(np.linalg.norm(seg.p1 - p), np.linalg.norm(seg.p2 - q))
    d2 = max(np.linalg.norm(seg.p1 - q), np.linalg.norm(seg.p2 - p))
    return min(d1, d2) <= tol


# --- config ----------------------------------------------------------------


@pytest.mark.parametrize("key", ["circle_tol", "split_tol", "merge_angle", "merge_gap", "bandwidth", "min_length"])
def test_config_tolerances_positive(key):
    with pytest.raises(ValueError):
        ExtractionConfig(**{key: 0.0})


# --- binarize / skeletonize --------------------------------------------------


def test_binarize_examples():
    white = np.full((20, 30), 255, np.uint8)
    assert not binarize(white).any()
    rd = render(seg_scene(128, 64, ((10, 10), (100, 10))))
    assert binarize(rd.image).sum() == rd.masks["L0"].sum()
    assert not binarize(rd.image, 0).any()
    assert binarize(rd.image).shape == rd.image.shape


def test_skeleton_of_bar_is_centerline():
    bar = np.zeros((20, 60), bool)
    bar[9:11, 10:50] = True
    sk = skeletonize(bar)
    rows, cols = np.nonzero(sk)
    assert len(set(rows)) == 1 and rows[0] in (9, 10)
    assert abs(cols.min() - 10) <= 1 and abs(cols.max() - 49) <= 1
    assert len(cols) == len(set(cols))


def test_skeleton_empty_and_square():
    assert not skeletonize(np.zeros((10, 10), bool)).any()
    sq = np.zeros((20, 20), bool)
    sq[5:15, 5:15] = True
    sk = skeletonize(sq)
    assert not (sk & ~sq).any()
    assert ndimage.label(sk, structure=np.ones((3, 3)))[1] <= 1


def test_skeleton_preserves_component_count():
    rd = render(seg_scene(200, 200, ((20, 20), (180, 20)), ((20, 60), (180, 150)), ((30, 180), (170, 180))))
    ink = binarize(rd.image)
    eight = np.ones((3, 3))
    assert ndimage.label(skeletonize(ink), structure=eight)[1] == ndimage.label(ink, structure=eight)[1]


# --- circles ---------------------------------------------------------------


def test_detect_single_circle():
    rd = render(circle_scene(220, 220, (100, 100, 50)))
    circles, rest = detect_circles(skeletonize(binarize(rd.image)), CFG)
    assert len(circles) == 1
    c = circles[0]
    assert math.hypot(c.cx - 100, c.cy - 100) <= 1 and abs(c.r - 50) <= 1
    assert rest.sum() < 10


def test_lines_only_give_no_circles():
    rd = render(seg_scene(200, 200, ((20, 20), (180, 40)), ((30, 180), (170, 60))))
    circles, _ = detect_circles(skeletonize(binarize(rd.image)), CFG)
    assert circles == []


def test_detect_two_circles():
    gt = [(80, 90, 45), (230, 150, 60)]
    rd = render(circle_scene(320, 240, *gt))
    circles, _ = detect_circles(skeletonize(binarize(rd.image)), CFG)
    assert len(circles) == 2
    for x, y, r in gt:
        assert any(math.hypot(c.cx - x, c.cy - y) <= 1 and abs(c.r - r) <= 1 for c in circles)


# --- segments --------------------------------------------------------------


def _segments(scene, width=2):
    rd = render(scene, width)
    ink = binarize(rd.image)
    return detect_segments(skeletonize(ink), ink, CFG)


def test_detect_one_segment():
    segs = _segments(seg_scene(128, 64, ((10, 10), (100, 10))))
    assert len(segs) == 1
    assert ends_match(segs[0], (10, 10), (100, 10), 2)


def test_dashed_line_is_one_segment():
    segs = _segments(seg_scene(220, 120, ((15, 20), (200, 95)), style="dash"))
    assert len(segs) == 1
    assert ends_match(segs[0], (15, 20), (200, 95), 3)


def test_plus_sign_gives_two_segments():
    segs = _segments(seg_scene(200, 200, ((20, 100), (180, 100)), ((100, 20), (100, 180))))
    assert len(segs) == 2
    assert any(ends_match(s, (20, 100), (180, 100), 2) for s in segs)
    assert any(ends_match(s, (100, 20), (100, 180), 2) for s in segs)


# --- points ----------------------------------------------------------------


def test_crossing_segments_give_five_points():
    sc = seg_scene(200, 200, ((20, 100), (180, 100)), ((100, 20), (100, 180)))
    pts = extract(render(sc).image).scene.points
    assert len(pts) == 5
    kinds = sorted(p.kind for p in pts)
    assert kinds == ["endpoint"] * 4 + ["intersection"]
    x = next(p for p in pts if p.kind == "intersection")
    assert math.hypot(x.x - 100, x.y - 100) <= 1.5


def test_single_segment_gives_two_points():
    pts = extract(render(seg_scene(128, 64, ((10, 10), (100, 10)))).image).scene.points
    assert len(pts) == 2 and {p.kind for p in pts} == {"endpoint"}


def test_tangent_point_at_foot():
    sc = Scene(
        width=300,
        height=300,
        points=(Point("P0", 60, 90), Point("P1", 240, 90), Point("P2", 150, 90, "tangent"), Point("P3", 150, 150, "center")),
        lines=(Line("L0", ("P0", "P1"), ("P2",)),),
        circles=(Circle("C0", 150, 150, 60, "P3", ("P2",)),),
    )
    pts = extract(render(sc).image).scene.points
    tang = [p for p in pts if p.kind == "tangent"]
    assert len(tang) == 1
    assert math.hypot(tang[0].x - 150, tang[0].y - 90) <= 1.5


# --- non-geometric ---------------------------------------------------------


def _glyph_scene(sym=None, text=None):
    symbols, texts = (), ()
    if sym:
        h, w = glyphs.symbol_glyph(sym).shape
        symbols = (Symbol("S0", sym, Box(40, 30, 40 + w, 30 + h)),)
    if text:
        h, w = glyphs.render_text(text).shape
        texts = (Text("T0", text, Box(60, 50, 60 + w, 50 + h)),)
    return Scene(width=128, height=128, symbols=symbols, texts=texts)


def test_detect_perpendicular_glyph():
    rd = render(_glyph_scene(sym="perpendicular"))
    ink = binarize(rd.image)
    found = detect_nongeo(ink, np.zeros_like(ink), CFG)
    assert len(found) == 1 and found[0].kind == "symbol" and found[0].cls == "perpendicular"
    assert found[0].box == Box(40, 30, 52, 42)


def test_detect_text_thirty():
    rd = render(_glyph_scene(text="30"))
    ink = binarize(rd.image)
    found = detect_nongeo(ink, np.zeros_like(ink), CFG)
    assert len(found) == 1 and found[0].kind == "text" and found[0].content == "30"


def test_no_residual_no_glyphs():
    rd = render(seg_scene(128, 64, ((10, 10), (100, 10))))
    ink = binarize(rd.image)
    assert detect_nongeo(ink, ink, CFG) == []


def test_garbage_component_is_unknown():
    ink = np.zeros((60, 60), bool)
    ink[10:30, 10:30] = True
    ink[15:25, 15:25] = False
    ink[20, :] = False
    found = detect_nongeo(ink, np.zeros_like(ink), CFG)
    assert found and all(f.kind == "unknown" for f in found)


# --- mean shift ------------------------------------------------------------


def same_partition(a, b):
    return {frozenset(np.flatnonzero(a == k)) for k in set(a)} == {frozenset(np.flatnonzero(b == k)) for k in set(b)}


def test_mean_shift_examples():
    lab = mean_shift([0.0, 0.1, 5.0, 5.1], 1.0)
    assert lab[0] == lab[1] and lab[2] == lab[3] and lab[0] != lab[2]
    assert mean_shift([3.0], 1.0).tolist() == [0]
    assert len(set(mean_shift([2.0] * 6, 1.0))) == 1
    assert mean_shift([], 1.0).size == 0
    with pytest.raises(ValueError):
        mean_shift([1.0], 0.0)


def test_mean_shift_modes_exhaustive():
    # flat kernel: the mode of a tight cluster is its mean
    x = np.array([0.0, 0.1, 0.2, 5.0, 5.1])
    lab = mean_shift(x, 1.0)
    for k in set(lab):
        members = x[lab == k]
        assert np.ptp(members) <= 1.0


@given(
    st.lists(st.tuples(st.floats(0, 60), st.floats(0, 60)), min_size=1, max_size=25),
    st.floats(1.0, 8.0),
    st.randoms(use_true_random=False),
)
def test_mean_shift_permutation_equivariant(samples, bw, rnd):
    x = np.array(samples)
    perm = list(range(len(x)))
    rnd.shuffle(perm)
    a = mean_shift(x, bw)
    b = mean_shift(x[perm], bw)
    assert same_partition(a[perm], b)


# --- whole-image invariants --------------------------------------------------


def test_extraction_output_invariants(scenes):
    tol = math.cos(math.radians(CFG.merge_angle))
    for sc in scenes(15):
        out = extract(rasterize(sc).image).scene
        P = np.array([[p.x, p.y] for p in out.points])
        if len(P) > 1:
            d = np.linalg.norm(P[:, None] - P[None], axis=2) + np.eye(len(P)) * 1e9
            assert d.min() >= 3.0
        segs = [out.segment(l.id) for l in out.lines]
        for a, b in itertools.combinations(segs, 2):
            if abs(float(a.direction @ b.direction)) < tol:
                continue
            # near-parallel: must be far apart or clearly separated along the line
            off = abs(float(a.direction[0] * (b.p1 - a.p1)[1] - a.direction[1] * (b.p1 - a.p1)[0]))
            ta = sorted([0.0, a.length])
            tb = sorted([float((b.p1 - a.p1) @ a.direction), float((b.p2 - a.p1) @ a.direction)])
            gap = max(tb[0] - ta[1], ta[0] - tb[1])
            assert off > 3 or gap >= CFG.merge_gap, (sc.id, a, b)


def test_blank_image_extracts_nothing():
    ex = extract(np.full((50, 60), 255, np.uint8))
    assert ex.scene.points == () and ex.scene.symbols == () and ex.masks == {}
