"""Random ground-truth scenes and their rasterization.

Scenes are built constructively: lines are placed (free segments, joins,
cevians, altitudes, parallels, chords, tangents), intersection points are
derived analytically, then labels and marks are attached to existing
structures with clearance margins so every relation is exact by construction.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import asdict, dataclass, field
from itertools import combinations
from typing import Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from . import glyphs
from .formalang import generate
from .geom import (
    box_circle_clearance,
    box_gap,
    box_segment_distance,
    segment_anchors,
    segment_distance,
    segment_intersection,
    ANGLE_MARKS,
    BAR_MARKS,
    PARALLEL_MARKS,
    Box,
    Circle,
    KnowledgeRules,
    Line,
    Point,
    Relation,
    Scene,
    Segment,
    Symbol,
    Text,
    angle_of,
    canonical_angle,
    ccw_span,
    dist_point_line,
    wedges_at,
)

DOT_RADIUS = 4.0
DASH_ON = 6.0
DASH_OFF = 4.0

# clearances, in pixels
MIN_POINT_SEP = 20.0
BORDER = 24.0
POINT_CLEAR = 10.0
LINE_CLEAR = 12.0
CENTER_CLEAR = 15.0
MIN_CROSS_DEG = 25.0
MIN_LINE_LEN = 50.0
GLYPH_INK_CLEAR = 4.0
GLYPH_GAP = 8.0
AMBIGUITY_MARGIN = 8.0


class InfeasibleConfig(RuntimeError):
    """The sampler could not satisfy a placement constraint."""


class _Reject(Exception):
    pass


@dataclass(frozen=True)
class SceneConfig:
    width: int = 512
    height: int = 512
    lines: Tuple[int, int] = (1, 8)
    circles: Tuple[int, int] = (0, 2)
    independent_points: Tuple[int, int] = (0, 1)
    point_label_prob: float = 0.6
    line_labels: Tuple[int, int] = (0, 1)
    angle_labels: Tuple[int, int] = (0, 1)
    degree_texts: Tuple[int, int] = (0, 2)
    len_texts: Tuple[int, int] = (0, 2)
    area_texts: Tuple[int, int] = (0, 1)
    arrows: Tuple[int, int] = (0, 1)
    perpendicular_marks: Tuple[int, int] = (0, 1)
    angle_mark_groups: Tuple[int, int] = (0, 1)
    bar_mark_groups: Tuple[int, int] = (0, 1)
    parallel_mark_groups: Tuple[int, int] = (0, 1)
    stroke_width: Tuple[int, int] = (2, 3)
    min_separation: float = 6.0
    arc_prob: float = 0.35
    dash_prob: float = 0.15
    mixed_prob: float = 0.1
    class_weights: Tuple[Tuple[str, float], ...] = ()
    blur: float = 0.0
    seed: int = 0
    max_retries: int = 60

    def __post_init__(self):
        for name in (
            "lines",
            "circles",
            "independent_points",
            "line_labels",
            "angle_labels",
            "degree_texts",
            "len_texts",
            "area_texts",
            "arrows",
            "perpendicular_marks",
            "angle_mark_groups",
            "bar_mark_groups",
            "parallel_mark_groups",
            "stroke_width",
        ):
            lo, hi = getattr(self, name)
            if lo < 0 or hi < lo:
                raise ValueError(f"{name}: invalid range {(lo, hi)}")
        if self.stroke_width[0] < 1:
            raise ValueError("stroke_width must be >= 1")
        if not self.min_separation > self.stroke_width[1]:
            raise ValueError("min_separation must exceed the stroke width")
        if self.width < 64 or self.height < 64:
            raise ValueError("image must be at least 64x64")
        for p in ("point_label_prob", "arc_prob", "dash_prob", "mixed_prob"):
            if not 0.0 <= getattr(self, p) <= 1.0:
                raise ValueError(f"{p} must be a probability")
        if self.blur < 0:
            raise ValueError("blur must be non-negative")

    @classmethod
    def from_dict(cls, d: Mapping) -> "SceneConfig":
        kw = {}
        for k, v in d.items():
            if k not in cls.__dataclass_fields__:
                raise ValueError(f"unknown scene config key {k!r}")
            if isinstance(v, list):
                v = tuple(tuple(x) if isinstance(x, list) else x for x in v)
            elif isinstance(v, dict) and k == "class_weights":
                v = tuple(sorted(v.items()))
            kw[k] = v
        return cls(**kw)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["class_weights"] = dict(self.class_weights)
        return d

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    @classmethod
    def empty(cls, **kw) -> "SceneConfig":
        zero = (0, 0)
        base = dict(
            lines=zero,
            circles=zero,
            independent_points=zero,
            point_label_prob=0.0,
            line_labels=zero,
            angle_labels=zero,
            degree_texts=zero,
            len_texts=zero,
            area_texts=zero,
            arrows=zero,
            perpendicular_marks=zero,
            angle_mark_groups=zero,
            bar_mark_groups=zero,
            parallel_mark_groups=zero,
        )
        base.update(kw)
        return cls(**base)


# ---------------------------------------------------------------------------
# plane helpers


def _line_circle(p1, p2, c, r):
    """Parameters t (along p1->p2) where the infinite line meets the circle."""
    d = p2 - p1
    f = p1 - c
    a = float(d @ d)
    b = 2 * float(f @ d)
    cc = float(f @ f) - r * r
    disc = b * b - 4 * a * cc
    foot_t = -b / (2 * a)
    foot = p1 + foot_t * d
    dist = float(np.linalg.norm(foot - c))
    if abs(dist - r) <= 1e-7 * max(r, 1.0):
        return [foot_t]
    if disc < 0:
        return []
    s = math.sqrt(disc)
    return [(-b - s) / (2 * a), (-b + s) / (2 * a)]


def _unit(v):
    v = np.asarray(v, float)
    return v / np.linalg.norm(v)


# ---------------------------------------------------------------------------
# construction


@dataclass
class _Geo:
    """Mutable construction state (base points, segments, circles)."""

    pts: List[np.ndarray] = field(default_factory=list)
    tags: List[str] = field(default_factory=list)
    segs: List[Tuple[int, int]] = field(default_factory=list)
    circles: List[Tuple[np.ndarray, float, int]] = field(default_factory=list)
    perp: List[Tuple[int, int, int]] = field(default_factory=list)  # (seg a, seg b, foot point)
    parallel: List[Tuple[int, int]] = field(default_factory=list)

    def copy(self) -> "_Geo":
        return _Geo(
            [p.copy() for p in self.pts],
            list(self.tags),
            list(self.segs),
            list(self.circles),
            list(self.perp),
            list(self.parallel),
        )

    def add_point(self, xy, tag: str) -> int:
        xy = np.asarray(xy, float)
        for k, q in enumerate(self.pts):
            if np.linalg.norm(q - xy) < 1e-5:
                return k
        self.pts.append(xy)
        self.tags.append(tag)
        return len(self.pts) - 1


@dataclass
class _Derived:
    pts: List[np.ndarray]
    tags: List[str]
    line_members: List[List[int]]
    circle_members: List[List[int]]


def _derive(g: _Geo) -> _Derived:
    h = g.copy()
    for a, b in combinations(range(len(h.segs)), 2):
        i1, i2 = h.segs[a]
        j1, j2 = h.segs[b]
        hit = segment_intersection(h.pts[i1], h.pts[i2], h.pts[j1], h.pts[j2])
        if hit is None:
            continue
        t, u, x = hit
        if -1e-9 <= t <= 1 + 1e-9 and -1e-9 <= u <= 1 + 1e-9:
            h.add_point(x, "derived")
    for s in range(len(h.segs)):
        i1, i2 = h.segs[s]
        for c, r, _ in h.circles:
            for t in _line_circle(h.pts[i1], h.pts[i2], c, r):
                if -1e-9 <= t <= 1 + 1e-9:
                    h.add_point(h.pts[i1] + t * (h.pts[i2] - h.pts[i1]), "derived")
    lm = []
    for i1, i2 in h.segs:
        seg = Segment(*h.pts[i1], *h.pts[i2])
        lm.append([k for k, p in enumerate(h.pts) if dist_point_line(p, seg) <= 1e-5])
    cm = []
    for c, r, _ in h.circles:
        cm.append([k for k, p in enumerate(h.pts) if abs(np.linalg.norm(p - c) - r) <= 1e-5])
    return _Derived(h.pts, h.tags, lm, cm)


def _validate(g: _Geo, d: _Derived, W: int, H: int, min_sep: float) -> None:
    pts = d.pts
    n = len(pts)
    if n > 40:
        raise _Reject("too many points")
    arr = np.array(pts) if pts else np.zeros((0, 2))
    for p in pts:
        if not (BORDER <= p[0] <= W - BORDER and BORDER <= p[1] <= H - BORDER):
            raise _Reject("point outside the drawable area")
    if n > 1:
        diff = arr[:, None, :] - arr[None, :, :]
        dist = np.sqrt((diff**2).sum(-1)) + np.eye(n) * 1e9
        if dist.min() < MIN_POINT_SEP:
            raise _Reject("points closer than the minimum separation")
    centers = {ci for _, _, ci in g.circles}
    segs = [(pts[a], pts[b]) for a, b in g.segs]
    for s, (p1, p2) in enumerate(segs):
        if np.linalg.norm(p2 - p1) < MIN_LINE_LEN:
            raise _Reject("line too short")
        seg = Segment(*p1, *p2)
        members = set(d.line_members[s])
        for k, p in enumerate(pts):
            if k in members:
                continue
            clear = CENTER_CLEAR if k in centers else POINT_CLEAR
            if dist_point_line(p, seg) < clear:
                raise _Reject("point too close to a line it is not on")
    for a, b in combinations(range(len(segs)), 2):
        shared = set(d.line_members[a]) & set(d.line_members[b])
        da = _unit(segs[a][1] - segs[a][0])
        db = _unit(segs[b][1] - segs[b][0])
        sin = abs(da[0] * db[1] - da[1] * db[0])
        if shared:
            if len(shared) > 1:
                raise _Reject("overlapping lines")
            if sin < math.sin(math.radians(MIN_CROSS_DEG)):
                raise _Reject("lines cross at too shallow an angle")
        else:
            gap = segment_distance(segs[a][0], segs[a][1], segs[b][0], segs[b][1])
            need = max(20.0, min_sep + 6) if sin < math.sin(math.radians(10)) else LINE_CLEAR
            if gap < need:
                raise _Reject("disjoint lines too close")
    for ci, (c, r, _) in enumerate(g.circles):
        if not (12 <= c[0] - r and c[0] + r <= W - 12 and 12 <= c[1] - r and c[1] + r <= H - 12):
            raise _Reject("circle leaves the image")
        members = set(d.circle_members[ci])
        for k, p in enumerate(pts):
            if k not in members and abs(np.linalg.norm(p - c) - r) < POINT_CLEAR:
                raise _Reject("point too close to a circle it is not on")
        for s, (p1, p2) in enumerate(segs):
            shared = members & set(d.line_members[s])
            seg = Segment(*p1, *p2)
            if shared:
                u, w = _unit(p2 - p1), c - p1
                dline = abs(float(u[0] * w[1] - u[1] * w[0]))
                tangent = any(d.tags[k] == "tangent" for k in shared) and abs(dline - r) < 1e-6
                if not tangent and dline > r * math.cos(math.radians(MIN_CROSS_DEG)):
                    raise _Reject("line meets circle at too shallow an angle")
            else:
                dmin = dist_point_line(c, seg)
                dmax = max(np.linalg.norm(p1 - c), np.linalg.norm(p2 - c))
                if dmin <= r <= dmax or min(abs(dmin - r), abs(dmax - r)) < LINE_CLEAR:
                    raise _Reject("line grazes a circle")
            if dist_point_line(c, seg) < CENTER_CLEAR:
                raise _Reject("line passes near a circle center")
    for a, b in combinations(range(len(g.circles)), 2):
        (c1, r1, _), (c2, r2, _) = g.circles[a], g.circles[b]
        if np.linalg.norm(c1 - c2) < r1 + r2 + 20:
            raise _Reject("circles too close")


class _Builder:
    def __init__(self, cfg: SceneConfig, rng: np.random.Generator):
        self.cfg = cfg
        self.rng = rng
        self.W, self.H = cfg.width, cfg.height

    # -- sampling helpers
    def rint(self, lo_hi) -> int:
        lo, hi = lo_hi
        return int(self.rng.integers(lo, hi + 1))

    def rand_xy(self, margin=BORDER + 6) -> np.ndarray:
        return np.array(
            [self.rng.uniform(margin, self.W - margin), self.rng.uniform(margin, self.H - margin)]
        )

    def choose_class(self, classes: Sequence[str]) -> str:
        weights = dict(self.cfg.class_weights)
        w = np.array([float(weights.get(c, 1.0)) for c in classes])
        if w.sum() <= 0:
            w = np.ones(len(classes))
        return classes[int(self.rng.choice(len(classes), p=w / w.sum()))]

    # -- geometry
    def build_geometry(self) -> Tuple[_Geo, _Derived]:
        cfg = self.cfg
        g = _Geo()
        n_circles = self.rint(cfg.circles)
        for _ in range(n_circles):
            for _ in range(cfg.max_retries):
                r = self.rng.uniform(40, min(90, (min(self.W, self.H) - 60) / 2))
                c = self.rand_xy(margin=r + 14)
                if all(np.linalg.norm(c - c2) >= r + r2 + 20 for c2, r2, _ in g.circles):
                    idx = len(g.pts)
                    g.pts.append(c)
                    g.tags.append("center")
                    g.circles.append((c, r, idx))
                    break
            else:
                raise InfeasibleConfig(f"cannot place {n_circles} disjoint circles")
        n_lines = self.rint(cfg.lines)
        for _ in range(n_lines):
            for _ in range(cfg.max_retries):
                trial = g.copy()
                try:
                    self.add_line(trial)
                    d = _derive(trial)
                    _validate(trial, d, self.W, self.H, cfg.min_separation)
                except _Reject:
                    continue
                g = trial
                break
            else:
                raise _Reject("line placement")
        d = _derive(g)
        _validate(g, d, self.W, self.H, cfg.min_separation)
        for _ in range(self.rint(cfg.independent_points)):
            for _ in range(cfg.max_retries):
                trial = g.copy()
                trial.add_point(self.rand_xy(), "independent")
                try:
                    d2 = _derive(trial)
                    _validate(trial, d2, self.W, self.H, cfg.min_separation)
                    self._independent_clear(trial, d2)
                except _Reject:
                    continue
                g, d = trial, d2
                break
        return g, d

    def _independent_clear(self, g: _Geo, d: _Derived) -> None:
        k = len(g.pts) - 1
        p = g.pts[k]
        for a, b in g.segs:
            if dist_point_line(p, Segment(*g.pts[a], *g.pts[b])) < 20:
                raise _Reject("independent point near a line")
        for c, r, _ in g.circles:
            if abs(np.linalg.norm(p - c) - r) < 20:
                raise _Reject("independent point near a circle")

    def add_line(self, g: _Geo) -> None:
        rng = self.rng
        kinds = ["free", "join", "cevian", "altitude", "parallel"]
        weights = [0.12, 0.25, 0.15, 0.22, 0.16]
        if g.circles:
            kinds += ["chord", "tangent"]
            weights += [0.15, 0.08]
        d = _derive(g)
        visible = [k for k in range(len(d.pts)) if d.tags[k] not in ("center", "independent")]
        if len(visible) < 2:
            kinds_ok = [k for k in kinds if k in ("free", "chord", "tangent")]
            w = [weights[kinds.index(k)] for k in kinds_ok]
        else:
            kinds_ok, w = kinds, weights
        w = np.array(w) / sum(w)
        kind = kinds_ok[int(rng.choice(len(kinds_ok), p=w))]
        # derived points become real anchors for later constructions
        for k in range(len(g.pts), len(d.pts)):
            g.add_point(d.pts[k], "derived")
        pts = g.pts
        if kind == "free":
            a = self.rand_xy()
            b = self.rand_xy()
            g.segs.append((g.add_point(a, "free"), g.add_point(b, "free")))
        elif kind == "join":
            i, j = rng.choice(visible, size=2, replace=False)
            if any(i in m and j in m for m in d.line_members):
                raise _Reject("already joined")
            g.segs.append((int(i), int(j)))
        elif kind in ("cevian", "altitude"):
            if not g.segs:
                raise _Reject("no line to attach to")
            s = int(rng.integers(len(g.segs)))
            a, b = g.segs[s]
            off = [k for k in visible if k not in d.line_members[s]]
            if not off:
                raise _Reject("no apex")
            apex = int(rng.choice(off))
            if kind == "cevian":
                t = 0.5 if rng.random() < 0.3 else rng.uniform(0.2, 0.8)
            else:
                dvec = pts[b] - pts[a]
                t = float((pts[apex] - pts[a]) @ dvec / (dvec @ dvec))
                if not 0.15 <= t <= 0.85:
                    raise _Reject("foot outside the segment")
            foot = g.add_point(pts[a] + t * (pts[b] - pts[a]), "foot")
            g.segs.append((apex, foot))
            if kind == "altitude":
                g.perp.append((s, len(g.segs) - 1, foot))
        elif kind == "parallel":
            if not g.segs:
                raise _Reject("no line to copy")
            s = int(rng.integers(len(g.segs)))
            a, b = g.segs[s]
            off = [k for k in visible if k not in d.line_members[s]]
            if not off:
                raise _Reject("no anchor")
            p = pts[int(rng.choice(off))]
            u = _unit(pts[b] - pts[a])
            l1, l2 = rng.uniform(0, 140), rng.uniform(0, 140)
            if l1 + l2 < 70:
                raise _Reject("short parallel")
            g.segs.append((g.add_point(p - l1 * u, "free"), g.add_point(p + l2 * u, "free")))
            g.parallel.append((s, len(g.segs) - 1))
        elif kind == "chord":
            ci = int(rng.integers(len(g.circles)))
            c, r, _ = g.circles[ci]
            t1 = rng.uniform(0, 2 * math.pi)
            t2 = t1 + rng.uniform(math.radians(55), math.radians(305))
            a = c + r * np.array([math.cos(t1), math.sin(t1)])
            b = c + r * np.array([math.cos(t2), math.sin(t2)])
            g.segs.append((g.add_point(a, "circle"), g.add_point(b, "circle")))
        elif kind == "tangent":
            ci = int(rng.integers(len(g.circles)))
            c, r, _ = g.circles[ci]
            t = rng.uniform(0, 2 * math.pi)
            radial = np.array([math.cos(t), math.sin(t)])
            tp = c + r * radial
            u = np.array([-radial[1], radial[0]])
            l1, l2 = rng.uniform(30, 100), rng.uniform(30, 100)
            ti = g.add_point(tp, "tangent")
            g.segs.append((g.add_point(tp - l1 * u, "free"), g.add_point(tp + l2 * u, "free")))
            # tangent point sits on the new segment interior
            g.tags[ti] = "tangent"


# ---------------------------------------------------------------------------
# scene assembly


class _Annotator:
    """Turns validated geometry into a Scene and attaches non-geometric marks."""

    def __init__(self, cfg: SceneConfig, rng: np.random.Generator, g: _Geo, d: _Derived, stroke: int):
        self.cfg, self.rng, self.g, self.d = cfg, rng, g, d
        self.W, self.H = cfg.width, cfg.height
        self.stroke = stroke
        self.symbols: List[Symbol] = []
        self.texts: List[Text] = []
        self.relations: List[Relation] = []
        self.boxes: List[Box] = []
        self.head_boxes: List[Box] = []
        self.arrow_texts: List[Box] = []
        self.used_targets = set()

    # -- primitive tables
    def make_geometry(self) -> Scene:
        g, d = self.g, self.d
        pid = {k: f"P{k}" for k in range(len(d.pts))}
        membership = [0] * len(d.pts)
        for m in d.line_members + d.circle_members:
            for k in m:
                membership[k] += 1
        points = []
        for k, p in enumerate(d.pts):
            tag = d.tags[k]
            if tag == "center":
                kind = "center"
            elif tag == "tangent":
                kind = "tangent"
            elif membership[k] >= 2:
                kind = "intersection"
            elif membership[k] == 1:
                kind = "endpoint"
            else:
                kind = "independent"
            points.append(Point(pid[k], round(float(p[0]), 3), round(float(p[1]), 3), kind))
        rels = []
        lines = []
        for s, (a, b) in enumerate(g.segs):
            lid = f"L{s}"
            style = "solid"
            u = self.rng.random()
            if u < self.cfg.dash_prob:
                style = "dash"
            elif u < self.cfg.dash_prob + self.cfg.mixed_prob:
                style = "mixed"
            a, b = self._resolve_endpoint(a), self._resolve_endpoint(b)
            lines.append(Line(lid, (pid[a], pid[b]), style=style))
            for k in d.line_members[s]:
                if k not in (a, b):
                    rels.append(Relation(pid[k], (lid,), "PointOnLine"))
        circles = []
        for ci, (c, r, center) in enumerate(g.circles):
            cid = f"C{ci}"
            circles.append(Circle(cid, round(float(c[0]), 3), round(float(c[1]), 3), round(float(r), 3), pid[center]))
            rels.append(Relation(pid[center], (cid,), "CenterOfCircle"))
            for k in d.circle_members[ci]:
                rels.append(Relation(pid[k], (cid,), "PointOnCircle"))
        scene = Scene(
            width=self.W,
            height=self.H,
            points=tuple(points),
            lines=tuple(lines),
            circles=tuple(circles),
        )
        return scene.with_relations(rels)

    def _resolve_endpoint(self, k: int) -> int:
        for j, p in enumerate(self.d.pts):
            if np.linalg.norm(p - self.g.pts[k]) < 1e-5:
                return j
        return k

    def make_arcs(self, scene: Scene) -> Scene:
        """Turn some circles into arcs that cover every point on them."""
        rng = self.rng
        circles = list(scene.circles)
        points = list(scene.points)
        rels = list(scene.relations)
        for ci, c in enumerate(circles):
            if rng.random() >= self.cfg.arc_prob:
                continue
            angles = sorted(
                (angle_of((scene.point(p).x - c.x, scene.point(p).y - c.y)), p) for p in c.points_on
            )
            if angles:
                ths = [a for a, _ in angles]
                gaps = [
                    (ccw_span(ths[i], ths[(i + 1) % len(ths)]) if len(ths) > 1 else 2 * math.pi, i)
                    for i in range(len(ths))
                ]
                gap, i = max(gaps)
                g0 = ths[i]
                g1 = ths[(i + 1) % len(ths)] if len(ths) > 1 else ths[i]
                lo = max(20.0 / c.radius, math.radians(12))
                d1 = rng.uniform(lo, max(lo, math.radians(40)))
                d2 = rng.uniform(lo, max(lo, math.radians(40)))
                if gap - d1 - d2 < math.radians(50):
                    continue
                start = g1 - d1
                end = g0 + d2
                if ccw_span(start, end) < math.radians(90):
                    continue
            else:
                start = rng.uniform(0, 2 * math.pi)
                end = start + rng.uniform(math.radians(100), math.radians(170))
            new = []
            for th in (start, end):
                xy = (c.x + c.radius * math.cos(th), c.y + c.radius * math.sin(th))
                new.append(xy)
            if not self._arc_endpoints_ok(scene, new, c):
                continue
            ids = []
            for xy in new:
                p = Point(f"P{len(points)}", round(xy[0], 3), round(xy[1], 3), "endpoint")
                points.append(p)
                ids.append(p.id)
                rels.append(Relation(p.id, (c.id,), "PointOnCircle"))
            circles[ci] = Circle(c.id, c.x, c.y, c.radius, c.center, c.points_on, True, (ids[0], ids[1]))
        out = Scene(
            width=scene.width,
            height=scene.height,
            points=tuple(points),
            lines=scene.lines,
            circles=tuple(circles),
        )
        return out.with_relations(rels)

    def _arc_endpoints_ok(self, scene: Scene, new, c: Circle) -> bool:
        for xy in new:
            if not (BORDER <= xy[0] <= self.W - BORDER and BORDER <= xy[1] <= self.H - BORDER):
                return False
            for p in scene.points:
                if math.hypot(p.x - xy[0], p.y - xy[1]) < MIN_POINT_SEP:
                    return False
            for l in scene.lines:
                if dist_point_line(xy, scene.segment(l.id)) < POINT_CLEAR + 2:
                    return False
        if math.hypot(new[0][0] - new[1][0], new[0][1] - new[1][1]) < MIN_POINT_SEP:
            return False
        return True

    # -- anchors shared by the placement checks
    def anchors(self, scene: Scene):
        return segment_anchors(scene)

    # -- placement primitives
    def _clear(self, box: Box, scene: Scene, ink_clear=GLYPH_INK_CLEAR) -> bool:
        if box.x1 < 3 or box.y1 < 3 or box.x2 > self.W - 3 or box.y2 > self.H - 3:
            return False
        need = ink_clear + self.stroke / 2.0
        for l in scene.lines:
            seg = scene.segment(l.id)
            if box_segment_distance(box, seg.p1, seg.p2) < need:
                return False
        for c in scene.circles:
            if box_circle_clearance(box, (c.x, c.y), c.radius) < need:
                return False
        for p in scene.points:
            if p.kind in ("center", "independent") and box.distance_to(p.x, p.y) < DOT_RADIUS + ink_clear + 1:
                return False
        for b in self.boxes:
            if box_gap(box, b) < GLYPH_GAP:
                return False
        for hb in self.head_boxes:
            if box_gap(box, hb) < 28:
                return False
        return True

    def _box_at(self, center, bitmap: np.ndarray) -> Box:
        h, w = bitmap.shape
        x1 = int(round(center[0] - w / 2.0))
        y1 = int(round(center[1] - h / 2.0))
        return Box(x1, y1, x1 + w, y1 + h)

    def _unique(self, box_dist, target_d, others) -> bool:
        return all(box_dist(o) >= target_d + AMBIGUITY_MARGIN for o in others)

    def add_text(self, content: str, box: Box, cls: str) -> Text:
        t = Text(f"T{len(self.texts)}", content, box, cls)
        self.texts.append(t)
        self.boxes.append(box)
        return t

    def add_symbol(self, cls: str, box: Box, direction=None) -> Symbol:
        s = Symbol(f"S{len(self.symbols)}", cls, box, direction)
        self.symbols.append(s)
        self.boxes.append(box)
        return s

    # -- features
    def wedges(self, scene: Scene, lo=40.0, hi=150.0):
        out = []
        for p in scene.points:
            for a0, span, c0, c1 in wedges_at(p.id, scene):
                if math.radians(lo) <= span <= math.radians(hi):
                    trip = canonical_angle(p.id, c0, c1, scene, key=str)
                    out.append((p.id, a0, span, trip))
        return out

    def place_point_labels(self, scene: Scene):
        letters = list("ABCDEFGHIJKLMNOPQRSTUVWXYZ")
        self.rng.shuffle(letters)
        pts, mids = self.anchors(scene)
        for p in scene.points:
            if not letters or self.rng.random() >= self.cfg.point_label_prob:
                continue
            content = letters[-1]
            bm = glyphs.render_text(content)
            h, w = bm.shape
            start = self.rng.uniform(0, 2 * math.pi)
            for k in range(16):
                th = start + k * math.pi / 8
                u = np.array([math.cos(th), math.sin(th)])
                reach = abs(u[0]) * w / 2 + abs(u[1]) * h / 2
                c = pts[p.id] + u * (reach + 7 + self.stroke)
                box = self._box_at(c, bm)
                if not self._clear(box, scene):
                    continue
                dt = box.distance_to(*pts[p.id])
                if dt > 15:
                    continue
                others = [v for k2, v in pts.items() if k2 != p.id]
                if not self._unique(lambda o: box.distance_to(*o), dt, others):
                    continue
                t = self.add_text(letters.pop(), box, "point")
                self.relations.append(Relation(t.id, (p.id,), "Text2Point"))
                break

    def place_line_labels(self, scene: Scene):
        names = list("mnk")
        for _ in range(self.rint(self.cfg.line_labels)):
            if not scene.lines or not names:
                return
            l = scene.lines[int(self.rng.integers(len(scene.lines)))]
            if ("line", l.id) in self.used_targets:
                continue
            seg = scene.segment(l.id)
            content = names.pop(0)
            bm = glyphs.render_text(content)
            n = np.array([-seg.direction[1], seg.direction[0]])
            for _try in range(12):
                t = self.rng.uniform(0.15, 0.85)
                side = 1 if self.rng.random() < 0.5 else -1
                base = seg.p1 + t * (seg.p2 - seg.p1)
                reach = abs(n[0]) * bm.shape[1] / 2 + abs(n[1]) * bm.shape[0] / 2
                box = self._box_at(base + side * n * (reach + 6 + self.stroke), bm)
                if not self._clear(box, scene):
                    continue
                dt = box_segment_distance(box, seg.p1, seg.p2)
                others = [scene.segment(o.id) for o in scene.lines if o.id != l.id]
                if not all(box_segment_distance(box, o.p1, o.p2) >= dt + AMBIGUITY_MARGIN for o in others):
                    continue
                if not self._far_from_points(box, scene, dt):
                    continue
                tx = self.add_text(content, box, "line")
                self.relations.append(Relation(tx.id, (l.id,), "Text2Line"))
                self.used_targets.add(("line", l.id))
                break

    def _far_from_points(self, box: Box, scene: Scene, dt: float, exclude=()) -> bool:
        return all(box.distance_to(p.x, p.y) >= dt + AMBIGUITY_MARGIN for p in scene.points if p.id not in exclude)

    def _far_from_mids(self, box: Box, mids, dt: float, exclude=None) -> bool:
        return all(box.distance_to(*m[1]) >= dt + AMBIGUITY_MARGIN for m in mids if m[0] != exclude)

    def rint(self, r):
        lo, hi = r
        return int(self.rng.integers(lo, hi + 1))

    choose_class = _Builder.choose_class

    def place_in_wedge(self, scene: Scene, bitmap, vertex, a0, span, mids, s_range=(12, 36), max_d=22.0):
        pts = {p.id: np.array([p.x, p.y]) for p in scene.points}
        v = pts[vertex]
        bis = a0 + span / 2
        u = np.array([math.cos(bis), math.sin(bis)])
        for s in np.arange(s_range[0], s_range[1], 2.0):
            box = self._box_at(v + u * s, bitmap)
            if not self._clear(box, scene):
                continue
            cx, cy = box.center
            th = angle_of((cx - v[0], cy - v[1]))
            margin = math.radians(5)
            if not (margin < ccw_span(a0, th) < span - margin):
                continue
            dv = box.distance_to(*v)
            if dv > max_d:
                return None
            if not self._far_from_points(box, scene, dv, exclude=(vertex,)):
                continue
            if not self._far_from_mids(box, mids, dv):
                continue
            return box
        return None

    def place_angle_texts(self, scene: Scene):
        pts, mids = self.anchors(scene)
        wedges = self.wedges(scene)
        self.rng.shuffle(wedges)
        digits = list("123456789")
        self.rng.shuffle(digits)
        todo = ["angle"] * self.rint(self.cfg.angle_labels) + ["degree"] * self.rint(self.cfg.degree_texts)
        for kind in todo:
            placed = False
            for vertex, a0, span, trip in wedges:
                if ("angle", trip) in self.used_targets:
                    continue
                if kind == "angle":
                    content = digits.pop()
                else:
                    content = f"{int(round(math.degrees(span)))}°"
                box = self.place_in_wedge(scene, glyphs.render_text(content), vertex, a0, span, mids)
                if box is None:
                    if kind == "angle":
                        digits.append(content)
                    continue
                t = self.add_text(content, box, kind)
                self.relations.append(Relation(t.id, trip, "Text2Angle" if kind == "angle" else "Text2Degree"))
                self.used_targets.add(("angle", trip))
                placed = True
                break
            if not placed and kind == "degree":
                self.place_arc_text(scene, "degree")

    def place_arc_text(self, scene: Scene, kind: str) -> bool:
        pts, mids = self.anchors(scene)
        arcs = [m for m in mids if m[0][0] == "circle" and m[3] >= 50]
        self.rng.shuffle(arcs)
        for key, m, rad, length in arcs:
            if ("seg", key) in self.used_targets:
                continue
            _, cid, a, b = key
            c = scene.get(cid)
            if kind == "degree":
                span = ccw_span(
                    angle_of((pts[a][0] - c.x, pts[a][1] - c.y)), angle_of((pts[b][0] - c.x, pts[b][1] - c.y))
                )
                content = f"{int(round(math.degrees(span)))}°"
            else:
                content = str(int(self.rng.integers(2, 31)))
            box = self.place_along(scene, glyphs.render_text(content), m, rad, mids, key)
            if box is None:
                continue
            t = self.add_text(content, box, kind)
            self.relations.append(Relation(t.id, (cid, a, b), "Text2Degree" if kind == "degree" else "Text2Len"))
            self.used_targets.add(("seg", key))
            return True
        return False

    def place_along(self, scene: Scene, bitmap, anchor, normal, mids, key, max_d=18.0):
        h, w = bitmap.shape
        for side in (1, -1) if self.rng.random() < 0.5 else (-1, 1):
            u = side * normal
            reach = abs(u[0]) * w / 2 + abs(u[1]) * h / 2
            for extra in (5, 7, 9, 11):
                box = self._box_at(anchor + u * (reach + extra + self.stroke / 2), bitmap)
                if not self._clear(box, scene):
                    continue
                dm = box.distance_to(*anchor)
                if dm > max_d:
                    break
                if not self._far_from_points(box, scene, dm):
                    continue
                if not self._far_from_mids(box, mids, dm, exclude=key):
                    continue
                return box
        return None

    def place_len_texts(self, scene: Scene):
        for _ in range(self.rint(self.cfg.len_texts)):
            pts, mids = self.anchors(scene)
            if self.rng.random() < 0.25 and self.place_arc_text(scene, "len"):
                continue
            segs = [m for m in mids if m[0][0] == "line" and m[3] >= 60]
            self.rng.shuffle(segs)
            for key, m, n, length in segs:
                if ("seg", key) in self.used_targets:
                    continue
                content = str(int(self.rng.integers(2, 31)))
                box = self.place_along(scene, glyphs.render_text(content), m, n, mids, key)
                if box is None:
                    continue
                t = self.add_text(content, box, "len")
                _, lid, a, b = key
                self.relations.append(Relation(t.id, (lid,) + tuple(sorted((a, b))), "Text2Len"))
                self.used_targets.add(("seg", key))
                break

    def place_area_texts(self, scene: Scene):
        for _ in range(self.rint(self.cfg.area_texts)):
            for c in scene.circles:
                if ("area", c.id) in self.used_targets or c.radius < 50:
                    continue
                content = f"area={int(self.rng.integers(5, 100))}"
                bm = glyphs.render_text(content)
                for dy in (18, -18, 24, -24, 30, -30):
                    box = self._box_at((c.x, c.y + dy), bm)
                    corners = [(x, y) for x in (box.x1, box.x2) for y in (box.y1, box.y2)]
                    if any(math.hypot(x - c.x, y - c.y) > c.radius - self.stroke - GLYPH_INK_CLEAR for x, y in corners):
                        continue
                    if not self._clear(box, scene):
                        continue
                    t = self.add_text(content, box, "area")
                    self.relations.append(Relation(t.id, (c.id,), "Text2Area"))
                    self.used_targets.add(("area", c.id))
                    break
                else:
                    continue
                break

    def place_perpendicular(self, scene: Scene, perp_feet: List[Tuple[str, str, str]]):
        n = self.rint(self.cfg.perpendicular_marks)
        feet = list(perp_feet)
        self.rng.shuffle(feet)
        bm = glyphs.symbol_glyph("perpendicular")
        pts = {p.id: np.array([p.x, p.y]) for p in scene.points}
        for la, lb, foot in feet[:n]:
            options = [
                (a0, span)
                for a0, span, c0, c1 in wedges_at(foot, scene)
                if abs(span - math.pi / 2) < math.radians(1)
            ]
            self.rng.shuffle(options)
            for a0, span in options:
                v = pts[foot]
                u = np.array([math.cos(a0 + span / 2), math.sin(a0 + span / 2)])
                box = None
                for s in np.arange(12, 28, 2.0):
                    cand = self._box_at(v + u * s, bm)
                    if self._clear(cand, scene):
                        box = cand
                        break
                if box is None:
                    continue
                cx, cy = box.center
                dv = math.hypot(cx - v[0], cy - v[1])
                if dv > 20:
                    continue
                if not all(math.hypot(cx - q[0], cy - q[1]) >= dv + AMBIGUITY_MARGIN for k, q in pts.items() if k != foot):
                    continue
                s = self.add_symbol("perpendicular", box)
                self.relations.append(Relation(s.id, tuple(sorted((la, lb))), "Perpendicular"))
                break

    def place_angle_marks(self, scene: Scene):
        _, mids = self.anchors(scene)
        for _ in range(self.rint(self.cfg.angle_mark_groups)):
            cls = self.choose_class(ANGLE_MARKS)
            bm = glyphs.symbol_glyph(cls)
            wedges = self.wedges(scene)
            self.rng.shuffle(wedges)
            want = int(self.rng.integers(2, 4))
            chosen = []
            for vertex, a0, span, trip in wedges:
                if len(chosen) == want:
                    break
                if ("mark", trip) in self.used_targets:
                    continue
                box = self.place_in_wedge(scene, bm, vertex, a0, span, [], s_range=(12, 40), max_d=22.0)
                if box is None:
                    continue
                chosen.append((box, trip))
                self.boxes.append(box)
            for box, _ in chosen:
                self.boxes.remove(box)
            if len(chosen) < 2:
                continue
            for box, trip in chosen:
                s = self.add_symbol(cls, box)
                self.relations.append(Relation(s.id, trip, "AngleEquality"))
                self.used_targets.add(("mark", trip))

    def place_bar_marks(self, scene: Scene):
        for _ in range(self.rint(self.cfg.bar_mark_groups)):
            pts, mids = self.anchors(scene)
            cls = self.choose_class(BAR_MARKS)
            bm = glyphs.symbol_glyph(cls)
            on_arcs = self.rng.random() < 0.3
            pool = [m for m in mids if m[0][0] == ("circle" if on_arcs else "line") and m[3] >= 50]
            self.rng.shuffle(pool)
            want = int(self.rng.integers(2, 4))
            chosen = []
            for key, m, n, length in pool:
                if len(chosen) == want:
                    break
                if ("bar", key) in self.used_targets:
                    continue
                box = self.place_along(scene, bm, m, n, mids, key)
                if box is None:
                    continue
                chosen.append((box, key))
                self.boxes.append(box)
            for box, _ in chosen:
                self.boxes.remove(box)
            if len(chosen) < 2:
                continue
            for box, key in chosen:
                s = self.add_symbol(cls, box)
                kind, gid, a, b = key
                objs = (gid,) + (tuple(sorted((a, b))) if kind == "line" else (a, b))
                self.relations.append(Relation(s.id, objs, "BarEquality"))
                self.used_targets.add(("bar", key))

    def place_parallel_marks(self, scene: Scene, pairs: List[Tuple[str, str]]):
        n = self.rint(self.cfg.parallel_mark_groups)
        pairs = list(pairs)
        self.rng.shuffle(pairs)
        pts, mids = self.anchors(scene)
        used_classes = set()
        for la, lb in pairs[:n]:
            choices = [c for c in PARALLEL_MARKS if c not in used_classes]
            if not choices:
                return
            cls = self.choose_class(choices)
            bm = glyphs.symbol_glyph(cls)
            chosen = []
            for lid in (la, lb):
                if ("par", lid) in self.used_targets:
                    break
                seg = scene.segment(lid)
                nrm = np.array([-seg.direction[1], seg.direction[0]])
                box = None
                for _try in range(12):
                    t = self.rng.uniform(0.15, 0.85)
                    side = 1 if self.rng.random() < 0.5 else -1
                    base = seg.p1 + t * (seg.p2 - seg.p1)
                    reach = abs(nrm[0]) * bm.shape[1] / 2 + abs(nrm[1]) * bm.shape[0] / 2
                    cand = self._box_at(base + side * nrm * (reach + 5 + self.stroke), bm)
                    if not self._clear(cand, scene):
                        continue
                    dt = box_segment_distance(cand, seg.p1, seg.p2)
                    others = [scene.segment(o.id) for o in scene.lines if o.id != lid]
                    if all(box_segment_distance(cand, o.p1, o.p2) >= dt + AMBIGUITY_MARGIN for o in others):
                        box = cand
                        break
                if box is None:
                    break
                chosen.append((box, lid))
                self.boxes.append(box)
            for box, _ in chosen:
                self.boxes.remove(box)
            if len(chosen) < 2:
                continue
            used_classes.add(cls)
            for box, lid in chosen:
                s = self.add_symbol(cls, box)
                self.relations.append(Relation(s.id, (lid,), "ParallelEquality"))
                self.used_targets.add(("par", lid))

    def place_arrows(self, scene: Scene):
        for _ in range(self.rint(self.cfg.arrows)):
            pts, mids = self.anchors(scene)
            if self.rng.random() < 0.5:
                self._arrow_degree(scene, pts, mids)
            else:
                self._arrow_len(scene, pts, mids)

    def _arrow_common(self, scene, cls, tip, direction, content, mids, target_d, target_key, vertex=None):
        """Place head with its tip at ``tip`` pointing along ``direction`` and a
        text box behind it. Returns (head box, text box) or None."""
        turns = glyphs.direction_to_turns(*direction)
        u = np.array(glyphs.HEAD_DIRECTIONS[turns], float)
        hb = glyphs.head_glyph(cls, turns)
        h, w = hb.shape
        reach = abs(u[0]) * w / 2 + abs(u[1]) * h / 2
        head = self._box_at(tip - u * reach, hb)
        if not self._clear(head, scene):
            return None
        tb = glyphs.render_text(content)
        th, tw = tb.shape
        treach = abs(u[0]) * tw / 2 + abs(u[1]) * th / 2
        gap = float(self.rng.uniform(6, 10))
        hc = np.array(head.center)
        text = self._box_at(hc - u * (reach + gap + treach), tb)
        self.boxes.append(head)
        ok = self._clear(text, scene)
        self.boxes.remove(head)
        if not ok or box_gap(head, text) < GLYPH_GAP - 2:
            return None
        # no other glyph near the head's back
        for b in self.boxes:
            if box_gap(head, b) < 28:
                return None
        return head, text, u

    def _arrow_degree(self, scene, pts, mids):
        wedges = self.wedges(scene, lo=40, hi=150)
        self.rng.shuffle(wedges)
        for vertex, a0, span, trip in wedges:
            if ("angle", trip) in self.used_targets:
                continue
            bis = a0 + span / 2
            ub = np.array([math.cos(bis), math.sin(bis)])
            tip = pts[vertex] + ub * float(self.rng.uniform(16, 22))
            dv = float(np.linalg.norm(tip - pts[vertex]))
            if any(np.linalg.norm(tip - q) < dv + AMBIGUITY_MARGIN for k, q in pts.items() if k != vertex):
                continue
            content = f"{int(round(math.degrees(span)))}°"
            got = self._arrow_common(scene, "head", tip, -ub, content, mids, dv, trip)
            if got is None:
                continue
            head, text, u = got
            tip_real = np.array(head.center) + u * (abs(u[0]) * (head.x2 - head.x1) / 2 + abs(u[1]) * (head.y2 - head.y1) / 2)
            th = angle_of(tip_real - pts[vertex])
            if not (math.radians(5) < ccw_span(a0, th) < span - math.radians(5)):
                continue
            s = self.add_symbol("head", head, direction=(int(u[0]), int(u[1])))
            t = self.add_text(content, text, "degree")
            self.head_boxes.append(head)
            self.relations.append(Relation(t.id, (s.id,), "ArrowIndication"))
            self.relations.append(Relation(t.id, trip, "Text2Degree"))
            self.used_targets.add(("angle", trip))
            return

    def _arrow_len(self, scene, pts, mids):
        segs = [m for m in mids if m[0][0] == "line" and m[3] >= 60]
        self.rng.shuffle(segs)
        for key, m, n, length in segs:
            if ("seg", key) in self.used_targets:
                continue
            side = 1 if self.rng.random() < 0.5 else -1
            nn = n * side
            turns = glyphs.direction_to_turns(*(-nn))
            u = np.array(glyphs.HEAD_DIRECTIONS[turns], float)
            tip = m + nn * float(self.rng.uniform(7, 11))
            dm = float(np.linalg.norm(tip - m))
            if any(np.linalg.norm(tip - mm[1]) < dm + AMBIGUITY_MARGIN for mm in mids if mm[0] != key):
                continue
            if any(np.linalg.norm(tip - q) < dm + AMBIGUITY_MARGIN for q in pts.values()):
                continue
            content = str(int(self.rng.integers(2, 31)))
            got = self._arrow_common(scene, "head_len", tip, u, content, mids, dm, key)
            if got is None:
                continue
            head, text, u = got
            s = self.add_symbol("head_len", head, direction=(int(u[0]), int(u[1])))
            t = self.add_text(content, text, "len")
            self.head_boxes.append(head)
            _, lid, a, b = key
            self.relations.append(Relation(t.id, (s.id,), "ArrowIndication"))
            self.relations.append(Relation(t.id, (lid,) + tuple(sorted((a, b))), "Text2Len"))
            self.used_targets.add(("seg", key))
            return


def _sub_seed(seed: int, *extra: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, *extra]))


def sample_scene(config: SceneConfig, scene_id: str = "0") -> Scene:
    """Sample a ground-truth scene; deterministic in (config, seed)."""
    last = None
    for attempt in range(config.max_retries):
        rng = _sub_seed(config.seed, attempt)
        stroke = int(rng.integers(config.stroke_width[0], config.stroke_width[1] + 1))
        try:
            g, d = _Builder(config, rng).build_geometry()
        except _Reject as e:
            last = e
            continue
        ann = _Annotator(config, rng, g, d, stroke)
        scene = ann.make_geometry()
        scene = ann.make_arcs(scene)
        feet = []
        for sa, sb, foot in g.perp:
            fid = f"P{ann._resolve_endpoint(foot)}"
            feet.append((f"L{sa}", f"L{sb}", fid))
        pairs = [(f"L{a}", f"L{b}") for a, b in g.parallel]
        ann.place_arrows(scene)
        ann.place_perpendicular(scene, feet)
        ann.place_angle_marks(scene)
        ann.place_bar_marks(scene)
        ann.place_parallel_marks(scene, pairs)
        ann.place_angle_texts(scene)
        ann.place_len_texts(scene)
        ann.place_area_texts(scene)
        ann.place_line_labels(scene)
        ann.place_point_labels(scene)
        scene = Scene(
            id=scene_id,
            width=scene.width,
            height=scene.height,
            points=scene.points,
            lines=scene.lines,
            circles=scene.circles,
            symbols=tuple(ann.symbols),
            texts=tuple(ann.texts),
            provenance={"seed": config.seed, "config": config.digest(), "stroke_width": stroke, "blur": config.blur},
        ).with_relations(list(scene.relations) + ann.relations)
        problems = validate_scene(scene)
        if problems:
            raise AssertionError(f"constructed scene failed validation: {problems[:3]}")
        return _with_props(scene)
    raise InfeasibleConfig(f"could not satisfy placement constraints after {config.max_retries} attempts: {last}")


def _with_props(scene: Scene) -> Scene:
    from dataclasses import replace

    return replace(scene, propositions=generate(scene))


def validate_scene(scene: Scene, slack: float = 0.5) -> List[str]:
    """Re-check every relation against the knowledge rules. Empty list = valid."""
    rules = KnowledgeRules(on_line_tol=0.0, on_circle_tol=0.0)
    out = []
    for rel in scene.relations:
        if not rules.admits(rel, scene, slack=slack):
            out.append(f"{rel.type}({rel.subject}, {list(rel.objects)})")
    return out


# ---------------------------------------------------------------------------
# rasterization


@dataclass
class RasterDiagram:
    image: np.ndarray  # uint8, 255 = background
    masks: Dict[str, np.ndarray]
    boxes: Dict[str, Box]


def _pixel_grid(x0, y0, x1, y1, W, H):
    xa, xb = max(int(math.floor(x0)), 0), min(int(math.ceil(x1)) + 1, W)
    ya, yb = max(int(math.floor(y0)), 0), min(int(math.ceil(y1)) + 1, H)
    ys, xs = np.mgrid[ya:yb, xa:xb]
    return ys, xs, xs + 0.5, ys + 0.5


def dash_intervals(length: float) -> List[Tuple[float, float]]:
    """Dash pieces along [0, length], starting and ending on ink."""
    n = max(1, int(round((length + DASH_OFF) / (DASH_ON + DASH_OFF))))
    period = (length + DASH_OFF) / n
    return [(k * period, k * period + period - DASH_OFF) for k in range(n)]


def line_intervals(length: float, style: str) -> List[Tuple[float, float]]:
    if style == "solid":
        return [(0.0, length)]
    if style == "dash":
        return dash_intervals(length)
    half = length / 2.0
    rest = dash_intervals(length - half)
    return [(0.0, half)] + [(half + a, half + b) for a, b in rest]


def segment_band(p1, p2, width: float, W: int, H: int, intervals=None) -> np.ndarray:
    """Pixels whose centers lie within width/2 of the segment (butt caps)."""
    mask = np.zeros((H, W), dtype=bool)
    p1 = np.asarray(p1, float)
    p2 = np.asarray(p2, float)
    L = float(np.linalg.norm(p2 - p1))
    u = (p2 - p1) / L
    hw = width / 2.0
    ys, xs, cx, cy = _pixel_grid(min(p1[0], p2[0]) - hw, min(p1[1], p2[1]) - hw, max(p1[0], p2[0]) + hw, max(p1[1], p2[1]) + hw, W, H)
    t = (cx - p1[0]) * u[0] + (cy - p1[1]) * u[1]
    n = (cx - p1[0]) * -u[1] + (cy - p1[1]) * u[0]
    ok = np.abs(n) <= hw
    if intervals is None:
        intervals = [(0.0, L)]
    on = np.zeros_like(ok)
    for a, b in intervals:
        on |= (t >= a) & (t <= b)
    mask[ys, xs] = ok & on
    return mask


def annulus(cx, cy, r, width: float, W: int, H: int, start=0.0, span=2 * math.pi) -> np.ndarray:
    mask = np.zeros((H, W), dtype=bool)
    hw = width / 2.0
    ys, xs, px, py = _pixel_grid(cx - r - hw, cy - r - hw, cx + r + hw, cy + r + hw, W, H)
    d = np.hypot(px - cx, py - cy)
    ok = np.abs(d - r) <= hw
    if span < 2 * math.pi - 1e-12:
        th = np.mod(np.arctan2(py - cy, px - cx), 2 * math.pi)
        ok &= np.mod(th - start, 2 * math.pi) <= span
    mask[ys, xs] = ok
    return mask


def disk(cx, cy, r, W, H) -> np.ndarray:
    mask = np.zeros((H, W), dtype=bool)
    ys, xs, px, py = _pixel_grid(cx - r, cy - r, cx + r, cy + r, W, H)
    mask[ys, xs] = np.hypot(px - cx, py - cy) <= r
    return mask


def has_dot(p: Point) -> bool:
    return p.kind in ("center", "independent")


def geometric_masks(scene: Scene, stroke_width: float, point_radius: float = 3.0) -> Dict[str, np.ndarray]:
    """Per-instance ink masks for every geometric primitive of a scene."""
    W, H = scene.width, scene.height
    masks: Dict[str, np.ndarray] = {}
    for l in scene.lines:
        seg = scene.segment(l.id)
        masks[l.id] = segment_band(seg.p1, seg.p2, stroke_width, W, H, line_intervals(seg.length, l.style))
    for c in scene.circles:
        if c.arc and c.arc_endpoints:
            a0 = angle_of((scene.point(c.arc_endpoints[0]).x - c.x, scene.point(c.arc_endpoints[0]).y - c.y))
            a1 = angle_of((scene.point(c.arc_endpoints[1]).x - c.x, scene.point(c.arc_endpoints[1]).y - c.y))
            masks[c.id] = annulus(c.x, c.y, c.radius, stroke_width, W, H, a0, ccw_span(a0, a1))
        else:
            masks[c.id] = annulus(c.x, c.y, c.radius, stroke_width, W, H)
    owners: Dict[str, List[str]] = {}
    for l in scene.lines:
        for pid in scene.line_point_ids(l.id):
            owners.setdefault(pid, []).append(l.id)
    for c in scene.circles:
        for pid in scene.circle_point_ids(c.id):
            owners.setdefault(pid, []).append(c.id)
    for p in scene.points:
        if has_dot(p):
            masks[p.id] = disk(p.x, p.y, DOT_RADIUS, W, H)
            continue
        near = disk(p.x, p.y, point_radius + stroke_width / 2.0, W, H)
        ink = np.zeros((H, W), dtype=bool)
        for o in owners.get(p.id, ()):
            ink |= masks[o]
        masks[p.id] = near & ink
    return masks


def _check_bounds(scene: Scene) -> None:
    W, H = scene.width, scene.height
    for p in scene.points:
        if not (0 <= p.x < W and 0 <= p.y < H):
            raise ValueError(f"point {p.id} out of image bounds")
    for c in scene.circles:
        if c.x - c.radius < 0 or c.y - c.radius < 0 or c.x + c.radius >= W or c.y + c.radius >= H:
            if not c.arc:
                raise ValueError(f"circle {c.id} out of image bounds")
    for prim in scene.symbols + scene.texts:
        b = prim.bbox
        if b.x1 < 0 or b.y1 < 0 or b.x2 > W or b.y2 > H:
            raise ValueError(f"{prim.id} box out of image bounds")


def symbol_bitmap(s: Symbol) -> np.ndarray:
    if s.cls in ("head", "head_len"):
        d = s.direction or (1, 0)
        return glyphs.head_glyph(s.cls, glyphs.direction_to_turns(*d))
    return glyphs.symbol_glyph(s.cls)


def rasterize(scene: Scene, stroke_width: Optional[float] = None, blur: float = 0.0) -> RasterDiagram:
    """Black-on-white rendering plus per-instance masks and glyph boxes."""
    if stroke_width is None:
        stroke_width = float(scene.provenance.get("stroke_width", 2))
    _check_bounds(scene)
    W, H = scene.width, scene.height
    masks = geometric_masks(scene, stroke_width)
    ink = np.zeros((H, W), dtype=bool)
    for m in masks.values():
        ink |= m
    boxes: Dict[str, Box] = {}
    for prim in scene.symbols + scene.texts:
        bm = symbol_bitmap(prim) if isinstance(prim, Symbol) else glyphs.render_text(prim.content)
        b = prim.bbox
        x1, y1 = int(b.x1), int(b.y1)
        h, w = bm.shape
        ink[y1 : y1 + h, x1 : x1 + w] |= bm
        boxes[prim.id] = b
    img = np.where(ink, 0.0, 255.0)
    if blur > 0:
        img = ndimage.gaussian_filter(img, blur)
    return RasterDiagram(np.clip(np.round(img), 0, 255).astype(np.uint8), masks, boxes)
