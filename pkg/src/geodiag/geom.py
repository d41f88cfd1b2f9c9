"""Domain types, exact geometric predicates and canonical naming.

Coordinates are image pixels: origin top-left, y grows downward. Pixel
``(col, row)`` covers ``[col, col+1) x [row, row+1)`` so its center sits at
``(col + 0.5, row + 0.5)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Callable, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

DEFAULT_RAY_TOL = 3.0

POINT_KINDS = ("intersection", "tangent", "endpoint", "independent", "center")
LINE_STYLES = ("solid", "dash", "mixed")

SYMBOL_CLASSES = (
    "perpendicular",
    "head",
    "head_len",
    "angle",
    "double angle",
    "triple angle",
    "quad angle",
    "penta angle",
    "bar",
    "double bar",
    "triple bar",
    "quad bar",
    "parallel",
    "double parallel",
    "triple parallel",
    "text",
)
ANGLE_MARKS = SYMBOL_CLASSES[3:8]
BAR_MARKS = SYMBOL_CLASSES[8:12]
PARALLEL_MARKS = SYMBOL_CLASSES[12:15]
HEAD_CLASSES = ("head", "head_len")

TEXT_CLASSES = ("point", "line", "angle", "len", "degree", "area")

GEO2GEO = ("PointOnLine", "PointOnCircle", "CenterOfCircle")
TEXT2GEO = ("Text2Point", "Text2Line", "Text2Angle", "Text2Degree", "Text2Len", "Text2Area")
SYM2GEO = ("Perpendicular", "AngleEquality", "BarEquality", "ParallelEquality")
TEXT2HEAD = ("ArrowIndication",)
REL_TYPES = GEO2GEO + TEXT2GEO + SYM2GEO + TEXT2HEAD

REL_GROUPS = {
    "Geo2Geo": GEO2GEO,
    "Text2Geo": TEXT2GEO,
    "Sym2Geo": SYM2GEO,
    "Text2Head": TEXT2HEAD,
}


class GeometryError(ValueError):
    """Raised on degenerate geometry or malformed naming requests."""


# ---------------------------------------------------------------------------
# parsing positions


@dataclass(frozen=True)
class PointPos:
    x: float
    y: float

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y], dtype=float)


@dataclass(frozen=True)
class Segment:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if math.hypot(self.x2 - self.x1, self.y2 - self.y1) <= 0:
            raise GeometryError("line endpoints coincide")

    @property
    def length(self) -> float:
        return math.hypot(self.x2 - self.x1, self.y2 - self.y1)

    @property
    def p1(self) -> np.ndarray:
        return np.array([self.x1, self.y1], dtype=float)

    @property
    def p2(self) -> np.ndarray:
        return np.array([self.x2, self.y2], dtype=float)

    @property
    def direction(self) -> np.ndarray:
        d = self.p2 - self.p1
        return d / np.linalg.norm(d)


@dataclass(frozen=True)
class CircleShape:
    x: float
    y: float
    r: float

    def __post_init__(self):
        if not self.r > 0:
            raise GeometryError(f"circle radius must be positive, got {self.r}")


@dataclass(frozen=True)
class Box:
    x1: float
    y1: float
    x2: float
    y2: float

    def __post_init__(self):
        if not (self.x1 < self.x2 and self.y1 < self.y2):
            raise GeometryError(f"degenerate box {self.as_list()}")

    @property
    def center(self) -> Tuple[float, float]:
        return ((self.x1 + self.x2) / 2.0, (self.y1 + self.y2) / 2.0)

    @property
    def area(self) -> float:
        return (self.x2 - self.x1) * (self.y2 - self.y1)

    def as_list(self) -> List[float]:
        return [self.x1, self.y1, self.x2, self.y2]

    def distance_to(self, x: float, y: float) -> float:
        dx = max(self.x1 - x, 0.0, x - self.x2)
        dy = max(self.y1 - y, 0.0, y - self.y2)
        return math.hypot(dx, dy)

    def expanded(self, m: float) -> "Box":
        return Box(self.x1 - m, self.y1 - m, self.x2 + m, self.y2 + m)


def box_iou(a: Box, b: Box) -> float:
    iw = min(a.x2, b.x2) - max(a.x1, b.x1)
    ih = min(a.y2, b.y2) - max(a.y1, b.y1)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / (a.area + b.area - inter)


# ---------------------------------------------------------------------------
# primitives and relations


@dataclass(frozen=True)
class Point:
    id: str
    x: float
    y: float
    kind: str = "endpoint"

    @property
    def pos(self) -> PointPos:
        return PointPos(self.x, self.y)


@dataclass(frozen=True)
class Line:
    id: str
    endpoints: Tuple[str, str]
    points_on: Tuple[str, ...] = ()
    style: str = "solid"


@dataclass(frozen=True)
class Circle:
    """Circle or arc. An arc runs from ``arc_endpoints[0]`` to ``arc_endpoints[1]``
    in the direction of increasing image angle ``atan2(dy, dx)``."""

    id: str
    x: float
    y: float
    radius: float
    center: Optional[str] = None
    points_on: Tuple[str, ...] = ()
    arc: bool = False
    arc_endpoints: Optional[Tuple[str, str]] = None

    @property
    def shape(self) -> CircleShape:
        return CircleShape(self.x, self.y, self.radius)


@dataclass(frozen=True)
class Symbol:
    id: str
    cls: str
    bbox: Box
    # heads only: unit axis direction the tip points to
    direction: Optional[Tuple[int, int]] = field(default=None, compare=False)


@dataclass(frozen=True)
class Text:
    id: str
    content: str
    bbox: Box
    cls: Optional[str] = None


@dataclass(frozen=True)
class Relation:
    subject: str
    objects: Tuple[str, ...]
    type: str

    def __post_init__(self):
        if not self.objects:
            raise GeometryError("relation needs at least one object")
        if self.type not in REL_TYPES:
            raise GeometryError(f"unknown relation type {self.type!r}")

    def binary_terms(self) -> List[Tuple[str, str, str]]:
        return [(self.subject, o, self.type) for o in self.objects]

    def sort_key(self):
        return (REL_TYPES.index(self.type), self.subject, self.objects)


def rel_group(rel_type: str) -> str:
    for name, members in REL_GROUPS.items():
        if rel_type in members:
            return name
    raise GeometryError(f"unknown relation type {rel_type!r}")


@dataclass(frozen=True)
class Scene:
    """A diagram: primitives, their relations and the derived propositions.

    Serves both as ground truth and as parser output. ``points_on`` and circle
    ``center`` fields are views of the relation set; :meth:`with_relations`
    keeps them consistent.
    """

    id: str = "0"
    width: int = 512
    height: int = 512
    points: Tuple[Point, ...] = ()
    lines: Tuple[Line, ...] = ()
    circles: Tuple[Circle, ...] = ()
    symbols: Tuple[Symbol, ...] = ()
    texts: Tuple[Text, ...] = ()
    relations: Tuple[Relation, ...] = ()
    propositions: Tuple[str, ...] = ()
    provenance: Dict[str, object] = field(default_factory=dict, compare=False, hash=False)

    @cached_property
    def _index(self) -> Dict[str, object]:
        idx: Dict[str, object] = {}
        for group in (self.points, self.lines, self.circles, self.symbols, self.texts):
            for prim in group:
                if prim.id in idx:
                    raise GeometryError(f"duplicate primitive id {prim.id}")
                idx[prim.id] = prim
        return idx

    def get(self, pid: str):
        try:
            return self._index[pid]
        except KeyError:
            raise GeometryError(f"unknown primitive id {pid!r}") from None

    def has(self, pid: str) -> bool:
        return pid in self._index

    def kind_of(self, pid: str) -> str:
        prim = self.get(pid)
        return {Point: "point", Line: "line", Circle: "circle", Symbol: "symbol", Text: "text"}[type(prim)]

    def point(self, pid: str) -> Point:
        prim = self.get(pid)
        if not isinstance(prim, Point):
            raise GeometryError(f"{pid} is not a point")
        return prim

    def xy(self, pid: str) -> np.ndarray:
        p = self.point(pid)
        return np.array([p.x, p.y], dtype=float)

    def segment(self, line_id: str) -> Segment:
        line = self.get(line_id)
        a, b = (self.point(e) for e in line.endpoints)
        return Segment(a.x, a.y, b.x, b.y)

    def line_point_ids(self, line_id: str) -> Tuple[str, ...]:
        line = self.get(line_id)
        seen = dict.fromkeys(line.endpoints + line.points_on)
        return tuple(seen)

    def circle_point_ids(self, circle_id: str) -> Tuple[str, ...]:
        c = self.get(circle_id)
        ids = list(c.points_on)
        if c.arc_endpoints:
            ids.extend(c.arc_endpoints)
        return tuple(dict.fromkeys(ids))

    @cached_property
    def _lines_through(self) -> Dict[str, Tuple[str, ...]]:
        out: Dict[str, List[str]] = {}
        for line in self.lines:
            for pid in self.line_point_ids(line.id):
                out.setdefault(pid, []).append(line.id)
        return {k: tuple(v) for k, v in out.items()}

    def lines_through(self, pid: str) -> Tuple[str, ...]:
        return self._lines_through.get(pid, ())

    # naming -------------------------------------------------------------

    @cached_property
    def _names(self) -> Tuple[Dict[str, str], Dict[str, str]]:
        texts = {t.id: t for t in self.texts}
        name_of: Dict[str, str] = {}
        used = {p.id for p in self.points}
        for rel in sorted(self.relations, key=lambda r: r.subject):
            if rel.type != "Text2Point" or rel.subject not in texts:
                continue
            label = texts[rel.subject].content
            pid = rel.objects[0]
            if pid in name_of or label in used or not _is_identifier(label):
                continue
            name_of[pid] = label
            used.add(label)
        resolve = {p.id: p.id for p in self.points}
        for pid, label in name_of.items():
            resolve[label] = pid
        return name_of, resolve

    def point_name(self, pid: str) -> str:
        """Label text if the point is labeled, else its id."""
        return self._names[0].get(pid, pid)

    def resolve_name(self, name: str) -> str:
        try:
            return self._names[1][name]
        except KeyError:
            raise GeometryError(f"unknown point {name!r}") from None

    # relation views -----------------------------------------------------

    def with_relations(self, relations: Iterable[Relation]) -> "Scene":
        rels = tuple(sorted(set(relations), key=Relation.sort_key))
        on_line: Dict[str, List[str]] = {}
        on_circle: Dict[str, List[str]] = {}
        centers: Dict[str, str] = {}
        for r in rels:
            if r.type == "PointOnLine":
                on_line.setdefault(r.objects[0], []).append(r.subject)
            elif r.type == "PointOnCircle":
                on_circle.setdefault(r.objects[0], []).append(r.subject)
            elif r.type == "CenterOfCircle":
                centers.setdefault(r.objects[0], r.subject)
        lines = tuple(replace(l, points_on=tuple(sorted(on_line.get(l.id, ())))) for l in self.lines)
        circles = tuple(
            replace(c, points_on=tuple(sorted(on_circle.get(c.id, ()))), center=centers.get(c.id))
            for c in self.circles
        )
        return replace(self, lines=lines, circles=circles, relations=rels)

    def primitives_only(self) -> "Scene":
        """Geometry and content only: no relations, memberships or text classes."""
        lines = tuple(replace(l, points_on=()) for l in self.lines)
        circles = tuple(replace(c, points_on=(), center=None) for c in self.circles)
        texts = tuple(replace(t, cls=None) for t in self.texts)
        return replace(self, lines=lines, circles=circles, texts=texts, relations=(), propositions=())


def _is_identifier(s: str) -> bool:
    return bool(s) and s[0].isascii() and s[0].isalpha() and all(c.isascii() and (c.isalnum() or c == "_") for c in s)


# ---------------------------------------------------------------------------
# predicates


def _xy(p) -> np.ndarray:
    if isinstance(p, (PointPos, Point)):
        return np.array([p.x, p.y], dtype=float)
    return np.asarray(p, dtype=float)


def dist_point_line(p, seg: Segment) -> float:
    """Euclidean distance from ``p`` to the closed segment."""
    q = _xy(p)
    a, b = seg.p1, seg.p2
    d = b - a
    t = float(np.dot(q - a, d) / np.dot(d, d))
    t = min(1.0, max(0.0, t))
    return float(np.linalg.norm(q - (a + t * d)))


def dist_point_infinite_line(p, seg: Segment) -> float:
    q = _xy(p) - seg.p1
    d = seg.direction
    return abs(float(d[0] * q[1] - d[1] * q[0]))


def project_param(p, seg: Segment) -> float:
    """Projection parameter of ``p`` along the segment, 0 at p1 and 1 at p2."""
    d = seg.p2 - seg.p1
    return float(np.dot(_xy(p) - seg.p1, d) / np.dot(d, d))


def dist_point_circle(p, c: CircleShape) -> float:
    q = _xy(p)
    return abs(math.hypot(q[0] - c.x, q[1] - c.y) - c.r)


def point_on_ray(vertex, arm, q, tol: float = DEFAULT_RAY_TOL) -> bool:
    v, a, x = _xy(vertex), _xy(arm), _xy(q)
    d = a - v
    n = np.linalg.norm(d)
    if n == 0:
        raise GeometryError("ray arm coincides with vertex")
    if np.allclose(x, v):
        return False
    d = d / n
    w = x - v
    t = float(np.dot(w, d))
    if t < 0:
        return False
    return abs(float(d[0] * w[1] - d[1] * w[0])) <= tol


def angle_of(vec) -> float:
    """Image-frame angle in [0, 2pi)."""
    return math.atan2(vec[1], vec[0]) % (2 * math.pi)


def ccw_span(a0: float, a1: float) -> float:
    """Angular distance going from a0 to a1 in increasing-angle direction."""
    return (a1 - a0) % (2 * math.pi)


def circle_angle(c: Circle, scene: Scene, pid: str) -> float:
    p = scene.point(pid)
    return angle_of((p.x - c.x, p.y - c.y))


def arc_span(c: Circle, scene: Scene) -> Tuple[float, float]:
    """(start angle, span) of a circle's drawn locus; full circles span 2pi."""
    if not c.arc or not c.arc_endpoints:
        return 0.0, 2 * math.pi
    a0 = circle_angle(c, scene, c.arc_endpoints[0])
    a1 = circle_angle(c, scene, c.arc_endpoints[1])
    return a0, ccw_span(a0, a1)


def angle_in_arc(theta: float, start: float, span: float, slack: float = 0.0) -> bool:
    if span >= 2 * math.pi - 1e-12:
        return True
    return ccw_span(start - slack, theta) <= span + 2 * slack



# ---------------------------------------------------------------------------
# boxes and segments


def segment_intersection(p1, p2, q1, q2):
    d1 = p2 - p1
    d2 = q2 - q1
    den = d1[0] * d2[1] - d1[1] * d2[0]
    if abs(den) < 1e-12:
        return None
    w = q1 - p1
    t = (w[0] * d2[1] - w[1] * d2[0]) / den
    u = (w[0] * d1[1] - w[1] * d1[0]) / den
    return t, u, p1 + t * d1


def segment_distance(a1, a2, b1, b2) -> float:
    hit = segment_intersection(a1, a2, b1, b2)
    if hit is not None and -1e-12 <= hit[0] <= 1 + 1e-12 and -1e-12 <= hit[1] <= 1 + 1e-12:
        return 0.0
    sa = Segment(*a1, *a2)
    sb = Segment(*b1, *b2)
    return min(dist_point_line(a1, sb), dist_point_line(a2, sb), dist_point_line(b1, sa), dist_point_line(b2, sa))


def box_segment_distance(box: Box, p1, p2) -> float:
    corners = [np.array(c, float) for c in ((box.x1, box.y1), (box.x2, box.y1), (box.x2, box.y2), (box.x1, box.y2))]
    for x in (p1, p2):
        if box.x1 <= x[0] <= box.x2 and box.y1 <= x[1] <= box.y2:
            return 0.0
    best = min(box.distance_to(*p1), box.distance_to(*p2))
    for i in range(4):
        best = min(best, segment_distance(corners[i], corners[(i + 1) % 4], p1, p2))
    return best


def box_circle_clearance(box: Box, c, r) -> float:
    dmin = box.distance_to(c[0], c[1])
    dmax = max(math.hypot(x - c[0], y - c[1]) for x in (box.x1, box.x2) for y in (box.y1, box.y2))
    if dmin <= r <= dmax:
        return 0.0
    return min(abs(dmin - r), abs(dmax - r))


def box_gap(a: Box, b: Box) -> float:
    dx = max(a.x1 - b.x2, 0.0, b.x1 - a.x2)
    dy = max(a.y1 - b.y2, 0.0, b.y1 - a.y2)
    return math.hypot(dx, dy)


def segment_anchors(scene: "Scene"):
    """Midpoints of the pieces between consecutive marked points.

    Lines give pieces between neighbours along the line; circles give arcs
    between angular neighbours that stay on the drawn locus and are shorter
    than a half turn. Each entry is ``(key, xy, normal, length)`` with key
    ``("line", id, a, b)`` or ``("circle", id, a, b)``, a to b counter-clockwise
    in image angle for circles.
    """
    pts = {p.id: np.array([p.x, p.y]) for p in scene.points}
    mids = []
    for l in scene.lines:
        ids = scene.line_point_ids(l.id)
        seg = scene.segment(l.id)
        order = sorted(ids, key=lambda i: float((pts[i] - seg.p1) @ seg.direction))
        for a, b in zip(order, order[1:]):
            m = (pts[a] + pts[b]) / 2
            n = np.array([-seg.direction[1], seg.direction[0]])
            mids.append((("line", l.id, a, b), m, n, float(np.linalg.norm(pts[b] - pts[a]))))
    for c in scene.circles:
        ids = scene.circle_point_ids(c.id)
        if len(ids) < 2:
            continue
        ang = sorted((angle_of((pts[i][0] - c.x, pts[i][1] - c.y)), i) for i in ids)
        pairs = list(zip(ang, ang[1:] + ang[:1]))
        for (ta, a), (tb, b) in pairs:
            span = ccw_span(ta, tb)
            if c.arc:
                s0 = angle_of((pts[c.arc_endpoints[0]][0] - c.x, pts[c.arc_endpoints[0]][1] - c.y))
                s1 = ccw_span(s0, angle_of((pts[c.arc_endpoints[1]][0] - c.x, pts[c.arc_endpoints[1]][1] - c.y)))
                if ccw_span(s0, ta) + span > s1 + 1e-9:
                    continue
            if span <= 1e-9 or span >= math.pi:
                continue
            tm = ta + span / 2
            rad = np.array([math.cos(tm), math.sin(tm)])
            m = np.array([c.x, c.y]) + c.radius * rad
            mids.append((("circle", c.id, a, b), m, rad, c.radius * span))
    return pts, mids

# ---------------------------------------------------------------------------
# canonical naming


def _default_key(scene: Scene) -> Callable[[str], str]:
    return scene.point_name


def canonical_angle(
    vertex: str,
    arm1_candidates: Sequence[str],
    arm2_candidates: Sequence[str],
    scene: Scene,
    key: Optional[Callable[[str], str]] = None,
    tol: float = DEFAULT_RAY_TOL,
) -> Tuple[str, str, str]:
    """Pick the farthest candidate per ray and order the arms so the triple of
    names is lexicographically smallest."""
    if not arm1_candidates or not arm2_candidates:
        raise GeometryError("angle arm has no candidate points")
    key = key or _default_key(scene)
    v = scene.xy(vertex)
    arms = []
    for cands in (arm1_candidates, arm2_candidates):
        ref = cands[0]
        for c in cands:
            if not point_on_ray(v, scene.xy(ref), scene.xy(c), tol):
                raise GeometryError(f"{c} is not on ray {vertex}->{ref}")
        dist = {c: float(np.linalg.norm(scene.xy(c) - v)) for c in cands}
        far = max(dist.values())
        # ties within floating noise go to the lexicographically smaller name
        best = min((c for c in cands if far - dist[c] <= 1e-9), key=key)
        arms.append(best)
    a, b = arms
    t1 = (a, vertex, b)
    t2 = (b, vertex, a)
    return min(t1, t2, key=lambda t: tuple(key(x) for x in t))


def canonical_line_name(
    line: str, scene: Scene, key: Optional[Callable[[str], str]] = None
) -> Tuple[str, str]:
    ids = scene.line_point_ids(line)
    return extreme_pair(ids, scene, key)


def extreme_pair(ids: Sequence[str], scene: Scene, key=None) -> Tuple[str, str]:
    """The two collinear points with extreme projections, ordered by name."""
    ids = list(dict.fromkeys(ids))
    if len(ids) < 2:
        raise GeometryError("need at least two points to name a line")
    key = key or _default_key(scene)
    pts = np.array([scene.xy(i) for i in ids])
    centered = pts - pts.mean(axis=0)
    # principal direction; sign fixed so the result does not depend on input order
    _, _, vt = np.linalg.svd(centered, full_matrices=False)
    d = vt[0]
    if d[0] < -1e-12 or (abs(d[0]) <= 1e-12 and d[1] < 0):
        d = -d
    t = centered @ d
    lo, hi = t.min(), t.max()
    eps = 1e-9 * max(1.0, hi - lo)
    a = min((i for i, ti in zip(ids, t) if ti - lo <= eps), key=key)
    b = min((i for i, ti in zip(ids, t) if hi - ti <= eps), key=key)
    return tuple(sorted((a, b), key=key))


def rays_at(vertex: str, scene: Scene, tol: float = DEFAULT_RAY_TOL) -> List[Tuple[float, Tuple[str, ...]]]:
    """Rays leaving ``vertex`` along the lines through it.

    Returns (angle, candidate ids ordered far to near) per ray, sorted by angle.
    """
    v = scene.xy(vertex)
    rays = []
    for lid in scene.lines_through(vertex):
        seg = scene.segment(lid)
        d = seg.direction
        sides: Dict[int, List[Tuple[float, str]]] = {1: [], -1: []}
        for pid in scene.line_point_ids(lid):
            if pid == vertex:
                continue
            t = float(np.dot(scene.xy(pid) - v, d))
            if abs(t) < 1e-9:
                continue
            sides[1 if t > 0 else -1].append((abs(t), pid))
        for sign, cands in sides.items():
            if cands:
                cands.sort(key=lambda c: -c[0])
                rays.append((angle_of(sign * d), tuple(c[1] for c in cands)))
    rays.sort(key=lambda r: r[0])
    return rays


def wedges_at(vertex: str, scene: Scene, max_angle: float = math.pi - 1e-6):
    """Angles between consecutive rays at a vertex (each strictly below 180 deg).

    Yields (start angle, span, ray1 candidates, ray2 candidates) where the wedge
    sweeps from ray1 to ray2 with increasing angle.
    """
    rays = rays_at(vertex, scene)
    out = []
    n = len(rays)
    if n < 2:
        return out
    for i in range(n):
        a0, c0 = rays[i]
        a1, c1 = rays[(i + 1) % n]
        span = ccw_span(a0, a1)
        if n == 2 and i == 1 and abs(span) < 1e-12:
            continue
        if 1e-6 < span < max_angle:
            out.append((a0, span, c0, c1))
    return out


# ---------------------------------------------------------------------------
# knowledge rules


@dataclass(frozen=True)
class RuleEntry:
    subject_kind: str
    subject_classes: Optional[Tuple[str, ...]]
    object_shapes: Tuple[Tuple[str, ...], ...]


class KnowledgeRules:
    """Which primitive classes may relate, with what object shapes.

    Relation objects are flat id lists; composite geometry is spelled out:
    an angle is ``[arm, vertex, arm]`` points, a segment is ``[line, a, b]``
    and an arc is ``[circle, a, b]``.
    """

    TABLE: Dict[str, RuleEntry] = {
        "PointOnLine": RuleEntry("point", None, (("line",),)),
        "PointOnCircle": RuleEntry("point", None, (("circle",),)),
        "CenterOfCircle": RuleEntry("point", None, (("circle",),)),
        "Text2Point": RuleEntry("text", ("point",), (("point",),)),
        "Text2Line": RuleEntry("text", ("line",), (("line",),)),
        "Text2Angle": RuleEntry("text", ("angle",), (("point", "point", "point"),)),
        "Text2Degree": RuleEntry(
            "text", ("degree",), (("point", "point", "point"), ("circle", "point", "point"))
        ),
        "Text2Len": RuleEntry("text", ("len",), (("line", "point", "point"), ("circle", "point", "point"))),
        "Text2Area": RuleEntry("text", ("area",), (("circle",),)),
        "Perpendicular": RuleEntry("symbol", ("perpendicular",), (("line", "line"),)),
        "AngleEquality": RuleEntry("symbol", ANGLE_MARKS, (("point", "point", "point"),)),
        "BarEquality": RuleEntry("symbol", BAR_MARKS, (("line", "point", "point"), ("circle", "point", "point"))),
        "ParallelEquality": RuleEntry("symbol", PARALLEL_MARKS, (("line",),)),
        "ArrowIndication": RuleEntry("text", None, (("symbol",),)),
    }

    def __init__(self, on_line_tol: float = 3.0, on_circle_tol: float = 3.0):
        self.on_line_tol = on_line_tol
        self.on_circle_tol = on_circle_tol

    @classmethod
    def admissible_types(cls, subject_kind: str, subject_class: Optional[str], object_kinds: Tuple[str, ...]):
        out = []
        for name, e in cls.TABLE.items():
            if e.subject_kind != subject_kind:
                continue
            if e.subject_classes is not None and subject_class not in e.subject_classes:
                continue
            if object_kinds in e.object_shapes:
                out.append(name)
        return out

    def admits_kinds(self, rel: Relation, scene: Scene) -> bool:
        e = self.TABLE[rel.type]
        if not scene.has(rel.subject) or not all(scene.has(o) for o in rel.objects):
            return False
        if scene.kind_of(rel.subject) != e.subject_kind:
            return False
        subj = scene.get(rel.subject)
        if e.subject_classes is not None:
            cls = subj.cls
            if cls not in e.subject_classes:
                return False
        shape = tuple(scene.kind_of(o) for o in rel.objects)
        if shape not in e.object_shapes:
            return False
        if rel.type == "ArrowIndication":
            return scene.get(rel.objects[0]).cls in HEAD_CLASSES
        return True

    def admits(self, rel: Relation, scene: Scene, slack: float = 0.0) -> bool:
        """Kind check plus the geometric predicate for point relations."""
        if not self.admits_kinds(rel, scene):
            return False
        if rel.type == "PointOnLine":
            return dist_point_line(scene.point(rel.subject), scene.segment(rel.objects[0])) <= self.on_line_tol + slack
        if rel.type == "PointOnCircle":
            return dist_point_circle(scene.point(rel.subject), scene.get(rel.objects[0]).shape) <= self.on_circle_tol + slack
        if rel.type == "CenterOfCircle":
            c = scene.get(rel.objects[0])
            p = scene.point(rel.subject)
            return math.hypot(p.x - c.x, p.y - c.y) <= self.on_circle_tol + slack
        if rel.type == "Perpendicular":
            d1 = scene.segment(rel.objects[0]).direction
            d2 = scene.segment(rel.objects[1]).direction
            return abs(float(np.dot(d1, d2))) <= math.sin(math.radians(5.0))
        return True
