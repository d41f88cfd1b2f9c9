"""Rule-based relation parsing over a sparse candidate graph.

Candidates are only generated between primitive classes that the knowledge
rules allow to relate, and only when a cheap geometric pre-filter passes.
Each parse step then picks among the candidates with a distance rule.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from .geom import (
    ANGLE_MARKS,
    BAR_MARKS,
    GEO2GEO,
    HEAD_CLASSES,
    PARALLEL_MARKS,
    Box,
    KnowledgeRules,
    Relation,
    Scene,
    Symbol,
    Text,
    angle_in_arc,
    angle_of,
    arc_span,
    box_gap,
    box_segment_distance,
    canonical_angle,
    ccw_span,
    dist_point_circle,
    dist_point_line,
    segment_anchors,
    wedges_at,
)


@dataclass(frozen=True)
class RuleConfig:
    on_line_tol: float = 3.0
    on_circle_tol: float = 3.0
    symbol_radius: float = 25.0
    text_radius: float = 30.0
    arm_tol: float = 10.0  # degrees
    union_gap: float = 20.0
    perpendicular_tol: float = 5.0  # degrees

    def __post_init__(self):
        for k, v in self.__dict__.items():
            if not v > 0:
                raise ValueError(f"{k} must be positive, got {v!r}")

    def scaled(self, f: float) -> "RuleConfig":
        return RuleConfig(**{k: v * f for k, v in self.__dict__.items()})


@dataclass(frozen=True)
class Candidate:
    subject: str
    objects: Tuple[str, ...]
    type: str
    cost: float
    # for angle targets: offset from the bisector as a fraction of the
    # half-span, and how far (radians) the direction falls outside the wedge
    offset: float = 0.0
    outside: float = 0.0
    wedge: bool = False


@dataclass
class CandidateGraph:
    nodes: Tuple[str, ...]
    edges: List[Candidate]

    def of(self, subject: str, types: Optional[Sequence[str]] = None) -> List[Candidate]:
        return [e for e in self.edges if e.subject == subject and (types is None or e.type in types)]


@dataclass
class RelateResult:
    scene: Scene
    relations: Tuple[Relation, ...]
    text_classes: Dict[str, str]
    unattached_symbols: List[str] = field(default_factory=list)
    unattached_texts: List[str] = field(default_factory=list)
    inadmissible: List[Relation] = field(default_factory=list)


# ---------------------------------------------------------------------------
# geometry shared by the rules


def _head_frame(s: Symbol) -> Tuple[np.ndarray, np.ndarray]:
    """(tip, unit direction) of an arrow head."""
    u = np.array(s.direction if s.direction is not None else (1, 0), float)
    u /= np.linalg.norm(u)
    b = s.bbox
    c = np.array(b.center)
    reach = abs(u[0]) * (b.x2 - b.x1) / 2 + abs(u[1]) * (b.y2 - b.y1) / 2
    return c + u * reach, u


def _wedge_fits(scene: Scene, vertex: str, target) -> List[Tuple[Tuple[str, str, str], float, float]]:
    """Angles at ``vertex`` with the offset of ``target`` from each bisector."""
    v = scene.xy(vertex)
    t = np.asarray(target, float)
    if np.allclose(t, v):
        return []
    th = angle_of(t - v)
    out = []
    for a0, span, c0, c1 in wedges_at(vertex, scene):
        bis = a0 + span / 2
        dev = abs(((th - bis + math.pi) % (2 * math.pi)) - math.pi)
        out.append((canonical_angle(vertex, c0, c1, scene, key=str), dev / (span / 2), max(0.0, dev - span / 2)))
    return out


def _mid_objects(key) -> Tuple[str, ...]:
    kind, gid, a, b = key
    return (gid,) + (tuple(sorted((a, b))) if kind == "line" else (a, b))


# ---------------------------------------------------------------------------
# candidate graph


def _geo_candidates(scene: Scene, cfg: RuleConfig) -> List[Candidate]:
    out = []
    for p in scene.points:
        for l in scene.lines:
            if p.id in l.endpoints:
                continue
            d = dist_point_line(p, scene.segment(l.id))
            if d <= 2 * cfg.on_line_tol:
                out.append(Candidate(p.id, (l.id,), "PointOnLine", d))
        for c in scene.circles:
            d = dist_point_circle(p, c.shape)
            if d <= 2 * cfg.on_circle_tol and c.arc and c.arc_endpoints and p.id not in c.arc_endpoints:
                start, span = arc_span(c, scene)
                slack = 2 * cfg.on_circle_tol / max(c.radius, 1e-9)
                if not angle_in_arc(angle_of((p.x - c.x, p.y - c.y)), start, span, slack):
                    d = math.inf
            if d <= 2 * cfg.on_circle_tol:
                out.append(Candidate(p.id, (c.id,), "PointOnCircle", d))
            dc = math.hypot(p.x - c.x, p.y - c.y)
            if dc <= 2 * cfg.on_circle_tol:
                out.append(Candidate(p.id, (c.id,), "CenterOfCircle", dc))
    return out


def _near_points(scene: Scene, box: Box, radius: float, by_center: bool = False):
    cx, cy = box.center
    for p in scene.points:
        d = math.hypot(p.x - cx, p.y - cy) if by_center else box.distance_to(p.x, p.y)
        if d <= radius:
            yield p, d


def _symbol_candidates(scene: Scene, mids, cfg: RuleConfig) -> List[Candidate]:
    out = []
    r = cfg.symbol_radius
    cos_tol = math.sin(math.radians(cfg.perpendicular_tol))
    for s in scene.symbols:
        center = np.array(s.bbox.center)
        if s.cls == "perpendicular":
            for p, d in _near_points(scene, s.bbox, r, by_center=True):
                through = scene.lines_through(p.id)
                for i, la in enumerate(through):
                    for lb in through[i + 1 :]:
                        da, db = scene.segment(la).direction, scene.segment(lb).direction
                        if abs(float(da @ db)) <= cos_tol:
                            out.append(Candidate(s.id, tuple(sorted((la, lb))), "Perpendicular", d))
        elif s.cls in ANGLE_MARKS:
            for p, d in _near_points(scene, s.bbox, r):
                for trip, off, ex in _wedge_fits(scene, p.id, center):
                    out.append(Candidate(s.id, trip, "AngleEquality", d, off, ex, True))
        elif s.cls in BAR_MARKS:
            for key, m, _, _ in mids:
                d = s.bbox.distance_to(*m)
                if d <= r:
                    out.append(Candidate(s.id, _mid_objects(key), "BarEquality", d))
        elif s.cls in PARALLEL_MARKS:
            for l in scene.lines:
                seg = scene.segment(l.id)
                d = box_segment_distance(s.bbox, seg.p1, seg.p2)
                if d <= r:
                    out.append(Candidate(s.id, (l.id,), "ParallelEquality", d))
    return out


def _text_candidates(scene: Scene, mids, cfg: RuleConfig) -> List[Candidate]:
    out = []
    r = cfg.text_radius
    heads = [s for s in scene.symbols if s.cls in HEAD_CLASSES]
    for t in scene.texts:
        center = np.array(t.bbox.center)
        for p, d in _near_points(scene, t.bbox, r):
            out.append(Candidate(t.id, (p.id,), "Text2Point", d))
            for trip, off, ex in _wedge_fits(scene, p.id, center):
                out.append(Candidate(t.id, trip, "Text2Angle", d, off, ex, True))
                out.append(Candidate(t.id, trip, "Text2Degree", d, off, ex, True))
        for l in scene.lines:
            seg = scene.segment(l.id)
            d = box_segment_distance(t.bbox, seg.p1, seg.p2)
            if d <= r:
                out.append(Candidate(t.id, (l.id,), "Text2Line", d))
        for key, m, _, _ in mids:
            d = t.bbox.distance_to(*m)
            if d <= r:
                out.append(Candidate(t.id, _mid_objects(key), "Text2Len", d))
                if key[0] == "circle":
                    out.append(Candidate(t.id, _mid_objects(key), "Text2Degree", d))
        for c in scene.circles:
            d = math.hypot(center[0] - c.x, center[1] - c.y)
            if d < c.radius:
                out.append(Candidate(t.id, (c.id,), "Text2Area", d))
        for h in heads:
            gap = box_gap(h.bbox, t.bbox)
            if gap > cfg.union_gap:
                continue
            _, u = _head_frame(h)
            back = center - np.array(h.bbox.center)
            n = np.linalg.norm(back)
            if n > 0 and float(back @ -u) / n >= math.cos(math.radians(2 * cfg.arm_tol)):
                out.append(Candidate(t.id, (h.id,), "ArrowIndication", gap))
    return out


def _head_candidates(scene: Scene, mids, cfg: RuleConfig) -> List[Candidate]:
    """Targets at a head's tip; the subject is the head."""
    out = []
    r = cfg.text_radius
    for h in scene.symbols:
        if h.cls not in HEAD_CLASSES:
            continue
        tip, _ = _head_frame(h)
        if h.cls == "head":
            for p in scene.points:
                d = math.hypot(p.x - tip[0], p.y - tip[1])
                if d <= r:
                    for trip, off, ex in _wedge_fits(scene, p.id, tip):
                        out.append(Candidate(h.id, trip, "Text2Degree", d, off, ex, True))
        for key, m, _, _ in mids:
            d = float(np.linalg.norm(m - tip))
            if d <= r:
                out.append(Candidate(h.id, _mid_objects(key), "Text2Len", d))
                if key[0] == "circle" and h.cls == "head":
                    out.append(Candidate(h.id, _mid_objects(key), "Text2Degree", d))
    return out


def build_candidate_graph(
    scene: Scene, K: Optional[KnowledgeRules] = None, cfg: Optional[RuleConfig] = None
) -> CandidateGraph:
    """Sparse candidates for every relation the knowledge rules admit.

    Point memberships in ``scene`` (as set by :func:`parse_geo2geo`) shape the
    angle and segment candidates; with none set, only endpoints count.
    """
    cfg = cfg or RuleConfig()
    K = K or KnowledgeRules(cfg.on_line_tol, cfg.on_circle_tol)
    _, mids = segment_anchors(scene)
    edges = _geo_candidates(scene, cfg) + _symbol_candidates(scene, mids, cfg)
    edges += _text_candidates(scene, mids, cfg) + _head_candidates(scene, mids, cfg)
    edges = [e for e in edges if _kind_ok(e, scene)]
    nodes = tuple(p.id for g in (scene.points, scene.lines, scene.circles, scene.symbols, scene.texts) for p in g)
    return CandidateGraph(nodes, edges)


def _kind_ok(e: Candidate, scene: Scene) -> bool:
    entry = KnowledgeRules.TABLE[e.type]
    kind = scene.kind_of(e.subject)
    if kind == "symbol" and scene.get(e.subject).cls in HEAD_CLASSES:
        # head-tip targets are stand-ins for the linked text
        return e.type in ("Text2Degree", "Text2Len")
    if kind != entry.subject_kind:
        return False
    if kind == "symbol" and scene.get(e.subject).cls not in entry.subject_classes:
        return False
    return tuple(scene.kind_of(o) for o in e.objects) in entry.object_shapes


# ---------------------------------------------------------------------------
# rules


def parse_geo2geo(graph: CandidateGraph, cfg: Optional[RuleConfig] = None) -> List[Relation]:
    cfg = cfg or RuleConfig()
    tol = {"PointOnLine": cfg.on_line_tol, "PointOnCircle": cfg.on_circle_tol, "CenterOfCircle": cfg.on_circle_tol}
    out = []
    for e in graph.edges:
        if e.type in GEO2GEO and e.cost <= tol[e.type]:
            out.append(Relation(e.subject, e.objects, e.type))
    return out


def _best(cands: List[Candidate]) -> Optional[Candidate]:
    if not cands:
        return None
    return min(cands, key=lambda e: (e.cost, e.offset, e.objects))


def _best_angle(cands: List[Candidate], slack: float = 0.0) -> Optional[Candidate]:
    """Nearest vertex whose wedges hold the target (within ``slack`` radians),
    then the wedge whose bisector is closest."""
    if not cands:
        return None
    by_vertex: Dict[str, List[Candidate]] = {}
    for e in cands:
        by_vertex.setdefault(e.objects[1], []).append(e)
    order = sorted(by_vertex.values(), key=lambda es: (es[0].cost, es[0].objects[1]))
    for es in order:
        inside = [e for e in es if e.outside <= slack]
        if inside:
            return min(inside, key=lambda e: (e.offset, e.objects))
    return None


def attach_symbols(
    scene: Scene, graph: CandidateGraph, cfg: Optional[RuleConfig] = None
) -> Tuple[List[Relation], List[str]]:
    """Sym2Geo relations and the ids of symbols left unattached."""
    cfg = cfg or RuleConfig()
    picks: Dict[str, Candidate] = {}
    unattached = []
    for s in scene.symbols:
        if s.cls in HEAD_CLASSES:
            continue
        cands = [e for e in graph.of(s.id) if e.type != "Text2Degree" and e.type != "Text2Len"]
        if s.cls == "perpendicular":
            pick = _best_perpendicular(scene, s, cands)
        elif s.cls in ANGLE_MARKS:
            pick = _best_angle(cands) or _best_angle(cands, math.radians(cfg.arm_tol))
        else:
            pick = _best(cands)
        if pick is None:
            unattached.append(s.id)
        else:
            picks[s.id] = pick
    rels = []
    groups: Dict[str, List[str]] = {}
    for sid, e in picks.items():
        if e.type == "Perpendicular":
            rels.append(Relation(sid, e.objects, e.type))
        else:
            groups.setdefault(scene.get(sid).cls, []).append(sid)
    for members in groups.values():
        if len(members) < 2:
            unattached.extend(members)
            continue
        for sid in members:
            rels.append(Relation(sid, picks[sid].objects, picks[sid].type))
    return rels, sorted(unattached)


def _best_perpendicular(scene: Scene, s: Symbol, cands: List[Candidate]) -> Optional[Candidate]:
    if not cands:
        return None
    d0 = min(e.cost for e in cands)
    near = [e for e in cands if e.cost == d0]
    if len(near) == 1:
        return near[0]
    # several right angles at one foot: take the pair bounding the mark
    center = np.array(s.bbox.center)
    foot = min(scene.points, key=lambda p: math.hypot(p.x - center[0], p.y - center[1]))
    th = angle_of(center - scene.xy(foot.id))

    def spread(e):
        best = math.inf
        for sa in (1, -1):
            for sb in (1, -1):
                a = angle_of(sa * scene.segment(e.objects[0]).direction)
                b = angle_of(sb * scene.segment(e.objects[1]).direction)
                if abs(ccw_span(a, b) - math.pi / 2) < 0.2 and ccw_span(a, th) <= ccw_span(a, b):
                    best = min(best, abs(ccw_span(a, th) - math.pi / 4))
        return best

    return min(near, key=lambda e: (spread(e), e.objects))


# ---------------------------------------------------------------------------
# texts


def _arrow_links(scene: Scene, graph: CandidateGraph) -> Dict[str, str]:
    """text id -> head id, one text per head, closest gap first."""
    edges = sorted(
        (e for e in graph.edges if e.type == "ArrowIndication"), key=lambda e: (e.cost, e.subject, e.objects)
    )
    out: Dict[str, str] = {}
    used = set()
    for e in edges:
        if e.subject in out or e.objects[0] in used:
            continue
        out[e.subject] = e.objects[0]
        used.add(e.objects[0])
    return out


PRIORITY = ("degree", "len", "angle", "point", "line", "area")


def classify_text(
    scene: Scene, graph: CandidateGraph, cfg: Optional[RuleConfig] = None
) -> Dict[str, str]:
    """Fine text class per text id: content first, then nearby structure."""
    cfg = cfg or RuleConfig()
    arrows = _arrow_links(scene, graph)
    out = {}
    for t in scene.texts:
        out[t.id] = _classify_one(scene, t, graph.of(t.id), arrows.get(t.id), cfg)
    return out


def _classify_one(scene: Scene, t: Text, cands: List[Candidate], head: Optional[str], cfg: RuleConfig) -> str:
    c = t.content
    if head is not None:
        return "len" if scene.get(head).cls == "head_len" else "degree"
    if "°" in c:
        return "degree"
    if c.lower().startswith("area"):
        return "area"

    def nearest(types, inside=False):
        es = [e for e in cands if e.type in types and (not inside or e.outside == 0)]
        return min((e.cost for e in es), default=math.inf)

    d_point = nearest(("Text2Point",))
    d_line = nearest(("Text2Line",))
    d_angle = nearest(("Text2Angle",), inside=True)
    d_len = nearest(("Text2Len",))
    if len(c) == 1 and c.isalpha() and c.isupper() and d_point < math.inf:
        return "point"
    if c.isalpha() and c.islower():
        if d_line < d_angle and d_line < math.inf:
            return "line"
        if d_angle < math.inf:
            return "angle"
    if c.isdigit():
        if d_angle < d_len:
            return "angle"
        if d_len < math.inf:
            return "len"
    # fallback: nearest structure, ties by priority
    options = {"degree": d_angle, "len": d_len, "angle": d_angle, "point": d_point, "line": d_line}
    # containment alone is not a distance; the fallback only trusts circles
    # whose center is within reach, so smaller tolerances never add classes
    d_area = nearest(("Text2Area",))
    options["area"] = d_area if d_area <= cfg.text_radius else math.inf
    best = min(PRIORITY, key=lambda k: (options[k], PRIORITY.index(k)))
    return best if options[best] < math.inf else "unknown"


def attach_text(
    scene: Scene,
    classes: Dict[str, str],
    graph: CandidateGraph,
    cfg: Optional[RuleConfig] = None,
) -> Tuple[List[Relation], List[str]]:
    """Text2Geo and arrow relations, plus ids of texts left unattached."""
    cfg = cfg or RuleConfig()
    arrows = _arrow_links(scene, graph)
    rels, unattached = [], []
    for t in scene.texts:
        cls = classes.get(t.id, "unknown")
        head = arrows.get(t.id)
        if head is not None:
            rels.append(Relation(t.id, (head,), "ArrowIndication"))
            cands = graph.of(head)
        else:
            cands = graph.of(t.id)
        pick = _pick_text_target(cls, cands, head is not None)
        if pick is None:
            unattached.append(t.id)
            continue
        rels.append(Relation(t.id, pick.objects, pick.type))
    return rels, sorted(unattached)


def _pick_text_target(cls: str, cands: List[Candidate], via_head: bool) -> Optional[Candidate]:
    def of(*types):
        return [e for e in cands if e.type in types]

    if cls == "point":
        return _best(of("Text2Point"))
    if cls == "line":
        return _best(of("Text2Line"))
    if cls == "area":
        return _best(of("Text2Area"))
    if cls == "angle":
        return _best_angle(of("Text2Angle"))
    if cls == "len":
        return _best(of("Text2Len"))
    if cls == "degree":
        angle = _best_angle([e for e in of("Text2Degree") if e.wedge])
        arc = _best([e for e in of("Text2Degree") if not e.wedge])
        if via_head and angle is not None:
            return angle
        if angle is None:
            return arc
        if arc is None:
            return angle
        return angle if angle.cost < arc.cost else arc
    return None


# ---------------------------------------------------------------------------
# driver


def parse_relations(
    scene: Scene, K: Optional[KnowledgeRules] = None, cfg: Optional[RuleConfig] = None
) -> RelateResult:
    """All relations for a primitives-only scene."""
    cfg = cfg or RuleConfig()
    K = K or KnowledgeRules(cfg.on_line_tol, cfg.on_circle_tol)
    base = scene.primitives_only()
    geo = parse_geo2geo(build_candidate_graph(base, K, cfg), cfg)
    staged = base.with_relations(geo)
    graph = build_candidate_graph(staged, K, cfg)
    sym_rels, unattached_symbols = attach_symbols(staged, graph, cfg)
    classes = classify_text(staged, graph, cfg)
    text_rels, unattached_texts = attach_text(staged, classes, graph, cfg)
    texts = tuple(replace(t, cls=classes[t.id] if classes[t.id] != "unknown" else None) for t in staged.texts)
    out = replace(staged, texts=texts).with_relations(geo + sym_rels + text_rels)
    bad = [r for r in out.relations if not K.admits_kinds(r, out)]
    if bad:
        out = out.with_relations([r for r in out.relations if r not in bad])
    return RelateResult(out, out.relations, classes, unattached_symbols, unattached_texts, bad)
