"""Geometry formal language: generation from relations, parsing, canonical forms.

A proposition is a :class:`Term` tree. Leaves are plain strings (point names,
``radius_<k>`` tokens, labels, numeric literals). Serialization is
``Pred(arg1, arg2)`` with ", " separators.
"""

from __future__ import annotations

import math
import re
from collections import defaultdict
from dataclasses import dataclass
from itertools import combinations
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

from .geom import (
    GeometryError,
    Scene,
    canonical_angle,
    canonical_line_name,
    ccw_span,
    circle_angle,
    rays_at,
)

IDENT_RE = re.compile(r"[A-Za-z][A-Za-z0-9_]*")
NUMBER_RE = re.compile(r"-?\d+(?:\.\d+)?")
RADIUS_RE = re.compile(r"radius_\d+")

PREDICATES = (
    "Point",
    "Line",
    "Circle",
    "Angle",
    "Arc",
    "PointLiesOnLine",
    "PointLiesOnCircle",
    "Perpendicular",
    "Parallel",
    "Equals",
    "MeasureOf",
    "LengthOf",
)

ARITY = {
    "Point": (1,),
    "Line": (1, 2),
    "Circle": (2,),
    "Angle": (1, 3),
    "Arc": (2, 3),
    "PointLiesOnLine": (2,),
    "PointLiesOnCircle": (2,),
    "Perpendicular": (2,),
    "Parallel": (2,),
    "Equals": (2,),
    "MeasureOf": (1,),
    "LengthOf": (1,),
}

SHAPE = "Geo Shape"
GEO2GEO = "Geo2Geo"
TEXT2GEO = "Text2Geo"
SYM2GEO = "Sym2Geo"
GROUP_ORDER = (SHAPE, GEO2GEO, TEXT2GEO, SYM2GEO)


class FormalLanguageError(ValueError):
    pass


class ParseError(FormalLanguageError):
    def __init__(self, msg: str, line: int, col: int):
        super().__init__(f"line {line}, column {col}: {msg}")
        self.line = line
        self.col = col


class ArityError(FormalLanguageError):
    def __init__(self, predicate: str, msg: str):
        super().__init__(f"{predicate}: {msg}")
        self.predicate = predicate


Leaf = str


@dataclass(frozen=True)
class Term:
    head: str
    args: Tuple[Union["Term", Leaf], ...]

    def __str__(self) -> str:
        return f"{self.head}({', '.join(str(a) for a in self.args)})"


Node = Union[Term, Leaf]


def T(head: str, *args: Node) -> Term:
    return Term(head, tuple(args))


def serialize(props: Iterable[Term]) -> str:
    return "".join(f"{p}\n" for p in props)


# ---------------------------------------------------------------------------
# parsing


class _Parser:
    def __init__(self, text: str, lineno: int):
        self.s = text
        self.i = 0
        self.lineno = lineno

    def error(self, msg: str):
        raise ParseError(msg, self.lineno, self.i + 1)

    def skip_ws(self):
        while self.i < len(self.s) and self.s[self.i] in " \t":
            self.i += 1

    def parse(self) -> Term:
        self.skip_ws()
        node = self.node()
        self.skip_ws()
        if self.i != len(self.s):
            self.error(f"unexpected {self.s[self.i]!r}")
        if not isinstance(node, Term):
            self.error("expected a predicate")
        return node

    def node(self) -> Node:
        self.skip_ws()
        m = NUMBER_RE.match(self.s, self.i)
        if m:
            self.i = m.end()
            return m.group()
        m = IDENT_RE.match(self.s, self.i)
        if not m:
            self.error("expected identifier or number")
        self.i = m.end()
        name = m.group()
        self.skip_ws()
        if self.i < len(self.s) and self.s[self.i] == "(":
            if name not in ARITY:
                self.error(f"unknown predicate {name!r}")
            self.i += 1
            args = [self.node()]
            self.skip_ws()
            while self.i < len(self.s) and self.s[self.i] == ",":
                self.i += 1
                args.append(self.node())
                self.skip_ws()
            if self.i >= len(self.s) or self.s[self.i] != ")":
                self.error("expected ',' or ')'")
            self.i += 1
            term = Term(name, tuple(args))
            check_term(term)
            return term
        return name


def _is_leaf(n: Node) -> bool:
    return isinstance(n, str)


def _head(n: Node) -> Optional[str]:
    return n.head if isinstance(n, Term) else None


def check_term(t: Term) -> None:
    """Arity and argument-shape checks for one predicate node."""
    n = len(t.args)
    if n not in ARITY[t.head]:
        raise ArityError(t.head, f"arity {n} not in {set(ARITY[t.head])}")
    a = t.args
    if t.head in ("Point", "Line", "Angle", "Arc"):
        if not all(_is_leaf(x) for x in a):
            raise ArityError(t.head, "arguments must be atoms")
    elif t.head == "Circle":
        if not (_is_leaf(a[0]) and _is_leaf(a[1]) and RADIUS_RE.fullmatch(a[1])):
            raise ArityError(t.head, "expected (point, radius_<k>)")
    elif t.head == "PointLiesOnLine":
        if not (_is_leaf(a[0]) and _head(a[1]) == "Line" and len(a[1].args) == 2):
            raise ArityError(t.head, "expected (point, Line(a, b))")
    elif t.head == "PointLiesOnCircle":
        if not (_is_leaf(a[0]) and _head(a[1]) == "Circle"):
            raise ArityError(t.head, "expected (point, Circle(o, radius_k))")
    elif t.head in ("Perpendicular", "Parallel"):
        if not all(_head(x) == "Line" and len(x.args) == 2 for x in a):
            raise ArityError(t.head, "expected two Line(a, b) arguments")
    elif t.head == "Equals":
        for x in a:
            if not (_head(x) in ("MeasureOf", "LengthOf") or (_is_leaf(x) and NUMBER_RE.fullmatch(x))):
                raise ArityError(t.head, "arguments must be MeasureOf, LengthOf or a number")
    elif t.head == "MeasureOf":
        if _head(a[0]) not in ("Angle", "Arc"):
            raise ArityError(t.head, "argument must be Angle or Arc")
    elif t.head == "LengthOf":
        if _head(a[0]) not in ("Line", "Arc"):
            raise ArityError(t.head, "argument must be Line or Arc")


def parse_proposition(text: str, lineno: int = 1) -> Term:
    return _Parser(text, lineno).parse()


def parse_propositions(text: str) -> List[Term]:
    """Parse one proposition per non-blank line."""
    out = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.strip():
            out.append(parse_proposition(line.rstrip("\r"), lineno))
    return out


def parse_lenient(lines: Iterable[str]) -> Tuple[List[Term], List[str]]:
    """Parse what parses; return (terms, offending lines)."""
    good, bad = [], []
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            good.append(parse_proposition(line.strip(), lineno))
        except FormalLanguageError:
            bad.append(line)
    return good, bad


# ---------------------------------------------------------------------------
# grouping


def group_of(t: Term) -> str:
    h = t.head
    if h == "Point" or h == "Circle" or h == "Arc":
        return SHAPE
    if h == "Line":
        return SHAPE if len(t.args) == 2 else TEXT2GEO
    if h == "Angle":
        return SHAPE if len(t.args) == 3 else TEXT2GEO
    if h in ("PointLiesOnLine", "PointLiesOnCircle"):
        return GEO2GEO
    if h in ("Perpendicular", "Parallel"):
        return SYM2GEO
    if h == "Equals":
        a, b = t.args
        if _is_leaf(a) or _is_leaf(b):
            return TEXT2GEO
        inner = [x.args[0] for x in (a, b)]
        if any(_head(x) == "Angle" and len(x.args) == 1 for x in inner):
            return TEXT2GEO
        return SYM2GEO
    return TEXT2GEO


def coarse_group(t: Term) -> str:
    """Evaluation split: geometry-only propositions vs everything else."""
    return "Geo2Geo" if group_of(t) in (SHAPE, GEO2GEO) else "Non-geo2Geo"


def order_propositions(props: Iterable[Term]) -> Tuple[Term, ...]:
    uniq = {str(p): p for p in props}
    return tuple(sorted(uniq.values(), key=lambda p: (GROUP_ORDER.index(group_of(p)), str(p))))


# ---------------------------------------------------------------------------
# canonical forms


def _common_line(scene: Scene, ids: Sequence[str]) -> Optional[str]:
    common = None
    for pid in ids:
        lines = set(scene.lines_through(pid))
        common = lines if common is None else common & lines
    return min(common) if common else None


def _circle_with(scene: Scene, ids: Sequence[str]) -> Optional[str]:
    for c in scene.circles:
        pts = set(scene.circle_point_ids(c.id))
        if all(i in pts for i in ids):
            return c.id
    return None


def _ray_candidates(scene: Scene, vertex: str, arm: str) -> Tuple[str, ...]:
    for _, cands in rays_at(vertex, scene):
        if arm in cands:
            return cands
    return (arm,)


def _canon_arc(scene: Scene, names: Sequence[str]) -> Term:
    name = scene.point_name
    ids = [scene.resolve_name(n) for n in names]
    a, b = ids[0], ids[-1]
    cid = _circle_with(scene, ids)
    if cid is None:
        lo, hi = sorted((a, b), key=name)
        if len(ids) == 3:
            return T("Arc", name(lo), name(ids[1]), name(hi))
        return T("Arc", name(lo), name(hi))
    c = scene.get(cid)
    ta, tb = circle_angle(c, scene, a), circle_angle(c, scene, b)
    if len(ids) == 2:
        span = ccw_span(ta, tb)
        if span > math.pi:
            a, b, ta, tb = b, a, tb, ta
        lo, hi = sorted((a, b), key=name)
        return T("Arc", name(lo), name(hi))
    tv = circle_angle(c, scene, ids[1])
    # orient so the arc runs a -> b through the via point
    if ccw_span(ta, tv) > ccw_span(ta, tb):
        a, b, ta, tb = b, a, tb, ta
    span = ccw_span(ta, tb)
    lo, hi = sorted((a, b), key=name)
    if span <= math.pi:
        return T("Arc", name(lo), name(hi))
    inside = [
        p
        for p in scene.circle_point_ids(cid)
        if p not in (a, b) and 1e-9 < ccw_span(ta, circle_angle(c, scene, p)) < span - 1e-9
    ]
    via = min(inside, key=name) if inside else ids[1]
    return T("Arc", name(lo), name(via), name(hi))


def canonicalize(t: Node, scene: Scene, _in_length: bool = False) -> Node:
    """Rewrite a proposition to the representative of its equivalence class."""
    if _is_leaf(t):
        return t
    name = scene.point_name
    h, a = t.head, t.args
    if h == "Line" and len(a) == 2:
        ids = [scene.resolve_name(x) for x in a]
        lid = None if _in_length else _common_line(scene, ids)
        if lid is None:
            return T("Line", *sorted((name(i) for i in ids)))
        return T("Line", *(name(i) for i in canonical_line_name(lid, scene, key=name)))
    if h == "Angle" and len(a) == 3:
        p, v, q = (scene.resolve_name(x) for x in a)
        c1 = _ray_candidates(scene, v, p)
        c2 = _ray_candidates(scene, v, q)
        try:
            trip = canonical_angle(v, c1, c2, scene, key=name)
        except GeometryError:
            trip = min((p, v, q), (q, v, p), key=lambda tr: tuple(name(x) for x in tr))
        return T("Angle", *(name(x) for x in trip))
    if h == "Arc":
        return _canon_arc(scene, a)
    if h == "Circle":
        cid = scene.resolve_name(a[0])
        for k, c in enumerate(scene.circles):
            if c.center == cid:
                return T("Circle", name(cid), f"radius_{k}")
        return T("Circle", name(cid), a[1])
    if h == "LengthOf":
        return T(h, canonicalize(a[0], scene, True))
    args = tuple(canonicalize(x, scene, _in_length) for x in a)
    if h in ("Equals", "Perpendicular", "Parallel"):
        # symmetric; constants go last so Equals keeps its template shape
        args = tuple(sorted(args, key=lambda x: (_is_leaf(x), str(x))))
    return Term(h, args)


def equivalent(p1: Term, p2: Term, scene: Scene) -> bool:
    return canonicalize(p1, scene) == canonicalize(p2, scene)


# ---------------------------------------------------------------------------
# generation


def numeric_value(content: str) -> Optional[str]:
    v = content.replace("°", "").strip()
    return v if NUMBER_RE.fullmatch(v) else None


def _arc_term(scene: Scene, cid: str, a: str, b: str) -> Term:
    """Arc from a to b in increasing-angle direction."""
    name = scene.point_name
    c = scene.get(cid)
    ta, tb = circle_angle(c, scene, a), circle_angle(c, scene, b)
    span = ccw_span(ta, tb)
    if span <= math.pi:
        return T("Arc", name(a), name(b))
    inside = [
        p
        for p in scene.circle_point_ids(cid)
        if p not in (a, b) and 1e-9 < ccw_span(ta, circle_angle(c, scene, p)) < span - 1e-9
    ]
    if not inside:
        return T("Arc", name(a), name(b))
    return T("Arc", name(a), name(min(inside, key=name)), name(b))


def _geo_term(scene: Scene, objects: Sequence[str]) -> Term:
    """Angle / Line / Arc term for a composite relation object list."""
    kinds = [scene.kind_of(o) for o in objects]
    name = scene.point_name
    if kinds == ["point", "point", "point"]:
        return T("Angle", *(name(o) for o in objects))
    if kinds[0] == "line":
        return T("Line", name(objects[1]), name(objects[2]))
    if kinds[0] == "circle":
        return _arc_term(scene, objects[0], objects[1], objects[2])
    raise GeometryError(f"cannot build a term from {objects}")


def _circle_term(scene: Scene, cid: str) -> Optional[Term]:
    for k, c in enumerate(scene.circles):
        if c.id == cid:
            if c.center is None:
                return None
            return T("Circle", scene.point_name(c.center), f"radius_{k}")
    raise GeometryError(f"unknown circle {cid}")


def generate_terms(scene: Scene) -> Tuple[Term, ...]:
    for rel in scene.relations:
        for pid in (rel.subject,) + rel.objects:
            if not scene.has(pid):
                raise GeometryError(f"relation references missing primitive {pid}")
    name = scene.point_name
    raw: List[Term] = []
    for p in scene.points:
        raw.append(T("Point", name(p.id)))
    for line in scene.lines:
        ids = scene.line_point_ids(line.id)
        if len(ids) >= 2:
            raw.append(T("Line", *(name(i) for i in canonical_line_name(line.id, scene, key=name))))
    for c in scene.circles:
        ct = _circle_term(scene, c.id)
        if ct is not None:
            raw.append(ct)
        if c.arc and c.arc_endpoints:
            raw.append(_arc_term(scene, c.id, *c.arc_endpoints))

    symbols = {s.id: s for s in scene.symbols}
    texts = {t.id: t for t in scene.texts}
    groups: Dict[Tuple[str, str], List[Term]] = defaultdict(list)
    for rel in scene.relations:
        ty, obj = rel.type, rel.objects
        if ty == "PointOnLine":
            raw.append(T("PointLiesOnLine", name(rel.subject), T("Line", *(name(i) for i in canonical_line_name(obj[0], scene, key=name)))))
        elif ty == "PointOnCircle":
            ct = _circle_term(scene, obj[0])
            if ct is not None:
                raw.append(T("PointLiesOnCircle", name(rel.subject), ct))
        elif ty == "CenterOfCircle":
            ct = _circle_term(scene, obj[0])
            if ct is not None:
                raw.append(ct)
        elif ty == "Text2Line":
            label = texts[rel.subject].content
            if IDENT_RE.fullmatch(label) or NUMBER_RE.fullmatch(label):
                raw.append(T("Line", label))
        elif ty == "Text2Angle":
            label = texts[rel.subject].content
            if IDENT_RE.fullmatch(label) or NUMBER_RE.fullmatch(label):
                raw.append(T("Equals", T("MeasureOf", _geo_term(scene, obj)), T("MeasureOf", T("Angle", label))))
        elif ty == "Text2Degree":
            v = numeric_value(texts[rel.subject].content)
            if v is not None:
                raw.append(T("Equals", T("MeasureOf", _geo_term(scene, obj)), v))
        elif ty == "Text2Len":
            v = numeric_value(texts[rel.subject].content)
            if v is not None:
                raw.append(T("Equals", T("LengthOf", _geo_term(scene, obj)), v))
        elif ty == "Perpendicular":
            l1, l2 = (T("Line", *(name(i) for i in canonical_line_name(o, scene, key=name))) for o in obj)
            raw.append(T("Perpendicular", l1, l2))
        elif ty == "AngleEquality":
            groups[("MeasureOf", symbols[rel.subject].cls)].append(T("MeasureOf", _geo_term(scene, obj)))
        elif ty == "BarEquality":
            groups[("LengthOf", symbols[rel.subject].cls)].append(T("LengthOf", _geo_term(scene, obj)))
        elif ty == "ParallelEquality":
            lt = T("Line", *(name(i) for i in canonical_line_name(obj[0], scene, key=name)))
            groups[("Parallel", symbols[rel.subject].cls)].append(lt)
        # Text2Point names the point; Text2Area and ArrowIndication have no template
    for (kind, _), members in sorted(groups.items()):
        uniq = sorted({str(m): m for m in members}.values(), key=str)
        for x, y in combinations(uniq, 2):
            raw.append(T("Parallel", x, y) if kind == "Parallel" else T("Equals", x, y))

    canon = []
    for t in raw:
        try:
            canon.append(canonicalize(t, scene))
        except GeometryError:
            canon.append(t)
    return order_propositions(canon)


def generate(scene: Scene) -> Tuple[str, ...]:
    return tuple(str(t) for t in generate_terms(scene))
