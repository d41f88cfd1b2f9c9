"""Scoring of parsed diagrams against ground truth.

Primitives are matched one-to-one, by position or by mask overlap. Relations
are scored as binary terms. Propositions are compared after canonicalization.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import formalang as fl
from .geom import (
    REL_GROUPS,
    SYMBOL_CLASSES,
    TEXT_CLASSES,
    GeometryError,
    Scene,
    box_iou,
    dist_point_infinite_line,
    rel_group,
)

GEO_CLASSES = ("point", "line", "circle")
NONGEO_SYMBOLS = tuple(c for c in SYMBOL_CLASSES if c != "text")
# text rows are prefixed: "point", "line" and "angle" name other classes too
TEXT_ROWS = tuple(f"text_{c}" for c in TEXT_CLASSES)
RELATION_GROUPS = ("All",) + tuple(REL_GROUPS)
FL_GROUPS = ("All", "Geo2Geo", "Non-geo2Geo")
INDICATORS = ("likely_same", "almost_same", "perfect_recall", "totally_same")

MANNER1_DISTANCE = 15.0
MANNER2_GEO_IOU = 0.75
MANNER2_NONGEO_IOU = 0.5


# ---------------------------------------------------------------------------
# counting


@dataclass
class Counts:
    tp: int = 0
    fp: int = 0
    fn: int = 0

    def __iadd__(self, o: "Counts") -> "Counts":
        self.tp += o.tp
        self.fp += o.fp
        self.fn += o.fn
        return self

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if self.tp + self.fp else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if self.tp + self.fn else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if p + r else 0.0

    @property
    def support(self) -> int:
        return self.tp + self.fn

    def as_dict(self) -> dict:
        return {
            "precision": self.precision,
            "recall": self.recall,
            "f1": self.f1,
            "tp": self.tp,
            "fp": self.fp,
            "fn": self.fn,
        }


# ---------------------------------------------------------------------------
# assignment


@dataclass
class MatchResult:
    pairs: List[Tuple[str, str, float]]
    unmatched_preds: List[str]
    unmatched_gts: List[str]

    @property
    def mapping(self) -> Dict[str, str]:
        return {p: g for p, g, _ in self.pairs}

    @property
    def counts(self) -> Counts:
        return Counts(len(self.pairs), len(self.unmatched_preds), len(self.unmatched_gts))


def match_instances(
    preds: Mapping[str, object],
    gts: Mapping[str, object],
    cost_fn: Callable[[object, object], float],
    threshold: float,
) -> MatchResult:
    """One-to-one assignment using only pairs with cost <= threshold.

    The assignment has the most matches possible and, among those, the least
    total cost. Inputs are visited in id order so results are deterministic.
    """
    pids = sorted(preds)
    gids = sorted(gts)
    if not pids or not gids:
        return MatchResult([], pids, gids)
    C = np.array([[float(cost_fn(preds[p], gts[g])) for g in gids] for p in pids])
    feasible = C <= threshold
    if not feasible.any():
        return MatchResult([], pids, gids)
    # an infeasible pair costs more than any full set of feasible ones, so
    # cardinality is maximized first
    big = (min(len(pids), len(gids)) + 1) * (max(float(C[feasible].max()), 0.0) + 1.0)
    M = np.where(feasible, C, big)
    rows, cols = linear_sum_assignment(M)
    pairs = [(pids[r], gids[c], float(C[r, c])) for r, c in zip(rows, cols) if feasible[r, c]]
    pairs.sort()
    mp = {p for p, _, _ in pairs}
    mg = {g for _, g, _ in pairs}
    return MatchResult(pairs, [p for p in pids if p not in mp], [g for g in gids if g not in mg])


# ---------------------------------------------------------------------------
# manner 1: parsing positions


def point_cost(a, b) -> float:
    return math.hypot(a[0] - b[0], a[1] - b[1])


def line_cost(a, b) -> float:
    """Max endpoint distance under the better endpoint pairing."""
    (a1, a2), (b1, b2) = a, b
    return min(max(point_cost(a1, b1), point_cost(a2, b2)), max(point_cost(a1, b2), point_cost(a2, b1)))


def circle_cost(a, b) -> float:
    return point_cost(a[:2], b[:2]) + abs(a[2] - b[2])


def maximal_lines(scene: Scene, tol: float = 1.5, max_gap: float = 1.0) -> Dict[str, Tuple[np.ndarray, np.ndarray]]:
    """Line positions with collinear touching pieces merged into one instance."""
    segs = {l.id: scene.segment(l.id) for l in scene.lines}
    ids = sorted(segs)
    parent = {i: i for i in ids}

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, a in enumerate(ids):
        for b in ids[i + 1 :]:
            sa, sb = segs[a], segs[b]
            if abs(float(sa.direction @ sb.direction)) < math.cos(math.radians(1.0)):
                continue
            if max(dist_point_infinite_line(sb.p1, sa), dist_point_infinite_line(sb.p2, sa)) > tol:
                continue
            d = sa.direction
            ta = sorted((0.0, sa.length))
            tb = sorted((float((sb.p1 - sa.p1) @ d), float((sb.p2 - sa.p1) @ d)))
            if tb[0] <= ta[1] + max_gap and ta[0] <= tb[1] + max_gap:
                parent[find(a)] = find(b)
    groups: Dict[str, List[str]] = {}
    for i in ids:
        groups.setdefault(find(i), []).append(i)
    out = {}
    for members in groups.values():
        pts = np.array([p for m in members for p in (segs[m].p1, segs[m].p2)])
        d = segs[members[0]].direction
        t = (pts - pts[0]) @ d
        out[min(members)] = (pts[int(np.argmin(t))], pts[int(np.argmax(t))])
    return out


def _positions(scene: Scene, merge_lines: bool = True):
    pts = {p.id: (p.x, p.y) for p in scene.points}
    if merge_lines:
        lines = maximal_lines(scene)
    else:
        lines = {l.id: (scene.segment(l.id).p1, scene.segment(l.id).p2) for l in scene.lines}
    circles = {c.id: (c.x, c.y, c.radius) for c in scene.circles}
    return {"point": pts, "line": lines, "circle": circles}


COSTS = {"point": point_cost, "line": line_cost, "circle": circle_cost}


def _check_frame(pred: Scene, gt: Scene) -> None:
    if (pred.width, pred.height) != (gt.width, gt.height):
        raise ValueError(
            f"image frames differ: pred {pred.width}x{pred.height}, gt {gt.width}x{gt.height}; "
            "pixel distances would mix units"
        )


def eval_manner1(pred: Scene, gt: Scene, threshold: float = MANNER1_DISTANCE) -> Dict[str, Counts]:
    _check_frame(pred, gt)
    P, G = _positions(pred), _positions(gt)
    return {k: match_instances(P[k], G[k], COSTS[k], threshold).counts for k in GEO_CLASSES}


# ---------------------------------------------------------------------------
# manner 2: masks and boxes


def mask_iou(a: np.ndarray, b: np.ndarray) -> float:
    if a.shape != b.shape:
        raise ValueError(f"mask shapes differ: {a.shape} vs {b.shape}")
    union = np.logical_or(a, b).sum()
    return float(np.logical_and(a, b).sum() / union) if union else 0.0


def _nongeo_items(scene: Scene) -> Dict[str, Dict[str, object]]:
    out: Dict[str, Dict[str, object]] = {c: {} for c in NONGEO_SYMBOLS + TEXT_ROWS}
    for s in scene.symbols:
        if s.cls in out:
            out[s.cls][s.id] = s.bbox
    for t in scene.texts:
        if t.cls in TEXT_CLASSES:
            out[f"text_{t.cls}"][t.id] = t.bbox
    return out


def eval_manner2(
    pred: Scene,
    pred_masks: Mapping[str, np.ndarray],
    gt: Scene,
    gt_masks: Mapping[str, np.ndarray],
    geo_iou: float = MANNER2_GEO_IOU,
    nongeo_iou: float = MANNER2_NONGEO_IOU,
) -> Dict[str, Counts]:
    """Per-class counts; cost is 1 - IOU with threshold 1 - required IOU."""
    _check_frame(pred, gt)
    out: Dict[str, Counts] = {}
    for k, prims in (("point", "points"), ("line", "lines"), ("circle", "circles")):
        P = {p.id: pred_masks[p.id] for p in getattr(pred, prims) if p.id in pred_masks}
        G = {p.id: gt_masks[p.id] for p in getattr(gt, prims) if p.id in gt_masks}
        out[k] = match_instances(P, G, lambda a, b: 1.0 - mask_iou(a, b), 1.0 - geo_iou).counts
    P, G = _nongeo_items(pred), _nongeo_items(gt)
    for k in NONGEO_SYMBOLS + TEXT_ROWS:
        out[k] = match_instances(P[k], G[k], lambda a, b: 1.0 - box_iou(a, b), 1.0 - nongeo_iou).counts
    return out


# ---------------------------------------------------------------------------
# primitive correspondence


def primitive_mapping(
    pred: Scene, gt: Scene, threshold: float = MANNER1_DISTANCE, box_iou_min: float = MANNER2_NONGEO_IOU
) -> Dict[str, str]:
    """pred id -> gt id for every primitive kind.

    Geometry is matched by position (lines unmerged, so ids survive);
    symbols by box overlap within a sub-class; texts by box overlap.
    """
    _check_frame(pred, gt)
    P, G = _positions(pred, merge_lines=False), _positions(gt, merge_lines=False)
    mapping: Dict[str, str] = {}
    for k in GEO_CLASSES:
        mapping.update(match_instances(P[k], G[k], COSTS[k], threshold).mapping)
    for cls in NONGEO_SYMBOLS:
        ps = {s.id: s.bbox for s in pred.symbols if s.cls == cls}
        gs = {s.id: s.bbox for s in gt.symbols if s.cls == cls}
        mapping.update(match_instances(ps, gs, lambda a, b: 1.0 - box_iou(a, b), 1.0 - box_iou_min).mapping)
    pt = {t.id: t.bbox for t in pred.texts}
    gt_t = {t.id: t.bbox for t in gt.texts}
    mapping.update(match_instances(pt, gt_t, lambda a, b: 1.0 - box_iou(a, b), 1.0 - box_iou_min).mapping)
    return mapping


# ---------------------------------------------------------------------------
# relations


def binary_terms(scene: Scene) -> set:
    out = set()
    for r in scene.relations:
        for pid in (r.subject,) + r.objects:
            if not scene.has(pid):
                raise GeometryError(f"relation {r} references unknown primitive {pid!r}")
        out.update(r.binary_terms())
    return out


def eval_relations(pred: Scene, gt: Scene, mapping: Mapping[str, str]) -> Tuple[Dict[str, Counts], bool]:
    """Per-group counts of binary terms and whether the diagram is fully right."""
    pt, gt_terms = binary_terms(pred), binary_terms(gt)
    mapped = set()
    correct_pred = set()
    for s, o, ty in pt:
        m = (mapping.get(s), mapping.get(o), ty)
        if m in gt_terms:
            correct_pred.add((s, o, ty))
            mapped.add(m)
    out = {g: Counts() for g in RELATION_GROUPS}
    for term in pt:
        key = "tp" if term in correct_pred else "fp"
        for g in ("All", rel_group(term[2])):
            setattr(out[g], key, getattr(out[g], key) + 1)
    for term in gt_terms - mapped:
        for g in ("All", rel_group(term[2])):
            out[g].fn += 1
    complete = out["All"].fp == 0 and out["All"].fn == 0
    return out, complete


# ---------------------------------------------------------------------------
# formal language

_POINT_ARGS = {"Point": "all", "Arc": "all", "Circle": (0,), "PointLiesOnLine": (0,), "PointLiesOnCircle": (0,)}


def _rename(t: fl.Node, pmap: Callable[[str], str], rmap: Callable[[str], str]) -> fl.Node:
    if isinstance(t, str):
        return rmap(t) if fl.RADIUS_RE.fullmatch(t) else t
    h, a = t.head, t.args
    if h in ("Line", "Angle") and len(a) in (2, 3):
        spots = range(len(a))
    else:
        where = _POINT_ARGS.get(h, ())
        spots = range(len(a)) if where == "all" else where
    args = tuple(pmap(x) if i in spots and isinstance(x, str) else _rename(x, pmap, rmap) for i, x in enumerate(a))
    return fl.Term(h, args)


def translate_props(
    props: Iterable[fl.Term], pred: Scene, gt: Scene, mapping: Mapping[str, str]
) -> List[fl.Term]:
    """Rewrite predicted point names and radius tokens into gt vocabulary."""
    gt_circles = {c.id: k for k, c in enumerate(gt.circles)}
    pred_circle_ids = [c.id for c in pred.circles]

    def pmap(name: str) -> str:
        try:
            pid = pred.resolve_name(name)
        except GeometryError:
            return f"unknown_{name}"
        g = mapping.get(pid)
        return gt.point_name(g) if g is not None else f"unmatched_{pid}"

    def rmap(tok: str) -> str:
        k = int(tok.split("_")[1])
        if k < len(pred_circle_ids):
            g = mapping.get(pred_circle_ids[k])
            if g is not None:
                return f"radius_{gt_circles[g]}"
        return f"radius_{k + 100000}"

    return [_rename(p, pmap, rmap) for p in props]


def _canon_set(terms: Iterable[fl.Term], scene: Scene) -> set:
    out = set()
    for t in terms:
        try:
            out.add(str(fl.canonicalize(t, scene)))
        except GeometryError:
            out.add(str(t))
    return out


@dataclass
class PropScore:
    precision: float
    recall: float
    f1: float
    errors: int = 0


def _set_score(pred: set, gt: set, pred_errors: int = 0, gt_errors: int = 0) -> PropScore:
    """Set agreement; unparseable lines count as wrong on their side."""
    n_pred, n_gt = len(pred) + pred_errors, len(gt) + gt_errors
    if not n_pred and not n_gt:
        return PropScore(1.0, 1.0, 1.0)
    tp = len(pred & gt)
    p = tp / n_pred if n_pred else 0.0
    r = tp / n_gt if n_gt else 1.0
    f = 2 * p * r / (p + r) if p + r else 0.0
    return PropScore(p, r, f, pred_errors + gt_errors)


def eval_formal_language(
    pred_lines: Sequence[str],
    gt_lines: Sequence[str],
    pred: Scene,
    gt: Scene,
    mapping: Mapping[str, str],
) -> Dict[str, PropScore]:
    """Per-group set agreement of canonical propositions for one diagram.

    Lines that fail to parse are dropped and count against that side (in the
    All group, since their group is unknown).
    """
    p_terms, p_bad = fl.parse_lenient(pred_lines)
    g_terms, g_bad = fl.parse_lenient(gt_lines)
    p_terms = translate_props(p_terms, pred, gt, mapping)
    out = {}
    for group in FL_GROUPS:
        ps = [t for t in p_terms if group == "All" or fl.coarse_group(t) == group]
        gs = [t for t in g_terms if group == "All" or fl.coarse_group(t) == group]
        errs = (len(p_bad), len(g_bad)) if group == "All" else (0, 0)
        out[group] = _set_score(_canon_set(ps, gt), _canon_set(gs, gt), *errs)
    return out


def indicators(score: PropScore) -> Dict[str, bool]:
    return {
        "likely_same": score.f1 >= 0.5,
        "almost_same": score.f1 >= 0.75,
        "perfect_recall": score.recall == 1.0,
        "totally_same": score.f1 == 1.0,
    }


# ---------------------------------------------------------------------------
# corpus report


SECTIONS = ("manner1", "manner2", "relations", "language")


@dataclass
class EvalReport:
    manner1: Dict[str, Counts] = field(default_factory=lambda: {k: Counts() for k in GEO_CLASSES})
    manner2: Dict[str, Counts] = field(default_factory=dict)
    relations: Dict[str, Counts] = field(default_factory=lambda: {g: Counts() for g in RELATION_GROUPS})
    complete: int = 0
    diagrams: int = 0
    formal: Dict[str, Dict[str, int]] = field(
        default_factory=lambda: {g: {i: 0 for i in INDICATORS} for g in FL_GROUPS}
    )

    @property
    def complete_accuracy(self) -> float:
        return self.complete / self.diagrams if self.diagrams else 0.0

    def formal_rates(self) -> Dict[str, Dict[str, float]]:
        n = self.diagrams
        return {g: {i: (v / n if n else 0.0) for i, v in d.items()} for g, d in self.formal.items()}

    def add(
        self,
        pred: Scene,
        gt: Scene,
        pred_masks: Optional[Mapping[str, np.ndarray]] = None,
        gt_masks: Optional[Mapping[str, np.ndarray]] = None,
        pred_props: Optional[Sequence[str]] = None,
        gt_props: Optional[Sequence[str]] = None,
    ) -> None:
        """Score one diagram and fold it into the totals."""
        self.diagrams += 1
        for k, c in eval_manner1(pred, gt).items():
            self.manner1[k] += c
        if pred_masks is not None and gt_masks is not None:
            for k, c in eval_manner2(pred, pred_masks, gt, gt_masks).items():
                self.manner2.setdefault(k, Counts())
                self.manner2[k] += c
        mapping = primitive_mapping(pred, gt)
        rel, complete = eval_relations(pred, gt, mapping)
        for g, c in rel.items():
            self.relations[g] += c
        self.complete += int(complete)
        pp = list(pred.propositions) if pred_props is None else list(pred_props)
        gp = list(gt.propositions) if gt_props is None else list(gt_props)
        for g, sc in eval_formal_language(pp, gp, pred, gt, mapping).items():
            for name, ok in indicators(sc).items():
                self.formal[g][name] += int(ok)

    def to_dict(self, sections: Iterable[str] = SECTIONS) -> dict:
        sections = _check_sections(sections)
        out: dict = {"diagrams": self.diagrams}
        if "manner1" in sections:
            out["manner1"] = {k: c.as_dict() for k, c in self.manner1.items()}
        if "manner2" in sections:
            out["manner2"] = {k: c.as_dict() for k, c in self.manner2.items()}
        if "relations" in sections:
            out["relations"] = {k: c.as_dict() for k, c in self.relations.items()}
            out["complete_accuracy"] = self.complete_accuracy
        if "language" in sections:
            out["formal_language"] = self.formal_rates()
        return out

    def to_json(self, sections: Iterable[str] = SECTIONS) -> str:
        return json.dumps(self.to_dict(sections), indent=1) + "\n"

    def to_text(self, sections: Iterable[str] = SECTIONS) -> str:
        """Plain table: one row per class or group."""
        sections = _check_sections(sections)
        rows = ["section    class                P       R       F1"]

        def add(section, name, c: Counts):
            rows.append(f"{section:<10} {name:<18} {c.precision:6.2%} {c.recall:6.2%} {c.f1:6.2%}")

        if "manner1" in sections:
            for k, c in self.manner1.items():
                add("manner1", k, c)
        if "manner2" in sections:
            for k, c in self.manner2.items():
                add("manner2", k, c)
        if "relations" in sections:
            for k, c in self.relations.items():
                add("relation", k, c)
            rows.append(f"{'relation':<10} {'complete acc':<18} {self.complete_accuracy:6.2%}")
        if "language" in sections:
            for g, d in self.formal_rates().items():
                rows.append(f"{'formal':<10} {g:<18} " + " ".join(f"{i}={v:.2%}" for i, v in d.items()))
        return "\n".join(rows) + "\n"


def _check_sections(sections: Iterable[str]) -> frozenset:
    sections = frozenset(sections)
    bad = sections - set(SECTIONS)
    if bad:
        raise ValueError(f"unknown report sections: {sorted(bad)}")
    return sections


def evaluate_corpus(items: Iterable[dict]) -> EvalReport:
    """``items`` yields dicts with keys pred, gt and optionally pred_masks,
    gt_masks, pred_props, gt_props."""
    rep = EvalReport()
    for it in items:
        rep.add(
            it["pred"],
            it["gt"],
            it.get("pred_masks"),
            it.get("gt_masks"),
            it.get("pred_props"),
            it.get("gt_props"),
        )
    return rep
