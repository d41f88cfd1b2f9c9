"""Classical primitive extraction from a rendered diagram.

binarize -> split components into geometric / glyph ink -> skeletonize ->
RANSAC circles -> traced and merged segments -> analytic points ->
template-matched symbols and texts.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from skimage.morphology import skeletonize as _sk_skeletonize

from . import glyphs
from .geom import SYMBOL_CLASSES, Box, Circle, Line, Point, Scene, Symbol, Text, angle_of, ccw_span

EIGHT = np.ones((3, 3), dtype=bool)


@dataclass(frozen=True)
class ExtractionConfig:
    threshold: int = 128
    ransac_iterations: int = 500
    circle_tol: float = 1.5
    min_arc_coverage: float = 60.0  # degrees
    split_tol: float = 1.5
    min_length: float = 8.0
    merge_angle: float = 2.0  # degrees
    merge_gap: float = 12.0
    bandwidth: float = 5.0
    point_merge: float = 3.0
    endpoint_snap: float = 6.0
    tangent_tol: float = 2.0
    glyph_max_side: int = 24
    group_gap: float = 6.0
    min_score: float = 0.6
    glyph_lock: float = 0.8
    seed: int = 0

    def __post_init__(self):
        for k in (
            "circle_tol",
            "min_arc_coverage",
            "split_tol",
            "min_length",
            "merge_angle",
            "merge_gap",
            "bandwidth",
            "point_merge",
            "tangent_tol",
            "group_gap",
        ):
            if not getattr(self, k) > 0:
                raise ValueError(f"{k} must be positive")
        if not (0 < self.min_score <= self.glyph_lock <= 1):
            raise ValueError("need 0 < min_score <= glyph_lock <= 1")
        if self.ransac_iterations < 1:
            raise ValueError("ransac_iterations must be >= 1")


def binarize(image: np.ndarray, threshold: int = 128) -> np.ndarray:
    """Ink mask: pixels darker than ``threshold``."""
    return np.asarray(image) < threshold


def skeletonize(binary: np.ndarray) -> np.ndarray:
    return _sk_skeletonize(np.asarray(binary, dtype=bool))


def mean_shift(samples, bandwidth: float, max_iter: int = 300) -> np.ndarray:
    """Flat-kernel mean shift. Returns one integer label per sample."""
    if not bandwidth > 0:
        raise ValueError("bandwidth must be positive")
    x = np.asarray(samples, dtype=float)
    if x.size == 0:
        return np.zeros(0, dtype=int)
    if x.ndim == 1:
        x = x[:, None]
    tree = cKDTree(x)
    modes = x.copy()
    for _ in range(max_iter):
        nbrs = tree.query_ball_point(modes, bandwidth)
        new = np.array([x[n].mean(axis=0) for n in nbrs])
        shift = np.abs(new - modes).max()
        modes = new
        if shift < 1e-3 * bandwidth:
            break
    # merge modes within bandwidth / 2; canonical order makes the result
    # independent of the sample order
    order = np.lexsort(modes.T[::-1])
    centers: List[np.ndarray] = []
    for i in order:
        for c in centers:
            if np.linalg.norm(modes[i] - c) <= bandwidth / 2:
                break
        else:
            centers.append(modes[i])
    centers_arr = np.array(centers)
    d = np.linalg.norm(x[:, None, :] - centers_arr[None, :, :], axis=2)
    return d.argmin(axis=1)


# ---------------------------------------------------------------------------
# component triage


@dataclass
class Components:
    labels: np.ndarray
    geometric: np.ndarray  # bool mask of line/circle ink
    dots: List[Tuple[float, float]]
    glyph_ids: List[int]
    slices: list


def _is_dot(comp: np.ndarray) -> bool:
    h, w = comp.shape
    if not (6 <= h <= 12 and 6 <= w <= 12 and abs(h - w) <= 1):
        return False
    fill = comp.sum() / float(h * w)
    if fill < 0.7:
        return False
    # a filled disk: every row is one run
    for r in comp:
        idx = np.flatnonzero(r)
        if idx.size and idx[-1] - idx[0] + 1 != idx.size:
            return False
    return True


def _dash_like(ids, slices, labels, big: np.ndarray) -> set:
    """Small elongated pieces lined up with other ink along their own axis
    (pieces of dashed lines). Glyph parts are longer than a dash, so the size
    cap keeps bars and chevrons out."""
    info = {}
    for i in ids:
        sl = slices[i - 1]
        ys, xs = np.nonzero(labels[sl] == i)
        if len(xs) < 3 or max(np.ptp(xs), np.ptp(ys)) + 1 > 9:
            continue
        pts = np.c_[xs + sl[1].start + 0.5, ys + sl[0].start + 0.5]
        c = pts.mean(axis=0)
        ev, evec = np.linalg.eigh(np.cov((pts - c).T))
        if ev[1] <= 0 or ev[0] / ev[1] > 0.5:
            continue
        half = float(np.abs((pts - c) @ evec[:, 1]).max())
        info[i] = (c, evec[:, 1], half)
    H, W = labels.shape
    out = set()
    # short pieces give a poor axis estimate, so search a +-30 degree cone
    fan = [math.radians(a) for a in range(-30, 31, 5)]
    for i, (c, d, half) in info.items():
        for sign in (1, -1):
            base = math.atan2(sign * d[1], sign * d[0])
            hit = False
            for s in np.arange(half + 1.5, half + 13, 1.0):
                for da in fan:
                    q = c + s * np.array([math.cos(base + da), math.sin(base + da)])
                    x, y = int(q[0]), int(q[1])
                    if not (0 <= x < W and 0 <= y < H):
                        continue
                    lab = labels[y, x]
                    if not lab or lab == i:
                        continue
                    if big[y, x]:
                        hit = True
                    elif lab in info:
                        # consecutive dashes share an axis
                        c2, d2, _ = info[lab]
                        off = (c2 - c) / max(float(np.linalg.norm(c2 - c)), 1e-9)
                        hit = abs(float(d @ d2)) >= 0.9 and abs(float(off @ d2)) >= 0.85
                    if hit:
                        break
                if hit:
                    break
            if hit:
                out.add(i)
                break
    return out


def triage(binary: np.ndarray, cfg: ExtractionConfig) -> Components:
    labels, n = ndimage.label(binary, structure=EIGHT)
    slices = ndimage.find_objects(labels)
    geometric = np.zeros_like(binary, dtype=bool)
    dots = []
    small = []
    for i in range(1, n + 1):
        sl = slices[i - 1]
        comp = labels[sl] == i
        h, w = comp.shape
        if max(h, w) > cfg.glyph_max_side:
            geometric[sl] |= comp
        elif _is_dot(comp):
            ys, xs = np.nonzero(comp)
            dots.append((float(xs.mean() + sl[1].start + 0.5), float(ys.mean() + sl[0].start + 0.5)))
        else:
            small.append(i)
    # groups that read confidently as a glyph are never dash pieces
    boxes = [(slices[i - 1][1].start, slices[i - 1][0].start, slices[i - 1][1].stop, slices[i - 1][0].stop) for i in small]
    locked = set()
    # whole groups first, then single components, since a glyph group can
    # chain into nearby dash pieces
    singles = [[k] for k in range(len(small))]
    for g in _group_boxes(boxes, cfg.group_gap) + singles:
        ids = [small[k] for k in g]
        if locked.issuperset(ids):
            continue
        x1, y1 = min(boxes[k][0] for k in g), min(boxes[k][1] for k in g)
        x2, y2 = max(boxes[k][2] for k in g), max(boxes[k][3] for k in g)
        crop = np.isin(labels[y1:y2, x1:x2], ids)
        if classify_crop(crop, Box(x1, y1, x2, y2), cfg.glyph_lock).kind != "unknown":
            locked.update(ids)
    dashes = _dash_like([i for i in small if i not in locked], slices, labels, geometric.copy())
    for i in dashes:
        geometric[slices[i - 1]] |= labels[slices[i - 1]] == i
    glyph_ids = [i for i in small if i not in dashes]
    return Components(labels, geometric, dots, glyph_ids, slices)


# ---------------------------------------------------------------------------
# circles


@dataclass
class CircleFit:
    cx: float
    cy: float
    r: float
    arc: Optional[Tuple[float, float]] = None  # (start angle, span)
    inliers: np.ndarray = field(default=None, repr=False)


def _circle3(p):
    """Circles through point triples, vectorized. p: (k, 3, 2)."""
    a, b, c = p[:, 0], p[:, 1], p[:, 2]
    d = 2 * (a[:, 0] * (b[:, 1] - c[:, 1]) + b[:, 0] * (c[:, 1] - a[:, 1]) + c[:, 0] * (a[:, 1] - b[:, 1]))
    ok = np.abs(d) > 1e-9
    d = np.where(ok, d, 1.0)
    a2, b2, c2 = (a**2).sum(1), (b**2).sum(1), (c**2).sum(1)
    ux = (a2 * (b[:, 1] - c[:, 1]) + b2 * (c[:, 1] - a[:, 1]) + c2 * (a[:, 1] - b[:, 1])) / d
    uy = (a2 * (c[:, 0] - b[:, 0]) + b2 * (a[:, 0] - c[:, 0]) + c2 * (b[:, 0] - a[:, 0])) / d
    r = np.hypot(a[:, 0] - ux, a[:, 1] - uy)
    return ux, uy, r, ok


def fit_circle_lsq(pts: np.ndarray) -> Tuple[float, float, float]:
    """Algebraic (Kasa) circle fit."""
    x, y = pts[:, 0], pts[:, 1]
    A = np.c_[2 * x, 2 * y, np.ones_like(x)]
    sol, *_ = np.linalg.lstsq(A, x**2 + y**2, rcond=None)
    cx, cy, k = sol
    return float(cx), float(cy), float(math.sqrt(max(k + cx * cx + cy * cy, 0.0)))


def _coverage(theta: np.ndarray, bins: int = 72) -> Tuple[float, np.ndarray]:
    idx = np.floor(theta / (2 * math.pi) * bins).astype(int) % bins
    hist = np.bincount(idx, minlength=bins) > 0
    return hist.sum() * 360.0 / bins, hist


def _longest_run(hist: np.ndarray) -> int:
    h = hist.copy()
    h |= np.roll(hist, 1) & np.roll(hist, -1)
    if h.all():
        return len(h)
    k = int(np.flatnonzero(~h)[0])
    h = np.roll(h, -k)
    best = run = 0
    for v in h:
        run = run + 1 if v else 0
        best = max(best, run)
    return best


def _arc_from_angles(theta: np.ndarray, min_gap: float = math.radians(30)) -> Optional[Tuple[float, float]]:
    t = np.sort(theta)
    gaps = np.diff(np.r_[t, t[0] + 2 * math.pi])
    k = int(gaps.argmax())
    if gaps[k] <= min_gap:
        return None
    start = t[(k + 1) % len(t)]
    return float(start), float(2 * math.pi - gaps[k])


def _local_directions(pts: np.ndarray, tree: cKDTree, radius: float = 3.0) -> np.ndarray:
    """Unit tangent of the skeleton at each pixel (principal axis of neighbors)."""
    out = np.zeros_like(pts)
    for i, nb in enumerate(tree.query_ball_point(pts, radius)):
        q = pts[nb] - pts[nb].mean(axis=0)
        if len(nb) < 3:
            continue
        _, vecs = np.linalg.eigh(q.T @ q)
        out[i] = vecs[:, 1]
    return out


def _tangential(pts, dirs, cx, cy) -> np.ndarray:
    rad = pts - np.array([cx, cy])
    rad /= np.maximum(np.linalg.norm(rad, axis=1, keepdims=True), 1e-9)
    return np.abs((dirs * rad).sum(axis=1)) < 0.5


def _refine_circle(pts, dirs, cx, cy, rr, cfg: ExtractionConfig):
    for _ in range(3):
        d = np.abs(np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) - rr)
        inl = (d <= cfg.circle_tol) & _tangential(pts, dirs, cx, cy)
        if inl.sum() < 10:
            return None
        cx, cy, rr = fit_circle_lsq(pts[inl])
    d = np.abs(np.hypot(pts[:, 0] - cx, pts[:, 1] - cy) - rr)
    inl = (d <= cfg.circle_tol) & _tangential(pts, dirs, cx, cy)
    if inl.sum() < 10:
        return None
    theta = np.mod(np.arctan2(pts[inl, 1] - cy, pts[inl, 0] - cx), 2 * math.pi)
    cov, hist = _coverage(theta)
    # a true circle has about one skeleton pixel per unit of arc length, and
    # its inliers form one contiguous run (single-bin gaps are junctions)
    density = inl.sum() / max(rr * math.radians(cov), 1.0)
    # polylines can hug a circle within tolerance, but not with the small
    # residual a pixelized true arc has
    rms = float(np.sqrt((d[inl] ** 2).mean()))
    if _longest_run(hist) * 360.0 / len(hist) < cfg.min_arc_coverage or density < 0.6 or rr < 15 or rms > 0.55:
        return None
    return cx, cy, rr, d, inl, theta


def _near_circle(pts: np.ndarray, c: "CircleFit", cfg: ExtractionConfig) -> np.ndarray:
    d = np.abs(np.hypot(pts[:, 0] - c.cx, pts[:, 1] - c.cy) - c.r)
    near = d <= cfg.circle_tol + 1.5
    if c.arc is not None:
        th = np.mod(np.arctan2(pts[:, 1] - c.cy, pts[:, 0] - c.cx), 2 * math.pi)
        near &= np.mod(th - c.arc[0] + math.radians(3), 2 * math.pi) <= c.arc[1] + math.radians(6)
    return near


def remove_circles(skel: np.ndarray, circles: Sequence["CircleFit"], cfg: ExtractionConfig) -> np.ndarray:
    rest = skel.copy()
    ys, xs = np.nonzero(rest)
    pts = np.c_[xs + 0.5, ys + 0.5]
    for c in circles:
        near = _near_circle(pts, c, cfg)
        rest[ys[near], xs[near]] = False
    return rest


def detect_circles(skel: np.ndarray, cfg: ExtractionConfig) -> Tuple[List[CircleFit], np.ndarray]:
    """RANSAC circles on skeleton pixels. Returns fits and the skeleton with
    circle pixels removed."""
    rng = np.random.default_rng(cfg.seed)
    rest = skel.copy()
    fits: List[CircleFit] = []
    H, W = skel.shape
    for _round in range(8):
        ys, xs = np.nonzero(rest)
        if len(xs) < 30:
            break
        pts = np.c_[xs + 0.5, ys + 0.5]
        tree = cKDTree(pts)
        dirs = _local_directions(pts, tree)
        k = cfg.ransac_iterations
        first = rng.integers(len(pts), size=k)
        triples = np.zeros((k, 3, 2))
        valid = np.zeros(k, dtype=bool)
        nb = tree.query_ball_point(pts[first], 70.0)
        for j in range(k):
            cand = nb[j]
            if len(cand) < 10:
                continue
            a, b = rng.choice(cand, size=2, replace=False)
            triples[j] = pts[[first[j], a, b]]
            s = triples[j]
            if min(np.linalg.norm(s[0] - s[1]), np.linalg.norm(s[0] - s[2]), np.linalg.norm(s[1] - s[2])) < 12:
                continue
            valid[j] = True
        ux, uy, r, ok = _circle3(triples)
        ok &= valid & (r > 15) & (r < max(H, W))
        if not ok.any():
            break
        ux, uy, r = ux[ok], uy[ok], r[ok]
        counts = np.zeros(len(r), dtype=int)
        for chunk in range(0, len(r), 64):
            sl = slice(chunk, chunk + 64)
            d = np.abs(np.hypot(pts[None, :, 0] - ux[sl, None], pts[None, :, 1] - uy[sl, None]) - r[sl, None])
            counts[sl] = (d <= cfg.circle_tol).sum(axis=1)
        accepted = None
        for j in np.argsort(-counts, kind="stable")[:25]:
            if counts[j] < 30:
                break
            got = _refine_circle(pts, dirs, ux[j], uy[j], r[j], cfg)
            if got is not None:
                accepted = got
                break
        if accepted is None:
            break
        cx, cy, rr, d, inl, theta = accepted
        arc = _arc_from_angles(theta)
        fits.append(CircleFit(cx, cy, rr, arc, pts[inl]))
        near = _near_circle(pts, fits[-1], cfg)
        rest[ys[near], xs[near]] = False
    return fits, rest


# ---------------------------------------------------------------------------
# segments


@dataclass
class SegmentFit:
    p1: np.ndarray
    p2: np.ndarray
    pts: np.ndarray = field(repr=False)

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.p2 - self.p1))

    @property
    def direction(self) -> np.ndarray:
        return (self.p2 - self.p1) / max(self.length, 1e-12)


def _tls(pts: np.ndarray) -> SegmentFit:
    c = pts.mean(axis=0)
    if len(pts) < 2:
        return SegmentFit(c.copy(), c.copy(), pts)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    d = vt[0]
    t = (pts - c) @ d
    return SegmentFit(c + t.min() * d, c + t.max() * d, pts)


def _neighbors(skel: np.ndarray) -> np.ndarray:
    k = EIGHT.astype(int)
    return ndimage.convolve(skel.astype(int), k, mode="constant") - skel.astype(int)


def trace_paths(skel: np.ndarray) -> List[np.ndarray]:
    """Split a skeleton at junctions and return ordered pixel-center paths."""
    skel = skel.astype(bool)
    junction = skel & (_neighbors(skel) >= 3)
    core = skel & ~junction
    labels, n = ndimage.label(core, structure=EIGHT)
    paths = []
    for sl_i, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = np.nonzero(labels[sl] == sl_i)
        ys = ys + sl[0].start
        xs = xs + sl[1].start
        pix = list(zip(ys.tolist(), xs.tolist()))
        index = {p: i for i, p in enumerate(pix)}
        adj = [[] for _ in pix]
        for i, (y, x) in enumerate(pix):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    j = index.get((y + dy, x + dx))
                    if j is not None and j != i:
                        adj[i].append(j)

        def bfs(s):
            dist = [-1] * len(pix)
            dist[s] = 0
            q = deque([s])
            while q:
                u = q.popleft()
                for v in adj[u]:
                    if dist[v] < 0:
                        dist[v] = dist[u] + 1
                        q.append(v)
            return dist

        d0 = bfs(0)
        far = int(np.argmax(d0))
        d1 = bfs(far)
        order = np.argsort(d1, kind="stable")
        arr = np.array([(pix[i][1] + 0.5, pix[i][0] + 0.5) for i in order])
        paths.append(arr)
    return paths


def douglas_peucker(path: np.ndarray, tol: float) -> List[Tuple[int, int]]:
    """Index ranges [i, j] of runs whose points stay within tol of the chord."""
    out = []
    stack = [(0, len(path) - 1)]
    while stack:
        i, j = stack.pop()
        if j - i < 2:
            out.append((i, j))
            continue
        a, b = path[i], path[j]
        d = b - a
        n = np.linalg.norm(d)
        seg = path[i : j + 1]
        if n < 1e-9:
            dev = np.linalg.norm(seg - a, axis=1)
        else:
            dev = np.abs(d[0] * (seg[:, 1] - a[1]) - d[1] * (seg[:, 0] - a[0])) / n
        k = int(dev.argmax())
        if dev[k] > tol:
            stack.append((i + k, j))
            stack.append((i, i + k))
        else:
            out.append((i, j))
    return sorted(out)


def _ink_at(ink: np.ndarray, q) -> bool:
    x, y = int(math.floor(q[0])), int(math.floor(q[1]))
    return 0 <= y < ink.shape[0] and 0 <= x < ink.shape[1] and bool(ink[y, x])


def _bridged(ink: np.ndarray, a, b) -> bool:
    """Is the gap a..b mostly inked (within 1 px laterally)? Dashed strokes
    ink about 60% of their length, so the ratio is loose."""
    n = int(np.linalg.norm(b - a))
    if n <= 1:
        return True
    u = (b - a) / np.linalg.norm(b - a)
    perp = np.array([-u[1], u[0]])
    hits = 0
    for k in range(n + 1):
        q = a + (b - a) * k / n
        hits += any(_ink_at(ink, q + o * perp) for o in (-1.0, 0.0, 1.0))
    return hits / (n + 1.0) >= 0.4


def _mergeable(A: SegmentFit, B: SegmentFit, ink: np.ndarray, cfg: ExtractionConfig) -> bool:
    d = A.direction
    nrm = np.array([-d[1], d[0]])
    off = np.abs((B.pts - A.p1) @ nrm)
    # junction stubs are short and bent; allow them a wider band
    band = max(cfg.split_tol, 1.0) + (1.5 if B.length < 40 else 0.5)
    if off.max() > band:
        return False
    if B.length >= 30 and A.length >= 30:
        cos = abs(float(A.direction @ B.direction))
        if cos < math.cos(math.radians(cfg.merge_angle)):
            return False
    ta = sorted(((A.p1 - A.p1) @ d, (A.p2 - A.p1) @ d))
    tb = (B.pts - A.p1) @ d
    gap = max(tb.min() - ta[1], ta[0] - tb.max(), 0.0)
    if gap <= cfg.merge_gap:
        return True
    if gap > 60:
        return False
    if tb.min() > ta[1]:
        a, b = A.p1 + ta[1] * d, A.p1 + tb.min() * d
    else:
        a, b = A.p1 + tb.max() * d, A.p1 + ta[0] * d
    return _bridged(ink, a, b)


def merge_collinear(frags: List[SegmentFit], ink: np.ndarray, cfg: ExtractionConfig) -> List[SegmentFit]:
    frags = list(frags)
    changed = True
    while changed:
        changed = False
        frags.sort(key=lambda f: -f.length)
        i = 0
        while i < len(frags):
            A = frags[i]
            j = i + 1
            while j < len(frags):
                B = frags[j]
                if _mergeable(A, B, ink, cfg) or (B.length > A.length * 0.5 and _mergeable(B, A, ink, cfg)):
                    A = _tls(np.vstack([A.pts, B.pts]))
                    frags[i] = A
                    frags.pop(j)
                    changed = True
                    j = i + 1
                else:
                    j += 1
            i += 1
    return frags


def _absorb_short(segs: List[SegmentFit], short: float = 40.0, band: float = 4.0, reach: float = 12.0) -> List[SegmentFit]:
    """Drop short pieces lying along a longer segment, stretching it to cover
    them. Junction stubs often survive merging with a skewed direction."""
    segs = sorted(segs, key=lambda f: -f.length)
    out: List[SegmentFit] = []
    for s in segs:
        host = None
        if s.length < short:
            for t in out:
                d = t.direction
                a, b = t.p1 - d * reach, t.p2 + d * reach
                if _seg_point_dist(s.p1, a, b) <= band and _seg_point_dist(s.p2, a, b) <= band:
                    host = t
                    break
        if host is None:
            out.append(s)
            continue
        d = host.direction
        ts = [0.0, host.length, float((s.p1 - host.p1) @ d), float((s.p2 - host.p1) @ d)]
        host.p2 = host.p1 + max(ts) * d
        host.p1 = host.p1 + min(ts) * d
    return out


def _extend(p, d, ink: np.ndarray, limit: float = 15.0) -> np.ndarray:
    last = 0.0
    s = 0.0
    while s <= limit:
        if _ink_at(ink, p + d * s):
            last = s
        elif s - last > 5.0:  # dash gaps are 4 px
            break
        s += 0.25
    return p + d * last


def detect_segments(skel: np.ndarray, ink: np.ndarray, cfg: ExtractionConfig) -> List[SegmentFit]:
    """Maximal straight segments from a skeleton with circles removed."""
    frags = []
    for path in trace_paths(skel):
        if len(path) < 2:
            frags.append(_tls(path))
            continue
        for i, j in douglas_peucker(path, cfg.split_tol):
            frags.append(_tls(path[i : j + 1]))
    merged = _absorb_short(merge_collinear(frags, ink, cfg))
    out = []
    for f in merged:
        if f.length < 1e-6:
            continue
        d = f.direction
        p1 = _extend(f.p1, -d, ink)
        p2 = _extend(f.p2, d, ink)
        g = SegmentFit(p1, p2, f.pts)
        if g.length >= cfg.min_length and len(f.pts) >= cfg.min_length * 0.5:
            out.append(g)
    return out


# ---------------------------------------------------------------------------
# points


@dataclass
class PointFit:
    xy: np.ndarray
    kind: str


def _seg_point_dist(p, a, b) -> float:
    d = b - a
    L2 = float(d @ d)
    t = 0.0 if L2 == 0 else min(max(float((p - a) @ d) / L2, 0.0), 1.0)
    return float(np.linalg.norm(p - (a + t * d)))


def _on_circle(q, c: CircleFit, tol: float, slack_deg: float = 4.0) -> bool:
    if abs(math.hypot(q[0] - c.cx, q[1] - c.cy) - c.r) > tol:
        return False
    if c.arc is None:
        return True
    th = angle_of((q[0] - c.cx, q[1] - c.cy))
    sl = math.radians(slack_deg)
    return ccw_span(c.arc[0] - sl, th) <= c.arc[1] + 2 * sl


def arc_endpoints_xy(c: CircleFit) -> List[np.ndarray]:
    if c.arc is None:
        return []
    a0, span = c.arc
    return [
        np.array([c.cx + c.r * math.cos(a), c.cy + c.r * math.sin(a)]) for a in (a0, a0 + span)
    ]


def _cluster(points: List[np.ndarray], radius: float) -> List[List[int]]:
    n = len(points)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    if n:
        tree = cKDTree(np.array(points))
        for i, j in tree.query_pairs(radius):
            parent[find(i)] = find(j)
    groups: Dict[int, List[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def detect_points(
    segments: Sequence[SegmentFit],
    circles: Sequence[CircleFit],
    dots: Sequence[Tuple[float, float]],
    cfg: ExtractionConfig,
) -> List[PointFit]:
    ext = 3.0
    derived: List[Tuple[np.ndarray, str]] = []
    for i in range(len(segments)):
        for j in range(i + 1, len(segments)):
            A, B = segments[i], segments[j]
            d1, d2 = A.p2 - A.p1, B.p2 - B.p1
            den = d1[0] * d2[1] - d1[1] * d2[0]
            if abs(den) < 1e-9:
                continue
            w = B.p1 - A.p1
            t = (w[0] * d2[1] - w[1] * d2[0]) / den
            u = (w[0] * d1[1] - w[1] * d1[0]) / den
            ea, eb = ext / A.length, ext / B.length
            if -ea <= t <= 1 + ea and -eb <= u <= 1 + eb:
                derived.append((A.p1 + t * d1, "intersection"))
    for s in segments:
        d = s.direction
        for c in circles:
            ctr = np.array([c.cx, c.cy])
            tf = float((ctr - s.p1) @ d)
            foot = s.p1 + tf * d
            dist = float(np.linalg.norm(foot - ctr))
            lo, hi = -ext, s.length + ext
            if abs(dist - c.r) <= cfg.tangent_tol:
                if lo <= tf <= hi and _on_circle(foot, c, cfg.tangent_tol + 1):
                    q = ctr + (foot - ctr) * (c.r / max(dist, 1e-9))
                    derived.append((q, "tangent"))
                continue
            if dist > c.r:
                continue
            h = math.sqrt(c.r * c.r - dist * dist)
            for t in (tf - h, tf + h):
                q = s.p1 + t * d
                if lo <= t <= hi and _on_circle(q, c, 1.0):
                    derived.append((q, "intersection"))
    for c in circles:
        for q in arc_endpoints_xy(c):
            derived.append((q, "arc"))
    for x, y in dots:
        q = np.array([x, y])
        kind = "independent"
        for c in circles:
            if math.hypot(x - c.cx, y - c.cy) <= cfg.point_merge + 2:
                kind = "center"
        derived.append((q, kind))

    # merge analytic points, preferring dots and tangencies for position
    prio = {"center": 0, "independent": 0, "tangent": 1, "intersection": 2, "arc": 3}
    # candidates for one true point scatter by a pixel or two; mean shift
    # pulls each scatter onto a single mode
    groups: List[List[int]] = []
    if derived:
        labels = mean_shift(np.array([p for p, _ in derived]), cfg.bandwidth)
        for k in np.unique(labels):
            groups.append([int(i) for i in np.flatnonzero(labels == k)])
    merged: List[Tuple[np.ndarray, str]] = []
    for g in groups:
        best = min(prio[derived[i][1]] for i in g)
        members = [derived[i][0] for i in g if prio[derived[i][1]] == best]
        merged.append((np.mean(members, axis=0), derived[min(g, key=lambda i: prio[derived[i][1]])][1]))

    # endpoints snap to nearby derived points, otherwise become new points
    for s in segments:
        for e in (s.p1, s.p2):
            if merged:
                dists = [np.linalg.norm(e - p) for p, _ in merged]
                k = int(np.argmin(dists))
                if dists[k] <= cfg.endpoint_snap:
                    continue
            merged.append((e.copy(), "endpoint"))

    # enforce the minimum spacing once more (endpoints may crowd each other)
    groups = _cluster([p for p, _ in merged], cfg.point_merge)
    out = []
    for g in groups:
        k = min(g, key=lambda i: prio.get(merged[i][1], 4))
        out.append(PointFit(np.mean([merged[i][0] for i in g], axis=0) if len(g) > 1 and all(merged[i][1] == "endpoint" for i in g) else merged[k][0], merged[k][1]))
    return out


# ---------------------------------------------------------------------------
# symbols and texts


def _ncc(a: np.ndarray, b: np.ndarray) -> float:
    """Normalized cross-correlation of two bitmaps, padded to a common size
    and searched over small offsets."""
    H = max(a.shape[0], b.shape[0]) + 2
    W = max(a.shape[1], b.shape[1]) + 2
    A = np.zeros((H, W))
    A[1 : 1 + a.shape[0], 1 : 1 + a.shape[1]] = a
    best = -1.0
    for dy in range(0, H - b.shape[0] + 1):
        for dx in range(0, W - b.shape[1] + 1):
            B = np.zeros((H, W))
            B[dy : dy + b.shape[0], dx : dx + b.shape[1]] = b
            am, bm = A - A.mean(), B - B.mean()
            den = math.sqrt(float((am * am).sum() * (bm * bm).sum()))
            if den > 0:
                best = max(best, float((am * bm).sum()) / den)
    return best


def _close_shape(a: np.ndarray, b: np.ndarray, slack: int = 2) -> bool:
    return abs(a.shape[0] - b.shape[0]) <= slack and abs(a.shape[1] - b.shape[1]) <= slack


# Blurred scans thin or thicken strokes, so each template is also kept in the
# form it takes after blurring and re-thresholding.
TEMPLATE_BLURS = (0.0, 0.7, 1.0)


def _variants(t: np.ndarray, threshold: int = 128) -> List[np.ndarray]:
    out = [t]
    for sigma in TEMPLATE_BLURS[1:]:
        img = np.pad(np.where(t, 0.0, 255.0), 6, constant_values=255.0)
        v = glyphs.tight(np.round(ndimage.gaussian_filter(img, sigma)) < threshold)
        if v.sum() < 0.5 * t.sum() or any(v.shape == u.shape and (v == u).all() for u in out):
            continue
        out.append(v)
    return out


@lru_cache(maxsize=None)
def _symbol_templates():
    out = []
    for cls in SYMBOL_CLASSES:
        if cls == "text":
            continue
        if cls in ("head", "head_len"):
            for turns, d in glyphs.HEAD_DIRECTIONS.items():
                out.extend((cls, d, v) for v in _variants(glyphs.head_glyph(cls, turns)))
        else:
            out.extend((cls, None, v) for v in _variants(glyphs.symbol_glyph(cls)))
    return tuple(out)


@lru_cache(maxsize=None)
def _char_templates():
    return tuple((c, v) for c in glyphs.FONT_CHARS for v in _variants(glyphs.char_glyph(c)))


def classify_symbol(crop: np.ndarray) -> Tuple[Optional[str], Optional[Tuple[int, int]], float]:
    best = (None, None, -1.0)
    for cls, d, t in _symbol_templates():
        if not _close_shape(crop, t):
            continue
        sc = _ncc(crop, t)
        if sc > best[2]:
            best = (cls, d, sc)
    return best


def decode_text(crop: np.ndarray) -> Tuple[str, float]:
    """Per-character template match; characters are split at empty columns."""
    cols = crop.any(axis=0)
    chars = []
    x = 0
    W = crop.shape[1]
    while x < W:
        if not cols[x]:
            x += 1
            continue
        x0 = x
        while x < W and cols[x]:
            x += 1
        chars.append(glyphs.tight(crop[:, x0:x]))
    if not chars:
        return "", -1.0
    content = []
    score = 1.0
    for ch in chars:
        best_c, best_s = None, -1.0
        for c, t in _char_templates():
            if not _close_shape(ch, t):
                continue
            sc = _ncc(ch, t)
            if sc > best_s:
                best_c, best_s = c, sc
        if best_c is None:
            return "", -1.0
        content.append(best_c)
        score = min(score, best_s)
    return "".join(content), score


def _group_boxes(boxes: List[Tuple[int, int, int, int]], gap: float) -> List[List[int]]:
    n = len(boxes)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            a, b = boxes[i], boxes[j]
            dx = max(a[0] - b[2], 0, b[0] - a[2])
            dy = max(a[1] - b[3], 0, b[1] - a[3])
            if math.hypot(dx, dy) <= gap:
                parent[find(i)] = find(j)
    groups: Dict[int, List[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return sorted(groups.values(), key=lambda g: min(g))


@dataclass
class NonGeo:
    kind: str  # "symbol" | "text" | "unknown"
    box: Box
    cls: Optional[str] = None
    content: Optional[str] = None
    direction: Optional[Tuple[int, int]] = None
    score: float = 0.0


def detect_nongeo(binary: np.ndarray, geo_mask: np.ndarray, cfg: ExtractionConfig) -> List[NonGeo]:
    """Group residual ink into boxes and classify each against the atlas."""
    residual = binary & ~geo_mask
    labels, n = ndimage.label(residual, structure=EIGHT)
    if n == 0:
        return []
    slices = ndimage.find_objects(labels)
    # boxes as pixel-edge coordinates [x1, y1, x2, y2)
    boxes = [(sl[1].start, sl[0].start, sl[1].stop, sl[0].stop) for sl in slices]
    out = []
    for g in _group_boxes(boxes, cfg.group_gap):
        x1 = min(boxes[i][0] for i in g)
        y1 = min(boxes[i][1] for i in g)
        x2 = max(boxes[i][2] for i in g)
        y2 = max(boxes[i][3] for i in g)
        sub = labels[y1:y2, x1:x2]
        crop = np.isin(sub, [i + 1 for i in g])
        box = Box(x1, y1, x2, y2)
        out.append(classify_crop(crop, box, cfg.min_score))
    return out


def classify_crop(crop: np.ndarray, box: Box, min_score: float) -> NonGeo:
    cls, d, s_sym = classify_symbol(crop)
    content, s_txt = decode_text(crop)
    if s_sym >= min_score and s_sym >= s_txt:
        return NonGeo("symbol", box, cls=cls, direction=d, score=s_sym)
    if s_txt >= min_score:
        return NonGeo("text", box, content=content, score=s_txt)
    return NonGeo("unknown", box, cls="unknown", score=max(s_sym, s_txt))


# ---------------------------------------------------------------------------
# top level


@dataclass
class Extraction:
    scene: Scene
    masks: Dict[str, np.ndarray]
    stroke_width: float
    unknown: List[str] = field(default_factory=list)


def estimate_stroke(geo: np.ndarray, skel: np.ndarray) -> float:
    n = int(skel.sum())
    return float(geo.sum()) / n if n else 2.0


def _reclaim(comp: Components, segs, circles, w: float) -> np.ndarray:
    """Small components lying on a detected stroke are stroke pieces."""
    extra = np.zeros_like(comp.geometric)
    band = w / 2 + 1.0
    for i in comp.glyph_ids:
        sl = comp.slices[i - 1]
        ys, xs = np.nonzero(comp.labels[sl] == i)
        pts = np.c_[xs + sl[1].start + 0.5, ys + sl[0].start + 0.5]
        on = np.zeros(len(pts), dtype=bool)
        for s in segs:
            d = s.direction
            a, b = s.p1 - 15 * d, s.p2 + 15 * d
            on |= np.array([_seg_point_dist(q, a, b) <= band for q in pts])
        for c in circles:
            on |= np.abs(np.hypot(pts[:, 0] - c.cx, pts[:, 1] - c.cy) - c.r) <= band
        if on.mean() >= 0.8:
            extra[sl] |= comp.labels[sl] == i
    return extra


def _line_style(p1, p2, geo: np.ndarray) -> str:
    n = int(np.linalg.norm(p2 - p1))
    if n < 4:
        return "solid"
    u = (p2 - p1) / np.linalg.norm(p2 - p1)
    perp = np.array([-u[1], u[0]])
    on = np.array(
        [any(_ink_at(geo, p1 + (p2 - p1) * k / n + o * perp) for o in (-1.0, 0.0, 1.0)) for k in range(n + 1)]
    )
    half = len(on) // 2
    a, b = on[:half].mean(), on[half:].mean()
    if a > 0.95 and b > 0.95:
        return "solid"
    if a < 0.9 and b < 0.9:
        return "dash"
    return "mixed"


def extract(image: np.ndarray, cfg: Optional[ExtractionConfig] = None, scene_id: str = "") -> Extraction:
    """Recover primitives (no relations) from a grayscale diagram."""
    from .synth import annulus, disk, segment_band

    cfg = cfg or ExtractionConfig()
    image = np.asarray(image)
    H, W = image.shape
    binary = binarize(image, cfg.threshold)
    comp = triage(binary, cfg)
    geo = comp.geometric
    skel = skeletonize(geo)
    circles, rest = detect_circles(skel, cfg)
    segs = detect_segments(rest, geo, cfg)
    w = estimate_stroke(geo, skel)
    extra = _reclaim(comp, segs, circles, w)
    if extra.any():
        geo = geo | extra
        skel = skeletonize(geo)
        segs = detect_segments(remove_circles(skel, circles, cfg), geo, cfg)
    pfits = detect_points(segs, circles, comp.dots, cfg)
    pfits.sort(key=lambda p: (round(float(p.xy[1]), 1), round(float(p.xy[0]), 1)))
    pxy = np.array([p.xy for p in pfits]) if pfits else np.zeros((0, 2))

    def nearest(q) -> int:
        return int(np.argmin(np.linalg.norm(pxy - q, axis=1)))

    lines = []
    for s in segs:
        a, b = nearest(s.p1), nearest(s.p2)
        if a == b:
            continue
        lines.append((a, b, _line_style(pxy[a], pxy[b], geo)))
    circ = []
    for c in circles:
        center = None
        for k, p in enumerate(pfits):
            if p.kind == "center" and math.hypot(p.xy[0] - c.cx, p.xy[1] - c.cy) <= cfg.point_merge + 2:
                center = k
        ends = None
        if c.arc is not None:
            e = arc_endpoints_xy(c)
            ends = (nearest(e[0]), nearest(e[1]))
        circ.append((c, center, ends))

    # kinds from incidence, as in the annotation convention
    kinds = []
    for k, p in enumerate(pfits):
        if p.kind in ("center", "tangent"):
            kinds.append(p.kind)
            continue
        if p.kind == "independent":
            kinds.append("independent")
            continue
        m = sum(_seg_point_dist(p.xy, pxy[a], pxy[b]) <= 3.0 for a, b, _ in lines)
        m += sum(_on_circle(p.xy, c, 3.0) for c, _, _ in circ)
        kinds.append("intersection" if m >= 2 else "endpoint" if m == 1 else "independent")
    points = tuple(
        Point(f"P{k}", round(float(p.xy[0]), 3), round(float(p.xy[1]), 3), kinds[k]) for k, p in enumerate(pfits)
    )
    line_objs = tuple(Line(f"L{i}", (f"P{a}", f"P{b}"), style=st) for i, (a, b, st) in enumerate(lines))
    circle_objs = tuple(
        Circle(
            f"C{i}",
            round(c.cx, 3),
            round(c.cy, 3),
            round(c.r, 3),
            f"P{center}" if center is not None else None,
            (),
            ends is not None,
            (f"P{ends[0]}", f"P{ends[1]}") if ends else None,
        )
        for i, (c, center, ends) in enumerate(circ)
    )

    masks: Dict[str, np.ndarray] = {}
    for l, (a, b, _) in zip(line_objs, lines):
        masks[l.id] = segment_band(pxy[a], pxy[b], w + 2, W, H) & geo
    for co, (c, _, _) in zip(circle_objs, circ):
        if c.arc is not None:
            masks[co.id] = annulus(c.cx, c.cy, c.r, w + 2, W, H, c.arc[0] - 0.05, c.arc[1] + 0.1) & geo
        else:
            masks[co.id] = annulus(c.cx, c.cy, c.r, w + 2, W, H) & geo
    for k, p in enumerate(points):
        if p.kind in ("center", "independent"):
            masks[p.id] = disk(p.x, p.y, 4.5, W, H) & binary
        else:
            masks[p.id] = disk(p.x, p.y, 3.0 + w / 2, W, H) & geo

    dots_mask = np.zeros_like(binary)
    for p in points:
        if p.kind in ("center", "independent"):
            dots_mask |= disk(p.x, p.y, 6.0, W, H) & binary
    nongeo = detect_nongeo(binary, geo | dots_mask, cfg)
    symbols, texts, unknown = [], [], []
    for g in nongeo:
        if g.kind == "text":
            texts.append(Text(f"T{len(texts)}", g.content, g.box))
        else:
            sid = f"S{len(symbols)}"
            symbols.append(Symbol(sid, g.cls, g.box, g.direction))
            if g.kind == "unknown":
                unknown.append(sid)
    scene = Scene(
        id=scene_id,
        width=W,
        height=H,
        points=points,
        lines=line_objs,
        circles=circle_objs,
        symbols=tuple(symbols),
        texts=tuple(texts),
    )
    return Extraction(scene, masks, w, unknown)
