"""Annotation JSON, mask sidecars and PNG files."""

from __future__ import annotations

import json
import os
import tempfile
from pathlib import Path
from typing import Dict, List, Mapping, Union

import numpy as np
from PIL import Image

from .geom import Box, Circle, GeometryError, Line, Point, Relation, Scene, Symbol, Text

PathLike = Union[str, os.PathLike]


def _num(v: float):
    v = round(float(v), 3)
    return int(v) if v == int(v) else v


def scene_to_dict(scene: Scene) -> dict:
    d = {
        "id": scene.id,
        "width": scene.width,
        "height": scene.height,
        "points": [{"id": p.id, "x": _num(p.x), "y": _num(p.y), "kind": p.kind} for p in scene.points],
        "lines": [
            {"id": l.id, "endpoints": list(l.endpoints), "points_on": list(l.points_on), "style": l.style}
            for l in scene.lines
        ],
        "circles": [
            {
                "id": c.id,
                "x": _num(c.x),
                "y": _num(c.y),
                "center": c.center,
                "radius": _num(c.radius),
                "points_on": list(c.points_on),
                "arc": c.arc,
                "arc_endpoints": list(c.arc_endpoints) if c.arc_endpoints else None,
            }
            for c in scene.circles
        ],
        "symbols": [],
        "texts": [],
        "relations": [{"subject": r.subject, "objects": list(r.objects), "type": r.type} for r in scene.relations],
        "propositions": list(scene.propositions),
    }
    for s in scene.symbols:
        e = {"id": s.id, "class": s.cls, "bbox": [_num(v) for v in s.bbox.as_list()]}
        if s.direction is not None:
            e["direction"] = list(s.direction)
        d["symbols"].append(e)
    for t in scene.texts:
        e = {"id": t.id, "content": t.content, "bbox": [_num(v) for v in t.bbox.as_list()]}
        if t.cls is not None:
            e["class"] = t.cls
        d["texts"].append(e)
    if scene.provenance:
        d["provenance"] = dict(scene.provenance)
    return d


def scene_from_dict(d: Mapping) -> Scene:
    try:
        points = tuple(Point(p["id"], float(p["x"]), float(p["y"]), p.get("kind", "endpoint")) for p in d["points"])
        lines = tuple(
            Line(l["id"], tuple(l["endpoints"]), tuple(l.get("points_on", ())), l.get("style", "solid"))
            for l in d["lines"]
        )
        circles = []
        for c in d["circles"]:
            x, y = c.get("x"), c.get("y")
            if x is None:
                ctr = next(p for p in points if p.id == c["center"])
                x, y = ctr.x, ctr.y
            ae = c.get("arc_endpoints")
            circles.append(
                Circle(
                    c["id"],
                    float(x),
                    float(y),
                    float(c["radius"]),
                    c.get("center"),
                    tuple(c.get("points_on", ())),
                    bool(c.get("arc", False)),
                    tuple(ae) if ae else None,
                )
            )
        symbols = tuple(
            Symbol(s["id"], s["class"], Box(*s["bbox"]), tuple(s["direction"]) if s.get("direction") else None)
            for s in d.get("symbols", ())
        )
        texts = tuple(Text(t["id"], t["content"], Box(*t["bbox"]), t.get("class")) for t in d.get("texts", ()))
        rels = [Relation(r["subject"], tuple(r["objects"]), r["type"]) for r in d.get("relations", ())]
    except (KeyError, TypeError, IndexError, StopIteration) as e:
        raise GeometryError(f"malformed annotation: {e!r}") from e
    scene = Scene(
        id=str(d.get("id", "")),
        width=int(d["width"]),
        height=int(d["height"]),
        points=points,
        lines=lines,
        circles=tuple(circles),
        symbols=symbols,
        texts=texts,
        relations=tuple(rels),
        propositions=tuple(d.get("propositions", ())),
        provenance=dict(d.get("provenance", {})),
    )
    return scene


def dumps_scene(scene: Scene) -> str:
    return json.dumps(scene_to_dict(scene), ensure_ascii=False, indent=1, sort_keys=False) + "\n"


def loads_scene(text: str) -> Scene:
    return scene_from_dict(json.loads(text))


def atomic_write(path: PathLike, data: Union[str, bytes]) -> None:
    """Write via a temp file in the same directory, then rename."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as f:
            f.write(data.encode("utf-8") if isinstance(data, str) else data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_scene(scene: Scene, path: PathLike) -> None:
    atomic_write(path, dumps_scene(scene))


def read_scene(path: PathLike) -> Scene:
    return loads_scene(Path(path).read_text(encoding="utf-8"))


# ---------------------------------------------------------------------------
# masks


def rle_encode(mask: np.ndarray) -> List[int]:
    """Row-major runs of True pixels as [start, length, start, length, ...]."""
    flat = np.asarray(mask, dtype=bool).ravel()
    padded = np.concatenate([[False], flat, [False]])
    edges = np.flatnonzero(padded[1:] != padded[:-1])
    starts, ends = edges[0::2], edges[1::2]
    out = np.empty(2 * len(starts), dtype=np.int64)
    out[0::2] = starts
    out[1::2] = ends - starts
    return out.tolist()


def rle_decode(runs: List[int], width: int, height: int) -> np.ndarray:
    flat = np.zeros(width * height, dtype=bool)
    for s, n in zip(runs[0::2], runs[1::2]):
        flat[s : s + n] = True
    return flat.reshape(height, width)


def dumps_masks(masks: Mapping[str, np.ndarray], width: int, height: int) -> str:
    body = {"width": width, "height": height, "masks": {k: rle_encode(v) for k, v in masks.items()}}
    return json.dumps(body, separators=(",", ":")) + "\n"


def loads_masks(text: str) -> Dict[str, np.ndarray]:
    d = json.loads(text)
    return {k: rle_decode(v, d["width"], d["height"]) for k, v in d["masks"].items()}


# ---------------------------------------------------------------------------
# images


def write_png(image: np.ndarray, path: PathLike) -> None:
    import io as _io

    buf = _io.BytesIO()
    Image.fromarray(np.asarray(image, dtype=np.uint8), mode="L").save(buf, format="PNG")
    atomic_write(path, buf.getvalue())


def read_png(path: PathLike) -> np.ndarray:
    """Grayscale uint8 array. Raises ValueError on undecodable input."""
    try:
        with Image.open(path) as im:
            im.load()
            if im.mode in ("RGBA", "LA", "P"):
                im = im.convert("RGBA")
                bg = Image.new("RGBA", im.size, (255, 255, 255, 255))
                im = Image.alpha_composite(bg, im)
            return np.asarray(im.convert("L"), dtype=np.uint8)
    except (OSError, SyntaxError) as e:
        raise ValueError(f"cannot decode image {path}: {e}") from e
