"""Batch workflows: synthesize a corpus, parse diagrams, score predictions,
draw SVG overlays.

    geodiag synth --count 200 --seed 1 --out corpus/
    geodiag parse corpus/ --out pred/
    geodiag eval pred/ corpus/ --mode all --report report.json
    geodiag overlay corpus/00042.png pred/00042.json --out 00042.svg

Exit codes: 0 success, 1 output I/O failure, 2 input decode error,
3 corpus mismatch, 4 config error. Set GEODIAG_LOG to error, warn, info
or debug for progress messages on stderr.
"""

from __future__ import annotations

import argparse
import base64
import concurrent.futures as cf
import hashlib
import json
import logging
import os
import sys
import xml.etree.ElementTree as ET
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Dict, List, Optional, Sequence

import numpy as np

from . import __version__
from .evaluate import SECTIONS, EvalReport
from .extract import ExtractionConfig, extract
from .formalang import generate
from .geom import GeometryError, Scene
from .io import atomic_write, dumps_masks, dumps_scene, scene_to_dict, loads_masks, read_png, read_scene, write_png
from .relate import RuleConfig, parse_relations
from .synth import InfeasibleConfig, SceneConfig, rasterize, sample_scene, validate_scene

EXIT_OK = 0
EXIT_IO = 1
EXIT_DECODE = 2
EXIT_MISMATCH = 3
EXIT_CONFIG = 4

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
MANIFEST = "manifest.json"

log = logging.getLogger("geodiag")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# configuration


@dataclass
class RunConfig:
    """Effective settings for one invocation: config file first, flags on top."""

    subcommand: str
    seed: Optional[int] = None
    workers: int = 1
    scene: SceneConfig = field(default_factory=SceneConfig)
    extraction: ExtractionConfig = field(default_factory=ExtractionConfig)
    rules: RuleConfig = field(default_factory=RuleConfig)

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "seed": self.seed,
            "scene": self.scene.to_dict(),
            "extraction": asdict(self.extraction),
            "rules": asdict(self.rules),
        }

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def load_run_config(
    subcommand: str,
    config_path: Optional[str] = None,
    overrides: Sequence[str] = (),
    seed: Optional[int] = None,
    workers: Optional[int] = None,
) -> RunConfig:
    sections: Dict[str, dict] = {"scene": {}, "extraction": {}, "rules": {}}
    if config_path:
        try:
            raw = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as e:
            raise CliError(EXIT_CONFIG, f"cannot read config {config_path}: {e}") from e
        if not isinstance(raw, dict):
            raise CliError(EXIT_CONFIG, "config file must hold a JSON object")
        for k, v in raw.items():
            if k not in sections or not isinstance(v, dict):
                raise CliError(EXIT_CONFIG, f"config: unknown or malformed section {k!r}")
            sections[k].update(v)
    for item in overrides:
        key, sep, value = item.partition("=")
        section, dot, name = key.partition(".")
        if not sep or not dot or section not in sections:
            raise CliError(EXIT_CONFIG, f"--set expects section.key=value, got {item!r}")
        sections[section][name] = _parse_value(value)
    if seed is not None:
        sections["scene"]["seed"] = seed
    try:
        scene = SceneConfig.from_dict(sections["scene"])
        extraction = ExtractionConfig(**sections["extraction"])
        rules = RuleConfig(**sections["rules"])
    except (TypeError, ValueError) as e:
        raise CliError(EXIT_CONFIG, f"config: {e}") from e
    if workers is None:
        workers = os.cpu_count() or 1
    if workers < 1:
        raise CliError(EXIT_CONFIG, "--workers must be >= 1")
    return RunConfig(subcommand, scene.seed if seed is not None else None, workers, scene, extraction, rules)


def _setup_logging() -> None:
    name = os.environ.get("GEODIAG_LOG", "warn").strip().lower()
    if name not in LOG_LEVELS:
        raise CliError(EXIT_CONFIG, f"GEODIAG_LOG must be one of {sorted(LOG_LEVELS)}, got {name!r}")
    if not log.handlers:
        h = logging.StreamHandler(sys.stderr)
        h.setFormatter(logging.Formatter("%(levelname)s %(message)s"))
        log.addHandler(h)
    log.setLevel(LOG_LEVELS[name])


def _fan_out(fn, jobs: list, workers: int) -> list:
    """Map ``fn`` over ``jobs``; results come back in job order."""
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with cf.ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as pool:
        return list(pool.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))


def _write_json(path: Path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=1, sort_keys=False) + "\n")


# ---------------------------------------------------------------------------
# synth


def _synth_one(job) -> dict:
    idx, cfg_dict, out_dir = job
    cfg = SceneConfig.from_dict(cfg_dict)
    cfg = replace(cfg, seed=cfg.seed + idx)
    sid = f"{idx:05d}"
    scene = sample_scene(cfg, sid)
    rd = rasterize(scene, blur=cfg.blur)
    out = Path(out_dir)
    write_png(rd.image, out / f"{sid}.png")
    atomic_write(out / f"{sid}.json", dumps_scene(scene))
    atomic_write(out / f"{sid}.masks", dumps_masks(rd.masks, scene.width, scene.height))
    problems = validate_scene(scene)
    log.info("synth %s: %d points, %d relations", sid, len(scene.points), len(scene.relations))
    return {"id": sid, "seed": cfg.seed, "validator": "pass" if not problems else problems}


def cmd_synth(count: int, run: RunConfig, out_dir: str) -> int:
    if count < 0:
        raise CliError(EXIT_CONFIG, "--count must be >= 0")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise CliError(EXIT_IO, f"cannot create {out}: {e}") from e
    cfg_dict = run.scene.to_dict()
    jobs = [(i, cfg_dict, str(out)) for i in range(count)]
    try:
        entries = _fan_out(_synth_one, jobs, run.workers)
    except InfeasibleConfig as e:
        raise CliError(EXIT_CONFIG, f"scene config infeasible: {e}") from e
    except OSError as e:
        raise CliError(EXIT_IO, f"write failed: {e}") from e
    manifest = {
        "tool": "geodiag",
        "version": __version__,
        "command": "synth",
        "count": count,
        "config": run.to_dict(),
        "config_hash": run.digest(),
        "validator_pass": sum(e["validator"] == "pass" for e in entries),
        "entries": entries,
    }
    _write_json(out / MANIFEST, manifest)
    bad = [e["id"] for e in entries if e["validator"] != "pass"]
    if bad:
        log.warning("validator rejected %d diagram(s): %s", len(bad), ", ".join(bad))
    return EXIT_OK


# ---------------------------------------------------------------------------
# parse


def parse_image(image: np.ndarray, run: RunConfig, scene_id: str = ""):
    """extract -> relate -> formal language. Returns (scene, masks, diagnostics)."""
    ex = extract(image, run.extraction, scene_id=scene_id)
    res = parse_relations(ex.scene, cfg=run.rules)
    scene = replace(
        res.scene,
        propositions=generate(res.scene),
        provenance={"stroke_width": round(float(ex.stroke_width), 3)},
    )
    diagnostics = {
        "unknown_glyphs": list(ex.unknown),
        "unattached_symbols": list(res.unattached_symbols),
        "unattached_texts": list(res.unattached_texts),
    }
    return scene, ex.masks, diagnostics


def _load_image(path: Path) -> np.ndarray:
    try:
        image = read_png(path)
    except (ValueError, OSError) as e:
        raise CliError(EXIT_DECODE, str(e)) from e
    if image.size == 0:
        raise CliError(EXIT_DECODE, f"empty image {path}")
    return image


def _parse_one(job) -> str:
    src, json_out, formal_out, masks_out, run = job
    src = Path(src)
    image = _load_image(src)
    scene, masks, diagnostics = parse_image(image, run, scene_id=src.stem)
    doc = scene_to_dict(scene)
    doc["diagnostics"] = diagnostics
    atomic_write(json_out, json.dumps(doc, ensure_ascii=False, indent=1) + "\n")
    atomic_write(formal_out, "".join(p + "\n" for p in scene.propositions))
    if masks_out:
        atomic_write(masks_out, dumps_masks(masks, scene.width, scene.height))
    log.info("parse %s: %d relations, %d propositions", src.name, len(scene.relations), len(scene.propositions))
    return src.stem


def cmd_parse(
    input_path: str, run: RunConfig, out: str, formal: Optional[str] = None, masks: Optional[str] = None
) -> int:
    """A single PNG writes ``out`` (+ ``formal``, ``masks``); a directory of
    PNGs writes <id>.json, <id>.formal.txt and <id>.masks into ``out``."""
    src = Path(input_path)
    try:
        if src.is_dir():
            dst = Path(out)
            dst.mkdir(parents=True, exist_ok=True)
            jobs = [
                (str(p), dst / f"{p.stem}.json", dst / f"{p.stem}.formal.txt", dst / f"{p.stem}.masks", run)
                for p in sorted(src.glob("*.png"))
            ]
            ids = _fan_out(_parse_one, jobs, run.workers)
            _write_json(
                dst / MANIFEST,
                {
                    "tool": "geodiag",
                    "version": __version__,
                    "command": "parse",
                    "source": str(src),
                    "config": run.to_dict(),
                    "config_hash": run.digest(),
                    "entries": ids,
                },
            )
        else:
            out_p = Path(out)
            formal_p = Path(formal) if formal else out_p.with_suffix(".formal.txt")
            _parse_one((str(src), out_p, formal_p, Path(masks) if masks else None, run))
    except OSError as e:
        raise CliError(EXIT_IO, f"write failed: {e}") from e
    return EXIT_OK


# ---------------------------------------------------------------------------
# eval


def _corpus_ids(d: Path) -> List[str]:
    if not d.is_dir():
        raise CliError(EXIT_MISMATCH, f"not a directory: {d}")
    return sorted(p.stem for p in d.glob("*.json") if p.name != MANIFEST)


def _read_scene(path: Path) -> Scene:
    try:
        return read_scene(path)
    except (OSError, ValueError, GeometryError) as e:
        raise CliError(EXIT_DECODE, f"cannot read {path}: {e}") from e


def _read_masks(path: Path):
    if not path.exists():
        return None
    try:
        return loads_masks(path.read_text(encoding="utf-8"))
    except (OSError, ValueError, KeyError) as e:
        raise CliError(EXIT_DECODE, f"cannot read {path}: {e}") from e


def cmd_eval(pred_dir: str, gt_dir: str, mode: str, report: Optional[str], table: Optional[str] = None) -> int:
    sections = SECTIONS if mode == "all" else (mode,)
    pd, gd = Path(pred_dir), Path(gt_dir)
    pred_ids, gt_ids = _corpus_ids(pd), _corpus_ids(gd)
    missing_pred = sorted(set(gt_ids) - set(pred_ids))
    missing_gt = sorted(set(pred_ids) - set(gt_ids))
    if missing_pred or missing_gt:
        msg = []
        if missing_pred:
            msg.append("missing predictions: " + ", ".join(missing_pred))
        if missing_gt:
            msg.append("missing ground truth: " + ", ".join(missing_gt))
        raise CliError(EXIT_MISMATCH, "; ".join(msg))
    rep = EvalReport()
    for sid in gt_ids:
        pred, gt = _read_scene(pd / f"{sid}.json"), _read_scene(gd / f"{sid}.json")
        pm = gm = None
        if "manner2" in sections:
            pm, gm = _read_masks(pd / f"{sid}.masks"), _read_masks(gd / f"{sid}.masks")
        try:
            rep.add(pred, gt, pm, gm)
        except (ValueError, GeometryError) as e:
            raise CliError(EXIT_DECODE, f"diagram {sid}: {e}") from e
        log.debug("eval %s done", sid)
    body = rep.to_dict(sections)
    body["provenance"] = {"mode": mode, "pred_dir": str(pd), "gt_dir": str(gd), "version": __version__}
    text = rep.to_text(sections)
    try:
        if report:
            _write_json(Path(report), body)
        if table:
            atomic_write(table, text)
    except OSError as e:
        raise CliError(EXIT_IO, f"write failed: {e}") from e
    sys.stdout.write(text)
    return EXIT_OK


# ---------------------------------------------------------------------------
# overlay

PALETTE = {"line": "#d62728", "circle": "#1f77b4", "point": "#2ca02c", "symbol": "#9467bd", "text": "#ff7f0e"}


def _anchor(scene: Scene, pid: str):
    obj = scene.get(pid)
    kind = type(obj).__name__
    if kind == "Point":
        return obj.x, obj.y
    if kind == "Line":
        a, b = scene.get(obj.endpoints[0]), scene.get(obj.endpoints[1])
        return (a.x + b.x) / 2, (a.y + b.y) / 2
    if kind == "Circle":
        return obj.x, obj.y
    return obj.bbox.center


def _fmt(v: float) -> str:
    return f"{float(v):.2f}".rstrip("0").rstrip(".")


def render_overlay(png_bytes: bytes, scene: Scene) -> str:
    """SVG with the raster underneath, fitted primitives as strokes, relation
    edges as dotted connectors and ids as labels."""
    svg = ET.Element(
        "svg",
        xmlns="http://www.w3.org/2000/svg",
        width=str(scene.width),
        height=str(scene.height),
        viewBox=f"0 0 {scene.width} {scene.height}",
    )
    ET.SubElement(
        svg,
        "image",
        href="data:image/png;base64," + base64.b64encode(png_bytes).decode("ascii"),
        x="0",
        y="0",
        width=str(scene.width),
        height=str(scene.height),
    )
    labels: List[tuple] = []

    if scene.relations:
        g = ET.SubElement(svg, "g", {"class": "relations", "stroke": "#555", "stroke-dasharray": "2,3", "fill": "none"})
        for r in scene.relations:
            sx, sy = _anchor(scene, r.subject)
            for o in r.objects:
                ox, oy = _anchor(scene, o)
                ET.SubElement(g, "path", d=f"M{_fmt(sx)},{_fmt(sy)} L{_fmt(ox)},{_fmt(oy)}")
    for l in scene.lines:
        a, b = scene.get(l.endpoints[0]), scene.get(l.endpoints[1])
        attrs = {
            "class": "line",
            "x1": _fmt(a.x),
            "y1": _fmt(a.y),
            "x2": _fmt(b.x),
            "y2": _fmt(b.y),
            "stroke": PALETTE["line"],
            "stroke-width": "1.5",
        }
        if l.style != "solid":
            attrs["stroke-dasharray"] = "6,4"
        ET.SubElement(svg, "line", attrs)
        labels.append((l.id, (a.x + b.x) / 2 + 4, (a.y + b.y) / 2 - 4, "line"))
    for c in scene.circles:
        ET.SubElement(
            svg,
            "circle",
            {
                "class": "circle",
                "cx": _fmt(c.x),
                "cy": _fmt(c.y),
                "r": _fmt(c.radius),
                "fill": "none",
                "stroke": PALETTE["circle"],
                "stroke-width": "1.5",
            },
        )
        labels.append((c.id, c.x + c.radius * 0.7 + 4, c.y - c.radius * 0.7, "circle"))
    for p in scene.points:
        ET.SubElement(
            svg, "circle", {"class": "point", "cx": _fmt(p.x), "cy": _fmt(p.y), "r": "3", "fill": PALETTE["point"]}
        )
        labels.append((p.id, p.x + 5, p.y - 5, "point"))
    for kind, items in (("symbol", scene.symbols), ("text", scene.texts)):
        for s in items:
            b = s.bbox
            ET.SubElement(
                svg,
                "rect",
                {
                    "class": kind,
                    "x": _fmt(b.x1),
                    "y": _fmt(b.y1),
                    "width": _fmt(b.x2 - b.x1),
                    "height": _fmt(b.y2 - b.y1),
                    "fill": "none",
                    "stroke": PALETTE[kind],
                },
            )
            labels.append((s.id, b.x2 + 2, b.y1, kind))
    for text, x, y, kind in labels:
        t = ET.SubElement(
            svg, "text", {"class": f"label {kind}", "x": _fmt(x), "y": _fmt(y), "font-size": "10", "fill": PALETTE[kind]}
        )
        t.text = text
    return ET.tostring(svg, encoding="unicode") + "\n"


def cmd_overlay(input_png: str, parsed_json: str, out_svg: str) -> int:
    src = Path(input_png)
    _load_image(src)
    try:
        scene = read_scene(parsed_json)
    except (OSError, ValueError, GeometryError) as e:
        raise CliError(EXIT_DECODE, f"cannot read {parsed_json}: {e}") from e
    try:
        doc = render_overlay(src.read_bytes(), scene)
    except GeometryError as e:
        raise CliError(EXIT_DECODE, f"{parsed_json}: {e}") from e
    try:
        atomic_write(out_svg, doc)
    except OSError as e:
        raise CliError(EXIT_IO, f"write failed: {e}") from e
    return EXIT_OK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="geodiag", description="Parse geometry diagrams and score the parses.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, workers=True):
        p.add_argument("--config", help="JSON file with scene / extraction / rules sections")
        p.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override one setting")
        if workers:
            p.add_argument("--workers", type=int, default=None, help="worker processes (default: all cores)")

    p = sub.add_parser("synth", help="render a synthetic corpus with ground truth")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    common(p)

    p = sub.add_parser("parse", help="parse a PNG (or a directory of PNGs)")
    p.add_argument("input")
    p.add_argument("--out", required=True, help="parsed JSON file, or output directory")
    p.add_argument("--formal", help="formal-language output (single-image mode)")
    p.add_argument("--masks", help="predicted mask sidecar (single-image mode)")
    common(p)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    p.add_argument("pred_dir")
    p.add_argument("gt_dir")
    p.add_argument("--mode", choices=("manner1", "manner2", "relations", "language", "all"), default="all")
    p.add_argument("--report", help="EvalReport JSON path")
    p.add_argument("--table", help="also write the text table here")

    p = sub.add_parser("overlay", help="draw a parse on top of its image as SVG")
    p.add_argument("input")
    p.add_argument("parsed")
    p.add_argument("--out", required=True)
    return ap


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        if args.command == "synth":
            run = load_run_config("synth", args.config, args.set, args.seed, args.workers)
            return cmd_synth(args.count, run, args.out)
        if args.command == "parse":
            run = load_run_config("parse", args.config, args.set, None, args.workers)
            return cmd_parse(args.input, run, args.out, args.formal, args.masks)
        if args.command == "eval":
            return cmd_eval(args.pred_dir, args.gt_dir, args.mode, args.report, args.table)
        return cmd_overlay(args.input, args.parsed, args.out)
    except CliError as e:
        print(f"geodiag: error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
