"""Command line: infer, rasterize, refine, eval, lint and the chained pipeline."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .config import PipelineConfig, load_config
from .errors import PednetError
from .eval import instance_corner_metrics, lint_graph, match_edges, pixel_metrics
from .geo import LocalProjection
from .graph import PedGraph
from .net import default_origin, parse_street_network
from .pedestrianfer import build_hypothesis
from .raster import (
    annotations_from_geojson,
    bbox_around,
    frame_for_bbox,
    make_probability_rasters,
    rasterize_annotations,
    read_class_rasters,
    read_label_raster,
    write_class_raster,
    write_label_raster,
)
from .refine import refine_graph
from .serialize import dumps, geojson_to_graph, graph_to_geojson, read_json, write_json
from .synthetic import perturb_ground_truth
from .tiles import fetch_tiles, tiles_for_bbox

log = logging.getLogger("pednet")


class CommandError(Exception):
    pass


# --------------------------------------------------------------------------
# helpers


def _config(args) -> PipelineConfig:
    overrides = list(args.set or [])
    if args.seed is not None:
        overrides.append(f"seed={args.seed}")
    if args.jobs is not None:
        overrides.append(f"jobs={args.jobs}")
    return load_config(args.config, overrides)


def _projection(cfg: PipelineConfig, doc: dict) -> LocalProjection:
    origin = cfg.origin if cfg.origin is not None else default_origin(doc)
    return LocalProjection((float(origin[0]), float(origin[1])))


def _read_graph(path, ids_out=None) -> PedGraph:
    return geojson_to_graph(read_json(path), ids_out=ids_out)


def _infer(cfg: PipelineConfig, streets_doc: dict):
    streets = parse_street_network(
        streets_doc,
        _projection(cfg, streets_doc),
        highway_include=cfg.hypothesis.highway_include,
        planarize=cfg.hypothesis.planarize,
    )
    hypo = build_hypothesis(streets, cfg.hypothesis.build())
    for w in hypo.warnings:
        print(f"warning: {w}", file=sys.stderr)
    return streets, hypo


def _graph_frame(cfg: PipelineConfig, *graphs: PedGraph):
    pts = np.vstack([n.xy for g in graphs for n in g.nodes.values()] or [np.zeros((1, 2))])
    proj = graphs[0].projection
    m = cfg.raster.margin
    bbox = bbox_around(proj, pts.min(axis=0) - m, pts.max(axis=0) + m)
    return frame_for_bbox(bbox, cfg.raster.resolution)


def _lint_lines(g: PedGraph, streets, cfg: PipelineConfig, ids: dict | None = None) -> str:
    out = []
    for v in lint_graph(g, streets, cfg.eval.d_road):
        rec = v.to_json()
        if ids is not None:
            rec["id"] = ids.get((v.element, v.feature_id), rec["id"])
        out.append(json.dumps(rec, sort_keys=True))
    return "".join(line + "\n" for line in out)


def _write_text(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".partial")
    tmp.write_text(text)
    tmp.replace(path)
    return path


def _sha256(path: Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


# --------------------------------------------------------------------------
# commands


def cmd_infer(args) -> int:
    cfg = _config(args)
    _, hypo = _infer(cfg, read_json(args.streets))
    out = write_json(graph_to_geojson(hypo), Path(args.out_dir) / "hypothesis.geojson")
    print(out)
    return 0


def cmd_rasterize(args) -> int:
    cfg = _config(args)
    out_dir = Path(args.out_dir)
    doc = read_json(args.input)
    style = cfg.raster.build()
    if args.probabilities:
        g = geojson_to_graph(doc)
        frame = frame_for_bbox(_parse_bbox(args.bbox), cfg.raster.resolution) if args.bbox else _graph_frame(cfg, g)
        rasters = make_probability_rasters(g, style=style, blur_sigma=cfg.raster.blur_sigma, frame=frame)
        for cls in sorted(rasters):
            print(write_class_raster(rasters[cls], out_dir))
    else:
        proj = _projection(cfg, {"type": "FeatureCollection", "features": []}) if cfg.origin else None
        if proj is None:
            proj = LocalProjection(_doc_centre(doc))
        anns = annotations_from_geojson(doc, proj)
        if args.bbox:
            bbox = _parse_bbox(args.bbox)
        else:
            pts = np.vstack([np.asarray(a.geometry[0] if a.kind == "polygon" else a.geometry).reshape(-1, 2) for a in anns] or [np.zeros((1, 2))])
            m = cfg.raster.margin
            bbox = bbox_around(proj, pts.min(axis=0) - m, pts.max(axis=0) + m)
        labels = rasterize_annotations(anns, bbox, cfg.raster.resolution, style, projection=proj)
        print(write_label_raster(labels, out_dir / "labels.png"))
    if args.fetch_tiles:
        if not cfg.tiles.template:
            raise CommandError("tiles.template is not configured")
        frame_bbox = _parse_bbox(args.bbox) if args.bbox else None
        if frame_bbox is None:
            raise CommandError("--fetch-tiles needs --bbox")
        paths = fetch_tiles(
            tiles_for_bbox(frame_bbox, cfg.tiles.zoom),
            cfg.tiles.template,
            cfg.tiles.cache_dir,
            offline=args.offline,
            max_workers=cfg.tiles.max_workers,
        )
        for p in paths:
            print(p)
    return 0


def _doc_centre(doc: dict) -> tuple[float, float]:
    pts = []

    def walk(c):
        if isinstance(c, (list, tuple)) and c and isinstance(c[0], (int, float)):
            pts.append(c[:2])
        elif isinstance(c, (list, tuple)):
            for x in c:
                walk(x)

    for f in doc.get("features") or []:
        walk((f.get("geometry") or {}).get("coordinates"))
    if not pts:
        raise CommandError("no coordinates to rasterize; pass --bbox")
    arr = np.array(pts, dtype=float)
    return ((arr[:, 0].min() + arr[:, 0].max()) / 2, (arr[:, 1].min() + arr[:, 1].max()) / 2)


def _parse_bbox(text: str):
    try:
        vals = tuple(float(v) for v in text.split(","))
    except ValueError:
        raise CommandError(f"bad bbox {text!r}") from None
    if len(vals) != 4:
        raise CommandError("bbox needs four values w,s,e,n")
    return vals


def cmd_refine(args) -> int:
    cfg = _config(args)
    hypo = _read_graph(args.hypothesis)
    rasters = read_class_rasters(args.masks)
    refined = refine_graph(
        hypo, rasters, cfg.refine.build(cfg.seed), cfg.refine.confidence_halfwidth, jobs=cfg.jobs
    )
    for w in refined.warnings:
        print(f"warning: {w}", file=sys.stderr)
    print(write_json(graph_to_geojson(refined), Path(args.out_dir) / "refined.geojson"))
    return 0


def cmd_eval(args) -> int:
    cfg = _config(args)
    pred, gt = _read_graph(args.pred), _read_graph(args.gt)
    rep = match_edges(pred, gt, cfg.eval.tol, cfg.eval.coverage, cfg.eval.step)
    out_dir = Path(args.out_dir)
    print(write_json(rep.to_json(), out_dir / "report.json"))
    if args.pred_labels or args.gt_labels:
        if not (args.pred_labels and args.gt_labels):
            raise CommandError("pixel metrics need both --pred-labels and --gt-labels")
        pl, gl = read_label_raster(args.pred_labels), read_label_raster(args.gt_labels)
        px = pixel_metrics(pl, gl).to_json()
        px["corner_instances"] = instance_corner_metrics(pl, gl, cfg.eval.iou_thresh).to_json()
        print(write_json(px, out_dir / "pixel_report.json"))
    return 0


def cmd_lint(args) -> int:
    cfg = _config(args)
    ids: dict = {}
    g = _read_graph(args.graph, ids)
    streets = None
    if args.streets:
        doc = read_json(args.streets)
        streets = parse_street_network(doc, g.projection, highway_include=cfg.hypothesis.highway_include)
    text = _lint_lines(g, streets, cfg, ids)
    _write_text(Path(args.out_dir) / "lint.jsonl", text)
    sys.stdout.write(text)
    return 0


def cmd_pipeline(args) -> int:
    """infer -> masks (given or synthetic) -> refine -> eval, with a manifest."""
    cfg = _config(args)
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"config": cfg.to_dict(), "inputs": {}, "outputs": {}, "stages": []}
    manifest["inputs"]["streets"] = _sha256(Path(args.streets))

    def record(name: str, path: Path):
        manifest["outputs"][name] = _sha256(path)

    try:
        streets, hypo = _infer(cfg, read_json(args.streets))
        record("hypothesis.geojson", write_json(graph_to_geojson(hypo), out / "hypothesis.geojson"))
        manifest["stages"].append("infer")

        if args.gt:
            manifest["inputs"]["gt"] = _sha256(Path(args.gt))
            gt = _read_graph(args.gt)
            gt = geojson_to_graph(graph_to_geojson(gt), projection=hypo.projection)
        else:
            gt, _ = perturb_ground_truth(hypo, cfg.synthetic.delete_frac, cfg.synthetic.jitter, cfg.seed)
            record("ground_truth.geojson", write_json(graph_to_geojson(gt), out / "ground_truth.geojson"))
        if args.masks:
            rasters = read_class_rasters(args.masks)
            manifest["inputs"]["masks"] = {cls: _sha256(Path(args.masks) / f"{cls}.png") for cls in sorted(rasters)}
        else:
            frame = _graph_frame(cfg, hypo, gt)
            rasters = make_probability_rasters(gt, style=cfg.raster.build(), blur_sigma=cfg.raster.blur_sigma, frame=frame)
            for cls in sorted(rasters):
                png = write_class_raster(rasters[cls], out / "masks")
                record(f"masks/{cls}.png", png)
                record(f"masks/{cls}.json", png.with_suffix(".json"))
        manifest["stages"].append("masks")

        refined = refine_graph(hypo, rasters, cfg.refine.build(cfg.seed), cfg.refine.confidence_halfwidth, jobs=cfg.jobs)
        record("refined.geojson", write_json(graph_to_geojson(refined), out / "refined.geojson"))
        manifest["stages"].append("refine")

        ev = cfg.eval
        rep = match_edges(refined, gt, ev.tol, ev.coverage, ev.step)
        base = match_edges(hypo, gt, ev.tol, ev.coverage, ev.step)
        record("report.json", write_json(rep.to_json(), out / "report.json"))
        record("report_hypothesis.json", write_json(base.to_json(), out / "report_hypothesis.json"))
        ids: dict = {}
        relinted = geojson_to_graph(graph_to_geojson(refined), ids_out=ids)
        record("lint.jsonl", _write_text(out / "lint.jsonl", _lint_lines(relinted, streets, cfg, ids)))
        manifest["stages"].append("eval")
        manifest["warnings"] = list(hypo.warnings) + list(refined.warnings)
    except Exception as exc:
        manifest["error"] = f"{type(exc).__name__}: {exc}"
        (out / "manifest.json.partial").write_text(dumps(manifest))
        raise
    write_json(manifest, out / "manifest.json")
    print(out / "manifest.json")
    return 0


# --------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--out-dir", default=".", help="directory for outputs")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--jobs", type=int, default=None, help="worker processes for per-corner work")
    common.add_argument("--offline", action="store_true", help="serve tiles from the cache only")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="pednet", description="Pedestrian network inference from street centerlines.")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("infer", parents=[common], help="hypothesise sidewalks and crossings")
    s.add_argument("streets")
    s.set_defaults(func=cmd_infer)

    s = sub.add_parser("rasterize", parents=[common], help="annotations to label or probability rasters")
    s.add_argument("input")
    s.add_argument("--bbox", help="w,s,e,n in degrees")
    s.add_argument("--probabilities", action="store_true", help="render per-class probability rasters from a graph")
    s.add_argument("--fetch-tiles", action="store_true", help="also fetch imagery tiles covering --bbox")
    s.set_defaults(func=cmd_rasterize)

    s = sub.add_parser("refine", parents=[common], help="refine a hypothesis against class rasters")
    s.add_argument("hypothesis")
    s.add_argument("--masks", required=True, help="directory with <class>.png + .json rasters")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("eval", parents=[common], help="score a graph against ground truth")
    s.add_argument("pred")
    s.add_argument("gt")
    s.add_argument("--pred-labels")
    s.add_argument("--gt-labels")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("lint", parents=[common], help="report annotation errors as JSON lines")
    s.add_argument("graph")
    s.add_argument("--streets")
    s.set_defaults(func=cmd_lint)

    s = sub.add_parser("pipeline", parents=[common], help="infer, refine and evaluate end to end")
    s.add_argument("streets")
    s.add_argument("--masks")
    s.add_argument("--gt")
    s.set_defaults(func=cmd_pipeline)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (PednetError, CommandError, OSError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
