"""Write a grid-city street file, a perturbed ground truth and oracle masks.

    python3 scripts/make_synthetic_city.py out/ --blocks 3
    pednet pipeline out/streets.geojson --gt out/truth.geojson --masks out/masks --out-dir out/run
"""

import argparse
import json
from pathlib import Path

import numpy as np

from pednet.net import parse_street_network
from pednet.pedestrianfer import HypothesisConfig, build_hypothesis
from pednet.raster import bbox_around, frame_for_bbox, make_probability_rasters, write_class_raster
from pednet.serialize import graph_to_geojson, write_json
from pednet.synthetic import grid_city, perturb_ground_truth


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("out_dir")
    ap.add_argument("--blocks", type=int, default=3)
    ap.add_argument("--block", type=float, default=100.0)
    ap.add_argument("--delete", type=float, default=0.1)
    ap.add_argument("--jitter", type=float, default=5.0)
    ap.add_argument("--res", type=float, default=0.5)
    ap.add_argument("--blur", type=float, default=4.0)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    doc = grid_city(args.blocks, args.blocks, args.block)
    (out / "streets.geojson").write_text(json.dumps(doc, indent=1) + "\n")
    hypo = build_hypothesis(parse_street_network(doc), HypothesisConfig(regime="full"))
    truth, _ = perturb_ground_truth(hypo, args.delete, args.jitter, args.seed)
    write_json(graph_to_geojson(truth), out / "truth.geojson")
    pts = np.vstack([n.xy for n in hypo.nodes.values()])
    frame = frame_for_bbox(bbox_around(hypo.projection, pts.min(axis=0) - 30, pts.max(axis=0) + 30), args.res)
    for r in make_probability_rasters(truth, frame=frame, blur_sigma=args.blur).values():
        print(write_class_raster(r, out / "masks"))


if __name__ == "__main__":
    main()
