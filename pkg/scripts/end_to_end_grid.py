"""Hypothesis vs refined F1 against a perturbed grid city, swept over the prune threshold.

    python3 scripts/end_to_end_grid.py --thresholds 0 0.1 0.3 0.5
"""

import argparse
import time

import numpy as np

from pednet.eval import match_edges
from pednet.net import parse_street_network
from pednet.pedestrianfer import HypothesisConfig, build_hypothesis
from pednet.raster import bbox_around, frame_for_bbox, make_probability_rasters
from pednet.refine import RefineParams, refine_graph
from pednet.synthetic import grid_city, perturb_ground_truth


def fmt(rep):
    return "  ".join(f"{c}: P={m.precision:.3f} R={m.recall:.3f} F1={m.f1:.3f}" for c, m in sorted(rep.classes.items()))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--blocks", type=int, default=5)
    ap.add_argument("--offset", type=float, default=10.0)
    ap.add_argument("--res", type=float, default=0.25)
    ap.add_argument("--blur", type=float, default=4.0)
    ap.add_argument("--delete", type=float, default=0.1)
    ap.add_argument("--jitter", type=float, default=5.0)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--thresholds", type=float, nargs="+", default=[0.0, 0.1, 0.3, 0.5])
    args = ap.parse_args()

    streets = parse_street_network(grid_city(args.blocks, args.blocks, tags={"sidewalk_offset": args.offset}))
    hypo = build_hypothesis(streets, HypothesisConfig(regime="full"))
    truth, _ = perturb_ground_truth(hypo, args.delete, args.jitter, args.seed)
    pts = np.vstack([n.xy for n in hypo.nodes.values()])
    frame = frame_for_bbox(bbox_around(hypo.projection, pts.min(axis=0) - 30, pts.max(axis=0) + 30), args.res)
    rasters = make_probability_rasters(truth, frame=frame, blur_sigma=args.blur)
    print(f"corners: hypothesis {len(hypo.corners())}, truth {len(truth.corners())}")
    print(f"hypothesis           {fmt(match_edges(hypo, truth))}")
    for th in args.thresholds:
        t0 = time.perf_counter()
        res = refine_graph(hypo, rasters, RefineParams(seed=args.seed, prune_threshold=th), details=True)
        wrong = len(set(res.pruned) & set(truth.corners()))
        print(
            f"refined th={th:<4} {fmt(match_edges(res.graph, truth))}  "
            f"pruned {len(res.pruned)} ({wrong} present in truth)  {time.perf_counter() - t0:.1f}s"
        )


if __name__ == "__main__":
    main()
