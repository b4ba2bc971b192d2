"""Synthetic street grids and perturbed ground truth for experiments and tests."""

from __future__ import annotations

import numpy as np

from .geo import LocalProjection
from .graph import PedGraph, remove_corner

DEFAULT_ORIGIN = (-122.3321, 47.6062)


def grid_city(
    nx_blocks: int = 5,
    ny_blocks: int = 5,
    block: float = 100.0,
    origin: tuple[float, float] = DEFAULT_ORIGIN,
    tags: dict | None = None,
) -> dict:
    """GeoJSON street grid; each street is one long LineString through its intersections."""
    proj = LocalProjection(origin)
    w, h = nx_blocks * block, ny_blocks * block
    xs = np.arange(nx_blocks + 1) * block - w / 2
    ys = np.arange(ny_blocks + 1) * block - h / 2
    feats = []

    def add(coords_m, name):
        ll = proj.inverse_coords(np.asarray(coords_m, dtype=float))
        props = {"highway": "residential", "name": name, **(tags or {})}
        feats.append(
            {
                "type": "Feature",
                "properties": props,
                "geometry": {"type": "LineString", "coordinates": ll.tolist()},
            }
        )

    for j, y in enumerate(ys):
        add([(x, y) for x in xs], f"street {j}")
    for i, x in enumerate(xs):
        add([(x, y) for y in ys], f"avenue {i}")
    return {"type": "FeatureCollection", "features": feats}


def perturb_ground_truth(
    hypo: PedGraph,
    delete_frac: float = 0.1,
    jitter: float = 5.0,
    seed: int = 0,
) -> tuple[PedGraph, dict[str, np.ndarray]]:
    """Delete a fraction of corners and rigidly shift each remaining corner by ``jitter`` meters.

    Returns the perturbed graph and the applied shift per surviving corner.
    """
    rng = np.random.default_rng(seed)
    gt = hypo.copy()
    corners = gt.corners()
    ids = sorted(corners)
    n_del = int(round(delete_frac * len(ids)))
    deleted = set(rng.choice(ids, size=n_del, replace=False).tolist()) if n_del else set()
    shifts: dict[str, np.ndarray] = {}
    for cid in ids:
        ang = rng.uniform(0, 2 * np.pi)
        shifts[cid] = jitter * np.array([np.cos(ang), np.sin(ang)])
    for cid in sorted(deleted):
        remove_corner(gt, [n for n in corners[cid] if n in gt.nodes])
        shifts.pop(cid)
    for cid, members in gt.corners().items():
        for n in members:
            gt.move_node(n, gt.nodes[n].xy + shifts[cid])
    return gt, shifts
