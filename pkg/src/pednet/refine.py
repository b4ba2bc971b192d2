"""Corner refinement against a corner-bulb probability raster.

Every corner (the curb and sidewalk nodes clustered around one street
intersection sector) is treated as a polygon in raster pixel space. Corners
whose mean probability is below a threshold are pruned; the rest are moved by
the affine warp that maximises the probability mass under the polygon, found
with SPSA.
"""

from __future__ import annotations

import logging
import math
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from shapely.geometry import LineString, MultiPoint, Point

from .errors import MissingClassRaster, PednetError
from .geo import AffineParams, PolygonM, apply_affine, buffer_geometry, cumulative_length, signed_area
from .graph import PedGraph, remove_corner
from .raster import ClassRaster, polygon_mask, polygon_spans, row_prefix_sums

log = logging.getLogger(__name__)

FALLBACK_RADIUS_PX = 2.0


@dataclass
class CornerSet:
    corner_id: str
    node_ids: list[int]
    X: np.ndarray  # (n, 2) pixel coordinates (col, row)

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(-1, 2)
        if len(self.X) < 1 or not np.all(np.isfinite(self.X)):
            raise ValueError("a corner needs at least one finite point")


@dataclass
class ProbabilitySample:
    p: np.ndarray

    @property
    def m(self) -> int:
        return len(self.p)


@dataclass
class RefineParams:
    iterations: int = 300
    a: float | None = None  # None: calibrated so the first step is about ``first_step`` px
    c: float = 1.0
    A_stab: float | None = None  # None: iterations / 10
    alpha: float = 0.602
    gamma: float = 0.101
    prune_threshold: float = 0.5
    det_bounds: tuple[float, float] = (0.25, 4.0)
    first_step: float = 2.0
    calibration_draws: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if (self.a is not None and not self.a > 0) or not self.c > 0:
            raise ValueError("SPSA gains must be positive")
        if not 0 < self.gamma < self.alpha <= 1:
            raise ValueError("need 0 < gamma < alpha <= 1")
        if not 0 <= self.prune_threshold <= 1:
            raise ValueError("prune threshold must lie in [0, 1]")
        lo, hi = self.det_bounds
        if not 0 < lo <= 1 <= hi:
            raise ValueError("det bounds must bracket 1 and be positive")

    @property
    def stability(self) -> float:
        return self.iterations / 10 if self.A_stab is None else self.A_stab


# --------------------------------------------------------------------------
# polygon and objective


def _angular_order(X: np.ndarray) -> np.ndarray:
    ctr = X.mean(axis=0)
    d = X - ctr
    ang = np.arctan2(d[:, 1], d[:, 0])
    return np.lexsort((np.hypot(d[:, 0], d[:, 1]), ang))


def _polygon_from(X: np.ndarray, order: np.ndarray | None) -> PolygonM:
    if len(X) >= 3:
        ring = X[order if order is not None else _angular_order(X)]
        if abs(signed_area(ring)) > 1e-9:
            return PolygonM(ring)
    geom = Point(X[0]) if len(X) == 1 else (LineString(X) if len(X) == 2 else MultiPoint(X).convex_hull)
    out = geom.buffer(FALLBACK_RADIUS_PX, quad_segs=16)
    return PolygonM.from_shapely(out)


def corner_polygon(cs: CornerSet) -> PolygonM:
    """Closed polygon through the corner nodes, in angular order about their centroid.

    Fewer than three points (or collinear ones) fall back to a 2 px buffer.
    """
    return _polygon_from(cs.X, None)


def sample_polygon(raster: ClassRaster, poly: PolygonM) -> ProbabilitySample:
    """Probabilities of the in-bounds pixels whose centres fall inside ``poly``."""
    mask, r0, c0 = polygon_mask(poly.rings, raster.height, raster.width)
    if mask.size == 0:
        return ProbabilitySample(np.zeros(0))
    sub = raster.values[r0 : r0 + mask.shape[0], c0 : c0 + mask.shape[1]]
    return ProbabilitySample(sub[mask])


def objective_g(sample: ProbabilitySample) -> float:
    return float(np.sum(sample.p))


def mean_mu(sample: ProbabilitySample) -> float:
    return float(np.mean(sample.p)) if sample.m else 0.0


# --------------------------------------------------------------------------
# SPSA


def _prefix(raster: ClassRaster) -> np.ndarray:
    # cached per raster; rasters are treated as read-only once built
    cached = raster.__dict__.get("_prefix")
    if cached is None:
        cached = row_prefix_sums(raster.values)
        raster.__dict__["_prefix"] = cached
    return cached


class _Problem:
    """Objective over a centred, scale-normalised affine parameter vector ``u``.

    ``A = I + U / s`` and ``t`` are in pixels about the corner centroid, so a
    unit change of any entry moves the points by roughly one pixel.
    """

    def __init__(self, raster: ClassRaster, X: np.ndarray, det_bounds):
        self.raster = raster
        self.X = X
        self.ctr = X.mean(axis=0)
        self.Xc = X - self.ctr
        self.s = max(float(np.sqrt(np.mean(np.sum(self.Xc**2, axis=1)))), 1.0)
        self.order = _angular_order(X) if len(X) >= 3 else None
        self.det_lo, self.det_hi = det_bounds
        self.prefix = _prefix(raster)
        self.shift = np.roll(np.arange(len(X)), -1)

    def split(self, u):
        A = np.eye(2) + u[:4].reshape(2, 2) / self.s
        return A, u[4:]

    def warp(self, u) -> np.ndarray:
        A, t = self.split(u)
        return self.Xc @ A.T + t + self.ctr

    def g(self, u) -> float:
        pts = self.warp(u)
        if self.order is not None:
            ring = pts[self.order]
            nxt = ring[self.shift]
            if abs(np.dot(ring[:, 0], nxt[:, 1]) - np.dot(ring[:, 1], nxt[:, 0])) > 2e-9:
                rows, ca, cb = polygon_spans([ring], self.raster.height, self.raster.width)
                return float(np.sum(self.prefix[rows, cb] - self.prefix[rows, ca]))
        return objective_g(sample_polygon(self.raster, _polygon_from(pts, self.order)))

    def project(self, u, prev):
        A, t = self.split(u)
        det = float(np.linalg.det(A))
        if det <= 0:
            A = self.split(prev)[0]
        elif det < self.det_lo or det > self.det_hi:
            A = A * math.sqrt(min(max(det, self.det_lo), self.det_hi) / det)
        pts = self.Xc @ A.T + self.ctr
        W, H = self.raster.width, self.raster.height
        t = np.array(t, dtype=float)
        eps = 1e-6
        for k, size in ((0, W), (1, H)):
            lo, hi = pts[:, k].min() + t[k], pts[:, k].max() + t[k]
            if hi - lo >= size - 2 * eps:
                return prev.copy()
            if lo <= eps:
                t[k] += eps - lo + eps
            elif hi >= size - eps:
                t[k] -= hi - (size - eps) + eps
        return np.concatenate([((A - np.eye(2)) * self.s).ravel(), t])

    def to_affine(self, u) -> AffineParams:
        # x' = A (x - m) + t + m  ==  A x + (t + m - A m)
        A, t = self.split(u)
        tt = t + self.ctr - A @ self.ctr
        return AffineParams(float(A[0, 0]), float(A[0, 1]), float(A[1, 0]), float(A[1, 1]), float(tt[0]), float(tt[1]))


def corner_rng(seed: int, corner_id: str) -> np.random.Generator:
    return np.random.default_rng([int(seed) & 0xFFFFFFFF, zlib.crc32(str(corner_id).encode())])


def spsa_optimize(
    raster: ClassRaster,
    cs: CornerSet,
    params: RefineParams | None = None,
    rng: np.random.Generator | None = None,
) -> AffineParams:
    """Affine warp maximising the probability mass under the corner polygon.

    Returns the best feasible iterate seen, so the result never scores below
    the identity. A flat start (no gradient signal) returns the identity.
    """
    p = params or RefineParams()
    rng = rng or corner_rng(p.seed, cs.corner_id)
    prob = _Problem(raster, cs.X, p.det_bounds)
    u = prob.project(np.zeros(6), np.zeros(6))
    if not np.array_equal(u, np.zeros(6)):
        # the corner starts outside the raster bounds: nothing sensible to fit
        return AffineParams.identity()
    best_u, best_g = u.copy(), prob.g(u)
    A_stab = p.stability

    def grad(theta, ck):
        delta = rng.choice(np.array([-1.0, 1.0]), size=6)
        yp = -prob.g(theta + ck * delta)
        ym = -prob.g(theta - ck * delta)
        return (yp - ym) / (2 * ck * delta)

    a = p.a
    if a is None:
        est = np.mean([grad(u, p.c) for _ in range(max(1, p.calibration_draws))], axis=0)
        mag = float(np.max(np.abs(est)))
        if mag == 0:
            return AffineParams.identity()
        a = p.first_step * (A_stab + 1) ** p.alpha / mag

    for k in range(p.iterations):
        ak = a / (A_stab + k + 1) ** p.alpha
        ck = p.c / (k + 1) ** p.gamma
        gk = grad(u, ck)
        u = prob.project(u - ak * gk, u)
        gu = prob.g(u)
        if gu > best_g:
            best_u, best_g = u.copy(), gu
    return prob.to_affine(best_u)


# --------------------------------------------------------------------------
# graph-level operations


def corner_sets(g: PedGraph, raster: ClassRaster) -> list[CornerSet]:
    out = []
    for cid, members in sorted(g.corners().items()):
        xy = np.array([g.nodes[n].xy for n in members])
        out.append(CornerSet(cid, list(members), raster.frame.to_px(xy, g.projection)))
    return out


def corner_mu(g: PedGraph, raster: ClassRaster) -> dict[str, float]:
    return {cs.corner_id: mean_mu(sample_polygon(raster, corner_polygon(cs))) for cs in corner_sets(g, raster)}


def prune_false_corners(g: PedGraph, raster: ClassRaster, threshold: float = 0.5) -> PedGraph:
    """Copy of ``g`` without the corners whose mean probability is below ``threshold``."""
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must lie in [0, 1]")
    out = g.copy()
    corners = out.corners()
    for cid, mu in sorted(corner_mu(g, raster).items()):
        if mu < threshold:
            remove_corner(out, [n for n in corners[cid] if n in out.nodes])
    return out


def _edge_mean(raster: ClassRaster, geometry: np.ndarray, halfwidth: float, projection) -> float:
    poly = buffer_geometry(geometry, halfwidth)
    rings = [raster.frame.to_px(r, projection) for r in poly.rings]
    return mean_mu(sample_polygon(raster, PolygonM(rings[0], rings[1:])))


def edge_confidence(g: PedGraph, rasters: dict[str, ClassRaster], halfwidth: float = 1.5) -> PedGraph:
    """Copy of ``g`` with each edge's mean class probability over its buffered footprint."""
    out = g.copy()
    for eid in sorted(out.edges):
        e = out.edges[eid]
        cls = "sidewalk" if e.kind == "sidewalk" else "crossing"
        if cls not in rasters:
            raise MissingClassRaster(f"no {cls} raster for {e.kind} edges")
        e.confidence = _edge_mean(rasters[cls], e.geometry, halfwidth, g.projection)
    return out


def _displace(geom: np.ndarray, du: np.ndarray, dv: np.ndarray) -> np.ndarray:
    s = cumulative_length(geom)
    w = (s / s[-1])[:, None] if s[-1] > 0 else np.zeros((len(geom), 1))
    return geom + du * (1 - w) + dv * w


@dataclass
class RefineResult:
    graph: PedGraph
    transforms: dict[str, AffineParams] = field(default_factory=dict)
    pruned: list[str] = field(default_factory=list)
    scores: dict[str, tuple[float, float]] = field(default_factory=dict)  # (g identity, g final)


def _optimize_one(args):
    raster, cs, params = args
    prob = _Problem(raster, cs.X, params.det_bounds)
    theta = spsa_optimize(raster, cs, params)
    g0 = prob.g(np.zeros(6))
    g1 = objective_g(sample_polygon(raster, _polygon_from(apply_affine(theta, cs.X), prob.order)))
    return cs.corner_id, theta, g0, g1


def refine_graph(
    hypo: PedGraph,
    rasters: dict[str, ClassRaster],
    params: RefineParams | None = None,
    halfwidth: float = 1.5,
    jobs: int = 1,
    details: bool = False,
):
    """Prune, then warp every remaining corner and rebuild edges from the hypothesis.

    Edge geometry follows its end nodes: interior vertices are displaced by the
    arc-length interpolation of the two endpoint displacements.
    """
    p = params or RefineParams()
    for cls in ("corner_bulb", "sidewalk", "crossing"):
        if cls not in rasters:
            raise MissingClassRaster(f"no {cls} raster")
    bulb = rasters["corner_bulb"]
    res = RefineResult(prune_false_corners(hypo, bulb, p.prune_threshold))
    g = res.graph
    kept = set(g.corners())
    res.pruned = sorted(set(hypo.corners()) - kept)
    work = [(bulb, cs, p) for cs in corner_sets(g, bulb)]
    if jobs > 1 and len(work) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_optimize_one, work, chunksize=max(1, len(work) // (4 * jobs))))
    else:
        results = [_optimize_one(w) for w in work]

    moved: dict[int, np.ndarray] = {}
    for (_, cs, _), (cid, theta, g0, g1) in zip(work, results):
        res.transforms[cid] = theta
        res.scores[cid] = (g0, g1)
        try:
            new_px = apply_affine(theta, cs.X)
            new_xy = bulb.frame.to_m(new_px, g.projection)
        except PednetError as exc:
            g.warnings.append(f"corner {cid}: {type(exc).__name__}: {exc}")
            continue
        for n, xy in zip(cs.node_ids, new_xy):
            moved[n] = xy - g.nodes[n].xy
    for eid in sorted(g.edges):
        e = g.edges[eid]
        du, dv = moved.get(e.u), moved.get(e.v)
        if du is None and dv is None:
            continue
        e.geometry = _displace(e.geometry, du if du is not None else 0.0, dv if dv is not None else 0.0)
    for n, d in moved.items():
        g.nodes[n].xy = g.nodes[n].xy + d
    for eid, e in g.edges.items():
        e.geometry[0], e.geometry[-1] = g.nodes[e.u].xy, g.nodes[e.v].xy
    res.graph = edge_confidence(g, rasters, halfwidth)
    return res if details else res.graph
