"""Hypothesised pedestrian network from street centerlines.

Three stages: sidewalks are drawn by offsetting every block (face) of the
planar street graph, crossings are chosen per intersection arm by a weighted
cost over candidate lines, and each crossing is split into link / crossing /
link with two curb nodes.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (
    DegenerateBlock,
    EmptyCandidates,
    InvalidFractions,
    NoCandidates,
    PednetError,
)
from .geo import (
    cumulative_length,
    dedupe_vertices,
    interpolate,
    line_length,
    nearest_on_segments,
    offset_is_collapsed,
    offset_path,
    signed_area,
    substring,
    tangent_at,
)
from .graph import PedGraph
from .net import StreetNetwork, bearing, half_block_extents, intersections

log = logging.getLogger(__name__)


# --------------------------------------------------------------------------
# blocks


@dataclass
class Block:
    darts: list[tuple[int, bool]]  # (edge id, forward)
    nodes: list[int]  # start node of each dart
    ring: np.ndarray  # concatenated dart geometry, each vertex once
    starts: list[int]  # ring index where each dart begins
    is_outer: bool = False

    @property
    def signed_area(self) -> float:
        return signed_area(self.ring) if len(self.ring) >= 3 else 0.0

    @property
    def perimeter(self) -> float:
        return line_length(np.vstack([self.ring, self.ring[:1]]))

    @property
    def boundary(self):
        from .geo import PolygonM

        return PolygonM(self.ring)


def _dart_geometry(g: StreetNetwork, dart: tuple[int, bool]) -> np.ndarray:
    e = g.edges[dart[0]]
    return e.geometry if dart[1] else e.geometry[::-1]


def _dart_start(g: StreetNetwork, dart) -> int:
    e = g.edges[dart[0]]
    return e.u if dart[1] else e.v


def enumerate_blocks(g: StreetNetwork) -> list[Block]:
    """All closed right-hand-turn walks; each directed edge is used exactly once."""
    outgoing: dict[int, list[tuple[float, tuple[int, bool]]]] = {}
    for eid in sorted(g.edges):
        for fwd in (True, False):
            dart = (eid, fwd)
            geom = _dart_geometry(g, dart)
            ang = bearing(geom[1] - geom[0])
            outgoing.setdefault(_dart_start(g, dart), []).append((ang, dart))
    for lst in outgoing.values():
        lst.sort()

    def next_dart(dart):
        # leave the end node by the first outgoing dart counter-clockwise
        # from the reversed incoming direction: the sharpest right turn
        rev = (dart[0], not dart[1])
        lst = outgoing[_dart_start(g, rev)]
        i = next(k for k, (_, d) in enumerate(lst) if d == rev)
        return lst[(i + 1) % len(lst)][1]

    used: set = set()
    blocks: list[Block] = []
    for eid in sorted(g.edges):
        for fwd in (True, False):
            start = (eid, fwd)
            if start in used:
                continue
            darts = []
            d = start
            while d not in used:
                used.add(d)
                darts.append(d)
                d = next_dart(d)
            ring_parts, starts, idx = [], [], 0
            for dart in darts:
                geom = _dart_geometry(g, dart)[:-1]
                starts.append(idx)
                ring_parts.append(geom)
                idx += len(geom)
            blocks.append(
                Block(darts, [_dart_start(g, dd) for dd in darts], np.vstack(ring_parts), starts)
            )
    _mark_outer(g, blocks)
    return blocks


def _mark_outer(g: StreetNetwork, blocks: list[Block]) -> None:
    comp: dict[int, int] = {}
    for root in sorted(g.nodes):
        if root in comp:
            continue
        stack = [root]
        comp[root] = root
        while stack:
            n = stack.pop()
            for eid in g.incident(n):
                o = g.other(eid, n)
                if o not in comp:
                    comp[o] = root
                    stack.append(o)
    best: dict[int, tuple[float, int]] = {}
    for i, b in enumerate(blocks):
        c = comp[b.nodes[0]]
        a = b.signed_area
        if c not in best or a > best[c][0]:
            best[c] = (a, i)
    for _, i in best.values():
        blocks[i].is_outer = True


# --------------------------------------------------------------------------
# sidewalks


@dataclass
class Sidewalk:
    geometry: np.ndarray
    parts: frozenset  # (street edge id, side of that edge)
    block: int
    closed: bool = False


def _dart_side(dart) -> str:
    # the block lies right of the walk direction
    return "right" if dart[1] else "left"


def generate_sidewalks(
    g: StreetNetwork,
    blocks: Sequence[Block],
    default_offset: float = 4.0,
    regime: str = "auto",
    outer: bool = True,
    issues: list | None = None,
) -> list[Sidewalk]:
    """Offset each block boundary inward and cut it into street-to-street sidewalks.

    Cuts happen at nodes whose street degree is not 2 and where sidewalk presence
    changes. Blocks whose offset collapses are skipped and reported via ``issues``.
    """
    if not default_offset > 0:
        raise ValueError("default sidewalk offset must be positive")
    if regime not in ("auto", "full", "metadata"):
        raise ValueError(f"unknown sidewalk regime {regime!r}")
    out: list[Sidewalk] = []
    for bi, blk in enumerate(blocks):
        if blk.is_outer and not outer:
            continue
        present = [g.edges[d[0]].meta.has_side(_dart_side(d), regime) for d in blk.darts]
        if not any(present):
            continue
        offsets = [g.edges[d[0]].meta.offset or default_offset for d in blk.darts]
        dists = []
        for k, dart in enumerate(blk.darts):
            nseg = len(_dart_geometry(g, dart)) - 1
            dists.extend([-offsets[k]] * nseg)
        try:
            if blk.perimeter < 2 * max(offsets):
                raise DegenerateBlock(f"block {bi}: perimeter {blk.perimeter:.2f} m shorter than twice the offset")
            path = offset_path(blk.ring, dists, closed=True, round_uturn=True)
            if offset_is_collapsed(blk.ring, path):
                raise DegenerateBlock(f"block {bi}: offset ring folds over itself")
        except PednetError as exc:
            if not isinstance(exc, DegenerateBlock):
                exc = DegenerateBlock(f"block {bi}: {exc}")
            log.warning("%s", exc)
            if issues is not None:
                issues.append(exc)
            continue
        out.extend(_cut_block(g, blk, bi, path, present))
    return out


def _cut_block(g, blk: Block, bi: int, path, present: list[bool]) -> list[Sidewalk]:
    n = len(blk.darts)
    nring = len(blk.ring)

    def breaks_before(k: int) -> bool:
        return g.degree(blk.nodes[k]) != 2 or present[k] != present[k - 1]

    cut_at = [k for k in range(n) if breaks_before(k)]
    if not cut_at:
        if not present[0]:
            return []
        parts = frozenset((d[0], _dart_side(d)) for d in blk.darts)
        geom = path.piece(0, nring)
        return [Sidewalk(geom, parts, bi, closed=True)]
    out = []
    for j, k0 in enumerate(cut_at):
        k1 = cut_at[(j + 1) % len(cut_at)]
        if not present[k0]:
            continue
        span = (k1 - k0) % n or n
        darts = [blk.darts[(k0 + m) % n] for m in range(span)]
        i0 = blk.starts[k0]
        i1 = i0 + sum(len(_dart_geometry(g, d)) - 1 for d in darts)
        # where the neighbouring side has no sidewalk, do not wrap around the join
        geom = path.piece(i0, i1, bare_start=not present[k0 - 1], bare_end=not present[k1])
        if len(geom) < 2:
            continue
        out.append(Sidewalk(geom, frozenset((d[0], _dart_side(d)) for d in darts), bi))
    return out


# --------------------------------------------------------------------------
# crossings


@dataclass
class CrossingCandidate:
    anchor_s: float
    geometry: np.ndarray
    dist_to_intersection: float
    length: float
    angle_dev: float


@dataclass(frozen=True)
class CrossingCostWeights:
    w_dist: float = 1.0
    w_len: float = 1.0
    w_ang: float = 1.0

    def __post_init__(self):
        if min(self.w_dist, self.w_len, self.w_ang) < 0:
            raise ValueError("crossing cost weights must be non-negative")
        if self.w_dist == self.w_len == self.w_ang == 0:
            raise ValueError("at least one crossing cost weight must be positive")


def _closest(lines: Sequence[np.ndarray], p: np.ndarray, radius: float):
    best = None
    for line in lines:
        pt, _, d = nearest_on_segments(line, p)
        if d <= radius and (best is None or d < best[1]):
            best = (pt, d)
    return None if best is None else best[0]


def _angle_dev(vec: np.ndarray, tangent: np.ndarray) -> float:
    ang = math.degrees(math.atan2(abs(vec[0] * tangent[1] - vec[1] * tangent[0]), float(vec @ tangent)))
    return abs(90.0 - ang)


def generate_crossing_candidates(
    street_extent: np.ndarray,
    left_sw: Sequence[np.ndarray],
    right_sw: Sequence[np.ndarray],
    step: float = 1.0,
    search_radius: float = 25.0,
) -> list[CrossingCandidate]:
    """One candidate per ``step`` meters along the (outward) street extent."""
    if not step > 0:
        raise ValueError("candidate step must be positive")
    total = line_length(street_extent)
    n = int(math.floor(total / step + 1e-9))
    out = []
    for i in range(n + 1):
        s = i * step
        p = interpolate(street_extent, s)
        left = _closest(left_sw, p, search_radius)
        right = _closest(right_sw, p, search_radius)
        if left is None or right is None:
            continue
        vec = right - left
        length = float(math.hypot(*vec))
        if length == 0:
            continue
        dev = _angle_dev(vec, tangent_at(street_extent, s))
        out.append(CrossingCandidate(s, np.array([left, right]), s, length, dev))
    if not out:
        raise NoCandidates("no sidewalk within the search radius on one side of the street")
    return out


def select_best_crossing(cands: Sequence[CrossingCandidate], w: CrossingCostWeights = CrossingCostWeights()):
    """Lowest weighted sum of max-normalised distance, length and angle deviation."""
    if not cands:
        raise EmptyCandidates("no crossing candidates")
    dmax = max(c.dist_to_intersection for c in cands)
    lmax = max(c.length for c in cands)

    def cost(c):
        t = 0.0
        if dmax > 0:
            t += w.w_dist * c.dist_to_intersection / dmax
        if lmax > 0:
            t += w.w_len * c.length / lmax
        t += w.w_ang * c.angle_dev / 90.0
        return (round(t, 12), c.dist_to_intersection, c.anchor_s)

    return min(cands, key=cost)


def project_known_crossing(
    known_pt,
    left_sw: Sequence[np.ndarray],
    right_sw: Sequence[np.ndarray],
    search_radius: float = 25.0,
    street: np.ndarray | None = None,
) -> CrossingCandidate:
    """Crossing through a known crossing location, snapped to the nearest sidewalk on each side."""
    p = np.asarray(known_pt, dtype=float)
    left = _closest(left_sw, p, search_radius)
    right = _closest(right_sw, p, search_radius)
    if left is None or right is None:
        raise NoCandidates("known crossing has no sidewalk within the search radius on one side")
    vec = right - left
    s, dev = 0.0, 0.0
    if street is not None:
        _, s, _ = nearest_on_segments(street, p)
        dev = _angle_dev(vec, tangent_at(street, s))
    return CrossingCandidate(s, np.array([left, right]), s, float(math.hypot(*vec)), dev)


@dataclass
class SplitCrossing:
    segments: list[tuple[np.ndarray, str]]  # (geometry, kind) from origin to destination side
    curbs: list[np.ndarray]


def split_crossing(c: CrossingCandidate | np.ndarray, curb_fracs=(0.25, 0.75)) -> SplitCrossing:
    """Cut a crossing line at two arc-length fractions into link / crossing / link."""
    f1, f2 = curb_fracs
    if not 0 < f1 < f2 < 1:
        raise InvalidFractions(f"curb fractions must satisfy 0 < f1 < f2 < 1, got {curb_fracs}")
    geom = c.geometry if isinstance(c, CrossingCandidate) else np.asarray(c, dtype=float)
    total = float(cumulative_length(geom)[-1])
    s1, s2 = f1 * total, f2 * total
    segs = [
        (substring(geom, 0.0, s1), "link"),
        (substring(geom, s1, s2), "crossing"),
        (substring(geom, s2, total), "link"),
    ]
    return SplitCrossing(segs, [interpolate(geom, s1), interpolate(geom, s2)])


# --------------------------------------------------------------------------
# full hypothesis


@dataclass
class HypothesisConfig:
    default_offset: float = 4.0
    regime: str = "auto"  # auto | full | metadata
    outer_sidewalks: bool = True
    candidate_step: float = 1.0
    search_radius: float = 25.0
    weights: CrossingCostWeights = field(default_factory=CrossingCostWeights)
    curb_fracs: tuple[float, float] = (0.25, 0.75)
    corner_radius: float = 15.0

    def __post_init__(self):
        if not self.default_offset > 0:
            raise ValueError("default sidewalk offset must be positive")
        if self.regime not in ("auto", "full", "metadata"):
            raise ValueError(f"unknown sidewalk regime {self.regime!r}")
        if not self.candidate_step > 0 or not self.search_radius > 0 or not self.corner_radius > 0:
            raise ValueError("candidate step, search radius and corner radius must be positive")
        f = tuple(self.curb_fracs)
        if len(f) != 2 or not 0 < f[0] < f[1] < 1:
            raise InvalidFractions(f"curb fractions must satisfy 0 < f1 < f2 < 1, got {self.curb_fracs}")


def _arm_sides(extent) -> tuple[set, set]:
    left, right = set(), set()
    for eid, fwd in extent.chain:
        left.add((eid, "left" if fwd else "right"))
        right.add((eid, "right" if fwd else "left"))
    return left, right


def _side_edges(pg: PedGraph, keys: set) -> list[int]:
    return [eid for eid in pg.edges_of_kind("sidewalk") if pg.edges[eid].parts & keys]


def _embed(pg: PedGraph, edge_ids: list[int], p: np.ndarray) -> int:
    best = min(edge_ids, key=lambda eid: nearest_on_segments(pg.edges[eid].geometry, p)[2])
    return pg.split_edge(best, p)


def build_hypothesis(
    g: StreetNetwork,
    config: HypothesisConfig | None = None,
    known_crossings: Sequence[Sequence[float]] = (),
) -> PedGraph:
    """Sidewalks, crossings and curbs hypothesised from the street network alone.

    Failures at a single intersection arm are recorded in ``PedGraph.warnings``.
    """
    cfg = config or HypothesisConfig()
    pg = PedGraph(projection=g.projection)
    issues: list = []
    blocks = enumerate_blocks(g)
    sidewalks = generate_sidewalks(g, blocks, cfg.default_offset, cfg.regime, cfg.outer_sidewalks, issues)
    pg.warnings.extend(str(i) for i in issues)

    for sw in sidewalks:
        geom = dedupe_vertices(sw.geometry)
        u = pg.node_at(geom[0]) if len(pg.nodes) else None
        if u is None:
            u = pg.add_node(geom[0], "sidewalk_pt")
        if sw.closed:
            v = u
        else:
            v = pg.node_at(geom[-1])
            if v is None:
                v = pg.add_node(geom[-1], "sidewalk_pt")
        pg.add_edge(u, v, geom, "sidewalk", parts=sw.parts)

    known = [np.asarray(k, dtype=float) for k in known_crossings]
    arms = []
    for node in intersections(g):
        for ext in half_block_extents(g, node):
            arms.append((node, ext))
    known_for_arm: dict[int, np.ndarray] = {}
    for kp in known:
        if not arms:
            break
        dists = [nearest_on_segments(ext.geometry, kp)[2] for _, ext in arms]
        known_for_arm[int(np.argmin(dists))] = kp

    for ai, (node, ext) in enumerate(arms):
        lkeys, rkeys = _arm_sides(ext)
        left_ids, right_ids = _side_edges(pg, lkeys), _side_edges(pg, rkeys)
        left = [pg.edges[i].geometry for i in left_ids]
        right = [pg.edges[i].geometry for i in right_ids]
        try:
            if ai in known_for_arm:
                best = project_known_crossing(known_for_arm[ai], left, right, cfg.search_radius, ext.geometry)
            else:
                cands = generate_crossing_candidates(ext.geometry, left, right, cfg.candidate_step, cfg.search_radius)
                best = select_best_crossing(cands, cfg.weights)
            split = split_crossing(best, cfg.curb_fracs)
        except PednetError as exc:
            msg = f"intersection {node}, street {ext.edge}: {type(exc).__name__}: {exc}"
            log.warning("%s", msg)
            pg.warnings.append(msg)
            continue
        a = _embed(pg, left_ids, best.geometry[0])
        b = _embed(pg, _side_edges(pg, rkeys), best.geometry[-1])
        c1 = pg.add_node(split.curbs[0], "curb")
        c2 = pg.add_node(split.curbs[1], "curb")
        (g1, _), (g2, _), (g3, _) = split.segments
        pg.add_edge(a, c1, g1, "link")
        pg.add_edge(c1, c2, g2, "crossing")
        pg.add_edge(c2, b, g3, "link")

    assign_corners(pg, g, cfg.corner_radius)
    return pg


def assign_corners(pg: PedGraph, g: StreetNetwork, radius: float = 15.0) -> None:
    """Tag curb and sidewalk nodes near an intersection with a corner id.

    A corner is the angular sector between two consecutive street arms at the
    nearest intersection within ``radius``; ids look like ``"<node>:<sector>"``.
    """
    centres = intersections(g)
    if not centres:
        return
    pts = np.array([g.nodes[c] for c in centres])
    arm_angles = {}
    for c in centres:
        angs = sorted(bearing(g.oriented(eid, c)[1] - g.oriented(eid, c)[0]) for eid in g.incident(c))
        arm_angles[c] = angs
    for nid in sorted(pg.nodes):
        node = pg.nodes[nid]
        if node.kind not in ("curb", "sidewalk_pt"):
            continue
        d = np.hypot(*(pts - node.xy).T)
        k = int(np.argmin(d))
        if d[k] > radius:
            node.corner = None
            continue
        c = centres[k]
        ang = bearing(node.xy - g.nodes[c])
        angs = arm_angles[c]
        sector = len(angs) - 1
        for i in range(len(angs) - 1):
            if angs[i] <= ang < angs[i + 1]:
                sector = i
                break
        node.corner = f"{c}:{sector}"
