"""Street centerline ingest.

Turns a GeoJSON FeatureCollection of LineStrings into a :class:`StreetNetwork`
whose nodes are the coordinates shared between features (plus every feature
endpoint). Geometry is stored in local meters.
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable

import numpy as np

from .errors import MalformedFeature, UnknownNode
from .geo import LocalProjection, cumulative_length, line_length, substring

SNAP_DEG = 1e-6
SIDEWALK_VALUES = {"left", "right", "both", "no", "none", "separate"}


@dataclass(frozen=True)
class SidewalkMeta:
    presence: str = "unknown"  # none | left | right | both | unknown
    offset: float | None = None

    def __post_init__(self):
        if self.presence not in ("none", "left", "right", "both", "unknown"):
            raise ValueError(f"bad sidewalk presence {self.presence!r}")
        if self.offset is not None and not self.offset > 0:
            raise ValueError("sidewalk offset must be positive")

    @classmethod
    def from_tags(cls, tags: dict) -> "SidewalkMeta":
        raw = tags.get("sidewalk")
        if raw is None:
            presence = "unknown"
        else:
            raw = str(raw).strip().lower()
            if raw not in SIDEWALK_VALUES:
                raise MalformedFeature(f"unrecognised sidewalk tag {raw!r}")
            presence = {"no": "none", "separate": "none"}.get(raw, raw)
        offset = tags.get("sidewalk_offset")
        if offset is not None:
            try:
                offset = float(offset)
            except (TypeError, ValueError):
                raise MalformedFeature(f"sidewalk_offset must be numeric, got {offset!r}") from None
        return cls(presence, offset)

    def has_side(self, side: str, regime: str = "auto") -> bool:
        """Whether a sidewalk is hypothesised on ``side`` ('left'/'right')."""
        if regime == "full":
            return True
        if self.presence == "unknown":
            return regime == "auto"
        return self.presence in (side, "both")


@dataclass
class StreetEdge:
    u: int
    v: int
    geometry: np.ndarray
    tags: dict = field(default_factory=dict)
    meta: SidewalkMeta = field(default_factory=SidewalkMeta)

    @property
    def length(self) -> float:
        return line_length(self.geometry)


@dataclass
class StreetNetwork:
    nodes: dict[int, np.ndarray]
    edges: dict[int, StreetEdge]
    projection: LocalProjection | None = None

    def degree(self, n: int) -> int:
        return len(self.incident(n))

    def incident(self, n: int) -> list[int]:
        """Edge ids touching ``n``; self-loops appear twice."""
        return self._incidence.get(n, [])

    @cached_property
    def _incidence(self) -> dict[int, list[int]]:
        inc = defaultdict(list)
        for eid in sorted(self.edges):
            e = self.edges[eid]
            inc[e.u].append(eid)
            inc[e.v].append(eid)
        return dict(inc)

    def oriented(self, eid: int, start: int) -> np.ndarray:
        """Geometry of edge ``eid`` running away from node ``start``."""
        e = self.edges[eid]
        if e.u == start:
            return e.geometry
        if e.v == start:
            return e.geometry[::-1]
        raise UnknownNode(f"node {start} is not an endpoint of edge {eid}")

    def other(self, eid: int, n: int) -> int:
        e = self.edges[eid]
        return e.v if e.u == n else e.u

    def total_length(self) -> float:
        return sum(e.length for e in self.edges.values())


def _feature_lines(doc: dict) -> Iterable[tuple[list, dict]]:
    if doc.get("type") != "FeatureCollection":
        raise MalformedFeature("expected a GeoJSON FeatureCollection")
    for i, feat in enumerate(doc.get("features") or []):
        geom = (feat or {}).get("geometry") or {}
        props = dict(feat.get("properties") or {})
        gtype = geom.get("type")
        if gtype == "LineString":
            parts = [geom.get("coordinates") or []]
        elif gtype == "MultiLineString":
            parts = geom.get("coordinates") or []
        else:
            raise MalformedFeature(f"feature {i}: expected LineString, got {gtype}")
        for coords in parts:
            if len(coords) < 2:
                raise MalformedFeature(f"feature {i}: LineString needs at least 2 coordinates")
            yield [tuple(map(float, c[:2])) for c in coords], props


def default_origin(doc: dict) -> tuple[float, float]:
    """Bounding-box centre of every coordinate in ``doc``."""
    lons, lats = [], []
    for coords, _ in _feature_lines(doc):
        for lon, lat in coords:
            lons.append(lon)
            lats.append(lat)
    if not lons:
        return (0.0, 0.0)
    return ((min(lons) + max(lons)) / 2, (min(lats) + max(lats)) / 2)


def parse_street_network(
    doc: dict,
    projection: LocalProjection | None = None,
    highway_include: Iterable[str] | None = None,
    planarize: bool = False,
) -> StreetNetwork:
    """Build a noded StreetNetwork from a GeoJSON FeatureCollection (WGS84).

    Coordinates within ``SNAP_DEG`` are merged. Features are split at every
    coordinate they share with another feature (or revisit themselves), so
    OSM-style ways that pass through an intersection are noded correctly.
    """
    lines = list(_feature_lines(doc))
    if highway_include is not None:
        allowed = set(highway_include)
        lines = [(c, p) for c, p in lines if p.get("highway") in allowed]
    if projection is None:
        projection = LocalProjection(default_origin(doc))

    def key(c):
        return (round(c[0] / SNAP_DEG), round(c[1] / SNAP_DEG))

    uses: dict[tuple, int] = defaultdict(int)
    for coords, _ in lines:
        for c in coords:
            uses[key(c)] += 1
    node_ids: dict[tuple, int] = {}
    node_lonlat: dict[int, tuple] = {}

    def node_for(c):
        k = key(c)
        if k not in node_ids:
            node_ids[k] = len(node_ids)
            node_lonlat[node_ids[k]] = c
        return node_ids[k]

    raw_edges: list[tuple[int, int, list, dict]] = []
    for coords, props in lines:
        kept = []
        for c in coords:
            if not kept or key(kept[-1]) != key(c):
                kept.append(c)
        if len(kept) < 2:
            raise MalformedFeature("LineString collapses to a single coordinate after snapping")
        start = 0
        for i in range(1, len(kept)):
            if i == len(kept) - 1 or uses[key(kept[i])] > 1:
                part = kept[start : i + 1]
                raw_edges.append((node_for(part[0]), node_for(part[-1]), part, props))
                start = i

    nodes: dict[int, np.ndarray] = {}
    if node_lonlat:
        ids = sorted(node_lonlat)
        xy = projection.forward_coords([node_lonlat[i] for i in ids])
        nodes = {i: xy[j] for j, i in enumerate(ids)}
    edges: dict[int, StreetEdge] = {}
    for eid, (a, b, part, props) in enumerate(raw_edges):
        geom = projection.forward_coords(part)
        geom[0], geom[-1] = nodes[a], nodes[b]
        edges[eid] = StreetEdge(a, b, geom, props, SidewalkMeta.from_tags(props))
    net = StreetNetwork(nodes, edges, projection)
    if planarize:
        net = planarize_network(net)
    return net


def intersections(g: StreetNetwork) -> list[int]:
    """Node ids with degree >= 3, ascending."""
    return sorted(n for n in g.nodes if g.degree(n) >= 3)


def _follow_chain(g: StreetNetwork, start: int, eid: int) -> tuple[np.ndarray, list[tuple[int, bool]]]:
    """Walk outward from ``start`` along ``eid`` through degree-2 nodes."""
    pieces = [g.oriented(eid, start)]
    chain = [(eid, g.edges[eid].u == start)]
    node = g.other(eid, start)
    seen = {eid}
    while g.degree(node) == 2 and node != start:
        nxt = [e for e in g.incident(node) if e not in seen]
        if not nxt:
            break
        eid = nxt[0]
        seen.add(eid)
        pieces.append(g.oriented(eid, node)[1:])
        chain.append((eid, g.edges[eid].u == node))
        node = g.other(eid, node)
    return np.vstack(pieces), chain


@dataclass
class HalfBlockExtent:
    edge: int
    geometry: np.ndarray  # outward from the intersection, half the run length
    chain: list[tuple[int, bool]]  # (edge id, traversed forward) for the full run
    full_length: float


def half_block_extents(g: StreetNetwork, intersection: int) -> list[HalfBlockExtent]:
    """Outward street lines from ``intersection``, cut at half the distance to the next intersection."""
    if intersection not in g.nodes or g.degree(intersection) == 0:
        raise UnknownNode(f"node {intersection} has no incident streets")
    out = []
    seen_loops = set()
    for eid in g.incident(intersection):
        e = g.edges[eid]
        if e.u == e.v == intersection:
            # a self-loop is walked once in each direction
            fwd = eid not in seen_loops
            seen_loops.add(eid)
            full = e.geometry if fwd else e.geometry[::-1]
            chain = [(eid, fwd)]
        else:
            full, chain = _follow_chain(g, intersection, eid)
        total = float(cumulative_length(full)[-1])
        out.append(HalfBlockExtent(eid, substring(full, 0.0, total / 2), chain, total))
    return out


def bearing(v: np.ndarray) -> float:
    """Math angle of direction ``v`` in radians."""
    return math.atan2(float(v[1]), float(v[0]))


def planarize_network(g: StreetNetwork) -> StreetNetwork:
    """Split edges wherever their geometries cross, then rebuild nodes."""
    from shapely.geometry import LineString
    from shapely import STRtree

    ids = sorted(g.edges)
    geoms = [LineString(g.edges[i].geometry) for i in ids]
    tree = STRtree(geoms)
    cuts: dict[int, list[float]] = defaultdict(list)
    for a, b in zip(*tree.query(geoms, predicate="intersects")):
        if a >= b:
            continue
        inter = geoms[a].intersection(geoms[b])
        for pt in _points_of(inter):
            for k in (a, b):
                s = geoms[k].project(pt)
                if 1e-6 < s < geoms[k].length - 1e-6:
                    cuts[k].append(s)
    new_nodes = {i: p.copy() for i, p in g.nodes.items()}
    coord_index = {tuple(np.round(p, 6)): i for i, p in new_nodes.items()}

    def node_at(p):
        k = tuple(np.round(p, 6))
        if k not in coord_index:
            nid = max(new_nodes, default=-1) + 1
            new_nodes[nid] = np.asarray(p, dtype=float)
            coord_index[k] = nid
        return coord_index[k]

    new_edges: dict[int, StreetEdge] = {}
    for k, eid in enumerate(ids):
        e = g.edges[eid]
        marks = sorted(set(cuts.get(k, [])))
        bounds = [0.0, *marks, geoms[k].length]
        prev = e.u
        for j in range(len(bounds) - 1):
            part = substring(e.geometry, bounds[j], bounds[j + 1])
            end = e.v if j == len(bounds) - 2 else node_at(part[-1])
            part[0], part[-1] = new_nodes[prev], new_nodes[end]
            new_edges[len(new_edges)] = StreetEdge(prev, end, part, dict(e.tags), e.meta)
            prev = end
    return StreetNetwork(new_nodes, new_edges, g.projection)


def _points_of(geom):
    if geom.is_empty:
        return []
    if geom.geom_type == "Point":
        return [geom]
    if geom.geom_type == "MultiPoint":
        return list(geom.geoms)
    if hasattr(geom, "geoms"):
        out = []
        for part in geom.geoms:
            out.extend(_points_of(part))
        return out
    # overlapping collinear pieces: use their endpoints
    from shapely.geometry import Point

    return [Point(c) for c in (geom.coords[0], geom.coords[-1])]


def to_geojson(g: StreetNetwork) -> dict:
    """Serialise back to a WGS84 FeatureCollection."""
    feats = []
    for eid in sorted(g.edges):
        e = g.edges[eid]
        coords = g.projection.inverse_coords(e.geometry)
        feats.append(
            {
                "type": "Feature",
                "properties": dict(e.tags),
                "geometry": {"type": "LineString", "coordinates": [[round(x, 9), round(y, 9)] for x, y in coords]},
            }
        )
    return {"type": "FeatureCollection", "features": feats}
