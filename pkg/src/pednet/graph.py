"""Pedestrian path network container."""

from __future__ import annotations

import copy
from collections import defaultdict
from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from .geo import LocalProjection, cumulative_length, line_length, nearest_on_segments, substring

NODE_KINDS = ("sidewalk_pt", "curb", "crossing_pt")
EDGE_KINDS = ("sidewalk", "link", "crossing")


@dataclass
class PedNode:
    xy: np.ndarray
    kind: str | None
    corner: str | None = None


@dataclass
class PedEdge:
    u: int
    v: int
    geometry: np.ndarray
    kind: str | None
    confidence: float | None = None
    # street sides this sidewalk follows, as (street edge id, "left"/"right")
    parts: frozenset = frozenset()

    @property
    def length(self) -> float:
        return line_length(self.geometry)


@dataclass
class PedGraph:
    nodes: dict[int, PedNode] = field(default_factory=dict)
    edges: dict[int, PedEdge] = field(default_factory=dict)
    projection: LocalProjection | None = None
    warnings: list[str] = field(default_factory=list)
    _adj: dict[int, list[int]] = field(default_factory=lambda: defaultdict(list), repr=False)
    _next_node: int = 0
    _next_edge: int = 0

    def add_node(self, xy, kind: str | None, corner: str | None = None) -> int:
        nid = self._next_node
        self._next_node += 1
        self.nodes[nid] = PedNode(np.asarray(xy, dtype=float).copy(), kind, corner)
        return nid

    def add_edge(self, u: int, v: int, geometry, kind: str | None, confidence=None, parts=frozenset()) -> int:
        geom = np.asarray(geometry, dtype=float).copy()
        geom[0], geom[-1] = self.nodes[u].xy, self.nodes[v].xy
        eid = self._next_edge
        self._next_edge += 1
        self.edges[eid] = PedEdge(u, v, geom, kind, confidence, frozenset(parts))
        self._adj[u].append(eid)
        self._adj[v].append(eid)
        return eid

    def incident(self, n: int) -> list[int]:
        return list(self._adj.get(n, []))

    def degree(self, n: int) -> int:
        return len(self._adj.get(n, []))

    def other(self, eid: int, n: int) -> int:
        e = self.edges[eid]
        return e.v if e.u == n else e.u

    def remove_edge(self, eid: int) -> None:
        e = self.edges.pop(eid)
        self._adj[e.u].remove(eid)
        self._adj[e.v].remove(eid)

    def remove_node(self, n: int) -> None:
        for eid in set(self._adj.get(n, [])):
            self.remove_edge(eid)
        self._adj.pop(n, None)
        del self.nodes[n]

    def move_node(self, n: int, xy) -> None:
        xy = np.asarray(xy, dtype=float)
        self.nodes[n].xy = xy.copy()
        for eid in set(self._adj.get(n, [])):
            e = self.edges[eid]
            if e.u == n:
                e.geometry[0] = xy
            if e.v == n:
                e.geometry[-1] = xy

    def node_at(self, xy, tol: float = 1e-6) -> int | None:
        xy = np.asarray(xy, dtype=float)
        for nid, node in self.nodes.items():
            if np.hypot(*(node.xy - xy)) <= tol:
                return nid
        return None

    def split_edge(self, eid: int, xy, tol: float = 1e-6) -> int:
        """Embed a node on edge ``eid`` at its closest point to ``xy``; returns the node id."""
        e = self.edges[eid]
        pt, s, _ = nearest_on_segments(e.geometry, np.asarray(xy, dtype=float))
        total = float(cumulative_length(e.geometry)[-1])
        if s <= tol:
            return e.u
        if s >= total - tol:
            return e.v
        nid = self.add_node(pt, "sidewalk_pt")
        first = substring(e.geometry, 0.0, s)
        second = substring(e.geometry, s, total)
        self.remove_edge(eid)
        self.add_edge(e.u, nid, first, e.kind, e.confidence, e.parts)
        self.add_edge(nid, e.v, second, e.kind, e.confidence, e.parts)
        return nid

    def edges_of_kind(self, kind: str) -> list[int]:
        return sorted(i for i, e in self.edges.items() if e.kind == kind)

    def nodes_of_kind(self, kind: str) -> list[int]:
        return sorted(i for i, n in self.nodes.items() if n.kind == kind)

    def copy(self) -> "PedGraph":
        return copy.deepcopy(self)

    def to_networkx(self) -> nx.MultiGraph:
        g = nx.MultiGraph()
        for nid, node in self.nodes.items():
            g.add_node(nid, kind=node.kind, corner=node.corner, x=float(node.xy[0]), y=float(node.xy[1]))
        for eid, e in self.edges.items():
            g.add_edge(e.u, e.v, key=eid, kind=e.kind, confidence=e.confidence, length=e.length)
        return g

    def is_connected(self) -> bool:
        return len(self.nodes) > 0 and nx.is_connected(self.to_networkx())

    def corners(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = defaultdict(list)
        for nid in sorted(self.nodes):
            c = self.nodes[nid].corner
            if c is not None:
                out[c].append(nid)
        return dict(out)


def merge_sidewalks_at(g: PedGraph, n: int) -> bool:
    """Dissolve node ``n`` by joining its two sidewalk edges into one."""
    inc = g.incident(n)
    if len(inc) != 2 or inc[0] == inc[1]:
        return False
    e1, e2 = (g.edges[i] for i in inc)
    if e1.kind != "sidewalk" or e2.kind != "sidewalk":
        return False
    a = e1.geometry if e1.v == n else e1.geometry[::-1]
    b = e2.geometry if e2.u == n else e2.geometry[::-1]
    start = e1.u if e1.v == n else e1.v
    end = e2.v if e2.u == n else e2.u
    conf = None
    if e1.confidence is not None and e2.confidence is not None:
        conf = (e1.confidence * e1.length + e2.confidence * e2.length) / max(e1.length + e2.length, 1e-12)
    parts = e1.parts | e2.parts
    g.remove_node(n)
    g.add_edge(start, end, np.vstack([a, b[1:]]), "sidewalk", conf, parts)
    return True


def crossing_chain(g: PedGraph, curb: int) -> tuple[list[int], list[int]]:
    """Nodes and edges of the link-crossing-link chain passing through ``curb``."""
    edges: set[int] = set()
    curbs: set[int] = set()
    todo = [curb]
    while todo:
        c = todo.pop()
        if c in curbs:
            continue
        curbs.add(c)
        for eid in g.incident(c):
            e = g.edges[eid]
            if e.kind in ("crossing", "link"):
                edges.add(eid)
            if e.kind == "crossing":
                o = g.other(eid, c)
                if g.nodes[o].kind == "curb":
                    todo.append(o)
    return sorted(curbs), sorted(edges)


def remove_corner(g: PedGraph, members: list[int]) -> None:
    """Delete a corner: its crossings (both ends), links and curbs; merge sidewalks through it."""
    for n in members:
        if n not in g.nodes:
            continue
        if g.nodes[n].kind == "curb":
            curbs, edges = crossing_chain(g, n)
            for eid in edges:
                if eid in g.edges:
                    g.remove_edge(eid)
            for c in curbs:
                g.remove_node(c)
    for n in members:
        if n not in g.nodes or g.nodes[n].kind != "sidewalk_pt":
            continue
        for eid in g.incident(n):
            if eid in g.edges and g.edges[eid].kind == "link":
                curb = g.other(eid, n)
                curbs, edges = crossing_chain(g, curb)
                for k in edges:
                    if k in g.edges:
                        g.remove_edge(k)
                for c in curbs:
                    g.remove_node(c)
        if not merge_sidewalks_at(g, n) and g.degree(n) == 0:
            g.remove_node(n)
