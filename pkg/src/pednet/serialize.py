"""PedGraph <-> GeoJSON in an OpenSidewalks-like tagging.

Edges carry ``footway`` (sidewalk / crossing / link) and curb nodes carry
``barrier=kerb``. Feature ids are content hashes, so identical graphs always
serialise to identical bytes whatever their internal ids.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import numpy as np

from .errors import MalformedFeature
from .geo import LocalProjection
from .graph import EDGE_KINDS, PedGraph

ORIGIN_KEY = "pednet:origin"
COORD_DECIMALS = 9
HASH_DECIMALS = 7


def _hash(kind, coords) -> str:
    key = json.dumps([kind, [[round(x, HASH_DECIMALS), round(y, HASH_DECIMALS)] for x, y in coords]])
    return hashlib.sha1(key.encode()).hexdigest()[:16]


def _unique(ids: dict, base: str) -> str:
    fid, k = base, 1
    while fid in ids:
        fid = f"{base}-{k}"
        k += 1
    return fid


def _lonlat(g: PedGraph, xy) -> np.ndarray:
    return g.projection.inverse_coords(np.asarray(xy, dtype=float).reshape(-1, 2))


def graph_to_geojson(g: PedGraph) -> dict:
    if g.projection is None:
        raise ValueError("graph has no projection")
    node_ids: dict[int, str] = {}
    used: dict[str, None] = {}
    node_feats = []
    for nid in sorted(g.nodes, key=lambda n: (g.nodes[n].kind or "", *g.nodes[n].xy.tolist())):
        node = g.nodes[nid]
        ll = _lonlat(g, node.xy)[0]
        coords = [round(float(ll[0]), COORD_DECIMALS), round(float(ll[1]), COORD_DECIMALS)]
        fid = _unique(used, "n" + _hash(node.kind, [coords]))
        used[fid] = None
        node_ids[nid] = fid
        props = {"node": node.kind}
        if node.kind == "curb":
            props["barrier"] = "kerb"
        if node.corner is not None:
            props["corner"] = node.corner
        node_feats.append({"type": "Feature", "id": fid, "properties": props, "geometry": {"type": "Point", "coordinates": coords}})
    edge_feats = []
    for eid in sorted(g.edges, key=lambda i: (g.edges[i].kind or "", g.edges[i].geometry.ravel().tolist())):
        e = g.edges[eid]
        ll = _lonlat(g, e.geometry)
        coords = [[round(float(x), COORD_DECIMALS), round(float(y), COORD_DECIMALS)] for x, y in ll]
        fid = _unique(used, "e" + _hash(e.kind, coords))
        used[fid] = None
        props = {"footway": e.kind, "from": node_ids[e.u], "to": node_ids[e.v]}
        if e.confidence is not None:
            props["confidence"] = round(float(e.confidence), 3)
        edge_feats.append({"type": "Feature", "id": fid, "properties": props, "geometry": {"type": "LineString", "coordinates": coords}})
    feats = sorted(node_feats, key=lambda f: f["id"]) + sorted(edge_feats, key=lambda f: f["id"])
    return {
        "type": "FeatureCollection",
        ORIGIN_KEY: list(g.projection.origin_lonlat),
        "features": feats,
    }


def geojson_to_graph(doc: dict, projection: LocalProjection | None = None, ids_out: dict | None = None) -> PedGraph:
    """Parse a graph; ``ids_out`` (if given) receives ``(element, internal id) -> feature id``."""
    if doc.get("type") != "FeatureCollection":
        raise MalformedFeature("expected a GeoJSON FeatureCollection")
    feats = doc.get("features") or []
    if projection is None:
        origin = doc.get(ORIGIN_KEY)
        if origin is None:
            pts = [f["geometry"]["coordinates"] for f in feats if (f.get("geometry") or {}).get("type") == "Point"]
            arr = np.array(pts, dtype=float) if pts else np.zeros((1, 2))
            origin = [(arr[:, 0].min() + arr[:, 0].max()) / 2, (arr[:, 1].min() + arr[:, 1].max()) / 2]
        projection = LocalProjection((float(origin[0]), float(origin[1])))
    g = PedGraph(projection=projection)
    ids: dict[str, int] = {}
    for i, f in enumerate(feats):
        geom = f.get("geometry") or {}
        if geom.get("type") != "Point":
            continue
        props = f.get("properties") or {}
        kind = props.get("node") or ("curb" if props.get("barrier") == "kerb" else None)
        xy = projection.forward_coords([geom["coordinates"]])[0]
        fid = str(f.get("id", f"_n{i}"))
        ids[fid] = g.add_node(xy, kind, props.get("corner"))
        if ids_out is not None:
            ids_out[("node", ids[fid])] = fid
    for i, f in enumerate(feats):
        geom = f.get("geometry") or {}
        if geom.get("type") == "Point":
            continue
        if geom.get("type") != "LineString":
            raise MalformedFeature(f"feature {i}: unsupported geometry {geom.get('type')}")
        props = f.get("properties") or {}
        kind = props.get("footway")
        if kind is not None and kind not in EDGE_KINDS:
            kind = str(kind)
        xy = projection.forward_coords(geom["coordinates"])
        u = ids.get(str(props.get("from"))) if props.get("from") is not None else None
        v = ids.get(str(props.get("to"))) if props.get("to") is not None else None
        if u is None:
            u = g.node_at(xy[0], tol=1e-3)
            if u is None:
                u = g.add_node(xy[0], None)
                ids[f"_a{i}"] = u
        if v is None:
            v = g.node_at(xy[-1], tol=1e-3)
            if v is None:
                v = g.add_node(xy[-1], None)
                ids[f"_b{i}"] = v
        eid = g.add_edge(u, v, xy, kind, props.get("confidence"))
        if ids_out is not None:
            ids_out[("edge", eid)] = str(f.get("id", f"_e{i}"))
    return g


def dumps(doc) -> str:
    """Canonical JSON text (sorted keys, fixed separators, trailing newline)."""
    return json.dumps(doc, sort_keys=True, indent=1, separators=(",", ": ")) + "\n"


def write_json(doc, path) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    tmp = p.with_name(p.name + ".partial")
    tmp.write_text(dumps(doc))
    tmp.replace(p)
    return p


def read_json(path) -> dict:
    try:
        return json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise MalformedFeature(f"{path}: invalid JSON ({exc})") from None
