import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pednet.errors import MalformedFeature, UnknownNode
from pednet.geo import LocalProjection
from pednet.net import (
    SidewalkMeta,
    StreetEdge,
    StreetNetwork,
    half_block_extents,
    intersections,
    parse_street_network,
    planarize_network,
    to_geojson,
)
from pednet.synthetic import grid_city

PROJ = LocalProjection((-122.3321, 47.6062))


def fc(*lines_m, props=None):
    feats = []
    for line in lines_m:
        ll = PROJ.inverse_coords(np.asarray(line, dtype=float)).tolist()
        feats.append({"type": "Feature", "properties": dict(props or {}), "geometry": {"type": "LineString", "coordinates": ll}})
    return {"type": "FeatureCollection", "features": feats}


def network(nodes, edges):
    """StreetNetwork from node coords and (u, v) pairs with straight geometry."""
    ns = {i: np.asarray(p, dtype=float) for i, p in enumerate(nodes)}
    es = {k: StreetEdge(u, v, np.array([ns[u], ns[v]])) for k, (u, v) in enumerate(edges)}
    return StreetNetwork(ns, es, PROJ)


def test_empty_collection():
    g = parse_street_network({"type": "FeatureCollection", "features": []}, PROJ)
    assert len(g.nodes) == 0 and len(g.edges) == 0


def test_shared_endpoint_merges():
    g = parse_street_network(fc([(0, 0), (50, 0)], [(50, 0), (50, 40)]), PROJ)
    assert (len(g.nodes), len(g.edges)) == (3, 2)


def test_single_coordinate_feature_rejected():
    doc = fc([(0, 0), (10, 0)])
    doc["features"][0]["geometry"]["coordinates"] = doc["features"][0]["geometry"]["coordinates"][:1]
    with pytest.raises(MalformedFeature):
        parse_street_network(doc, PROJ)


def test_geometry_endpoints_match_nodes(grid3):
    _, g, _ = grid3
    for e in g.edges.values():
        assert np.allclose(e.geometry[0], g.nodes[e.u], atol=1e-6)
        assert np.allclose(e.geometry[-1], g.nodes[e.v], atol=1e-6)
    coords = {tuple(np.round(p, 6)) for p in g.nodes.values()}
    assert len(coords) == len(g.nodes)


def test_intersections_single_edge():
    assert intersections(network([(0, 0), (10, 0)], [(0, 1)])) == []


def test_intersections_3x3_lattice():
    nodes = [(x * 10, y * 10) for y in range(3) for x in range(3)]
    edges = [(r * 3 + c, r * 3 + c + 1) for r in range(3) for c in range(2)]
    edges += [(r * 3 + c, (r + 1) * 3 + c) for r in range(2) for c in range(3)]
    g = network(nodes, edges)
    assert len(g.edges) == 12
    got = sorted(intersections(g))
    assert got == [1, 3, 4, 5, 7]
    assert g.degree(4) == 4 and all(g.degree(n) == 3 for n in (1, 3, 5, 7))


def test_intersections_t_junction():
    g = network([(0, 0), (-10, 0), (10, 0), (0, 10)], [(0, 1), (0, 2), (0, 3)])
    assert intersections(g) == [0]


def test_half_block_straight():
    g = network([(0, 0), (100, 0)], [(0, 1)])
    (ext,) = half_block_extents(g, 0)
    assert ext.geometry[-1] == pytest.approx([50, 0])


def test_half_block_curved():
    ns = {0: np.array([0.0, 0.0]), 1: np.array([30.0, 30.0])}
    es = {0: StreetEdge(0, 1, np.array([(0, 0), (30, 0), (30, 30)], dtype=float))}
    (ext,) = half_block_extents(StreetNetwork(ns, es, PROJ), 0)
    assert np.allclose(ext.geometry[-1], (30, 0))
    assert ext.full_length == pytest.approx(60)


def test_half_block_unknown_node():
    g = network([(0, 0), (100, 0), (200, 0)], [(0, 1)])
    with pytest.raises(UnknownNode):
        half_block_extents(g, 2)


def test_sidewalk_meta():
    assert SidewalkMeta.from_tags({}).presence == "unknown"
    assert SidewalkMeta.from_tags({"sidewalk": "no"}).presence == "none"
    assert SidewalkMeta.from_tags({"sidewalk": "left", "sidewalk_offset": "6"}).offset == 6.0
    with pytest.raises(MalformedFeature):
        SidewalkMeta.from_tags({"sidewalk": "sometimes"})
    with pytest.raises(ValueError):
        SidewalkMeta("left", -1.0)


def test_highway_filter():
    doc = fc([(0, 0), (50, 0)], props={"highway": "motorway"})
    assert len(parse_street_network(doc, PROJ, highway_include=["residential"]).edges) == 0


def test_ways_through_intersections_are_noded():
    g = parse_street_network(grid_city(2, 2), PROJ)
    assert (len(g.nodes), len(g.edges)) == (9, 12)


def test_planarize_splits_crossing_lines():
    g = parse_street_network(fc([(-50, 0), (50, 0)], [(0, -50), (0, 50)]), PROJ)
    assert len(g.nodes) == 4
    p = planarize_network(g)
    assert (len(p.nodes), len(p.edges)) == (5, 4)
    assert p.total_length() == pytest.approx(g.total_length())


def test_reparse_is_idempotent(grid3):
    doc, g, _ = grid3
    again = parse_street_network(to_geojson(g), g.projection)
    assert (len(again.nodes), len(again.edges)) == (len(g.nodes), len(g.edges))
    assert sorted(again.degree(n) for n in again.nodes) == sorted(g.degree(n) for n in g.nodes)
    # coordinates are written with 9 decimals (about 0.1 mm)
    assert again.total_length() == pytest.approx(g.total_length(), abs=1e-3)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4), st.floats(40, 150))
def test_length_preserved_by_node_merging(nx_, ny_, block):
    doc = grid_city(nx_, ny_, block)
    g = parse_street_network(doc, PROJ)
    expected = (ny_ + 1) * nx_ * block + (nx_ + 1) * ny_ * block
    assert g.total_length() == pytest.approx(expected, rel=1e-6)
