import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from pednet.errors import EmptyCandidates, InvalidFractions, NoCandidates
from pednet.geo import LocalProjection, line_length
from pednet.net import StreetEdge, StreetNetwork, intersections, parse_street_network
from pednet.pedestrianfer import (
    CrossingCandidate,
    CrossingCostWeights,
    HypothesisConfig,
    build_hypothesis,
    enumerate_blocks,
    generate_crossing_candidates,
    generate_sidewalks,
    project_known_crossing,
    select_best_crossing,
    split_crossing,
)
from pednet.synthetic import grid_city

PROJ = LocalProjection((-122.3321, 47.6062))


def network(nodes, edges, tags=None):
    ns = {i: np.asarray(p, dtype=float) for i, p in enumerate(nodes)}
    es = {}
    for k, (u, v) in enumerate(edges):
        e = StreetEdge(u, v, np.array([ns[u], ns[v]]), dict(tags or {}))
        if tags:
            from pednet.net import SidewalkMeta

            e.meta = SidewalkMeta.from_tags(tags)
        es[k] = e
    return StreetNetwork(ns, es, PROJ)


SQUARE = [(0, 0), (100, 0), (100, 100), (0, 100)]


def test_square_has_two_blocks():
    blocks = enumerate_blocks(network(SQUARE, [(0, 1), (1, 2), (2, 3), (3, 0)]))
    assert len(blocks) == 2
    assert sum(b.is_outer for b in blocks) == 1


def test_two_squares_three_blocks():
    nodes = SQUARE + [(200, 0), (200, 100)]
    edges = [(0, 1), (1, 2), (2, 3), (3, 0), (1, 4), (4, 5), (5, 2)]
    assert len(enumerate_blocks(network(nodes, edges))) == 3


def test_tree_has_one_block():
    g = network([(0, 0), (50, 0), (100, 0), (50, 50)], [(0, 1), (1, 2), (1, 3)])
    assert len(enumerate_blocks(g)) == 1


@settings(max_examples=25, deadline=None)
@given(st.integers(1, 4), st.integers(1, 4))
def test_blocks_use_each_dart_once(nx_, ny_):
    g = parse_street_network(grid_city(nx_, ny_), PROJ)
    blocks = enumerate_blocks(g)
    darts = Counter(d for b in blocks for d in b.darts)
    expected = Counter((eid, fwd) for eid in g.edges for fwd in (True, False))
    assert darts == expected
    assert len(blocks) == len(g.edges) - len(g.nodes) + 2
    for b in blocks:
        eid, fwd = b.darts[-1]
        assert b.nodes[0] == (g.edges[eid].v if fwd else g.edges[eid].u)


def test_square_block_sidewalk_perimeter():
    g = network(SQUARE, [(0, 1), (1, 2), (2, 3), (3, 0)])
    blocks = enumerate_blocks(g)
    inner = [b for b in blocks if not b.is_outer]
    sws = generate_sidewalks(g, inner, 4.0)
    assert sum(line_length(s.geometry) for s in sws) == pytest.approx(368.0, abs=1e-6)


def test_left_only_sidewalk():
    g = network([(0, 0), (100, 0)], [(0, 1)], tags={"sidewalk": "left"})
    sws = generate_sidewalks(g, enumerate_blocks(g), 4.0, regime="metadata")
    assert len(sws) == 1
    geom = sws[0].geometry
    assert len(geom) == 2 and np.allclose(sorted(map(tuple, geom)), [(0, 4), (100, 4)])


def test_offset_zero_rejected():
    g = network(SQUARE, [(0, 1), (1, 2), (2, 3), (3, 0)])
    with pytest.raises(ValueError):
        generate_sidewalks(g, enumerate_blocks(g), 0.0)


STREET = np.array([(0.0, 0.0), (50.0, 0.0)])
LEFT = [np.array([(-10.0, 4.0), (60.0, 4.0)])]
RIGHT = [np.array([(-10.0, -4.0), (60.0, -4.0)])]


def test_candidates_on_straight_street():
    cands = generate_crossing_candidates(STREET, LEFT, RIGHT, step=1.0)
    assert len(cands) == 51
    assert all(c.length == pytest.approx(8.0) and c.angle_dev == pytest.approx(0.0, abs=1e-9) for c in cands)
    assert cands[10].dist_to_intersection == pytest.approx(10.0)


def test_candidates_need_both_sides():
    with pytest.raises(NoCandidates):
        generate_crossing_candidates(STREET, LEFT, [], step=1.0)


def test_best_crossing_at_intersection():
    cands = generate_crossing_candidates(STREET, LEFT, RIGHT, step=1.0)
    assert select_best_crossing(cands).anchor_s == 0.0


def test_best_crossing_tie_break():
    geom = np.array([(0.0, -4.0), (0.0, 4.0)])
    cands = [CrossingCandidate(s, geom, 5.0, 8.0, 3.0) for s in (3.0, 0.0, 7.0)]
    assert select_best_crossing(cands).anchor_s == 0.0


def test_best_crossing_empty():
    with pytest.raises(EmptyCandidates):
        select_best_crossing([])


cand_st = st.builds(
    lambda s, d, l, a: CrossingCandidate(s, np.zeros((2, 2)), d, l, a),
    st.floats(0, 50), st.floats(0, 50), st.floats(1, 30), st.floats(0, 90),
)


@settings(max_examples=100, deadline=None)
@given(st.lists(cand_st, min_size=1, max_size=10), st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.1, 5), st.floats(0.01, 100))
def test_selection_invariant_to_weight_scaling(cands, wd, wl, wa, k):
    a = select_best_crossing(cands, CrossingCostWeights(wd, wl, wa))
    b = select_best_crossing(cands, CrossingCostWeights(wd * k, wl * k, wa * k))
    ca = (a.dist_to_intersection, a.length, a.angle_dev)
    cb = (b.dist_to_intersection, b.length, b.angle_dev)
    # cost ties may pick different candidates, but never ones with different cost
    def cost(c, w=CrossingCostWeights(wd, wl, wa)):
        dmax = max(x.dist_to_intersection for x in cands) or 1
        lmax = max(x.length for x in cands)
        return w.w_dist * c[0] / dmax + w.w_len * c[1] / lmax + w.w_ang * c[2] / 90
    assert cost(ca) == pytest.approx(cost(cb), abs=1e-9)


def test_project_known_crossing():
    c = project_known_crossing((12, 0.5), LEFT, RIGHT)
    assert np.allclose(c.geometry, [(12, 4), (12, -4)])


def test_project_known_on_sidewalk():
    c = project_known_crossing((20, 4), LEFT, RIGHT)
    assert np.allclose(c.geometry[0], (20, 4))


def test_project_known_without_sidewalks():
    with pytest.raises(NoCandidates):
        project_known_crossing((12, 0), [], [])


def test_split_straight_crossing():
    sp = split_crossing(np.array([(10.0, -4.0), (10.0, 4.0)]))
    assert np.allclose(sp.curbs, [(10, -2), (10, 2)])
    assert [k for _, k in sp.segments] == ["link", "crossing", "link"]


def test_split_invalid_fractions():
    with pytest.raises(InvalidFractions):
        split_crossing(np.array([(0.0, 0.0), (1.0, 0.0)]), (0.5, 0.5))


def test_split_curved_crossing():
    geom = np.array([(0.0, 0.0), (6.0, 0.0), (6.0, 6.0)])
    sp = split_crossing(geom, (1 / 3, 2 / 3))
    assert np.allclose(sp.curbs, [(4, 0), (6, 2)])
    assert sum(line_length(s) for s, _ in sp.segments) == pytest.approx(12.0)


def _check_crossing_structure(pg):
    for eid in pg.edges_of_kind("crossing"):
        e = pg.edges[eid]
        assert pg.nodes[e.u].kind == "curb" and pg.nodes[e.v].kind == "curb"
    for nid in pg.nodes_of_kind("curb"):
        kinds = Counter(pg.edges[eid].kind for eid in pg.incident(nid))
        assert kinds == Counter({"crossing": 1, "link": 1})


def test_hypothesis_2x2_crossings_per_arm():
    g = parse_street_network(grid_city(2, 2), PROJ)
    pg = build_hypothesis(g, HypothesisConfig(regime="full"))
    arms = sum(g.degree(n) for n in intersections(g))
    assert arms == 16
    assert len(pg.edges_of_kind("crossing")) == arms
    assert len(pg.nodes_of_kind("curb")) == 2 * arms
    _check_crossing_structure(pg)
    assert pg.is_connected()
    assert not pg.warnings


def test_hypothesis_single_street():
    g = network([(0, 0), (100, 0)], [(0, 1)])
    pg = build_hypothesis(g, HypothesisConfig(regime="full"))
    assert len(pg.edges_of_kind("sidewalk")) == 2
    assert not pg.edges_of_kind("crossing")


def test_hypothesis_no_sidewalks_metadata():
    g = parse_street_network(grid_city(2, 2, tags={"sidewalk": "no"}), PROJ)
    pg = build_hypothesis(g, HypothesisConfig(regime="metadata"))
    assert not pg.nodes and not pg.edges


@settings(max_examples=10, deadline=None)
@given(st.integers(1, 3), st.integers(1, 3), st.floats(60, 140))
def test_hypothesis_structure_on_grids(nx_, ny_, block):
    # a single square block has no intersection, hence no crossing joining
    # its inner and outer rings
    assume(nx_ * ny_ > 1)
    g = parse_street_network(grid_city(nx_, ny_, block), PROJ)
    pg = build_hypothesis(g, HypothesisConfig(regime="full"))
    _check_crossing_structure(pg)
    assert pg.is_connected()


def test_corner_ids_assigned(grid3):
    _, g, pg = grid3
    corners = pg.corners()
    for cid, members in corners.items():
        node = int(cid.split(":")[0])
        for m in members:
            assert math.dist(pg.nodes[m].xy, g.nodes[node]) <= 15.0
    # a 4-way intersection has four corner sectors
    four_way = [n for n in intersections(g) if g.degree(n) == 4]
    assert all(sum(c.startswith(f"{n}:") for c in corners) == 4 for n in four_way)
