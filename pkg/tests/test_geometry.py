import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from emstress import cases
from emstress.geometry import (DanglingReference, DegreeExceeded, DisconnectedGraph, GeometryMismatch,
                               InvalidSpec, Node, OutOfRange, RandomTreeSpec, Segment, TreeError,
                               build_tree, chain_tree, generate_random_tree, locate, node_contexts,
                               point_at)
from emstress.physics import MaterialParams, ScalingFactors


def test_cross_summary_and_incidence():
    tree = cases.cross()
    assert tree.summary() == "4 segments, 1 junction, 4 terminals"
    centre = tree.node(0)
    assert centre.incident == ((0, "next"), (1, "prev"), (2, "next"), (3, "prev"))


def test_chain_coordinates_follow_lengths():
    tree = chain_tree([1e-5, 2e-5], [1e9, 2e9])
    assert tree.node(2).coord == pytest.approx((3e-5, 0.0))
    assert tree.summary() == "2 segments, 1 junction, 2 terminals"


def test_single_segment_has_no_junction():
    tree = cases.blocked_wire()
    assert tree.junctions == []
    assert len(tree.terminals) == 2


def test_dangling_node_reference():
    with pytest.raises(DanglingReference):
        build_tree([Segment(0, 0, 5, 1e-5, 1e-7, 1e9)], [Node(0, (0, 0)), Node(1, (1e-5, 0))])


def test_degree_exceeded():
    nodes = [Node(0, (0.0, 0.0))]
    segs = []
    dirs = [(1, 0), (0, 1), (-1, 0), (0, -1), (0.6, 0.8)]
    for i, (dx, dy) in enumerate(dirs):
        nodes.append(Node(i + 1, (dx * 1e-5, dy * 1e-5)))
        segs.append(Segment(i, 0, i + 1, 1e-5, 1e-7, 1e9))
    with pytest.raises(DegreeExceeded):
        build_tree(segs, nodes)


def test_disconnected_graph():
    nodes = [Node(i, (i * 1e-5, 0.0)) for i in range(4)]
    segs = [Segment(0, 0, 1, 1e-5, 1e-7, 1e9), Segment(1, 2, 3, 1e-5, 1e-7, 1e9)]
    with pytest.raises(DisconnectedGraph):
        build_tree(segs, nodes)


def test_isolated_node_is_disconnected():
    nodes = [Node(0, (0.0, 0.0)), Node(1, (1e-5, 0.0)), Node(2, (5e-5, 0.0))]
    with pytest.raises(DisconnectedGraph):
        build_tree([Segment(0, 0, 1, 1e-5, 1e-7, 1e9)], nodes)


def test_length_must_match_coordinates():
    with pytest.raises(GeometryMismatch):
        build_tree([Segment(0, 0, 1, 2e-5, 1e-7, 1e9)], [Node(0, (0, 0)), Node(1, (1e-5, 0))])


@pytest.mark.parametrize("width", [0.0, -1e-7])
def test_nonpositive_width_rejected(width):
    with pytest.raises(TreeError):
        build_tree([Segment(0, 0, 1, 1e-5, width, 1e9)], [Node(0, (0, 0)), Node(1, (1e-5, 0))])


def test_declared_incidence_must_agree():
    nodes = [Node(0, (0, 0), ((0, "next"),)), Node(1, (1e-5, 0))]
    with pytest.raises(TreeError):
        build_tree([Segment(0, 0, 1, 1e-5, 1e-7, 1e9)], nodes)


def test_locate_and_point_at():
    tree = cases.cross()
    assert locate(tree, 3, 0.5) == pytest.approx(15e-6)
    assert point_at(tree, 3, 0.5) == pytest.approx([0.0, 15e-6])
    assert point_at(tree, 0, 1.0) == pytest.approx([0.0, 0.0])
    with pytest.raises(OutOfRange):
        locate(tree, 0, 1.5)
    with pytest.raises(OutOfRange):
        locate(tree, 7, 0.5)


def test_node_context_signs_and_padding():
    ctxs, segs = node_contexts(cases.cross(), MaterialParams(), 350.0, ScalingFactors())
    c = ctxs[0]
    assert c.degree == 4
    assert list(c.signs) == [1.0, -1.0, 1.0, -1.0]
    # far ends in scaled units (omega_x = 1e-5)
    assert c.adj_coords[0] == pytest.approx([-2.0, 0.0])
    assert c.adj_coords[3] == pytest.approx([0.0, 3.0])
    t = ctxs[1]
    assert t.degree == 1 and np.all(t.adj_G[1:] == 0)
    assert segs[1].slot_prev == 1 and segs[0].slot_next == 0
    assert segs[3].L == pytest.approx(3.0)


def test_random_tree_is_deterministic():
    spec = RandomTreeSpec(n_segments=12, seed=3, mode="branching")
    a, b = generate_random_tree(spec), generate_random_tree(spec)
    assert a == b
    assert generate_random_tree(RandomTreeSpec(n_segments=12, seed=4, mode="branching")) != a


def test_random_spec_validation():
    with pytest.raises(InvalidSpec):
        generate_random_tree(RandomTreeSpec(n_segments=0))
    with pytest.raises(InvalidSpec):
        generate_random_tree(RandomTreeSpec(n_segments=3, length_range_m=(2e-5, 1e-5)))


@settings(max_examples=30, deadline=None)
@given(n=st.integers(1, 40), seed=st.integers(0, 10_000), mode=st.sampled_from(["chain", "branching"]))
def test_random_trees_are_valid(n, seed, mode):
    tree = generate_random_tree(RandomTreeSpec(n_segments=n, seed=seed, mode=mode))
    assert len(tree.segments) == n
    assert len(tree.nodes) == n + 1
    assert all(1 <= node.degree <= 4 for node in tree.nodes)
    for s in tree.segments:
        assert 10e-6 <= s.length_m <= 100e-6
        assert -5e10 <= s.current_density_A_per_m2 <= 5e10
