"""Reference interconnect configurations used by the tests, the CLI
examples and the benchmark sweeps."""

from __future__ import annotations

from .geometry import InterconnectTree, RandomTreeSpec, Segment, Node, build_tree, chain_tree

W_NARROW = 0.1e-6
W_WIDE = 0.2e-6


def four_segment(mixed_width: bool = False) -> InterconnectTree:
    """Straight four-segment wire, 10/20/10/10 um."""
    widths = [W_NARROW, W_WIDE, W_WIDE, W_NARROW] if mixed_width else W_NARROW
    return chain_tree([10e-6, 20e-6, 10e-6, 10e-6], [4e9, -1e9, -4e9, -1e9], widths)


def cross(mixed_width: bool = False) -> InterconnectTree:
    """Cross-shaped wire with four arms meeting at the origin.

    Arms 0 and 2 end at the centre (it is their ``next`` node), arms 1
    and 3 start there; all run along +x or +y.
    """
    w = [W_NARROW, W_WIDE, W_WIDE, W_NARROW] if mixed_width else [W_NARROW] * 4
    coords = [(0.0, 0.0), (-20e-6, 0.0), (10e-6, 0.0), (0.0, -20e-6), (0.0, 30e-6)]
    ends = [(1, 0), (0, 2), (3, 0), (0, 4)]
    lengths = [20e-6, 10e-6, 20e-6, 30e-6]
    js = [4e9, 2e9, 1e9, 7e9]
    orient = ["horizontal", "horizontal", "vertical", "vertical"]
    segs = [Segment(i, a, b, lengths[i], w[i], js[i], orient[i]) for i, (a, b) in enumerate(ends)]
    nodes = [Node(i, c) for i, c in enumerate(coords)]
    return build_tree(segs, nodes)


def two_segment_dynamic() -> InterconnectTree:
    """Two-segment wire used for the time-varying temperature study."""
    return chain_tree([20e-6, 30e-6], [4e9, -1e10])


def blocked_wire(length_m: float = 10e-6, j: float = 4e9) -> InterconnectTree:
    return chain_tree([length_m], [j])


# (L1, L2) in um and (j1, j2) in A/m^2 for the unseen two-segment cases
PARAMETERIZED_TEST_CASES = (
    ((20, 30), (-1e10, 4e10)),
    ((40, 40), (-2e10, 3e10)),
    ((30, 50), (-5e10, 1e10)),
    ((30, 40), (0.3e10, 0.9e10)),
)


def parameterized_test_trees() -> list[InterconnectTree]:
    return [chain_tree([float(f"{a}e-6"), float(f"{b}e-6")], list(js)) for (a, b), js in PARAMETERIZED_TEST_CASES]


def parameterized_spec(seed: int = 0) -> RandomTreeSpec:
    """Random two-segment wires: lengths 10-100 um, |j| up to 5e10 A/m^2."""
    return RandomTreeSpec(n_segments=2, seed=seed, mode="chain")


def tree_to_config(tree: InterconnectTree) -> dict:
    """Tree block of a JSON run configuration."""
    return {
        "nodes": [{"id": n.id, "x_m": float(n.coord[0]), "y_m": float(n.coord[1])} for n in tree.nodes],
        "segments": [{"id": s.id, "prev": s.node_prev, "next": s.node_next, "width_m": s.width_m,
                      "j_A_per_m2": s.current_density_A_per_m2, "orientation": s.orientation}
                     for s in tree.segments],
    }


NAMED_CASES = {
    "four_segment": lambda: four_segment(False),
    "four_segment_mixed": lambda: four_segment(True),
    "cross": lambda: cross(False),
    "cross_mixed": lambda: cross(True),
    "two_segment_dynamic": two_segment_dynamic,
    "blocked_wire": blocked_wire,
}
