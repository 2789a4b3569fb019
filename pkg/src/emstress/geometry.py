"""Interconnect trees: 1-D segments joined at nodes.

Every segment runs from its preceding node (``node_prev``, local x = 0) to
its subsequent node (``node_next``, local x = L).  At a node, the
orientation sign of an incident segment is +1 when the node is the
segment's subsequent end and -1 when it is the preceding end.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .physics import MaterialParams, ScalingFactors, diffusivity, em_driving_force

MAX_DEGREE = 4


class TreeError(ValueError):
    pass


class DisconnectedGraph(TreeError):
    pass


class DegreeExceeded(TreeError):
    pass


class GeometryMismatch(TreeError):
    pass


class DanglingReference(TreeError):
    pass


class OutOfRange(ValueError):
    pass


class InvalidSpec(ValueError):
    pass


@dataclass(frozen=True)
class Segment:
    id: int
    node_prev: int
    node_next: int
    length_m: float
    width_m: float
    current_density_A_per_m2: float
    orientation: str = "horizontal"


@dataclass(frozen=True)
class Node:
    id: int
    coord: tuple[float, float]
    # (segment id, side) with side "prev" when the node is the segment's C- end
    incident: tuple[tuple[int, str], ...] = ()

    @property
    def degree(self) -> int:
        return len(self.incident)

    @property
    def is_terminal(self) -> bool:
        return len(self.incident) == 1


@dataclass(frozen=True)
class InterconnectTree:
    segments: tuple[Segment, ...]
    nodes: tuple[Node, ...]

    def segment(self, sid: int) -> Segment:
        return self.segments[sid]

    def node(self, nid: int) -> Node:
        return self.nodes[nid]

    @property
    def junctions(self) -> list[Node]:
        return [n for n in self.nodes if n.degree > 1]

    @property
    def terminals(self) -> list[Node]:
        return [n for n in self.nodes if n.is_terminal]

    def summary(self) -> str:
        def count(n, noun):
            return f"{n} {noun}" + ("" if n == 1 else "s")

        return ", ".join([count(len(self.segments), "segment"), count(len(self.junctions), "junction"),
                          count(len(self.terminals), "terminal")])


def build_tree(segments, nodes) -> InterconnectTree:
    """Validate raw segments/nodes and fill in node incidence lists.

    ``nodes`` may carry declared incidences; if they do, they must agree
    with the segments' ``node_prev``/``node_next`` fields.
    """
    segments = sorted(segments, key=lambda s: s.id)
    nodes = sorted(nodes, key=lambda n: n.id)
    if [s.id for s in segments] != list(range(len(segments))):
        raise TreeError("segment ids must be dense and unique, starting at 0")
    if [n.id for n in nodes] != list(range(len(nodes))):
        raise TreeError("node ids must be dense and unique, starting at 0")
    if not segments:
        raise TreeError("tree has no segments")

    incident: dict[int, list[tuple[int, str]]] = {n.id: [] for n in nodes}
    for s in segments:
        for nid, side in ((s.node_prev, "prev"), (s.node_next, "next")):
            if nid not in incident:
                raise DanglingReference(f"segment {s.id} references missing node {nid}")
            incident[nid].append((s.id, side))
        if s.node_prev == s.node_next:
            raise TreeError(f"segment {s.id} starts and ends at node {s.node_prev}")
        if not (s.length_m > 0):
            raise TreeError(f"segment {s.id}: length must be positive")
        if not (s.width_m > 0):
            raise TreeError(f"segment {s.id}: width must be positive")
        if not math.isfinite(s.current_density_A_per_m2):
            raise TreeError(f"segment {s.id}: current density must be finite")
        a = np.asarray(nodes[s.node_prev].coord, dtype=float)
        b = np.asarray(nodes[s.node_next].coord, dtype=float)
        dist = float(np.hypot(*(b - a)))
        if abs(dist - s.length_m) > 1e-9 * s.length_m:
            raise GeometryMismatch(
                f"segment {s.id}: length {s.length_m!r} m but nodes are {dist!r} m apart")

    built = []
    for n in nodes:
        inc = tuple(incident[n.id])
        if n.incident:
            declared = tuple((int(sid), str(side)) for sid, side in n.incident)
            for sid, _ in declared:
                if not 0 <= sid < len(segments):
                    raise DanglingReference(f"node {n.id} references missing segment {sid}")
            if sorted(declared) != sorted(inc):
                raise TreeError(f"node {n.id}: declared incidences {declared} do not match segments")
            inc = declared
        if len(inc) == 0:
            raise DisconnectedGraph(f"node {n.id} has no incident segments")
        if len(inc) > MAX_DEGREE:
            raise DegreeExceeded(f"node {n.id} has degree {len(inc)} > {MAX_DEGREE}")
        built.append(Node(n.id, (float(n.coord[0]), float(n.coord[1])), inc))

    tree = InterconnectTree(tuple(segments), tuple(built))
    if len(bfs_order(tree)) != len(built):
        raise DisconnectedGraph("interconnect graph is not connected")
    return tree


def bfs_order(tree: InterconnectTree, start: int = 0) -> list[int]:
    seen = {start}
    order = []
    queue = deque([start])
    while queue:
        nid = queue.popleft()
        order.append(nid)
        for sid, _ in tree.nodes[nid].incident:
            s = tree.segments[sid]
            other = s.node_next if s.node_prev == nid else s.node_prev
            if other not in seen:
                seen.add(other)
                queue.append(other)
    return order


@dataclass(frozen=True)
class NodeContext:
    node_id: int
    degree: int
    adj_G: np.ndarray
    adj_w: np.ndarray
    signs: np.ndarray
    coord: np.ndarray
    segment_ids: tuple[int, ...] = ()
    # far-end coordinates of incident segments, (4, 2), zero padded
    adj_coords: np.ndarray = field(default_factory=lambda: np.zeros((MAX_DEGREE, 2)))

    @property
    def is_terminal(self) -> bool:
        return self.degree == 1


@dataclass(frozen=True)
class SegmentContext:
    segment_id: int
    L: float
    G: float
    kappa: float
    ctx_prev: NodeContext
    ctx_next: NodeContext
    # position of this segment in each end node's incidence list
    slot_prev: int = 0
    slot_next: int = 0
    width: float = 1.0


def node_contexts(tree: InterconnectTree, material: MaterialParams,
                  temperature_K: float = 350.0, factors: ScalingFactors | None = None):
    """Per-node adjacency collections and per-segment contexts.

    Quantities are SI unless ``factors`` is given, in which case lengths,
    coordinates, driving forces and diffusivity are in scaled units
    (widths stay in metres: they only enter through ratios).
    """
    f = factors or ScalingFactors.identity()
    kappa = f.kappa(diffusivity(temperature_K, material))
    G = [f.driving_force(em_driving_force(s.current_density_A_per_m2, material))
         for s in tree.segments]
    ctxs: dict[int, NodeContext] = {}
    for nid in bfs_order(tree):
        node = tree.nodes[nid]
        adj_G = np.zeros(MAX_DEGREE)
        adj_w = np.zeros(MAX_DEGREE)
        signs = np.zeros(MAX_DEGREE)
        adj_c = np.zeros((MAX_DEGREE, 2))
        for m, (sid, side) in enumerate(node.incident):
            s = tree.segments[sid]
            adj_G[m] = G[sid]
            adj_w[m] = s.width_m
            signs[m] = 1.0 if side == "next" else -1.0
            far = s.node_prev if side == "next" else s.node_next
            adj_c[m] = np.asarray(tree.nodes[far].coord) / f.omega_x
        ctxs[nid] = NodeContext(nid, node.degree, adj_G, adj_w, signs,
                                np.asarray(node.coord, dtype=float) / f.omega_x,
                                tuple(sid for sid, _ in node.incident), adj_c)
    seg_ctxs: dict[int, SegmentContext] = {}
    for s in tree.segments:
        slot_prev = tree.nodes[s.node_prev].incident.index((s.id, "prev"))
        slot_next = tree.nodes[s.node_next].incident.index((s.id, "next"))
        seg_ctxs[s.id] = SegmentContext(s.id, s.length_m / f.omega_x, G[s.id], kappa,
                                        ctxs[s.node_prev], ctxs[s.node_next],
                                        slot_prev, slot_next, s.width_m)
    return ctxs, seg_ctxs


def locate(tree: InterconnectTree, segment_id: int, fraction: float) -> float:
    """Local coordinate (m from the C- end) of a fractional position."""
    if not 0 <= segment_id < len(tree.segments):
        raise OutOfRange(f"no segment {segment_id}")
    if not 0.0 <= fraction <= 1.0:
        raise OutOfRange(f"fraction {fraction} outside [0, 1]")
    return fraction * tree.segments[segment_id].length_m


def point_at(tree: InterconnectTree, segment_id: int, fraction: float) -> np.ndarray:
    s = tree.segments[segment_id]
    a = np.asarray(tree.nodes[s.node_prev].coord)
    b = np.asarray(tree.nodes[s.node_next].coord)
    return a + (locate(tree, segment_id, fraction) / s.length_m) * (b - a)


def chain_tree(lengths_m, current_densities, widths_m=1e-7) -> InterconnectTree:
    """Straight horizontal wire made of consecutive segments."""
    lengths = [float(v) for v in lengths_m]
    js = [float(v) for v in current_densities]
    if len(lengths) != len(js):
        raise InvalidSpec("lengths and current densities differ in count")
    widths = [float(widths_m)] * len(lengths) if np.ndim(widths_m) == 0 else list(widths_m)
    xs = np.concatenate([[0.0], np.cumsum(lengths)])
    nodes = [Node(i, (float(x), 0.0)) for i, x in enumerate(xs)]
    # recompute lengths from coordinates so cumulative rounding stays consistent
    segs = [Segment(i, i, i + 1, float(xs[i + 1] - xs[i]), widths[i], js[i])
            for i in range(len(lengths))]
    return build_tree(segs, nodes)


_DIRECTIONS = ((1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0))


@dataclass(frozen=True)
class RandomTreeSpec:
    n_segments: int
    length_range_m: tuple[float, float] = (10e-6, 100e-6)
    j_range_A_per_m2: tuple[float, float] = (-5e10, 5e10)
    width_set_m: tuple[float, ...] = (1e-7,)
    seed: int = 0
    mode: str = "chain"

    def validate(self):
        lo, hi = self.length_range_m
        if self.n_segments < 1:
            raise InvalidSpec("n_segments must be >= 1")
        if not (0 < lo <= hi):
            raise InvalidSpec("length range must be positive and ordered")
        if self.j_range_A_per_m2[0] > self.j_range_A_per_m2[1]:
            raise InvalidSpec("current density range must be ordered")
        if not self.width_set_m or any(w <= 0 for w in self.width_set_m):
            raise InvalidSpec("width set must be non-empty and positive")
        if self.mode not in ("chain", "branching"):
            raise InvalidSpec(f"unknown mode {self.mode!r}")


def generate_random_tree(spec: RandomTreeSpec) -> InterconnectTree:
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n = spec.n_segments
    lengths = rng.uniform(*spec.length_range_m, size=n)
    js = rng.uniform(*spec.j_range_A_per_m2, size=n)
    widths = rng.choice(np.asarray(spec.width_set_m, dtype=float), size=n)
    if spec.mode == "chain":
        return chain_tree(lengths, js, widths)

    coords = [(0.0, 0.0)]
    free = {0: list(range(4))}
    segs = []
    for i in range(n):
        candidates = [nid for nid, dirs in free.items() if dirs]
        anchor = int(rng.choice(candidates))
        d = free[anchor].pop(int(rng.integers(len(free[anchor]))))
        dx, dy = _DIRECTIONS[d]
        ax, ay = coords[anchor]
        new = len(coords)
        coords.append((ax + dx * lengths[i], ay + dy * lengths[i]))
        # the opposite direction at the new node is taken by this segment
        free[new] = [k for k in range(4) if k != (d + 2) % 4]
        positive = d in (0, 1)
        prev, nxt = (anchor, new) if positive else (new, anchor)
        orient = "horizontal" if d in (0, 2) else "vertical"
        segs.append((i, prev, nxt, widths[i], js[i], orient))
    nodes = [Node(k, c) for k, c in enumerate(coords)]
    built = []
    for i, prev, nxt, w, j, orient in segs:
        a, b = np.asarray(coords[prev]), np.asarray(coords[nxt])
        built.append(Segment(i, prev, nxt, float(np.hypot(*(b - a))), float(w), float(j), orient))
    return build_tree(built, nodes)
