"""Match graph construction and event clustering by connected components."""

from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

from .filtering import MatchingList

log = logging.getLogger(__name__)


class Edge(NamedTuple):
    """Undirected edge, oriented so ``a`` precedes ``b`` in insertion order.

    ``offset_s`` is ``position(b) - position(a)`` on the shared timeline.
    """

    a: str
    b: str
    offset_s: float
    l: int


@dataclass
class MatchGraph:
    vertices: list[str]
    edges: dict[tuple[str, str], Edge] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._order = {v: k for k, v in enumerate(self.vertices)}
        self._adj: dict[str, list[str]] | None = None

    def order_of(self, v: str) -> int:
        return self._order[v]

    def add_edge(self, e: Edge) -> None:
        if e.a == e.b:
            raise ValueError(f"self-edge on {e.a!r}")
        if self._order[e.a] > self._order[e.b]:
            e = Edge(e.b, e.a, -e.offset_s, e.l)
        self.edges[(e.a, e.b)] = e
        self._adj = None

    def edge(self, u: str, v: str) -> Edge | None:
        if self._order[u] > self._order[v]:
            u, v = v, u
        return self.edges.get((u, v))

    def neighbors(self, v: str) -> list[str]:
        if self._adj is None:
            adj: dict[str, list[str]] = {u: [] for u in self.vertices}
            for a, b in self.edges:
                adj[a].append(b)
                adj[b].append(a)
            for u in adj:
                adj[u].sort(key=self._order.__getitem__)
            self._adj = adj
        return self._adj[v]

    def degree(self, v: str) -> int:
        return len(self.neighbors(v))

    def sorted_edges(self) -> list[Edge]:
        return sorted(self.edges.values(), key=lambda e: (self._order[e.a], self._order[e.b]))


@dataclass(frozen=True)
class ClusterSet:
    clusters: tuple[tuple[str, ...], ...]
    unmatched: tuple[str, ...]

    def cluster_of(self) -> dict[str, int]:
        return {v: k for k, members in enumerate(self.clusters) for v in members}


def build_graph(
    filtered: Mapping[str, MatchingList],
    vertices: Sequence[str],
    frame_s: float,
) -> MatchGraph:
    """Union of all accepted directional matches.

    A query ``q`` listing candidate ``c`` at ``offset_frames`` places ``c``
    that many frames after ``q``.  When both directions exist and disagree by
    more than two frames a warning is recorded and the higher-``l`` direction
    wins (the earlier vertex's list on ties).
    """
    g = MatchGraph(list(vertices))
    # (a, b) -> [(l, tiebreak, offset_frames as pos(b) - pos(a))]
    contrib: dict[tuple[str, str], list[tuple[int, int, int]]] = {}
    for qid in sorted(filtered, key=g.order_of):
        for c in filtered[qid].candidates:
            if c.candidate_id == qid:
                continue
            if g.order_of(qid) < g.order_of(c.candidate_id):
                key, off, tb = (qid, c.candidate_id), c.offset_frames, 0
            else:
                key, off, tb = (c.candidate_id, qid), -c.offset_frames, 1
            contrib.setdefault(key, []).append((c.l, tb, off))
    for key in sorted(contrib, key=lambda k: (g.order_of(k[0]), g.order_of(k[1]))):
        items = contrib[key]
        l, _, off = min(items, key=lambda it: (-it[0], it[1], abs(it[2])))
        offs = [it[2] for it in items]
        if max(offs) - min(offs) > 2:
            msg = f"inconsistent offsets for {key[0]}-{key[1]}: {sorted(set(offs))} frames; using {off}"
            log.warning(msg)
            g.warnings.append(msg)
        g.add_edge(Edge(key[0], key[1], off * frame_s, l))
    return g


def connected_components(g: MatchGraph) -> ClusterSet:
    parent = {v: v for v in g.vertices}

    def find(x: str) -> str:
        while parent[x] != x:
            parent[x] = parent[parent[x]]
            x = parent[x]
        return x

    for a, b in g.edges:
        ra, rb = find(a), find(b)
        if ra != rb:
            # root at the earlier vertex keeps labels insertion-ordered
            if g.order_of(ra) < g.order_of(rb):
                parent[rb] = ra
            else:
                parent[ra] = rb
    groups: dict[str, list[str]] = {}
    for v in g.vertices:
        groups.setdefault(find(v), []).append(v)
    clusters = tuple(tuple(m) for m in groups.values() if len(m) > 1)
    unmatched = tuple(m[0] for m in groups.values() if len(m) == 1)
    return ClusterSet(clusters, unmatched)


@dataclass(frozen=True)
class Timeline:
    positions: dict[str, float]
    tree: tuple[Edge, ...]
    warnings: tuple[str, ...]


def propagate_offsets(cluster: Iterable[str], g: MatchGraph, tolerance_s: float) -> Timeline:
    """Place a connected cluster on one timeline via a max-evidence spanning tree.

    Positions are shifted so the earliest clip sits at 0.  Non-tree edges whose
    implied offset disagrees with the tree by more than ``tolerance_s`` are
    reported as warnings.
    """
    members = sorted(cluster, key=g.order_of)
    if not members:
        return Timeline({}, (), ())
    member_set = set(members)
    root = members[0]
    pos = {root: 0.0}
    tree: list[Edge] = []
    heap: list[tuple[int, int, int, str, str]] = []

    def push(u: str) -> None:
        for v in g.neighbors(u):
            if v in member_set and v not in pos:
                e = g.edge(u, v)
                heapq.heappush(heap, (-e.l, g.order_of(u), g.order_of(v), u, v))

    push(root)
    while heap:
        _, _, _, u, v = heapq.heappop(heap)
        if v in pos:
            continue
        e = g.edge(u, v)
        pos[v] = pos[u] + (e.offset_s if e.a == u else -e.offset_s)
        tree.append(e)
        push(v)
    if len(pos) != len(members):
        raise ValueError("cluster is not connected")

    shift = min(pos.values())
    positions = {v: pos[v] - shift for v in members}
    tree_keys = {(e.a, e.b) for e in tree}
    warnings = []
    for (a, b), e in sorted(g.edges.items(), key=lambda kv: (g.order_of(kv[0][0]), g.order_of(kv[0][1]))):
        if a in member_set and (a, b) not in tree_keys:
            err = positions[b] - positions[a] - e.offset_s
            if abs(err) > tolerance_s:
                warnings.append(f"cycle inconsistency on {a}-{b}: {err:+.3f} s")
    for w in warnings:
        log.warning(w)
    return Timeline(positions, tuple(tree), tuple(warnings))
