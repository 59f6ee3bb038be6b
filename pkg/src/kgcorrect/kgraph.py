"""Knowledge graphs over triplets: construction, cycle detection, spanning
forests, and induced verified subgraphs.

Graphs are immutable after build; every operation returns a new graph.
Edges are undirected and keyed by (endpoint pair, casefolded relation);
re-asserting the same fact merges sources instead of adding a parallel edge,
while the same endpoints under a different relation do form a parallel edge.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

from .triplets import Triplet

ORIGIN_CONTEXT = "context"
ORIGIN_GENERATED = "generated"
ORIGIN_VERIFIED = "verified-subgraph"


class GraphError(Exception):
    pass


class UnknownEntityError(GraphError):
    def __init__(self, key: str):
        super().__init__(f"unknown entity key: {key!r}")
        self.key = key


@dataclass(frozen=True)
class Entity:
    canonical: str
    mentions: tuple[str, ...]
    embedding_id: Optional[str] = None


@dataclass(frozen=True)
class Edge:
    endpoints: tuple[str, str]
    relation: str
    source_triplet_ids: tuple[int, ...]
    weight: float
    min_sentence_index: Optional[int] = None

    def other(self, key: str) -> str:
        u, v = self.endpoints
        return v if key == u else u

    def pair(self) -> tuple[str, str]:
        u, v = self.endpoints
        return (u, v) if u <= v else (v, u)


@dataclass(frozen=True)
class RejectedTriplet:
    triplet_id: int
    reason: str


class KnowledgeGraph:
    """Entities as nodes, relations as bidirectional labeled edges."""

    def __init__(self, origin: str = ORIGIN_GENERATED):
        self.origin = origin
        self._nodes: dict[str, Entity] = {}
        self._edges: list[Edge] = []
        self._adjacency: dict[str, list[int]] = {}
        self.rejected: tuple[RejectedTriplet, ...] = ()
        self.source_triplets: tuple[Triplet, ...] = ()

    @property
    def nodes(self) -> dict[str, Entity]:
        return self._nodes

    @property
    def edges(self) -> tuple[Edge, ...]:
        return tuple(self._edges)

    @property
    def n_nodes(self) -> int:
        return len(self._nodes)

    @property
    def n_edges(self) -> int:
        return len(self._edges)

    def has_node(self, key: str) -> bool:
        return key in self._nodes

    def node(self, key: str) -> Entity:
        if key not in self._nodes:
            raise UnknownEntityError(key)
        return self._nodes[key]

    def edges_at(self, key: str) -> tuple[Edge, ...]:
        return tuple(self._edges[i] for i in self._adjacency.get(key, ()))

    def adjacency(self, key: str) -> tuple[str, ...]:
        return tuple(edge.other(key) for edge in self.edges_at(key))

    def triplet(self, triplet_id: int) -> Triplet:
        return self.source_triplets[triplet_id]

    # builder internals -----------------------------------------------------

    def _add_node(self, canonical: str, surface: str) -> None:
        existing = self._nodes.get(canonical)
        if existing is None:
            self._nodes[canonical] = Entity(canonical=canonical, mentions=(surface,))
            self._adjacency[canonical] = []
        elif surface not in existing.mentions:
            self._nodes[canonical] = Entity(
                canonical=canonical, mentions=existing.mentions + (surface,),
                embedding_id=existing.embedding_id,
            )

    def _add_edge(self, edge: Edge) -> None:
        idx = len(self._edges)
        self._edges.append(edge)
        u, v = edge.endpoints
        self._adjacency[u].append(idx)
        self._adjacency[v].append(idx)

    # export ----------------------------------------------------------------

    def dump_lines(self) -> Iterable[str]:
        """Deterministic line-delimited dump: node records then edge records."""
        for entity in self._nodes.values():
            yield json.dumps({"node": entity.canonical, "mentions": list(entity.mentions)},
                             ensure_ascii=False)
        for edge in self._edges:
            yield json.dumps({
                "edge": list(edge.endpoints), "relation": edge.relation,
                "weight": edge.weight, "sources": list(edge.source_triplet_ids),
            }, ensure_ascii=False)


def _merge_min_index(a: Optional[int], b: Optional[int]) -> Optional[int]:
    if a is None:
        return b
    if b is None:
        return a
    return min(a, b)


def build_graph(triplets: Sequence[Triplet], origin: str = ORIGIN_GENERATED) -> KnowledgeGraph:
    """One node per distinct canonical entity; one edge per (pair, relation).

    Self-loop triplets (subject and object normalize to the same key) are
    excluded and reported on ``graph.rejected``.
    """
    graph = KnowledgeGraph(origin=origin)
    graph.source_triplets = tuple(triplets)
    rejected: list[RejectedTriplet] = []
    edge_slots: dict[tuple[tuple[str, str], str], int] = {}
    edge_accum: list[dict] = []

    for tid, t in enumerate(triplets):
        s_key = t.subject.canonical
        o_key = t.object.canonical
        if not s_key or not o_key:
            rejected.append(RejectedTriplet(tid, "empty-entity"))
            continue
        if s_key == o_key:
            rejected.append(RejectedTriplet(tid, "self-loop"))
            continue
        graph._add_node(s_key, t.subject.surface)
        graph._add_node(o_key, t.object.surface)
        pair = (s_key, o_key) if s_key <= o_key else (o_key, s_key)
        slot_key = (pair, t.relation.casefold())
        slot = edge_slots.get(slot_key)
        if slot is None:
            edge_slots[slot_key] = len(edge_accum)
            edge_accum.append({
                "endpoints": (s_key, o_key),
                "relation": t.relation,
                "sources": [tid],
                "confidence": t.confidence,
                "min_index": t.sentence_index,
            })
        else:
            acc = edge_accum[slot]
            acc["sources"].append(tid)
            acc["confidence"] = max(acc["confidence"], t.confidence)
            acc["min_index"] = _merge_min_index(acc["min_index"], t.sentence_index)

    for acc in edge_accum:
        graph._add_edge(Edge(
            endpoints=acc["endpoints"], relation=acc["relation"],
            source_triplet_ids=tuple(acc["sources"]),
            weight=1.0 - acc["confidence"],
            min_sentence_index=acc["min_index"],
        ))
    graph.rejected = tuple(rejected)
    return graph


def find_cycles(graph: KnowledgeGraph) -> list[list[str]]:
    """Cycles as node-key sequences; empty iff the graph is a forest.

    Parallel edges between one pair (distinct relations) report a 2-cycle;
    longer cycles come from DFS back edges, in deterministic node order.
    """
    cycles: list[list[str]] = []
    by_pair: dict[tuple[str, str], int] = {}
    for edge in graph.edges:
        by_pair[edge.pair()] = by_pair.get(edge.pair(), 0) + 1
    simple_adj: dict[str, list[str]] = {k: [] for k in graph.nodes}
    seen_pairs: set[tuple[str, str]] = set()
    for edge in graph.edges:
        pair = edge.pair()
        if pair in seen_pairs:
            continue
        seen_pairs.add(pair)
        u, v = edge.endpoints
        simple_adj[u].append(v)
        simple_adj[v].append(u)
        if by_pair[pair] > 1:
            cycles.append([u, v])

    visited: set[str] = set()
    for root in graph.nodes:
        if root in visited:
            continue
        # iterative DFS; pos maps nodes on the current stack to their depth
        pos: dict[str, int] = {root: 0}
        path = [root]
        stack: list[tuple[str, Optional[str], int]] = [(root, None, 0)]
        visited.add(root)
        while stack:
            node, parent, child_i = stack[-1]
            neighbors = simple_adj[node]
            if child_i >= len(neighbors):
                stack.pop()
                path.pop()
                del pos[node]
                continue
            stack[-1] = (node, parent, child_i + 1)
            nxt = neighbors[child_i]
            if nxt == parent:
                # skip the tree edge back to the parent exactly once
                stack[-1] = (node, None, stack[-1][2])
                continue
            if nxt in pos:
                cycles.append(path[pos[nxt]:])
                continue
            if nxt in visited:
                continue
            visited.add(nxt)
            pos[nxt] = len(path)
            path.append(nxt)
            stack.append((nxt, node, 0))
    return cycles


def _edge_sort_key(edge: Edge) -> tuple:
    idx = edge.min_sentence_index
    return (
        edge.weight,
        math.inf if idx is None else idx,
        edge.relation.casefold(),
        edge.pair(),
    )


class _UnionFind:
    def __init__(self, keys: Iterable[str]):
        self.parent = {k: k for k in keys}

    def find(self, k: str) -> str:
        root = k
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[k] != root:
            self.parent[k], k = root, self.parent[k]
        return root

    def union(self, a: str, b: str) -> bool:
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return False
        self.parent[rb] = ra
        return True


def minimum_spanning_tree(graph: KnowledgeGraph) -> KnowledgeGraph:
    """Kruskal spanning forest by edge weight, node set preserved exactly.

    Equal weights break ties on (min source sentence index, relation,
    endpoint pair) so the result is deterministic.
    """
    kept_ids = set()
    uf = _UnionFind(graph.nodes.keys())
    order = sorted(range(graph.n_edges), key=lambda i: _edge_sort_key(graph.edges[i]))
    for i in order:
        u, v = graph.edges[i].endpoints
        if uf.union(u, v):
            kept_ids.add(i)

    pruned = KnowledgeGraph(origin=graph.origin)
    pruned.source_triplets = graph.source_triplets
    for entity in graph.nodes.values():
        pruned._nodes[entity.canonical] = entity
        pruned._adjacency[entity.canonical] = []
    for i, edge in enumerate(graph.edges):
        if i in kept_ids:
            pruned._add_edge(edge)
    pruned.rejected = graph.rejected
    return pruned


def verified_subgraph(graph: KnowledgeGraph, verified_entities: Iterable[str]) -> KnowledgeGraph:
    """Induced subgraph on the verified entity keys (must all exist)."""
    wanted = set(verified_entities)
    for key in wanted:
        if key not in graph.nodes:
            raise UnknownEntityError(key)
    sub = KnowledgeGraph(origin=ORIGIN_VERIFIED)
    sub.source_triplets = graph.source_triplets
    for entity in graph.nodes.values():
        if entity.canonical in wanted:
            sub._nodes[entity.canonical] = entity
            sub._adjacency[entity.canonical] = []
    for edge in graph.edges:
        u, v = edge.endpoints
        if u in wanted and v in wanted:
            sub._add_edge(edge)
    return sub


def component_count(graph: KnowledgeGraph) -> int:
    uf = _UnionFind(graph.nodes.keys())
    for edge in graph.edges:
        uf.union(*edge.endpoints)
    return len({uf.find(k) for k in graph.nodes})
