import random

import pytest
from hypothesis import given, settings, strategies as st

from kgcorrect.kgraph import (
    UnknownEntityError,
    build_graph,
    component_count,
    find_cycles,
    minimum_spanning_tree,
    verified_subgraph,
)
from kgcorrect.triplets import EntityMention, Triplet

from .oracles import brute_force_forest_weight


def make_triplet(s, r, o, confidence=1.0, sentence_index=0):
    def mention(x):
        return EntityMention(surface=x, canonical=x.lower(), char_span=None)
    return Triplet(subject=mention(s), relation=r, object=mention(o),
                   sentence_index=sentence_index, provenance="ingested",
                   confidence=confidence)


class TestBuildGraph:
    def test_single_edge(self):
        g = build_graph([make_triplet("A", "is", "B")])
        assert g.n_nodes == 2
        assert g.n_edges == 1

    def test_triangle(self):
        g = build_graph([make_triplet("A", "is", "B"), make_triplet("B", "is", "C"),
                         make_triplet("A", "likes", "C")])
        assert g.n_nodes == 3
        assert g.n_edges == 3
        assert find_cycles(g)

    def test_registrar_star(self, registrar_graph):
        expected = {"domain registrars that support all dns records required for microsoft 365",
                    "oray", "hichina", "east.net", "bizcn"}
        assert set(registrar_graph.nodes.keys()) == expected
        assert registrar_graph.n_edges == 4
        assert find_cycles(registrar_graph) == []

    def test_self_loop_rejected_and_reported(self):
        g = build_graph([make_triplet("A", "is", "A"), make_triplet("A", "is", "B")])
        assert g.n_edges == 1
        assert len(g.rejected) == 1
        assert g.rejected[0].reason == "self-loop"

    def test_merging_accumulates_mentions_and_sources(self):
        t1 = Triplet(EntityMention("The Plan", "plan", None), "is",
                     EntityMention("B", "b", None), 0, "ingested", 0.5)
        t2 = Triplet(EntityMention("plan", "plan", None), "is",
                     EntityMention("B", "b", None), 1, "ingested", 0.9)
        g = build_graph([t1, t2])
        assert g.n_edges == 1
        edge = g.edges[0]
        assert edge.source_triplet_ids == (0, 1)
        assert edge.weight == pytest.approx(1.0 - 0.9)
        assert g.nodes["plan"].mentions == ("The Plan", "plan")

    def test_relation_case_insensitive_merge(self):
        g = build_graph([make_triplet("A", "is", "B"), make_triplet("A", "IS", "B")])
        assert g.n_edges == 1

    def test_distinct_relations_make_parallel_edges(self):
        g = build_graph([make_triplet("A", "is", "B"), make_triplet("A", "costs", "B")])
        assert g.n_edges == 2

    def test_bidirectional_adjacency(self):
        g = build_graph([make_triplet("A", "is", "B"), make_triplet("B", "is", "C")])
        for edge in g.edges:
            u, v = edge.endpoints
            assert v in g.adjacency(u)
            assert u in g.adjacency(v)

    @given(st.lists(st.tuples(st.sampled_from("ABCDEF"), st.sampled_from(["is", "has"]),
                              st.sampled_from("ABCDEF")), max_size=20))
    @settings(max_examples=200, deadline=None)
    def test_count_bounds(self, rows):
        triplets = [make_triplet(s, r, o) for s, r, o in rows]
        g = build_graph(triplets)
        assert g.n_nodes <= 2 * len(triplets)
        assert g.n_edges <= len(triplets)


class TestFindCycles:
    def test_star_is_acyclic(self):
        g = build_graph([make_triplet("Hub", "is", x) for x in ["A", "B", "C", "D"]])
        assert find_cycles(g) == []

    def test_triangle_reports_one_cycle(self):
        g = build_graph([make_triplet("A", "is", "B"), make_triplet("B", "is", "C"),
                         make_triplet("C", "is", "A")])
        assert find_cycles(g) == [["a", "b", "c"]]

    def test_parallel_edges_two_cycle(self):
        g = build_graph([make_triplet("A", "is", "B"), make_triplet("A", "costs", "B")])
        cycles = find_cycles(g)
        assert len(cycles) == 1
        assert sorted(cycles[0]) == ["a", "b"]

    def test_forest_iff_empty(self):
        g = build_graph([make_triplet("A", "is", "B"), make_triplet("C", "is", "D")])
        assert find_cycles(g) == []


class TestMinimumSpanningTree:
    def test_tree_input_identity(self):
        g = build_graph([make_triplet("A", "is", "B"), make_triplet("B", "has", "C")])
        pruned = minimum_spanning_tree(g)
        assert pruned.n_edges == g.n_edges
        assert set(pruned.nodes.keys()) == set(g.nodes.keys())

    def test_weighted_triangle_drops_heaviest(self):
        g = build_graph([
            make_triplet("A", "is", "B", confidence=1.0),
            make_triplet("B", "is", "C", confidence=1.0),
            make_triplet("A", "likes", "C", confidence=0.8),
        ])
        pruned = minimum_spanning_tree(g)
        assert pruned.n_edges == 2
        assert all(e.relation != "likes" for e in pruned.edges)
        assert find_cycles(pruned) == []

    def test_equal_weight_tie_break_deterministic(self):
        # all weights equal; kruskal order is (weight, sentence_index, relation, pair):
        # r1@0 then r2@1 join everything, r3@2 closes the cycle and is dropped
        g = build_graph([
            make_triplet("A", "r1", "B", sentence_index=0),
            make_triplet("B", "r2", "C", sentence_index=1),
            make_triplet("C", "r3", "A", sentence_index=2),
        ])
        pruned = minimum_spanning_tree(g)
        assert sorted(e.relation for e in pruned.edges) == ["r1", "r2"]
        again = minimum_spanning_tree(g)
        assert [e.relation for e in again.edges] == [e.relation for e in pruned.edges]

    def test_disconnected_input_spans_each_component(self):
        g = build_graph([
            make_triplet("A", "is", "B"), make_triplet("B", "is", "C"),
            make_triplet("C", "is", "A"),
            make_triplet("X", "is", "Y"),
        ])
        pruned = minimum_spanning_tree(g)
        assert set(pruned.nodes.keys()) == set(g.nodes.keys())
        assert pruned.n_edges == pruned.n_nodes - component_count(pruned)
        assert find_cycles(pruned) == []

    def test_small_random_graphs_match_brute_force(self):
        rng = random.Random(7)
        for _ in range(60):
            n = rng.randint(2, 5)
            names = [f"N{i}" for i in range(n)]
            edges = []
            triplets = []
            for i in range(n):
                for j in range(i + 1, n):
                    if rng.random() < 0.6:
                        w = rng.choice([0.0, 0.1, 0.25, 0.5, 1.0])
                        edges.append((i, j, w))
                        triplets.append(make_triplet(
                            names[i], f"r{len(edges)}", names[j], confidence=1.0 - w))
            g = build_graph(triplets)
            pruned = minimum_spanning_tree(g)
            got = sum(e.weight for e in pruned.edges)
            want = brute_force_forest_weight(
                n, [(i, j, w) for (i, j, w) in edges]) if edges else 0.0
            assert got == pytest.approx(want, abs=1e-9)
            assert find_cycles(pruned) == []


class TestVerifiedSubgraph:
    def test_all_nodes_preserves_graph(self, registrar_graph):
        sub = verified_subgraph(registrar_graph, registrar_graph.nodes.keys())
        assert set(sub.nodes.keys()) == set(registrar_graph.nodes.keys())
        assert sub.n_edges == registrar_graph.n_edges
        assert sub.origin == "verified-subgraph"

    def test_empty_selection(self, registrar_graph):
        sub = verified_subgraph(registrar_graph, [])
        assert sub.n_nodes == 0
        assert sub.n_edges == 0

    def test_path_endpoints_only(self):
        g = build_graph([make_triplet("A", "is", "B"), make_triplet("B", "is", "C")])
        sub = verified_subgraph(g, ["a", "c"])
        assert set(sub.nodes.keys()) == {"a", "c"}
        assert sub.n_edges == 0

    def test_unknown_key_errors(self, registrar_graph):
        with pytest.raises(UnknownEntityError, match="godaddy"):
            verified_subgraph(registrar_graph, ["godaddy"])


class TestDump:
    def test_dump_is_deterministic_and_ordered(self):
        g = build_graph([make_triplet("A", "is", "B"), make_triplet("B", "has", "C")])
        lines = list(g.dump_lines())
        assert lines == list(g.dump_lines())
        assert lines[0].startswith('{"node"')
        assert lines[-1].startswith('{"edge"')
