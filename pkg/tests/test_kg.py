"""Graph store, IO round trips, and generator soundness audits."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from activekg import kg


def small_graph():
    g = kg.KnowledgeGraph()
    for name in ["a", "b", "c", "d"]:
        g.add_entity(name)
    for name in ["likes", "knows"]:
        g.add_relation(name)
    g.add_triple(0, 0, 1)  # a likes b
    g.add_triple(0, 0, 2)  # a likes c
    g.add_triple(0, 1, 3)  # a knows d
    g.add_triple(1, 1, 2)  # b knows c
    return g


class TestGraphStore:
    def test_expand_unions_tails(self):
        g = small_graph()
        assert g.reach({0}, 0) == {1, 2}
        assert g.reach({0, 1}, 1) == {3, 2}
        assert g.reach({3}, 0) == frozenset()

    def test_duplicate_triples_ignored(self):
        g = small_graph()
        n = g.n_triples
        assert not g.add_triple(0, 0, 1)
        assert g.n_triples == n

    def test_candidate_relations_ranked_by_degree_then_id(self):
        g = small_graph()
        # from {a}: likes has 2 edges, knows has 1
        assert g.candidate_relations({0}, 8) == [0, 1]
        assert g.candidate_relations({0}, 1) == [0]
        # from {a, b}: likes 2 edges, knows 2 edges, tie broken by id
        assert g.candidate_relations({0, 1}, 8) == [0, 1]

    def test_shortest_distance(self):
        g = small_graph()
        assert g.shortest_distance(0, 2, 4) == 1
        assert g.shortest_distance(0, 0, 4) == 0
        assert g.shortest_distance(3, 0, 4) is None

    def test_tsv_round_trip(self, tmp_path):
        g = small_graph()
        p = tmp_path / "graph.tsv"
        kg.save_tsv(g, p)
        g2 = kg.load_tsv(p)
        assert g2.entities == g.entities
        assert g2.relations == g.relations
        assert g2.triples == g.triples

    def test_tsv_skips_comments_and_blanks(self, tmp_path):
        p = tmp_path / "graph.tsv"
        p.write_text("# header\n\na\tlikes\tb\n  \nb\tlikes\tc\n")
        g = kg.load_tsv(p)
        assert g.n_triples == 2

    def test_tsv_malformed_line_raises_with_lineno(self, tmp_path):
        p = tmp_path / "graph.tsv"
        p.write_text("a\tlikes\n")
        with pytest.raises(kg.GraphError, match=":1:"):
            kg.load_tsv(p)

    def test_duplicate_triple_warns_and_dedupes(self, tmp_path):
        p = tmp_path / "graph.tsv"
        p.write_text("a\tlikes\tb\na\tlikes\tb\n")
        with pytest.warns(UserWarning, match="duplicate"):
            g = kg.load_graph(p)
        assert g.n_triples == 1

    def test_empty_file_gives_empty_graph(self, tmp_path):
        p = tmp_path / "graph.tsv"
        p.write_text("")
        assert kg.load_graph(p).n_triples == 0

    def test_expand_returns_ordered_triples(self):
        g = small_graph()
        assert kg.expand(g, {0}, 0) == [(0, 0, 1), (0, 0, 2)]
        assert kg.expand(g, {1, 0}, 1) == [(0, 1, 3), (1, 1, 2)]
        assert kg.expand(g, set(), 0) == []
        with pytest.raises(kg.GraphError, match="unknown relation"):
            kg.expand(g, {0}, 99)

    def test_expand_equals_brute_force_scan(self):
        g, _ = kg.generate_benchmark(kg.GeneratorConfig(n_entities=40, n_items=2, seed=4))
        frontier = {1, 5, 9}
        for r in range(g.n_relations):
            naive = sorted((h, r, t) for h, rr, t in g.triples if rr == r and h in frontier)
            assert kg.expand(g, frontier, r) == naive

    def test_enumerate_candidate_relations_truncates(self):
        g = small_graph()
        assert kg.enumerate_candidate_relations(g, {0}) == [0, 1]
        assert kg.enumerate_candidate_relations(g, {0}, a_max=1) == [0]
        assert kg.enumerate_candidate_relations(g, set()) == []

    def test_indices_reflect_triples(self):
        g, _ = kg.generate_benchmark(kg.GeneratorConfig(n_entities=40, n_items=2, seed=6))
        rebuilt_out = {}
        rebuilt_rels = {}
        for h, r, t in g.triples:
            rebuilt_out.setdefault((h, r), []).append(t)
            rels = rebuilt_rels.setdefault(h, set())
            rels.add(r)
        assert {k: v for k, v in g._out.items()} == rebuilt_out
        assert {h: sorted(v) for h, v in rebuilt_rels.items()} == dict(g._rels_from)


class TestReasoningPath:
    def test_chain_invariant(self):
        kg.ReasoningPath(((0, 0, 1), (1, 1, 2)))
        with pytest.raises(kg.GraphError, match="broken chain"):
            kg.ReasoningPath(((0, 0, 1), (2, 1, 3)))

    def test_length_bounds(self):
        with pytest.raises(kg.GraphError, match="length"):
            kg.ReasoningPath(())
        with pytest.raises(kg.GraphError, match="length"):
            kg.ReasoningPath(tuple((i, 0, i + 1) for i in range(5)))

    def test_endpoints(self):
        p = kg.ReasoningPath(((0, 0, 1), (1, 1, 2)))
        assert p.start == 0
        assert p.endpoint == 2
        assert p.relations == (0, 1)
        assert len(p) == 2


class TestGenerator:
    def test_deterministic_per_seed(self):
        cfg = kg.GeneratorConfig(n_entities=60, n_items=20, seed=11)
        g1, items1 = kg.generate_benchmark(cfg)
        g2, items2 = kg.generate_benchmark(cfg)
        assert g1.triples == g2.triples
        assert [i.question_tokens for i in items1] == [i.question_tokens for i in items2]
        assert [i.gold_answers for i in items1] == [i.gold_answers for i in items2]
        g3, _ = kg.generate_benchmark(kg.GeneratorConfig(n_entities=60, n_items=20, seed=12))
        assert g3.triples != g1.triples

    def test_gold_answers_match_brute_force_replay(self):
        g, items = kg.generate_benchmark(kg.GeneratorConfig(n_entities=80, n_items=40, seed=3))
        for item in items:
            rels = [r for tok in item.question_tokens if tok.startswith("rel:")
                    for r in [g.relation_id[tok.split(":", 1)[1]]]]
            assert len(rels) == item.gold_hops
            frontier = frozenset(item.anchors)
            seen = [frontier]
            for r in rels:
                frontier = g.reach(frontier, r)
                seen.append(frontier)
            assert frontier == item.gold_answers
            # no proper prefix already answers the question
            for pre in seen[:-1]:
                assert pre != item.gold_answers

    def test_gold_paths_cover_answers_and_chain(self):
        g, items = kg.generate_benchmark(kg.GeneratorConfig(n_entities=80, n_items=30, seed=5))
        for item in items:
            assert {p.endpoint for p in item.gold_paths} == set(item.gold_answers)
            for p in item.gold_paths:
                assert p.start in item.anchors
                assert len(p) == item.gold_hops
                for h, r, t in p.triples:
                    assert t in g.tails(h, r)

    def test_no_shorter_alternative_route(self):
        g, items = kg.generate_benchmark(
            kg.GeneratorConfig(n_entities=80, n_items=30, distractor_ratio=0.4, seed=7)
        )
        for item in items:
            for y in item.gold_answers:
                assert g.shortest_distance(item.anchors[0], y, 4) == item.gold_hops

    def test_relevance_labels_mark_gold_relations(self):
        g, items = kg.generate_benchmark(kg.GeneratorConfig(n_entities=80, n_items=20, seed=9))
        for item in items:
            rels = {g.relation_id[t.split(":", 1)[1]] for t in item.question_tokens if t.startswith("rel:")}
            marked = {r for r, v in item.relevance_labels.items() if v}
            assert marked == rels

    def test_jsonl_round_trip(self, tmp_path):
        g, items = kg.generate_benchmark(kg.GeneratorConfig(n_entities=60, n_items=15, seed=2))
        p = tmp_path / "items.jsonl"
        kg.save_items_jsonl(items, g, p)
        loaded = kg.load_items_jsonl(p, g)
        assert len(loaded) == len(items)
        for a, b in zip(items, loaded):
            assert a.question_tokens == b.question_tokens
            assert a.anchors == b.anchors
            assert a.gold_answers == b.gold_answers
            assert a.gold_hops == b.gold_hops
            assert a.relevance_labels == b.relevance_labels
            assert [p.triples for p in a.gold_paths] == [p.triples for p in b.gold_paths]

    def test_infeasible_configs_error_with_named_constraint(self):
        with pytest.raises(kg.GeneratorError, match="branching upper bound"):
            kg.generate_benchmark(kg.GeneratorConfig(n_relations=3, branching=(2, 5)))
        with pytest.raises(kg.GeneratorError, match="hop_distribution"):
            kg.generate_benchmark(kg.GeneratorConfig(hop_distribution={7: 1.0}))
        with pytest.raises(kg.GeneratorError, match="n_entities"):
            kg.generate_benchmark(kg.GeneratorConfig(n_entities=2))
        with pytest.raises(kg.GeneratorError, match="retries"):
            kg.generate_benchmark(
                kg.GeneratorConfig(
                    n_entities=6,
                    n_relations=2,
                    branching=(1, 1),
                    max_fanout=1,
                    inverse_relations=False,
                    distractor_ratio=0.0,
                    hop_distribution={3: 1.0},
                    n_items=50,
                    item_retries=5,
                )
            )

    def test_inverse_relations_materialized(self):
        g, _ = kg.generate_benchmark(kg.GeneratorConfig(n_entities=40, n_items=5, seed=1))
        assert "r0_inv" in g.relation_id
        r0, r0i = g.relation_id["r0"], g.relation_id["r0_inv"]
        fwd = {(h, t) for h, r, t in g.triples if r == r0}
        bwd = {(t, h) for h, r, t in g.triples if r == r0i}
        assert fwd == bwd

    @given(st.integers(0, 2**31 - 1))
    @settings(max_examples=10, deadline=None)
    def test_expand_stays_in_graph(self, seed):
        rng = np.random.default_rng(seed)
        g, _ = kg.generate_benchmark(kg.GeneratorConfig(n_entities=30, n_items=1, seed=int(rng.integers(1000))))
        frontier = set(rng.integers(0, g.n_entities, size=3).tolist())
        r = int(rng.integers(0, g.n_relations))
        out = g.reach(frontier, r)
        assert all(0 <= t < g.n_entities for t in out)
        naive = {t for h, rr, t in g.triples if rr == r and h in frontier}
        assert out == naive
