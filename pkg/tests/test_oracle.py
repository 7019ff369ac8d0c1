"""Oracle queries, the replay buffer, the KNN response model, and the
accuracy/cost objective."""

import numpy as np
import pytest

from activekg.diffnum import Tensor
from activekg.kg import BenchmarkItem, ReasoningPath
from activekg.oracle import (
    BufferEntry,
    OracleAnswer,
    OracleError,
    OracleQuery,
    ReplayBuffer,
    active_efficiency,
    buffer_efficiency,
    objective_value,
    response_model,
    simulated_answer,
)
from activekg.uncert import AcquisitionConfig, CognitiveState

D = 4


def make_item(gold_hops: int = 2) -> BenchmarkItem:
    return BenchmarkItem(
        question_tokens=["anchor:e0", "rel:r0", "rel:r1"],
        anchors=[0],
        gold_answers=frozenset({3}),
        gold_hops=gold_hops,
        gold_paths=[ReasoningPath(triples=((0, 0, 1), (1, 1, 3)))],
        relevance_labels={0: True, 1: True, 2: False},
    )


def make_state(vec) -> CognitiveState:
    return CognitiveState(
        frontier=(0,),
        hop_budget=2,
        visited_relations=(),
        pruned_relations=frozenset(),
        neural=Tensor(np.asarray(vec, dtype=float)),
    )


def hop_query(qid: str = "q0") -> OracleQuery:
    return OracleQuery(query_id=qid, kind="hop_depth", payload={"question_tokens": ["x"]}, issued_at=0)


def rel_query(rel: int, qid: str = "q1") -> OracleQuery:
    return OracleQuery(
        query_id=qid, kind="relation_relevance", payload={"question_tokens": ["x"], "relation": rel}, issued_at=1
    )


def path_query(path, qid: str = "q2") -> OracleQuery:
    return OracleQuery(
        query_id=qid, kind="path_validity", payload={"question_tokens": ["x"], "path": path}, issued_at=2
    )


# ----------------------------------------------------------------- typing


def test_query_kind_and_payload_validation():
    with pytest.raises(OracleError):
        OracleQuery(query_id="q", kind="weather", payload={}, issued_at=0)
    with pytest.raises(OracleError):
        OracleQuery(query_id="q", kind="relation_relevance", payload={"question_tokens": ["x"]}, issued_at=0)
    with pytest.raises(OracleError):
        OracleQuery(query_id="q", kind="path_validity", payload={"question_tokens": ["x"]}, issued_at=0)


def test_answer_validation():
    with pytest.raises(OracleError):
        OracleAnswer(query_id="q", label=1, cost=0.0, source="simulated")
    with pytest.raises(OracleError):
        OracleAnswer(query_id="q", label=1, cost=0.3, source="telepathy")


def test_buffer_rejects_label_kind_mismatch():
    buf = ReplayBuffer(capacity=4)
    s = make_state(np.ones(D))
    with pytest.raises(OracleError):
        buf.add(hop_query(), OracleAnswer("q0", label=True, cost=0.3, source="simulated"), s, 0.9)
    with pytest.raises(OracleError):
        buf.add(hop_query(), OracleAnswer("q0", label=9, cost=0.3, source="simulated"), s, 0.9)
    with pytest.raises(OracleError):
        buf.add(rel_query(0, "q0"), OracleAnswer("q0", label=2, cost=0.3, source="simulated"), s, 0.9)
    with pytest.raises(OracleError):
        buf.add(hop_query("a"), OracleAnswer("b", label=2, cost=0.3, source="simulated"), s, 0.9)


def test_buffer_fifo_eviction_and_immutability():
    buf = ReplayBuffer(capacity=3)
    s = make_state(np.ones(D))
    for i in range(5):
        buf.add(hop_query(f"q{i}"), OracleAnswer(f"q{i}", label=2, cost=0.3, source="simulated"), s, 0.5)
    assert len(buf) == 3
    assert [e.query.query_id for e in buf.entries] == ["q2", "q3", "q4"]
    entry = next(iter(buf.entries))
    with pytest.raises(ValueError):
        entry.state_vec[0] = 99.0


def test_uncertain_subset_threshold():
    buf = ReplayBuffer(capacity=8)
    s = make_state(np.ones(D))
    for i, u in enumerate([0.2, 0.71, 0.9, 0.7]):
        buf.add(hop_query(f"q{i}"), OracleAnswer(f"q{i}", label=1, cost=0.3, source="simulated"), s, u)
    sel = buf.uncertain_subset(0.7)  # strictly above tau at issue time
    assert [e.query.query_id for e in sel] == ["q1", "q2"]


# --------------------------------------------------------- simulated oracle


def test_simulated_answer_noiseless():
    item = make_item(gold_hops=3)
    rng = np.random.default_rng(0)
    assert simulated_answer(hop_query(), item, 0.0, rng).label == 3
    assert simulated_answer(rel_query(0), item, 0.0, rng).label is True
    assert simulated_answer(rel_query(2), item, 0.0, rng).label is False
    gold = [[0, 0, 1], [1, 1, 3]]
    assert simulated_answer(path_query(gold), item, 0.0, rng).label is True
    assert simulated_answer(path_query([[0, 0, 1], [1, 2, 4]]), item, 0.0, rng).label is False


def test_simulated_answer_full_noise_negates_booleans():
    item = make_item()
    rng = np.random.default_rng(1)
    assert simulated_answer(rel_query(0), item, 1.0, rng).label is False
    assert simulated_answer(rel_query(2), item, 1.0, rng).label is True


def test_simulated_answer_hop_noise_clips():
    item = make_item(gold_hops=1)
    rng = np.random.default_rng(2)
    for _ in range(200):
        lab = simulated_answer(hop_query(), item, 1.0, rng).label
        assert lab in (1, 2)  # -1 step clips back into range


def test_simulated_answer_flip_frequency():
    item = make_item()
    rng = np.random.default_rng(3)
    flips = sum(simulated_answer(rel_query(0), item, 0.1, rng).label is False for _ in range(10_000))
    assert abs(flips / 10_000 - 0.1) <= 0.01


def test_simulated_answer_missing_gold_errors():
    item = make_item()
    rng = np.random.default_rng(4)
    with pytest.raises(OracleError):
        simulated_answer(rel_query(7), item, 0.0, rng)
    bare = BenchmarkItem(
        question_tokens=["x"], anchors=[0], gold_answers=frozenset({1}), gold_hops=1, gold_paths=[], relevance_labels={}
    )
    with pytest.raises(OracleError):
        simulated_answer(path_query([[0, 0, 1]]), bare, 0.0, rng)


def test_simulated_answer_deterministic_under_seed():
    item = make_item()
    a = [simulated_answer(rel_query(0), item, 0.4, np.random.default_rng(7)).label for _ in range(5)]
    b = [simulated_answer(rel_query(0), item, 0.4, np.random.default_rng(7)).label for _ in range(5)]
    assert a == b


# ------------------------------------------------------------ response model


def test_response_model_empty_buffer_uniform():
    buf = ReplayBuffer()
    s = make_state(np.ones(D))
    dist = response_model(buf, s, "path_validity")
    assert dist == {True: 0.5, False: 0.5}
    hops = response_model(buf, s, "hop_depth")
    assert all(v == pytest.approx(0.25) for v in hops.values()) and sorted(hops) == [1, 2, 3, 4]


def test_response_model_laplace_all_true():
    buf = ReplayBuffer()
    s = make_state(np.ones(D))
    for i in range(10):
        buf.add(
            rel_query(0, f"q{i}"),
            OracleAnswer(f"q{i}", label=True, cost=0.3, source="simulated"),
            s,
            0.9,
        )
    dist = response_model(buf, s, "relation_relevance")
    assert dist[True] == pytest.approx(11.0 / 12.0)
    assert dist[False] == pytest.approx(1.0 / 12.0)
    assert sum(dist.values()) == pytest.approx(1.0)


def test_response_model_uses_nearest_states():
    buf = ReplayBuffer()
    near = np.array([1.0, 0.0, 0.0, 0.0])
    far = np.array([-1.0, 0.0, 0.0, 0.0])
    # 16 true answers near the probe, 16 false answers diametrically opposite
    for i in range(16):
        buf.add(rel_query(0, f"n{i}"), OracleAnswer(f"n{i}", True, 0.3, "simulated"), make_state(near), 0.9)
    for i in range(16):
        buf.add(rel_query(0, f"f{i}"), OracleAnswer(f"f{i}", False, 0.3, "simulated"), make_state(far), 0.9)
    dist = response_model(buf, make_state(near), "relation_relevance", k=16)
    assert dist[True] == pytest.approx(17.0 / 18.0)


def test_response_model_ignores_other_kinds():
    buf = ReplayBuffer()
    s = make_state(np.ones(D))
    buf.add(hop_query("h"), OracleAnswer("h", 2, 0.3, "simulated"), s, 0.9)
    assert response_model(buf, s, "relation_relevance") == {True: 0.5, False: 0.5}


# ---------------------------------------------------------------- objective


def test_objective_value_examples():
    cfg = AcquisitionConfig(beta=1.0, c_human=0.3)
    assert objective_value(True, 0, cfg) == pytest.approx(1.0)
    assert objective_value(True, 2, cfg) == pytest.approx(0.4)
    assert objective_value(False, 1, cfg) == pytest.approx(-0.3)
    free = AcquisitionConfig(beta=0.0, c_human=0.3)
    assert objective_value(True, 9, free) == pytest.approx(1.0)
    with pytest.raises(OracleError):
        objective_value(True, -1, cfg)


def test_active_efficiency_examples():
    assert active_efficiency([(1.0, 1.0), (0.5, 0.5)], [0.3, 0.3]) == pytest.approx(0.0)
    assert active_efficiency([(0.6, 0.2), (0.4, 0.2)], [0.2, 0.2]) == pytest.approx(1.5)
    base = active_efficiency([(0.6, 0.2), (0.4, 0.2)], [0.2, 0.2])
    assert active_efficiency([(0.6, 0.2), (0.4, 0.2)], [0.4, 0.4]) == pytest.approx(base / 2.0)
    with pytest.raises(OracleError):
        active_efficiency([], [])
    with pytest.raises(OracleError):
        active_efficiency([(0.5, 0.2)], [0.0])


def test_buffer_efficiency_uses_uncertain_entries_only():
    buf = ReplayBuffer()
    s = make_state(np.ones(D))
    buf.add(hop_query("a"), OracleAnswer("a", 2, 0.2, "simulated"), s, 0.9, entropy_before=0.6, entropy_after=0.2)
    buf.add(hop_query("b"), OracleAnswer("b", 2, 0.2, "simulated"), s, 0.9, entropy_before=0.4, entropy_after=0.2)
    buf.add(hop_query("c"), OracleAnswer("c", 2, 0.2, "simulated"), s, 0.1, entropy_before=0.0, entropy_after=-9.0)
    buf.add(hop_query("d"), OracleAnswer("d", 2, 0.2, "simulated"), s, 0.9)  # no measurement
    assert buffer_efficiency(buf, 0.7) == pytest.approx(1.5)
    assert buffer_efficiency(ReplayBuffer(), 0.7) is None
