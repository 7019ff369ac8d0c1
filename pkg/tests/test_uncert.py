"""Hop head, entropy predictor, acquisition utility, Gumbel selection,
and the episode uncertainty score."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import activekg.diffnum as dn
from activekg.diffnum import Tape, Tensor, gradcheck
from activekg.encode import EmbeddingTable, EmbeddingTables, Perceptron
from activekg.kg import KnowledgeGraph
from activekg.uncert import (
    AcquisitionConfig,
    CognitiveState,
    EntropyNetParams,
    HopDistribution,
    HopHeadParams,
    RunningScale,
    Subgraph,
    acquisition_utility,
    coverage_halfwidth,
    coverage_interval,
    entropy_predict,
    gumbel_select,
    hop_gate,
    hop_head,
    info_gain,
    make_state,
    retrieval_cost,
    state_uncertainty,
)

D = 6


def tiny_graph() -> KnowledgeGraph:
    g = KnowledgeGraph()
    for name in ["e0", "e1", "e2", "e3", "e4"]:
        g.add_entity(name)
    for name in ["r0", "r1", "r2"]:
        g.add_relation(name)
    for h, r, t in [(0, 0, 1), (0, 1, 2), (1, 0, 3), (2, 2, 4), (1, 2, 4), (3, 1, 0)]:
        g.add_triple(h, r, t)
    return g


def tiny_tables(rng: np.random.Generator, graph: KnowledgeGraph) -> EmbeddingTables:
    return EmbeddingTables(
        entity_emb=EmbeddingTable.init(rng, graph.n_entities, D),
        relation_emb=EmbeddingTable.init(rng, graph.n_relations, D),
        token_emb=EmbeddingTable.init(rng, 1, D),
        token_vocab={},
        d=D,
    )


def zero_params(obj) -> None:
    for t in obj.params("x").values():
        t.data[:] = 0.0


class ZeroGumbelRng:
    """Stub rng: u = e^-1 makes -log(-log(u)) exactly zero."""

    def random(self, shape):
        return np.full(shape, math.exp(-1.0))


# ------------------------------------------------------------------ hop head


def test_hop_distribution_invariants():
    with pytest.raises(ValueError):
        HopDistribution(probs=Tensor([0.5, 0.4]), sigma2=Tensor(0.1), logits=Tensor([0.0, 0.0]))
    with pytest.raises(ValueError):
        HopDistribution(probs=Tensor([0.5, 0.5]), sigma2=Tensor(-0.1), logits=Tensor([0.0, 0.0]))


def test_hop_head_equal_logits_low_noise_uniform():
    rng = np.random.default_rng(0)
    p = HopHeadParams.init(rng, D, 4)
    zero_params(p.mlp)
    for t in p.var_head.params("v").values():
        t.data[:] = 0.0
    p.var_head.b1.data[:] = -40.0  # softplus(-40) ~ 4e-18
    dist = hop_head(Tensor(rng.standard_normal(D)), p, np.random.default_rng(1), n_samples=8)
    assert np.allclose(dist.probs.data, 0.25, atol=1e-8)
    assert dist.sigma2.item() < 1e-15


def test_hop_head_peaked_logits():
    rng = np.random.default_rng(0)
    mlp = Perceptron.init(rng, D, None, 3)
    mlp.w1.data[:] = 0.0
    mlp.b1.data[:] = [10.0, 0.0, 0.0]
    var = Perceptron.init(rng, D, None, 1)
    var.w1.data[:] = 0.0
    var.b1.data[:] = -40.0
    p = HopHeadParams(mlp=mlp, var_head=var)
    dist = hop_head(Tensor(np.ones(D)), p, np.random.default_rng(2), n_samples=4)
    assert float(dist.probs.data.max()) >= 0.9999
    assert int(dist.probs.data.argmax()) == 0


def test_hop_head_probs_normalized_and_deterministic():
    rng = np.random.default_rng(3)
    p = HopHeadParams.init(rng, D, 4)
    for seed in range(20):
        v_q = Tensor(np.random.default_rng(seed).standard_normal(D))
        a = hop_head(v_q, p, np.random.default_rng(seed), n_samples=3)
        b = hop_head(v_q, p, np.random.default_rng(seed), n_samples=3)
        assert abs(float(a.probs.data.sum()) - 1.0) < 1e-9
        assert np.array_equal(a.probs.data, b.probs.data)


def test_hop_head_bad_sample_count():
    rng = np.random.default_rng(0)
    p = HopHeadParams.init(rng, D, 4)
    with pytest.raises(ValueError):
        hop_head(Tensor(np.zeros(D)), p, rng, n_samples=0)


def test_hop_head_gradcheck():
    rng = np.random.default_rng(4)
    p = HopHeadParams.init(rng, D, 3)
    v_q = Tensor(rng.standard_normal(D), requires_grad=True)

    def f(_):
        dist = hop_head(v_q, p, np.random.default_rng(7), n_samples=1)
        return dn.pick(dist.probs, 1)

    assert gradcheck(f, [v_q, p.var_head.w1, p.mlp.b2]) <= 1e-4


def test_hop_gate_decisions():
    d4 = HopDistribution(probs=Tensor([0.95, 0.03, 0.01, 0.01]), sigma2=Tensor(0.0), logits=Tensor(np.zeros(4)))
    dec = hop_gate(d4, 0.6)
    assert not dec.query_human and dec.hop == 1 and dec.confidence == pytest.approx(0.95)
    d5 = HopDistribution(probs=Tensor([0.55, 0.25, 0.1, 0.1]), sigma2=Tensor(0.0), logits=Tensor(np.zeros(4)))
    assert hop_gate(d5, 0.6).query_human
    assert not hop_gate(d5, 0.0).query_human  # threshold zero always accepts


def test_hop_gate_tie_breaks_small():
    d = HopDistribution(probs=Tensor([0.2, 0.4, 0.4]), sigma2=Tensor(0.0), logits=Tensor(np.zeros(3)))
    assert hop_gate(d, 0.3).hop == 2


def test_coverage_halfwidth():
    assert coverage_halfwidth(0.05) == pytest.approx(math.sqrt(2 * math.log(40.0)))
    assert coverage_halfwidth(0.1) == pytest.approx(math.sqrt(2 * math.log(20.0)))
    for bad in (0.0, 1.0, -0.2):
        with pytest.raises(ValueError):
            coverage_halfwidth(bad)


def test_coverage_interval_centered_on_mode():
    d = HopDistribution(probs=Tensor([0.1, 0.8, 0.1]), sigma2=Tensor(4.0), logits=Tensor(np.zeros(3)))
    lo, hi = coverage_interval(d, 0.05)
    half = coverage_halfwidth(0.05) * 2.0
    assert lo == pytest.approx(2.0 - half) and hi == pytest.approx(2.0 + half)


# --------------------------------------------------------- entropy predictor


def test_entropy_predict_empty_zero_params_ln2():
    rng = np.random.default_rng(0)
    g = tiny_graph()
    tables = tiny_tables(rng, g)
    p = EntropyNetParams.init(rng, D)
    zero_params(p.msg_mlp)
    zero_params(p.upd_mlp)
    zero_params(p.readout)
    sub = Subgraph(triples=[], frontier=(), graph=g)
    out = entropy_predict(sub, None, Tensor(rng.standard_normal(D)), tables, p)
    assert out.item() == pytest.approx(math.log(2.0), abs=1e-12)


def test_entropy_predict_nonnegative():
    rng = np.random.default_rng(1)
    g = tiny_graph()
    tables = tiny_tables(rng, g)
    p = EntropyNetParams.init(rng, D)
    for seed in range(30):
        r2 = np.random.default_rng(seed)
        sub = Subgraph(triples=[g.triples[i] for i in r2.choice(len(g.triples), 3)], frontier=(0, 1), graph=g)
        r = int(r2.integers(0, g.n_relations)) if seed % 2 else None
        assert entropy_predict(sub, r, Tensor(r2.standard_normal(D)), tables, p).item() >= 0.0


def test_entropy_predict_hypothetical_edges_matter():
    rng = np.random.default_rng(2)
    g = tiny_graph()
    tables = tiny_tables(rng, g)
    p = EntropyNetParams.init(rng, D)
    v_q = Tensor(rng.standard_normal(D))
    sub = Subgraph(triples=[(0, 0, 1)], frontier=(1,), graph=g)
    base = entropy_predict(sub, None, v_q, tables, p).item()
    with_r = entropy_predict(sub, 0, v_q, tables, p).item()  # hypothetically follow r0 from e1
    assert with_r != pytest.approx(base, abs=1e-12)


def test_entropy_predict_edge_cap_determinism():
    rng = np.random.default_rng(3)
    g = KnowledgeGraph()
    for i in range(40):
        g.add_entity(f"e{i}")
    g.add_relation("r0")
    triples = []
    for i in range(39):
        g.add_triple(i, 0, i + 1)
        triples.append((i, 0, i + 1))
    tables = EmbeddingTables(
        entity_emb=EmbeddingTable.init(rng, 40, D),
        relation_emb=EmbeddingTable.init(rng, 1, D),
        token_emb=EmbeddingTable.init(rng, 1, D),
        token_vocab={},
        d=D,
    )
    p = EntropyNetParams.init(rng, D)
    sub = Subgraph(triples=triples, frontier=(0,), graph=g)
    v_q = Tensor(rng.standard_normal(D))
    a = entropy_predict(sub, 0, v_q, tables, p).item()
    b = entropy_predict(sub, 0, v_q, tables, p).item()
    assert a == b and np.isfinite(a)


def test_entropy_predict_gradcheck():
    rng = np.random.default_rng(4)
    g = tiny_graph()
    tables = tiny_tables(rng, g)
    p = EntropyNetParams.init(rng, D)
    v_q = Tensor(rng.standard_normal(D), requires_grad=True)
    sub = Subgraph(triples=[(0, 0, 1), (1, 2, 4)], frontier=(1,), graph=g)
    probes = [v_q, p.msg_mlp.w1, p.upd_mlp.b1, p.readout.w2, tables.entity_emb[0], tables.relation_emb[0]]
    assert gradcheck(lambda _: entropy_predict(sub, 0, v_q, tables, p), probes) <= 1e-4


def test_info_gain_contract():
    rng = np.random.default_rng(5)
    g = tiny_graph()
    tables = tiny_tables(rng, g)
    p = EntropyNetParams.init(rng, D)
    v_q = Tensor(rng.standard_normal(D))
    sub = Subgraph(triples=[(0, 0, 1)], frontier=(1,), graph=g)
    assert info_gain(sub, None, v_q, tables, p) == 0.0
    with dn.no_tape():
        manual = entropy_predict(sub, None, v_q, tables, p).item() - entropy_predict(sub, 2, v_q, tables, p).item()
    assert info_gain(sub, 2, v_q, tables, p) == pytest.approx(manual, abs=1e-12)


def test_info_gain_leaves_no_tape_trace():
    rng = np.random.default_rng(6)
    g = tiny_graph()
    tables = tiny_tables(rng, g)
    p = EntropyNetParams.init(rng, D)
    sub = Subgraph(triples=[(0, 0, 1)], frontier=(1,), graph=g)
    with Tape() as tape:
        info_gain(sub, 0, Tensor(rng.standard_normal(D)), tables, p)
        assert len(tape) == 0


# ------------------------------------------------------ acquisition utility


def test_acquisition_config_validation():
    AcquisitionConfig()
    with pytest.raises(ValueError):
        AcquisitionConfig(tau_hop=1.0)
    with pytest.raises(ValueError):
        AcquisitionConfig(tau_human=0.0)
    with pytest.raises(ValueError):
        AcquisitionConfig(lambda_cost=-0.1)
    with pytest.raises(ValueError):
        AcquisitionConfig(c_human=0.0)


def test_acquisition_utility_values():
    cfg = AcquisitionConfig(lambda_cost=0.1, c_human=0.3)
    assert acquisition_utility(0, "auto", ig=0.5, cost=2.0, cfg=cfg) == pytest.approx(0.3)
    assert acquisition_utility(0, "human", ig=0.9, cost=2.0, cfg=cfg) == pytest.approx(0.4)
    zero = AcquisitionConfig(lambda_cost=0.0)
    assert acquisition_utility(0, "auto", ig=0.7, cost=5.0, cfg=zero) == pytest.approx(0.7)


def test_acquisition_utility_errors():
    cfg = AcquisitionConfig()
    with pytest.raises(ValueError):
        acquisition_utility(0, "oracle", ig=0.5, cost=1.0, cfg=cfg)
    with pytest.raises(ValueError):
        acquisition_utility(0, "auto", ig=0.5, cost=-1.0, cfg=cfg)


def test_retrieval_cost_counts_edges():
    g = tiny_graph()
    # from {0,1} relation r0 reaches e1 and e3: two edges
    assert retrieval_cost(g, (0, 1), 0, scale=1.0) == pytest.approx(2.0)
    assert retrieval_cost(g, (0, 1), 0) == pytest.approx(2.0 / 8.0)


# ------------------------------------------------------------ gumbel select


def test_gumbel_select_zero_noise_uniform():
    w = gumbel_select(Tensor(np.zeros(4)), tau=1.0, rng=ZeroGumbelRng(), hard=False)
    assert np.allclose(w.data, 0.25, atol=1e-12)


def test_gumbel_select_frozen_example():
    w = gumbel_select(Tensor([1.0, 0.0]), tau=0.5, rng=ZeroGumbelRng(), hard=False)
    assert w.data[0] == pytest.approx(0.8808, abs=5e-5)
    assert w.data[1] == pytest.approx(0.1192, abs=5e-5)
    assert abs(float(w.data.sum()) - 1.0) < 1e-12


def test_gumbel_select_errors():
    rng = np.random.default_rng(0)
    for bad_tau in (0.0, -1.0):
        with pytest.raises(ValueError):
            gumbel_select(Tensor([1.0, 0.0]), tau=bad_tau, rng=rng, hard=False)
    with pytest.raises(ValueError):
        gumbel_select(Tensor(np.zeros(0)), tau=1.0, rng=rng, hard=False)


def test_gumbel_select_hard_matches_softmax_frequencies():
    logits = np.array([0.5, 0.0, -0.5])
    target = np.exp(logits) / np.exp(logits).sum()
    rng = np.random.default_rng(11)
    counts = np.zeros(3)
    n = 100_000
    t = Tensor(logits)
    for _ in range(n):
        w = gumbel_select(t, tau=1.0, rng=rng, hard=True)
        counts[int(w.data.argmax())] += 1.0
        assert float(w.data.sum()) == 1.0
    tv = 0.5 * np.abs(counts / n - target).sum()
    assert tv <= 0.02


def test_gumbel_select_low_temperature_concentrates():
    w = gumbel_select(Tensor([1.0, 0.0]), tau=0.01, rng=ZeroGumbelRng(), hard=False)
    assert float(w.data[0]) > 1.0 - 1e-12


def test_gumbel_select_gradients_flow_hard_and_soft():
    for hard in (False, True):
        logits = Tensor([0.3, -0.2, 0.1], requires_grad=True)
        with Tape() as tape:
            w = gumbel_select(logits, tau=0.7, rng=np.random.default_rng(5), hard=hard)
            tape.backward(dn.pick(w, 0))
        assert logits.grad is not None and np.any(logits.grad != 0)


def test_gumbel_select_soft_gradcheck():
    logits = Tensor([0.4, -0.1, 0.2], requires_grad=True)

    def f(_):
        w = gumbel_select(logits, tau=0.8, rng=np.random.default_rng(9), hard=False)
        return dn.pick(w, 1)

    assert gradcheck(f, [logits]) <= 1e-4


# -------------------------------------------------------- state uncertainty


def test_state_uncertainty_extremes():
    uniform = HopDistribution(probs=Tensor(np.full(4, 0.25)), sigma2=Tensor(0.0), logits=Tensor(np.zeros(4)))
    onehot = HopDistribution(probs=Tensor([1.0, 0.0, 0.0, 0.0]), sigma2=Tensor(0.0), logits=Tensor(np.zeros(4)))
    assert state_uncertainty(None, uniform, [0.0, 0.0], ig_ref=1.0) == pytest.approx(1.0)
    assert state_uncertainty(None, onehot, [5.0, 5.0], ig_ref=1.0) == pytest.approx(0.0)


def test_state_uncertainty_empty_window_errors():
    d = HopDistribution(probs=Tensor(np.full(4, 0.25)), sigma2=Tensor(0.0), logits=Tensor(np.zeros(4)))
    with pytest.raises(ValueError):
        state_uncertainty(None, d, [], ig_ref=1.0)


@settings(max_examples=200, deadline=None)
@given(st.integers(min_value=0, max_value=10**6))
def test_state_uncertainty_in_unit_interval(seed):
    rng = np.random.default_rng(seed)
    h = int(rng.integers(2, 6))
    raw = rng.random(h) + 1e-6
    probs = raw / raw.sum()
    d = HopDistribution(probs=Tensor(probs), sigma2=Tensor(float(rng.random())), logits=Tensor(np.zeros(h)))
    window = list(rng.normal(0.2, 1.0, int(rng.integers(1, 6))))
    u = state_uncertainty(None, d, window, ig_ref=float(rng.random() + 0.05))
    assert 0.0 <= u <= 1.0


def test_running_scale_tracks_percentile():
    rs = RunningScale(window=100)
    assert rs.scale == 1.0
    for v in np.linspace(0.0, 1.0, 101):
        rs.update(float(v))
    assert rs.scale == pytest.approx(np.percentile(np.linspace(0.0, 1.0, 101)[1:], 90))
    rs2 = RunningScale()
    rs2.update(-3.0)
    assert rs2.scale == 1e-9  # floor keeps the ratio well-defined


def test_make_state_summary_and_validation():
    rng = np.random.default_rng(7)
    g = tiny_graph()
    tables = tiny_tables(rng, g)
    proj = Perceptron.init(rng, 2 * D, D, D)
    v_q = Tensor(rng.standard_normal(D))
    s = make_state((2, 0), 3, [1], {2}, v_q, tables, proj)
    assert s.frontier == (0, 2)
    assert s.neural.data.shape == (D,)
    assert np.all(np.isfinite(s.neural.data))
    empty = make_state((), 0, [], set(), v_q, tables, proj)
    assert np.all(np.isfinite(empty.neural.data))
    with pytest.raises(ValueError):
        CognitiveState(frontier=(), hop_budget=-1, visited_relations=(), pruned_relations=frozenset(), neural=v_q)
