"""Property suites for the engine's formal guarantees.

Each suite draws fresh randomized instances, checks an inequality or
statistical property against an independent computation, and reports a
single pass/fail line. `run_all` is the one entry point; fault injection
via `perturb` proves the harness can actually fail.
"""

from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import diffnum as dn
from .diffnum import Tensor
from .answer import AnswerScorer, gen_loss, score_answers
from .encode import (
    EmbeddingTables,
    PathEncoderParams,
    Perceptron,
    QueryEncoder,
    build_tables,
    encode_path,
    encode_query,
    entity_token,
    relation_token,
)
from .kg import BenchmarkItem, GeneratorConfig, KnowledgeGraph, ReasoningPath, generate_benchmark
from .logic import FuseGateParams, Rule, RuleBase, fuse, symbolic_score
from .oracle import ReplayBuffer
from .search import (
    Budgets,
    EpisodeContext,
    PolicyValueNets,
    SearchConfig,
    expected_answer_loss_soft,
    query_complexity_bound,
    soft_tree_policy,
)
from .train import Schedules, TrainConfig, train_run
from .uncert import (
    AcquisitionConfig,
    EntropyNetParams,
    HopDistribution,
    HopHeadParams,
    Subgraph,
    coverage_interval,
    entropy_predict,
    gumbel_select,
    hop_head,
)


@dataclass
class SuiteResult:
    name: str
    passed: bool
    detail: str
    elapsed: float

    def line(self) -> str:
        mark = "PASS" if self.passed else "FAIL"
        return f"[{mark}] {self.name}: {self.detail} ({self.elapsed:.1f}s)"


def _timed(name: str, fn) -> SuiteResult:
    t0 = time.time()
    passed, detail = fn()
    return SuiteResult(name=name, passed=passed, detail=detail, elapsed=time.time() - t0)


# ---------------------------------------------- soft tree-policy concentration


def check_soft_policy_bound(
    seed: int = 0, n_trials: int = 10_000, perturb: bool = False
) -> SuiteResult:
    """The soft policy's argmax probability can never drop below the
    concentration floor 1/(1 + (n-1) e^(-gap/tau)). `perturb` widens the
    temperature used by the policy but not the bound, which must break it."""

    def run():
        rng = np.random.default_rng(seed)
        violations = 0
        worst = math.inf
        for _ in range(n_trials):
            n = int(rng.integers(2, 17))
            tau = float(rng.uniform(0.05, 2.0))
            utils = rng.normal(0.0, 1.5, size=n)
            cfg = SearchConfig(tau_search=tau * (1.5 if perturb else 1.0), c_explore=1.0)
            q_values = {i: float(utils[i]) for i in range(n)}
            pucts = {i: 0.0 for i in range(n)}
            actions, probs = soft_tree_policy(q_values, pucts, cfg)
            star = int(np.argmax([q_values[a] for a in actions]))
            p_star = float(probs.data[star])
            srt = np.sort(utils)[::-1]
            gap = float(srt[0] - srt[1])
            floor = 1.0 / (1.0 + (n - 1) * math.exp(-gap / tau))
            margin = p_star - floor
            worst = min(worst, margin)
            if margin < -1e-9:
                violations += 1
        ok = violations == 0
        return ok, f"{n_trials} trials, {violations} violations, worst margin {worst:.2e}"

    return _timed("soft_policy_bound", run)


# ------------------------------------------------------- fusion error bound


def check_fusion_bound(seed: int = 0, n_trials: int = 10_000, d: int = 8) -> SuiteResult:
    """Replacing the symbolic vector by the true one moves the fused output
    by at most eps + L_gate * eps * ||z_neural - y||, with the gate Lipschitz
    constant estimated empirically (x1.05 safety)."""

    def run():
        rng = np.random.default_rng(seed)
        gate = FuseGateParams.init(rng, d)

        def gamma(u: np.ndarray) -> np.ndarray:
            with dn.no_tape():
                return dn.sigmoid(gate.gate(Tensor(u))).data

        lip = 0.0
        for _ in range(2000):
            u1 = rng.normal(0, 1.5, 2 * d)
            u2 = u1 + rng.normal(0, 0.1, 2 * d)
            du = float(np.linalg.norm(u1 - u2))
            if du < 1e-9:
                continue
            lip = max(lip, float(np.linalg.norm(gamma(u1) - gamma(u2))) / du)
        lip *= 1.05

        violations = 0
        worst = math.inf
        with dn.no_tape():
            for _ in range(n_trials):
                z_n = Tensor(rng.normal(0, 1.0, d))
                y = rng.normal(0, 1.0, d)
                eps_vec = rng.normal(0, 0.3, d)
                z_sym = Tensor(y + eps_vec)
                y_t = Tensor(y.copy())
                z_f = fuse(z_n, z_sym, gate).data
                z_ideal = fuse(z_n, y_t, gate).data
                lhs = float(np.linalg.norm(z_f - z_ideal))
                eps = float(np.linalg.norm(eps_vec))
                rhs = eps + lip * eps * float(np.linalg.norm(z_n.data - y))
                margin = rhs - lhs
                worst = min(worst, margin)
                if margin < -1e-9:
                    violations += 1
        ok = violations == 0
        return ok, (
            f"{n_trials} trials, gate Lipschitz {lip:.3f}, "
            f"{violations} violations, worst margin {worst:.2e}"
        )

    return _timed("fusion_bound", run)


# ----------------------------------------------------- query-budget ceiling


def check_query_budget(seed: int = 0, n_episodes: int = 500) -> SuiteResult:
    """With every oracle answer buying at least delta_min entropy reduction,
    the number of queries needed to reach the target never exceeds the
    ceiling bound."""

    def run():
        rng = np.random.default_rng(seed)
        violations = 0
        for _ in range(n_episodes):
            h0 = float(rng.uniform(0.5, 3.0))
            h_target = float(rng.uniform(0.0, h0 * 0.9))
            delta_min = float(rng.uniform(0.05, 0.5))
            bound = query_complexity_bound(h0, h_target, delta_min)
            h, queries = h0, 0
            while h > h_target:
                h -= delta_min + float(rng.uniform(0.0, 0.3))
                queries += 1
            if queries > bound:
                violations += 1
        ok = violations == 0
        return ok, f"{n_episodes} episodes, {violations} budget violations"

    return _timed("query_budget", run)


# ------------------------------------------------------ hop-interval coverage


def check_hop_coverage(
    seed: int = 0,
    n_queries: int = 5000,
    deltas: tuple[float, ...] = (0.05, 0.1),
    out_jsonl: str | Path | None = None,
    h_max: int = 4,
) -> SuiteResult:
    """Intervals centered on the noisy hop estimate with the sub-Gaussian
    half-width cover the true hop at rate >= 1 - delta - 0.03. Also runs the
    learned head end-to-end with model-consistent truth."""

    def run():
        rng = np.random.default_rng(seed)
        rows = []
        all_ok = True
        details = []
        for delta in deltas:
            hits = 0
            for _ in range(n_queries):
                h_true = int(rng.integers(1, h_max + 1))
                sigma = float(rng.uniform(0.3, 1.0))
                obs = h_true + float(rng.normal(0.0, sigma))
                mode = int(np.clip(round(obs), 1, h_max))
                probs = np.zeros(h_max)
                probs[mode - 1] = 1.0
                dist = HopDistribution(
                    probs=Tensor(probs), sigma2=Tensor(sigma**2), logits=Tensor(np.zeros(h_max))
                )
                lo, hi = coverage_interval(dist, delta)
                hits += int(lo <= h_true <= hi)
            cov = hits / n_queries
            rows.append({"delta": delta, "empirical_coverage": cov, "n": n_queries})
            ok = cov >= 1.0 - delta - 0.03
            all_ok = all_ok and ok
            details.append(f"delta={delta}: {cov:.4f}")

        # learned head in the loop: truth drawn from the head's own predictive
        # noise model, so the consistency assumption holds by construction
        d = 6
        head = HopHeadParams.init(rng, d, h_max)
        hits = 0
        n_head = 500
        delta = deltas[0]
        for _ in range(n_head):
            v_q = Tensor(rng.normal(0, 1, d))
            with dn.no_tape():
                dist = hop_head(v_q, head, rng, n_samples=1)
            mode = float(dist.probs.data.argmax()) + 1.0
            sigma = math.sqrt(float(dist.sigma2.data.reshape(())))
            h_true = mode + float(rng.normal(0.0, sigma))
            lo, hi = coverage_interval(dist, delta)
            hits += int(lo <= h_true <= hi)
        cov_head = hits / n_head
        rows.append({"delta": delta, "empirical_coverage": cov_head, "n": n_head, "source": "hop_head"})
        ok_head = cov_head >= 1.0 - delta - 0.03
        all_ok = all_ok and ok_head
        details.append(f"head: {cov_head:.4f}")

        if out_jsonl is not None:
            with Path(out_jsonl).open("w") as f:
                for row in rows:
                    f.write(json.dumps(row, sort_keys=True) + "\n")
        return all_ok, "; ".join(details)

    return _timed("hop_coverage", run)


# -------------------------------------------------------- gradient integrity


def check_gradient_integrity(seed: int = 0) -> SuiteResult:
    """Finite-difference checks across every learned module (<= 1e-4), plus
    the exact expectation through a depth-2 tree (<= 1e-3)."""

    def run():
        rng = np.random.default_rng(seed)
        d = 5
        graph = KnowledgeGraph()
        eid = {name: graph.add_entity(name) for name in "abcdef"}
        rid = {r: graph.add_relation(r) for r in ("r0", "r1", "r2")}
        for h, r, t in (("a", "r0", "b"), ("b", "r1", "c"), ("a", "r1", "d"),
                        ("d", "r2", "e"), ("b", "r2", "f")):
            graph.add_triple(eid[h], rid[r], eid[t])
        tables = build_tables(graph, d, rng)
        worst: dict[str, float] = {}

        def check(name: str, fn, inputs):
            rel = dn.gradcheck(fn, inputs)
            worst[name] = rel
            return rel

        q_enc = QueryEncoder.init(rng, d)
        tok = tables.token_emb[0]
        check("query_encoder", lambda _: dn.sum_(
            encode_query(("anchor:a", "rel:r0"), tables, q_enc)), [q_enc.mlp.w1, tok])

        p_enc = PathEncoderParams.init(rng, d)
        path = ((0, 0, 1), (1, 1, 2))
        check("path_encoder", lambda _: dn.sum_(
            encode_path(path, tables, p_enc).z_f_neural), [p_enc.struct_mlp.w1])

        hop = HopHeadParams.init(rng, d, 3)
        v_q = Tensor(rng.normal(0, 1, d))
        check("hop_head", lambda _: dn.sum_(hop.mlp(v_q)), [hop.mlp.w1])
        check("hop_var", lambda _: dn.pick(dn.softplus(hop.var_head(v_q)), 0), [hop.var_head.w1])

        ent = EntropyNetParams.init(rng, d)
        sub = Subgraph(triples=[(0, 0, 1), (1, 1, 2)], frontier=(0, 1), graph=graph)
        check("entropy_net", lambda _: entropy_predict(sub, 1, v_q, tables, ent),
              [ent.msg_mlp.w1])

        rule = Rule.init(rng, 0, (0, 1), d, 0.7)
        rb = RuleBase([rule])
        enc = encode_path(path, tables, p_enc)
        rp = ReasoningPath(triples=path)
        check("rule_logit", lambda _: symbolic_score(rb, rp, enc).plausibility, [rule.w_logit])
        check("rule_embedding", lambda _: dn.sum_(symbolic_score(rb, rp, enc).z_sym),
              [rule.embedding])

        gate = FuseGateParams.init(rng, d)
        z_n, z_s = Tensor(rng.normal(0, 1, d)), Tensor(rng.normal(0, 1, d))
        check("fuse_gate", lambda _: dn.sum_(fuse(z_n, z_s, gate)), [gate.gate.w1])

        nets = PolicyValueNets.init(rng, d)
        check("policy_net", lambda _: dn.sum_(
            nets.policy_logits(v_q, [0, 1], tables)), [nets.policy.w1])
        check("value_net", lambda _: nets.value_of(v_q), [nets.value.w1])

        scorer = AnswerScorer.init(rng, d)
        check("answer_scorer", lambda _: gen_loss(
            score_answers(z_n, [0, 1, 2], tables, scorer), frozenset({1}))[0],
            [scorer.projection])

        validity = Perceptron.init(rng, d, d, 1)
        check("validity_head", lambda _: dn.pick(validity(z_n), 0), [validity.w1])

        fast_bad = {k: v for k, v in worst.items() if v > 1e-4}

        tree_rel = _through_tree_gradcheck(seed)
        worst["through_tree"] = tree_rel
        tree_ok = tree_rel <= 1e-3

        ok = not fast_bad and tree_ok
        top = max(worst, key=worst.get)
        return ok, f"{len(worst)} checks, worst {top}={worst[top]:.2e}"

    return _timed("grad_integrity", run)


def _through_tree_gradcheck(seed: int) -> float:
    """Exact soft expectation over a depth-2 tree, FD-checked end to end."""
    from .kg import BenchmarkItem
    from .oracle import simulated_answer

    rng = np.random.default_rng(seed)
    d = 5
    graph = KnowledgeGraph()
    a = graph.add_entity("a")
    b = [graph.add_entity(f"b{i}") for i in range(3)]
    c = {(i, j): graph.add_entity(f"c{i}{j}") for i in range(3) for j in range(3)}
    rids = [graph.add_relation(f"r{i}") for i in range(3)]
    for i in range(3):
        graph.add_triple(a, rids[i], b[i])
        for j in range(3):
            graph.add_triple(b[i], rids[j], c[(i, j)])
    item = BenchmarkItem(
        question_tokens=["anchor:a", "rel:r1", "rel:r2"],
        anchors=[a],
        gold_answers=frozenset({c[(1, 2)]}),
        gold_hops=2,
        gold_paths=[ReasoningPath(triples=((a, 1, b[1]), (b[1], 2, c[(1, 2)])))],
        relevance_labels={0: False, 1: True, 2: False},
    )
    tables = build_tables(graph, d, rng)
    rng_o = np.random.default_rng(seed + 1)
    ctx = EpisodeContext(
        graph=graph,
        tables=tables,
        query_encoder=QueryEncoder.init(rng, d),
        path_params=PathEncoderParams.init(rng, d),
        state_proj=Perceptron.init(rng, 2 * d, d, d),
        hop_params=HopHeadParams.init(rng, d, 4),
        entropy_params=EntropyNetParams.init(rng, d),
        rules=RuleBase([]),
        gate=FuseGateParams.init(rng, d),
        nets=PolicyValueNets.init(rng, d),
        scorer=AnswerScorer.init(rng, d),
        acq=AcquisitionConfig(tau_human=1.01),
        buffer=ReplayBuffer(),
        oracle_answer=lambda q: simulated_answer(q, item, 0.0, rng_o),
    )
    cfg = SearchConfig(tau_search=0.5)
    return dn.gradcheck(
        lambda _: expected_answer_loss_soft(ctx, item, cfg, depth=2),
        [ctx.nets.policy.w1, ctx.nets.value.w1],
    )


# -------------------------------------------------- gumbel sampling fidelity


def check_gumbel_tv(seed: int = 0, n_draws: int = 100_000) -> SuiteResult:
    """Hard-sample frequencies match the softmax distribution of the logits
    (total variation <= 0.02): the perturbed-argmax trick is unbiased."""

    def run():
        rng = np.random.default_rng(seed)
        logits = np.array([0.5, -0.3, 0.9, 0.0])
        t = Tensor(logits)
        counts = np.zeros(len(logits))
        with dn.no_tape():
            for _ in range(n_draws):
                w = gumbel_select(t, 0.7, rng, hard=True)
                counts[int(w.data.argmax())] += 1
        p = np.exp(logits - logits.max())
        p /= p.sum()
        tv = 0.5 * float(np.abs(counts / n_draws - p).sum())
        return tv <= 0.02, f"{n_draws} draws, TV {tv:.4f}"

    return _timed("gumbel_tv", run)


# ------------------------------------------------------- convergence trend


def _trend_problem(n_items: int = 4, n_relations: int = 3) -> tuple[KnowledgeGraph, list[BenchmarkItem]]:
    """Single-hop questions where every relation out of the anchor reaches the
    gold entity next to one relation-specific distractor. Retrieval always
    succeeds, so the answer loss carries live gradients from the first step
    and the measured gradient-norm series reflects optimization, not whether
    the initial policy happens to stumble onto the right branch."""
    graph = KnowledgeGraph()
    rel_ids = [graph.add_relation(f"r{j}") for j in range(n_relations)]
    items = []
    for i in range(n_items):
        a = graph.add_entity(f"a{i}")
        g = graph.add_entity(f"g{i}")
        for j, r in enumerate(rel_ids):
            d_ = graph.add_entity(f"d{i}_{j}")
            graph.add_triple(a, r, g)
            graph.add_triple(a, r, d_)
        items.append(
            BenchmarkItem(
                question_tokens=[entity_token(f"a{i}"), relation_token("r0")],
                anchors=[a],
                gold_answers=frozenset({g}),
                gold_hops=1,
                gold_paths=[ReasoningPath(triples=((a, r, g),)) for r in rel_ids],
                relevance_labels={r: True for r in rel_ids},
            )
        )
    return graph, items


def check_convergence_trend(
    seed: int = 0, steps: int = 500, out_metrics: str | Path | None = None
) -> SuiteResult:
    """Decaying-step training on a tiny constructed task: the mean squared raw
    gradient norm over the last 10% of steps must fall below 25% of the first
    10%. Rollout and depth budgets are set so soft in-tree descent actually
    happens (otherwise the commit distribution carries no live prior mass and
    the policy gradient is identically zero)."""

    def run():
        graph, items = _trend_problem()
        cfg = TrainConfig(
            d=6, steps=steps, batch_size=1, seed=seed, lr=0.05, lr_mode="rm",
            rollouts=10, n_inner=10, max_depth=1, human_queries=1,
            tau_human=1.01, oracle_noise=0.0, full_batch=False, descent="soft",
        )
        sched = Schedules(total_steps=steps, lr0=cfg.lr, lr_mode="rm")
        res = train_run(graph, items, cfg, schedules=sched, metrics_path=out_metrics)
        series = np.array([r["grad_total_raw"] for r in res.metrics]) ** 2
        k = max(1, len(series) // 10)
        lead, trail = float(series[:k].mean()), float(series[-k:].mean())
        ratio = trail / lead if lead > 0 else math.inf
        ok = (not res.diverged) and ratio < 0.25
        return ok, f"{len(series)} steps, lead {lead:.3e}, trail {trail:.3e}, ratio {ratio:.3f}"

    return _timed("convergence_trend", run)


# ------------------------------------------------------------------ run_all


FAST_SUITES = (
    "soft_policy_bound",
    "fusion_bound",
    "query_budget",
    "hop_coverage",
    "grad_integrity",
    "gumbel_tv",
)


def run_all(
    seed: int = 0,
    perturb: str | None = None,
    include_slow: bool = True,
    out_dir: str | Path | None = None,
) -> list[SuiteResult]:
    out = Path(out_dir) if out_dir is not None else None
    results = [
        check_soft_policy_bound(seed, perturb=(perturb == "lemma5")),
        check_fusion_bound(seed),
        check_query_budget(seed),
        check_hop_coverage(
            seed, out_jsonl=(out / "hop_coverage.jsonl") if out else None
        ),
        check_gradient_integrity(seed),
        check_gumbel_tv(seed),
    ]
    if include_slow:
        results.append(
            check_convergence_trend(
                seed, out_metrics=(out / "convergence_metrics.jsonl") if out else None
            )
        )
    return results
