"""Differentiable tree search over retrieval states: UCB with
uncertainty-adaptive progressive widening, explicit human-oracle child
actions, a temperature-relaxed tree policy carrying gradients, and the
episode loop joining retrieval, rule grounding, answering, and the oracle.

Two execution regimes share the tree machinery:
  - sampled descent (default): inner rollouts gather statistics fully
    detached; each outer commit is a differentiable step whose selection
    weights are retained straight-through, so training cost stays linear in
    hops rather than in rollouts;
  - soft descent: full expectation over the tree policy at every level,
    exponential in depth, used on tiny trees where exactness matters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffnum as dn
from .diffnum import Tensor
from .answer import AnswerScorer, gen_loss, score_answers
from .encode import (
    EmbeddingTables,
    PathEncoderParams,
    Perceptron,
    QueryEncoder,
    encode_path,
    encode_query,
)
from .kg import BenchmarkItem, KnowledgeGraph, ReasoningPath
from .logic import FuseGateParams, RuleBase, fuse, symbolic_score
from .oracle import OracleAnswer, OracleQuery, ReplayBuffer, response_model
from .uncert import (
    AcquisitionConfig,
    CognitiveState,
    EntropyNetParams,
    HopDistribution,
    HopHeadParams,
    RunningScale,
    Subgraph,
    acquisition_utility,
    entropy_predict,
    gumbel_select,
    hop_gate,
    hop_head,
    make_state,
    retrieval_cost,
    state_uncertainty,
)

QUERY_HUMAN = "query_human"


class SearchError(ValueError):
    pass


@dataclass
class SearchConfig:
    k: float = 2.5
    alpha: float = 0.5
    c_explore: float = 1.0
    tau_search: float = 1.0
    n_rollouts: int = 32
    max_depth: int = 4
    n_inner: int = 4
    a_max: int = 8
    tau_gumbel: float = 1.0
    hard_gumbel: bool = True
    descent: str = "sample"  # sample | soft

    def __post_init__(self) -> None:
        if self.k <= 0 or not (0 < self.alpha < 1) or self.c_explore <= 0:
            raise SearchError("SearchConfig: k/alpha/c_explore out of range")
        if self.tau_search <= 0 or self.tau_gumbel <= 0:
            raise SearchError("SearchConfig: temperatures must be > 0")
        if self.descent not in ("sample", "soft"):
            raise SearchError(f"SearchConfig: unknown descent {self.descent!r}")


@dataclass
class Budgets:
    rollouts: int = 32
    human_queries: int = 4

    def __post_init__(self) -> None:
        if self.rollouts < 0 or self.human_queries < 0:
            raise SearchError("Budgets: counts must be >= 0")


@dataclass
class PolicyValueNets:
    # project-then-dot head: logit(a) = <policy(state), emb_a>. A concat MLP
    # cannot express the state/relation agreement that relevance needs, so it
    # collapses to the label base rate; the bilinear form keeps ranking live.
    policy: Perceptron  # d -> d state projection
    value: Perceptron  # d -> 1
    human_emb: Tensor  # learned action embedding for QUERY_HUMAN

    @classmethod
    def init(cls, rng: np.random.Generator, d: int) -> "PolicyValueNets":
        return cls(
            policy=Perceptron.init(rng, d, None, d),
            value=Perceptron.init(rng, d, d, 1),
            human_emb=Tensor(rng.uniform(-1, 1, d) / math.sqrt(d), requires_grad=True),
        )

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}/human_emb": self.human_emb}
        out.update(self.policy.params(f"{prefix}/policy"))
        out.update(self.value.params(f"{prefix}/value"))
        return out

    def action_logit(self, neural: Tensor, action, tables: EmbeddingTables) -> Tensor:
        emb = self.human_emb if action == QUERY_HUMAN else tables.relation_emb[action]
        return dn.dot(self.policy(neural), emb)

    def policy_logits(self, neural: Tensor, actions, tables: EmbeddingTables) -> Tensor:
        projected = self.policy(neural)
        logits = dn.concat(
            [
                dn.dot(projected, self.human_emb if a == QUERY_HUMAN else tables.relation_emb[a])
                for a in actions
            ]
        )
        if not np.all(np.isfinite(logits.data)):
            raise SearchError("policy logits not finite")
        return logits

    def value_of(self, neural: Tensor) -> Tensor:
        v = dn.pick(self.value(neural), 0)
        if not np.isfinite(float(v.data.reshape(()))):
            raise SearchError("value estimate not finite")
        return v


class SearchNode:
    """One search-tree state. Visit statistics are plain floats; priors keep
    their Tensor form so PUCT stays differentiable at commit time."""

    def __init__(self, state: CognitiveState, node_id: int = 0, is_human_node: bool = False):
        self.state = state
        self.V_C = 0.0
        self.n_C = 0
        self.n_soft = 0.0
        self.uncertainty = 0.0
        self.children: dict = {}
        self.prior: dict = {}
        self.is_human_node = is_human_node
        self.actions: list = []  # candidate actions in fixed order
        self.node_id = node_id

    def q_value(self) -> float:
        return self.V_C / max(1, self.n_C)

    def total_soft(self) -> float:
        return sum(c.n_soft for c in self.children.values())


def ucb_pw(child: SearchNode, parent: SearchNode, cfg: SearchConfig) -> tuple[float, bool]:
    """Visit-count UCB whose exploration term switches off once the child's
    visits exceed the uncertainty-widened cap; the indicator doubles as the
    parent's test for admitting new children."""
    if parent.n_C < 1:
        raise SearchError("ucb_pw: parent must have at least one visit")
    cap = cfg.k * parent.n_C**cfg.alpha * (1.0 + child.uncertainty)
    expandable = child.n_C < cap
    score = child.V_C / max(1, child.n_C)
    if expandable:
        score += cfg.c_explore * math.sqrt(math.log(parent.n_C) / max(1, child.n_C))
    return score, expandable


def widening_capacity(node: SearchNode, cfg: SearchConfig) -> float:
    """Maximum relation children the node may hold at its current visit
    count (the ucb_pw indicator read as a child-count cap)."""
    return cfg.k * max(1, node.n_C) ** cfg.alpha * (1.0 + node.uncertainty)


def query_complexity_bound(h0: float, h_target: float, delta_min: float) -> int:
    """Worst-case number of oracle answers needed to push uncertainty from h0
    down to h_target when each answer removes at least delta_min."""
    if delta_min <= 0:
        raise SearchError("query_complexity_bound: delta_min must be > 0")
    if h_target >= h0:
        return 0
    return math.ceil((h0 - h_target) / delta_min)


def human_node_value(s: CognitiveState, response_dist: dict, cond_values: dict, c_human: float) -> float:
    """Expected post-answer value minus annotation cost (the human child's
    worth under the learned response model)."""
    missing = [y for y in response_dist if y not in cond_values]
    if missing:
        raise SearchError(f"human_node_value: cond_values missing labels {missing}")
    return sum(p * cond_values[y] for y, p in response_dist.items()) - c_human


def puct(node: SearchNode, action) -> Tensor:
    """Prior-weighted exploration term on soft visit mass; differentiable
    through the stored prior."""
    if action not in node.prior:
        raise SearchError(f"puct: no prior for action {action!r}")
    total = node.total_soft()
    child = node.children.get(action)
    n_a = child.n_soft if child is not None else 0.0
    scale = math.sqrt(total) / (1.0 + n_a)
    p = node.prior[action]
    if isinstance(p, Tensor):
        return dn.mul(p, dn.constant(scale))
    return dn.constant(p * scale)


def soft_tree_policy(q_values: dict, pucts: dict, cfg: SearchConfig) -> tuple[tuple, Tensor]:
    """Temperature-relaxed action distribution softmax((Q + c*PUCT)/tau);
    every map value may be a Tensor, and gradients pass through all of them."""
    if not q_values:
        raise SearchError("soft_tree_policy: empty action set")
    if set(q_values) != set(pucts):
        raise SearchError("soft_tree_policy: Q and PUCT maps disagree on actions")
    actions = tuple(sorted(q_values, key=str))
    terms = []
    for a in actions:
        q = q_values[a] if isinstance(q_values[a], Tensor) else dn.constant(float(q_values[a]))
        u = pucts[a] if isinstance(pucts[a], Tensor) else dn.constant(float(pucts[a]))
        terms.append(dn.div(dn.add(q, dn.mul(dn.constant(cfg.c_explore), u)), dn.constant(cfg.tau_search)))
    return actions, dn.softmax(dn.concat(terms))


# --------------------------------------------------------------- episode ctx


@dataclass
class EpisodeContext:
    """Everything an episode touches. `oracle_answer` maps an OracleQuery to
    an OracleAnswer (simulated, interactive bridge, or replayed recording)
    and owns its own randomness."""

    graph: KnowledgeGraph
    tables: EmbeddingTables
    query_encoder: QueryEncoder
    path_params: PathEncoderParams
    state_proj: Perceptron
    hop_params: HopHeadParams
    entropy_params: EntropyNetParams
    rules: RuleBase
    gate: FuseGateParams
    nets: PolicyValueNets
    scorer: AnswerScorer
    acq: AcquisitionConfig
    buffer: ReplayBuffer
    oracle_answer: object  # callable OracleQuery -> OracleAnswer
    ig_scale: RunningScale = field(default_factory=RunningScale)
    tnorm: str = "product"
    n_hop_samples: int = 1
    query_strategy: str = "adaptive"  # "random" = ablation baseline
    _query_seq: int = 0
    _node_seq: int = 0

    def __post_init__(self) -> None:
        if self.query_strategy not in ("adaptive", "random"):
            raise SearchError(f"unknown query strategy {self.query_strategy!r}")

    def next_query_id(self) -> str:
        # globally unique across episodes: the oracle bridge keys on these
        self._query_seq += 1
        return f"q{self._query_seq}"

    def next_node_id(self) -> int:
        self._node_seq += 1
        return self._node_seq


@dataclass
class EpisodeResult:
    answers: list
    answer_dist: object
    gen: Tensor
    plausibility: Tensor | None
    hop_logits: Tensor | None
    hop_sigma2: Tensor | None
    committed: list
    trace: list
    human_queries: list
    flags: set
    correct: bool | None
    error_mode: str | None
    realized_ig: list
    selection_weights: list
    pi_tree_probs: list
    best_path: ReasoningPath | None
    z_sym: Tensor | None
    z_path_neural: Tensor | None


def _ste_one(p: Tensor) -> Tensor:
    """Forward exactly 1, backward d/dx of p: straight-through retention of a
    sampled selection weight."""
    return dn.add(p, dn.constant(1.0 - float(p.data.reshape(()))))


def _node_state(ctx: EpisodeContext, frontier, hop_budget: int, visited, pruned, v_q: Tensor) -> CognitiveState:
    return make_state(frontier, hop_budget, visited, pruned, v_q, ctx.tables, ctx.state_proj)


def _candidates(ctx: EpisodeContext, node: SearchNode, cfg: SearchConfig) -> list[int]:
    rels = ctx.graph.candidate_relations(node.state.frontier, cfg.a_max)
    return [r for r in rels if r not in node.state.pruned_relations]


def _ensure_actions(ctx: EpisodeContext, node: SearchNode, cfg: SearchConfig, hop_dist, recent_ig) -> None:
    """Populate candidate actions, detached priors, and node uncertainty on
    first touch; lazily append the human action once uncertainty warrants."""
    if not node.actions:
        cands = _candidates(ctx, node, cfg)
        node.actions = list(cands)
        node.uncertainty = state_uncertainty(node.state, hop_dist, recent_ig, ctx.ig_scale.scale)
    if (
        QUERY_HUMAN not in node.actions
        and not node.is_human_node
        and ctx.acq.tau_human < 1.0
        and node.uncertainty > 0.5 * ctx.acq.tau_human
    ):
        node.actions.append(QUERY_HUMAN)
        node.prior = {}
    if node.actions and not node.prior:
        with dn.no_tape():
            logits = ctx.nets.policy_logits(node.state.neural, node.actions, ctx.tables)
            probs = dn.softmax(logits)
        node.prior = {a: float(probs.data[i]) for i, a in enumerate(node.actions)}


def _human_cond_values(ctx: EpisodeContext, node: SearchNode, v_q: Tensor) -> dict:
    """One-step lookahead: value the state as if the answer arrived and the
    top candidate relation were kept (True) or pruned (False)."""
    rels = [a for a in node.actions if a != QUERY_HUMAN]
    with dn.no_tape():
        if not rels:
            base = float(ctx.nets.value_of(node.state.neural).data.reshape(()))
            return {True: base, False: base}
        best = rels[0]
        kept = ctx.graph.reach(node.state.frontier, best)
        s_yes = _node_state(
            ctx, kept or node.state.frontier, max(0, node.state.hop_budget - 1),
            tuple(node.state.visited_relations) + (best,), node.state.pruned_relations, v_q,
        )
        s_no = _node_state(
            ctx, node.state.frontier, node.state.hop_budget,
            node.state.visited_relations, frozenset(node.state.pruned_relations | {best}), v_q,
        )
        return {
            True: float(ctx.nets.value_of(s_yes.neural).data.reshape(())),
            False: float(ctx.nets.value_of(s_no.neural).data.reshape(())),
        }


def _leaf_value(ctx: EpisodeContext, node: SearchNode, at_max_depth: bool) -> float:
    with dn.no_tape():
        v = float(ctx.nets.value_of(node.state.neural).data.reshape(()))
        if at_max_depth and node.state.frontier:
            dist = score_answers(
                node.state.neural, list(node.state.frontier)[: 32], ctx.tables, ctx.scorer
            )
            v = 0.5 * v + 0.5 * float(dist.probs.data.max())
    return v


def _expand_child(ctx: EpisodeContext, node: SearchNode, action, v_q: Tensor) -> SearchNode:
    if action == QUERY_HUMAN:
        child = SearchNode(node.state, ctx.next_node_id(), is_human_node=True)
    else:
        nxt = ctx.graph.reach(node.state.frontier, action)
        with dn.no_tape():
            state = _node_state(
                ctx, nxt or node.state.frontier, max(0, node.state.hop_budget - 1),
                tuple(node.state.visited_relations) + (action,), node.state.pruned_relations, v_q,
            )
        child = SearchNode(state, ctx.next_node_id())
    node.children[action] = child
    return child


def rollout(
    root: SearchNode,
    ctx: EpisodeContext,
    cfg: SearchConfig,
    rng: np.random.Generator,
    v_q: Tensor,
    hop_dist: HopDistribution,
    recent_ig,
) -> dict:
    """One simulation: descend by sampling the (detached) tree policy,
    expand where widening permits, evaluate the leaf, back the value up.
    Returns a per-step record for the trace."""
    path: list[tuple[SearchNode, object, float]] = []
    node = root
    depth = 0
    steps = []
    while True:
        _ensure_actions(ctx, node, cfg, hop_dist, recent_ig)
        at_depth_cap = depth >= cfg.max_depth or node.state.hop_budget <= 0
        if node.is_human_node:
            resp = response_model(ctx.buffer, node.state, "relation_relevance")
            value = human_node_value(
                node.state, resp, _human_cond_values(ctx, node, v_q), ctx.acq.beta * ctx.acq.c_human
            )
            break
        if at_depth_cap or not node.actions:
            value = _leaf_value(ctx, node, at_depth_cap)
            break
        unexpanded = [a for a in node.actions if a not in node.children]
        rel_children = sum(1 for a in node.children if a != QUERY_HUMAN)
        if unexpanded and (node.n_C == 0 or rel_children < widening_capacity(node, cfg)):
            action = _best_unexpanded(ctx, node, unexpanded, v_q)
            child = _expand_child(ctx, node, action, v_q)
            child.uncertainty = state_uncertainty(child.state, hop_dist, recent_ig, ctx.ig_scale.scale)
            path.append((node, action, 1.0))
            steps.append({"node_id": node.node_id, "action": _action_json(action), "expanded": True})
            node = child
            depth += 1
            continue
        q_vals, pucts = {}, {}
        for a in node.actions:
            if a not in node.children:
                continue
            c = node.children[a]
            if a == QUERY_HUMAN:
                resp = response_model(ctx.buffer, node.state, "relation_relevance")
                q_vals[a] = human_node_value(
                    node.state, resp, _human_cond_values(ctx, node, v_q), ctx.acq.beta * ctx.acq.c_human
                )
            else:
                q_vals[a] = c.q_value() if c.n_C > 0 else _leaf_value(ctx, c, False)
            pucts[a] = float(node.prior.get(a, 0.0)) * math.sqrt(node.total_soft()) / (1.0 + c.n_soft)
        if not q_vals:
            value = _leaf_value(ctx, node, True)
            break
        with dn.no_tape():
            actions, probs = soft_tree_policy(q_vals, pucts, cfg)
        p = probs.data
        idx = int(rng.choice(len(actions), p=p / p.sum()))
        action = actions[idx]
        for a, w in zip(actions, p):
            child = node.children.get(a)
            if child is not None:
                child.n_soft += float(w)
        steps.append(
            {
                "node_id": node.node_id,
                "action": _action_json(action),
                "pi_tree": {_action_json(a): float(w) for a, w in zip(actions, p)},
                "expanded": False,
            }
        )
        path.append((node, action, float(p[idx])))
        node = node.children[action]
        depth += 1
    for parent, action, _w in path:
        parent.V_C += value
        parent.n_C += 1
    node.V_C += value
    node.n_C += 1
    return {"steps": steps, "value": value, "leaf_node": node.node_id, "depth": depth}


def _best_unexpanded(ctx: EpisodeContext, node: SearchNode, unexpanded, v_q: Tensor):
    with dn.no_tape():
        sub = Subgraph(triples=_frontier_triples(ctx, node), frontier=node.state.frontier, graph=ctx.graph)
        base = entropy_predict(sub, None, v_q, ctx.tables, ctx.entropy_params).item()
        best, best_u = None, -math.inf
        for a in unexpanded:
            if a == QUERY_HUMAN:
                u = acquisition_utility(0, "human", base, 0.0, ctx.acq)
            else:
                ig = base - entropy_predict(sub, a, v_q, ctx.tables, ctx.entropy_params).item()
                u = acquisition_utility(a, "auto", ig, retrieval_cost(ctx.graph, node.state.frontier, a), ctx.acq)
            if u > best_u:
                best, best_u = a, u
    return best


def _frontier_triples(ctx: EpisodeContext, node: SearchNode) -> list:
    out = []
    for h in node.state.frontier:
        for r in ctx.graph.relations_from(h):
            for t in ctx.graph.tails(h, r):
                out.append((h, r, t))
    return out


def _action_json(action):
    return action if action == QUERY_HUMAN else int(action)


# ------------------------------------------------------------- episode loop


def _commit_step(
    ctx: EpisodeContext,
    root: SearchNode,
    cfg: SearchConfig,
    rng: np.random.Generator,
    v_q: Tensor,
    hop_dist: HopDistribution,
    recent_ig,
    sample: bool,
):
    """Differentiable selection at the episode's current root: recompute
    priors and utilities on the tape, relax both the tree policy and the
    utility argmax, and return the chosen action with its retained weight."""
    actions = [a for a in root.actions if a in root.children] or list(root.actions)
    if not actions:
        return None, None, {}
    neural = _node_state(
        ctx, root.state.frontier, root.state.hop_budget,
        root.state.visited_relations, root.state.pruned_relations, v_q,
    ).neural
    logits = ctx.nets.policy_logits(neural, actions, ctx.tables)
    prior_t = dn.softmax(logits)
    root.prior = {a: dn.pick(prior_t, i) for i, a in enumerate(actions)}
    q_vals, pucts = {}, {}
    for i, a in enumerate(actions):
        child = root.children.get(a)
        if a == QUERY_HUMAN:
            resp = response_model(ctx.buffer, root.state, "relation_relevance")
            q_vals[a] = human_node_value(
                root.state, resp, _human_cond_values(ctx, root, v_q), ctx.acq.beta * ctx.acq.c_human
            )
        elif child is not None and child.n_C > 0:
            q_vals[a] = child.q_value()
        elif child is not None:
            q_vals[a] = _leaf_value(ctx, child, False)
        else:
            with dn.no_tape():
                nxt = ctx.graph.reach(root.state.frontier, a)
                st = _node_state(
                    ctx, nxt or root.state.frontier, max(0, root.state.hop_budget - 1),
                    tuple(root.state.visited_relations) + (a,), root.state.pruned_relations, v_q,
                )
                q_vals[a] = float(ctx.nets.value_of(st.neural).data.reshape(()))
        pucts[a] = puct(root, a)
    order, probs = soft_tree_policy(q_vals, pucts, cfg)
    if sample:
        p = probs.data
        idx = int(rng.choice(len(order), p=p / p.sum()))
    else:
        idx = int(probs.data.argmax())
    action = order[idx]
    # relaxed relation selection over live acquisition utilities: gradients
    # reach the entropy net through the chosen weight
    rels = [a for a in order if a != QUERY_HUMAN]
    sel_weight = _ste_one(dn.pick(probs, idx))
    gumbel_weights = {}
    if action != QUERY_HUMAN and len(rels) > 1:
        sub = Subgraph(triples=_frontier_triples(ctx, root), frontier=root.state.frontier, graph=ctx.graph)
        base = entropy_predict(sub, None, v_q, ctx.tables, ctx.entropy_params)
        utils = []
        for a in rels:
            ig = dn.sub(base, entropy_predict(sub, a, v_q, ctx.tables, ctx.entropy_params))
            cost = retrieval_cost(ctx.graph, root.state.frontier, a)
            utils.append(dn.sub(ig, dn.constant(ctx.acq.lambda_cost * cost)))
        w = gumbel_select(dn.concat(utils), cfg.tau_gumbel, rng, hard=False)
        gumbel_weights = {int(a): float(w.data[i]) for i, a in enumerate(rels)}
        j = rels.index(action)
        sel_weight = dn.mul(sel_weight, _ste_one(dn.pick(w, j)))
    pi_record = {_action_json(a): float(probs.data[i]) for i, a in enumerate(order)}
    return action, sel_weight, {"pi_tree": pi_record, "gumbel_weights": gumbel_weights, "pi_probs": probs}


def _paths_for_sequence(ctx: EpisodeContext, anchors, relations, cap: int = 8) -> list[ReasoningPath]:
    """Concrete reasoning paths realizing the committed relation sequence,
    breadth-first, deterministic, capped."""
    if not relations:
        return []
    partial: list[tuple[tuple[int, int, int], ...]] = [()]
    frontier_of = {(): tuple(sorted(anchors))}
    for r in relations:
        nxt: list[tuple[tuple[int, int, int], ...]] = []
        for chain in partial:
            heads = frontier_of[chain] if not chain else (chain[-1][2],)
            for h in heads:
                for t in ctx.graph.tails(h, r):
                    ext = chain + ((h, r, t),)
                    nxt.append(ext)
                    if len(nxt) >= cap * 4:
                        break
                if len(nxt) >= cap * 4:
                    break
            if len(nxt) >= cap * 4:
                break
        partial = nxt
        if not partial:
            return []
    return [ReasoningPath(triples=c) for c in partial[:cap]]


def run_episode(
    item: BenchmarkItem,
    ctx: EpisodeContext,
    cfg: SearchConfig,
    budgets: Budgets,
    rng: np.random.Generator,
    with_gold: bool = True,
) -> EpisodeResult:
    """Full question episode: hop gating, rollout batches with human-gated
    oracle queries between outer steps, then answer emission over the final
    frontier with the committed paths' fused representations."""
    trace: list[dict] = []
    flags: set[str] = set()
    human_queries: list[tuple[OracleQuery, OracleAnswer]] = []
    realized_ig: list[float] = []
    recent_ig: list[float] = [0.0]

    ctx._node_seq = 0
    v_q = encode_query(item.question_tokens, ctx.tables, ctx.query_encoder)
    hop_dist = hop_head(v_q, ctx.hop_params, rng, n_samples=ctx.n_hop_samples)
    decision = hop_gate(hop_dist, ctx.acq.tau_hop)
    hop = decision.hop
    # tau_human >= 1 can never be exceeded by bounded state uncertainty, so
    # it doubles as a global oracle-off switch covering the hop query too
    oracle_enabled = ctx.acq.tau_human < 1.0
    if decision.query_human and oracle_enabled and budgets.human_queries > len(human_queries):
        q = OracleQuery(
            query_id=ctx.next_query_id(), kind="hop_depth",
            payload={"question_tokens": list(item.question_tokens)}, issued_at=0,
        )
        ans = ctx.oracle_answer(q)
        hop = int(ans.label)
        s0 = _detached_state(ctx, item.anchors, hop, v_q)
        ctx.buffer.add(q, ans, s0, 1.0 - decision.confidence)
        human_queries.append((q, ans))
        trace.append({"step": 0, "node_id": 0, "action": "hop_query", "human_query": {"kind": q.kind, "label": _label_json(ans.label)}})
    hop = max(1, min(int(hop), cfg.max_depth))

    with dn.no_tape():
        root_state = _node_state(ctx, item.anchors, hop, (), frozenset(), v_q)
    root = SearchNode(root_state, ctx.next_node_id())
    committed: list[int] = []
    selection_weights: list[Tensor] = []
    pi_tree_probs: list[Tensor] = []
    touched: set[int] = set(item.anchors)  # answer candidates need contrast
    rollouts_left = budgets.rollouts
    if rollouts_left <= 0:
        flags.add("budget_exhausted")

    step = 0
    while root.state.hop_budget > 0 and rollouts_left > 0:
        step += 1
        n_inner = min(cfg.n_inner, rollouts_left)
        for _ in range(n_inner):
            rec = rollout(root, ctx, cfg, rng, v_q, hop_dist, recent_ig)
            rollouts_left -= 1
            trace.append({"step": step, "node_id": root.node_id, "action": "rollout", "rollout": rec})
        u_now = state_uncertainty(root.state, hop_dist, recent_ig, ctx.ig_scale.scale)
        root.uncertainty = u_now
        if u_now > ctx.acq.tau_human and budgets.human_queries > len(human_queries):
            _issue_relevance_query(ctx, root, item, v_q, hop_dist, recent_ig, u_now, human_queries, trace, step, rng)
        action, weight, rec = _commit_step(ctx, root, cfg, rng, v_q, hop_dist, recent_ig, sample=cfg.descent == "sample")
        if action is None:
            flags.add("frontier_fixpoint")
            break
        if action == QUERY_HUMAN:
            if oracle_enabled and budgets.human_queries > len(human_queries):
                _issue_relevance_query(ctx, root, item, v_q, hop_dist, recent_ig, u_now, human_queries, trace, step, rng)
            rels = [a for a in root.actions if a != QUERY_HUMAN and a not in root.state.pruned_relations]
            if not rels:
                flags.add("frontier_fixpoint")
                break
            action, weight, rec = _commit_step_forced(ctx, root, cfg, rng, v_q, rels, rec)
        sub = Subgraph(triples=_frontier_triples(ctx, root), frontier=root.state.frontier, graph=ctx.graph)
        with dn.no_tape():
            before = entropy_predict(sub, None, v_q, ctx.tables, ctx.entropy_params).item()
            after = entropy_predict(sub, action, v_q, ctx.tables, ctx.entropy_params).item()
        gained = before - after
        realized_ig.append(gained)
        recent_ig.append(gained)
        ctx.ig_scale.update(gained)
        trace.append(
            {
                "step": step,
                "node_id": root.node_id,
                "action": _action_json(action),
                "pi_tree": rec.get("pi_tree", {}),
                "gumbel_weights": rec.get("gumbel_weights", {}),
            }
        )
        committed.append(int(action))
        selection_weights.append(weight)
        if rec.get("pi_probs") is not None:
            pi_tree_probs.append(rec["pi_probs"])
        child = root.children.get(action)
        if child is None or child.is_human_node:
            child = _expand_child(ctx, root, action, v_q) if child is None else child
        root = child
        touched |= set(root.state.frontier)
        if not root.state.frontier:
            flags.add("empty_frontier")
            break
    if rollouts_left <= 0 and root.state.hop_budget > 0:
        flags.add("budget_exhausted")

    return _emit_answer(
        ctx, item, v_q, hop_dist, root, committed, selection_weights, touched,
        trace, human_queries, flags, realized_ig, with_gold, pi_tree_probs,
        budgets, oracle_enabled,
    )


def _commit_step_forced(ctx, root, cfg, rng, v_q, rels, rec):
    """Fallback when the sampled action was QUERY_HUMAN: renormalize the
    remaining relation actions and commit among them."""
    neural = _node_state(
        ctx, root.state.frontier, root.state.hop_budget,
        root.state.visited_relations, root.state.pruned_relations, v_q,
    ).neural
    logits = ctx.nets.policy_logits(neural, rels, ctx.tables)
    probs = dn.softmax(logits)
    p = probs.data
    idx = int(rng.choice(len(rels), p=p / p.sum())) if cfg.descent == "sample" else int(p.argmax())
    rec = dict(rec)
    rec["pi_tree"] = {_action_json(a): float(p[i]) for i, a in enumerate(rels)}
    rec["pi_probs"] = probs
    return rels[idx], _ste_one(dn.pick(probs, idx)), rec


def _issue_relevance_query(ctx, root, item, v_q, hop_dist, recent_ig, u_now, human_queries, trace, step, rng):
    rels = [a for a in root.actions if a != QUERY_HUMAN]
    if not rels:
        return
    if ctx.query_strategy == "random":
        best = rels[int(rng.integers(len(rels)))]
    else:
        best = _best_unexpanded(ctx, root, rels, v_q)
    if best is None or best == QUERY_HUMAN:
        return
    q = OracleQuery(
        query_id=ctx.next_query_id(), kind="relation_relevance",
        payload={"question_tokens": list(item.question_tokens), "relation": int(best)}, issued_at=step,
    )
    ans = ctx.oracle_answer(q)
    sub = Subgraph(triples=_frontier_triples(ctx, root), frontier=root.state.frontier, graph=ctx.graph)
    with dn.no_tape():
        before = entropy_predict(sub, None, v_q, ctx.tables, ctx.entropy_params).item()
        after = entropy_predict(sub, int(best), v_q, ctx.tables, ctx.entropy_params).item()
    ctx.buffer.add(q, ans, root.state, u_now, entropy_before=before, entropy_after=after if ans.label else before)
    human_queries.append((q, ans))
    if not ans.label:
        pruned = frozenset(root.state.pruned_relations | {int(best)})
        root.state = CognitiveState(
            frontier=root.state.frontier, hop_budget=root.state.hop_budget,
            visited_relations=root.state.visited_relations, pruned_relations=pruned,
            neural=root.state.neural,
        )
        root.children.pop(int(best), None)
        root.actions = [a for a in root.actions if a != int(best)]
        root.prior = {}
    trace.append(
        {"step": step, "node_id": root.node_id, "action": "oracle",
         "human_query": {"kind": q.kind, "relation": int(best), "label": _label_json(ans.label)}}
    )


def _label_json(label):
    return bool(label) if isinstance(label, (bool, np.bool_)) else int(label)


def _detached_state(ctx: EpisodeContext, frontier, hop: int, v_q: Tensor) -> CognitiveState:
    with dn.no_tape():
        return _node_state(ctx, frontier, hop, (), frozenset(), v_q)


def _emit_answer(
    ctx, item, v_q, hop_dist, final_node, committed, selection_weights, touched,
    trace, human_queries, flags, realized_ig, with_gold, pi_tree_probs,
    budgets, oracle_enabled,
):
    paths = _paths_for_sequence(ctx, item.anchors, committed)
    candidates = sorted(
        (set(final_node.state.frontier) | set(touched) | {p.endpoint for p in paths})
    )[:256]
    if not candidates:
        candidates = sorted(set(item.anchors))
        flags.add("no_candidates")
    z_sym = z_path_neural = None
    if paths:
        encs = [encode_path(p.triples, ctx.tables, ctx.path_params) for p in paths]
        fused, plaus_terms, path_scores, syms = [], [], [], []
        for p, e in zip(paths, encs):
            sym = symbolic_score(ctx.rules, p, e, ctx.tnorm)
            syms.append(sym)
            fused.append(fuse(e.z_f_neural, sym.z_sym, ctx.gate))
            plaus_terms.append(sym.plausibility)
            with dn.no_tape():
                path_scores.append(float(ctx.nets.value_of(e.z_f_neural).data.reshape(())) + sym.plausibility.item())
        if len(fused) > 1:
            w = dn.softmax(Tensor(np.asarray(path_scores, dtype=np.float64)))
            z_f = dn.sum0(dn.stack([dn.mul(dn.pick(w, i), z) for i, z in enumerate(fused)]))
        else:
            z_f = fused[0]
        best = int(np.argmax(path_scores))
        best_path = paths[best]
        plausibility = plaus_terms[best]
        z_sym = syms[best].z_sym
        z_path_neural = encs[best].z_f_neural
        _maybe_validity_query(
            ctx, item, best_path, plausibility, final_node, human_queries,
            trace, budgets, oracle_enabled, len(committed),
        )
    else:
        z_f = final_node.state.neural
        best_path = None
        plausibility = None
        flags.add("no_paths")
    for w in selection_weights:
        z_f = dn.mul(z_f, w)
    dist = score_answers(z_f, candidates, ctx.tables, ctx.scorer)
    answers = [dist.top1()]
    correct = None
    error_mode = None
    if with_gold:
        loss, miss = gen_loss(dist, item.gold_answers)
        if miss:
            flags.add("retrieval_miss")
        correct = answers[0] in item.gold_answers
        if not correct:
            if miss:
                error_mode = "retrieval"
            elif best_path is not None and best_path.endpoint not in item.gold_answers:
                error_mode = "reasoning"
            else:
                error_mode = "generation"
    else:
        loss = dn.constant(0.0)
    trace.append({"step": len(committed) + 1, "node_id": final_node.node_id, "action": "answer",
                  "answer": [ctx.graph.entities[a] for a in answers]})
    return EpisodeResult(
        answers=answers, answer_dist=dist, gen=loss, plausibility=plausibility,
        hop_logits=hop_dist.logits, hop_sigma2=hop_dist.sigma2, committed=committed,
        trace=trace, human_queries=human_queries, flags=flags, correct=correct,
        error_mode=error_mode, realized_ig=realized_ig, selection_weights=selection_weights,
        pi_tree_probs=pi_tree_probs, best_path=best_path, z_sym=z_sym,
        z_path_neural=z_path_neural,
    )


def _maybe_validity_query(
    ctx, item, best_path, plausibility, final_node, human_queries, trace,
    budgets, oracle_enabled, step,
):
    """Final chance to spend oracle budget: ask about the winning path when its
    plausibility is near-coin-flip. Bernoulli entropy of the plausibility,
    normalized to [0, 1], reuses the state-uncertainty threshold (so the
    tau_human >= 1 off switch covers this query kind too)."""
    if not oracle_enabled or budgets.human_queries <= len(human_queries):
        return
    p = min(max(plausibility.item(), 1e-12), 1.0 - 1e-12)
    u_path = -(p * math.log(p) + (1.0 - p) * math.log(1.0 - p)) / math.log(2.0)
    if u_path <= ctx.acq.tau_human:
        return
    q = OracleQuery(
        query_id=ctx.next_query_id(), kind="path_validity",
        payload={
            "question_tokens": list(item.question_tokens),
            "path": [list(t) for t in best_path.triples],
        },
        issued_at=step,
    )
    ans = ctx.oracle_answer(q)
    ctx.buffer.add(q, ans, final_node.state, u_path)
    human_queries.append((q, ans))
    trace.append(
        {"step": step, "node_id": final_node.node_id, "action": "oracle",
         "human_query": {"kind": q.kind, "label": _label_json(ans.label)}}
    )


# ------------------------------------------------------- soft expected loss


def expected_answer_loss_soft(
    ctx: EpisodeContext,
    item: BenchmarkItem,
    cfg: SearchConfig,
    depth: int,
) -> Tensor:
    """Exact expectation of the answer loss over the tree policy, recursing
    through every candidate action to `depth`. Exponential in depth; meant
    for small verification trees where gradient exactness matters."""
    v_q = encode_query(item.question_tokens, ctx.tables, ctx.query_encoder)

    def recurse(frontier, chain: tuple, remaining: int) -> Tensor:
        if remaining == 0 or not frontier:
            return _leaf_gen_loss(ctx, item, v_q, frontier, chain)
        rels = ctx.graph.candidate_relations(frontier, cfg.a_max)
        if not rels:
            return _leaf_gen_loss(ctx, item, v_q, frontier, chain)
        state = _node_state(ctx, frontier, remaining, chain, frozenset(), v_q)
        logits = ctx.nets.policy_logits(state.neural, rels, ctx.tables)
        prior = dn.softmax(logits)
        # fresh-tree convention: each child carries unit soft-visit mass, so
        # the prior term keeps a fixed positive scale and stays in the graph
        scale = math.sqrt(float(len(rels))) / 2.0
        q_vals, pucts = {}, {}
        for i, r in enumerate(rels):
            nxt = ctx.graph.reach(frontier, r)
            child_state = _node_state(ctx, nxt or frontier, remaining - 1, chain + (r,), frozenset(), v_q)
            q_vals[r] = ctx.nets.value_of(child_state.neural)
            pucts[r] = dn.mul(dn.pick(prior, i), dn.constant(scale))
        order, probs = soft_tree_policy(q_vals, pucts, cfg)
        total = None
        for i, r in enumerate(order):
            nxt = ctx.graph.reach(frontier, r)
            sub_loss = recurse(tuple(sorted(nxt)) if nxt else (), chain + (r,), remaining - 1)
            term = dn.mul(dn.pick(probs, i), sub_loss)
            total = term if total is None else dn.add(total, term)
        return total

    return recurse(tuple(sorted(item.anchors)), (), depth)


def _leaf_gen_loss(ctx: EpisodeContext, item: BenchmarkItem, v_q: Tensor, frontier, chain) -> Tensor:
    paths = _paths_for_sequence(ctx, item.anchors, list(chain))
    candidates = sorted(set(frontier) | {p.endpoint for p in paths}) or sorted(item.anchors)
    if paths:
        enc = encode_path(paths[0].triples, ctx.tables, ctx.path_params)
        sym = symbolic_score(ctx.rules, paths[0], enc, ctx.tnorm)
        z_f = fuse(enc.z_f_neural, sym.z_sym, ctx.gate)
    else:
        z_f = _node_state(ctx, frontier or tuple(item.anchors), 0, chain, frozenset(), v_q).neural
    dist = score_answers(z_f, candidates, ctx.tables, ctx.scorer)
    loss, _miss = gen_loss(dist, item.gold_answers)
    return loss
