"""Joint optimization of the full question-answering stack.

Assembles the four-term objective (answer likelihood, tree-policy entropy,
neural/symbolic agreement, oracle efficiency), normalizes per-term gradients
so no objective drowns the others, anneals the two softmax temperatures, and
runs SGD with momentum. A slower off-policy phase replays buffered oracle
feedback into the hop head, tree policy, value net, entropy net, validity
head, and rule confidences.
"""

from __future__ import annotations

import copy
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import diffnum as dn
from .diffnum import Tape, Tensor, save_checkpoint
from .answer import AnswerScorer
from .encode import (
    EmbeddingTable,
    EmbeddingTables,
    PathEncoderParams,
    Perceptron,
    QueryEncoder,
    build_tables,
    encode_path,
    encode_query,
)
from .kg import BenchmarkItem, KnowledgeGraph
from .logic import FuseGateParams, Rule, RuleBase, rule_update
from .oracle import ReplayBuffer, buffer_efficiency
from .search import (
    Budgets,
    EpisodeContext,
    EpisodeResult,
    PolicyValueNets,
    SearchConfig,
    run_episode,
)
from .uncert import (
    AcquisitionConfig,
    EntropyNetParams,
    HopHeadParams,
    Subgraph,
    entropy_predict,
    hop_head,
    make_state,
)


class TrainError(ValueError):
    pass


VARIANTS = ("full", "neural_only", "fixed_rules", "hard_ste", "random_queries")


# ------------------------------------------------------------------- model


@dataclass
class Model:
    """Every trainable parameter group in one place, checkpoint-addressable."""

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
    validity_head: Perceptron  # d -> 1, neural estimate of path validity
    d: int
    h_max: int

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        graph: KnowledgeGraph,
        d: int,
        h_max: int = 4,
        n_rules: int = 8,
    ) -> "Model":
        return cls(
            tables=build_tables(graph, d, rng),
            query_encoder=QueryEncoder.init(rng, d),
            path_params=PathEncoderParams.init(rng, d),
            state_proj=Perceptron.init(rng, 2 * d, d, d),
            hop_params=HopHeadParams.init(rng, d, h_max),
            entropy_params=EntropyNetParams.init(rng, d),
            rules=default_rules(rng, graph, d, n_rules),
            gate=FuseGateParams.init(rng, d),
            nets=PolicyValueNets.init(rng, d),
            scorer=AnswerScorer.init(rng, d),
            validity_head=Perceptron.init(rng, d, d, 1),
            d=d,
            h_max=h_max,
        )

    def params(self) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        out.update(_table_params(self.tables.entity_emb, "emb/entity"))
        out.update(_table_params(self.tables.relation_emb, "emb/relation"))
        out.update(_table_params(self.tables.token_emb, "emb/token"))
        out.update(self.query_encoder.params("query"))
        out.update(self.path_params.params("path"))
        out.update(self.state_proj.params("state"))
        out.update(self.hop_params.params("hop"))
        out.update(self.entropy_params.params("entropy"))
        out.update(self.rules.params("rules"))
        out.update(self.gate.params("gate"))
        out.update(self.nets.params("nets"))
        out.update(self.scorer.params("answer"))
        out.update(self.validity_head.params("validity"))
        return out

    def context(
        self,
        graph: KnowledgeGraph,
        acq: AcquisitionConfig,
        buffer: ReplayBuffer,
        oracle_answer,
        query_strategy: str = "adaptive",
    ) -> EpisodeContext:
        return EpisodeContext(
            graph=graph,
            tables=self.tables,
            query_encoder=self.query_encoder,
            path_params=self.path_params,
            state_proj=self.state_proj,
            hop_params=self.hop_params,
            entropy_params=self.entropy_params,
            rules=self.rules,
            gate=self.gate,
            nets=self.nets,
            scorer=self.scorer,
            acq=acq,
            buffer=buffer,
            oracle_answer=oracle_answer,
            query_strategy=query_strategy,
        )


def _table_params(table: EmbeddingTable, prefix: str) -> dict[str, Tensor]:
    return {f"{prefix}/row{i}": t for i, t in enumerate(table.rows)}


def default_rules(
    rng: np.random.Generator, graph: KnowledgeGraph, d: int, n_rules: int
) -> RuleBase:
    """Seed rules from the relation sequences the graph actually realizes:
    most frequent head-to-tail relation pairs first, then bare relations."""
    if n_rules <= 0:
        return RuleBase([])
    pair_counts: dict[tuple[int, int], int] = {}
    for h, r, t in graph.triples:
        for r2 in graph.relations_from(t):
            pair_counts[(r, r2)] = pair_counts.get((r, r2), 0) + len(graph.tails(t, r2))
    ranked = sorted(pair_counts.items(), key=lambda kv: (-kv[1], kv[0]))
    bodies: list[tuple[int, ...]] = [pair for pair, _ in ranked]
    rel_totals = [0] * graph.n_relations
    for _, r, _ in graph.triples:
        rel_totals[r] += 1
    singles = sorted(range(graph.n_relations), key=lambda r: (-rel_totals[r], r))
    bodies.extend((r,) for r in singles)
    rules = [
        Rule.init(rng, i, body, d, confidence=0.5)
        for i, body in enumerate(bodies[:n_rules])
    ]
    return RuleBase(rules)


# ------------------------------------------------------------------ losses


@dataclass
class LossBundle:
    answer: Tensor
    explore: Tensor
    symbolic: Tensor
    active: Tensor
    lambdas: tuple[float, float, float] = (0.3, 0.5, 0.2)
    per_term_grad_norms: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if any(l < 0 for l in self.lambdas):
            raise TrainError(f"lambdas must be >= 0, got {self.lambdas}")
        for name, t in self.terms().items():
            if not np.isfinite(t.data).all():
                raise TrainError(f"loss term {name!r} is not finite")

    def terms(self) -> dict[str, Tensor]:
        return {
            "answer": self.answer,
            "explore": self.explore,
            "symbolic": self.symbolic,
            "active": self.active,
        }

    def weights(self) -> dict[str, float]:
        l1, l2, l3 = self.lambdas
        return {"answer": 1.0, "explore": l1, "symbolic": l2, "active": l3}


def loss_answer(episodes) -> Tensor:
    """Soft-trajectory answer loss: per episode, leaf generation losses are
    averaged under their tree-policy weights (renormalized to sum to 1), then
    episodes are averaged."""
    if not episodes:
        raise TrainError("loss_answer: empty batch")
    per_episode = []
    for leaves in episodes:
        if not leaves:
            raise TrainError("loss_answer: episode with no retained leaves")
        wsum = float(sum(w for w, _ in leaves))
        if wsum <= 0:
            raise TrainError("loss_answer: nonpositive weight sum")
        acc = None
        for w, g in leaves:
            term = dn.mul(dn.constant(w / wsum), g)
            acc = term if acc is None else dn.add(acc, term)
        per_episode.append(acc)
    total = per_episode[0]
    for t in per_episode[1:]:
        total = dn.add(total, t)
    return dn.div(total, dn.constant(float(len(per_episode))))


def loss_explore(pi_tree_records) -> Tensor:
    """Negative mean Shannon entropy of the recorded tree-policy
    distributions; minimizing it pushes commits toward uniform."""
    if not pi_tree_records:
        return dn.constant(0.0)
    terms = []
    for rec in pi_tree_records:
        p = rec if isinstance(rec, Tensor) else Tensor(np.asarray(rec, dtype=np.float64))
        # p*log(p+1e-300) is exact at p in {0, 0.5, 1}: the shift vanishes in
        # float64 everywhere except at p = 0 where it kills the singularity
        eps = Tensor(np.full(p.data.shape, 1e-300))
        terms.append(dn.sum_(dn.mul(p, dn.log(dn.add(p, eps)))))
    total = terms[0]
    for t in terms[1:]:
        total = dn.add(total, t)
    return dn.div(total, dn.constant(float(len(terms))))


def validity_target(head: Perceptron, z_neural: Tensor, rules: RuleBase) -> Tensor:
    """Detached regression target for the symbolic vector: scalar validity
    estimate from the neural path encoding, lifted into rule-embedding space
    by the mean rule embedding."""
    with dn.no_tape():
        logit = head(z_neural)
        v = float(dn.sigmoid(logit).data.reshape(()))
    if len(rules) == 0:
        return Tensor(np.zeros(z_neural.data.shape[0]))
    mean_emb = np.mean([r.embedding.data for r in rules.rules], axis=0)
    return Tensor(v * mean_emb)


def loss_symbolic(pairs) -> Tensor:
    """Mean per-coordinate squared distance between each symbolic vector and
    its detached neural validity target, averaged over the batch."""
    if not pairs:
        return dn.constant(0.0)
    terms = []
    for z_sym, target in pairs:
        d = z_sym.data.shape[0]
        if target.data.shape != z_sym.data.shape:
            raise TrainError(
                f"loss_symbolic: shape mismatch {z_sym.data.shape} vs {target.data.shape}"
            )
        diff = dn.sub(z_sym, target)
        terms.append(dn.div(dn.sum_(dn.square(diff)), dn.constant(float(d))))
    total = terms[0]
    for t in terms[1:]:
        total = dn.add(total, t)
    return dn.div(total, dn.constant(float(len(terms))))


def loss_active(buffer: ReplayBuffer, tau_human: float) -> Tensor:
    """Negated measured entropy-reduction-per-cost over the uncertain buffered
    queries. Gradient-free: it scores the acquisition policy, whose learnable
    part is trained through the relaxed selection weights instead."""
    eff = buffer_efficiency(buffer, tau_human)
    return dn.constant(-eff if eff is not None else 0.0)


def total_loss(bundle: LossBundle) -> Tensor:
    l1, l2, l3 = bundle.lambdas
    out = bundle.answer
    for lam, term in ((l1, bundle.explore), (l2, bundle.symbolic), (l3, bundle.active)):
        out = dn.add(out, dn.mul(dn.constant(float(lam)), term))
    return out


# ------------------------------------------------- gradient normalization


def grad_normalize(per_term_grads: dict, weights: dict) -> tuple[dict, dict]:
    """Rescale each term's full parameter gradient to unit global L2 norm and
    sum them under the objective weights. Terms with norm < 1e-12 contribute
    nothing; a non-finite gradient is an error naming the term."""
    if not per_term_grads:
        raise TrainError("grad_normalize: no terms")
    combined: dict[str, np.ndarray] = {}
    norms: dict[str, float] = {}
    for term, grads in per_term_grads.items():
        sq = 0.0
        for name, g in grads.items():
            if not np.isfinite(g).all():
                raise TrainError(f"grad_normalize: non-finite gradient in term {term!r} ({name})")
            sq += float((g * g).sum())
        norm = math.sqrt(sq)
        norms[term] = norm
        if norm < 1e-12:
            continue
        scale = weights.get(term, 1.0) / norm
        for name, g in grads.items():
            if name in combined:
                combined[name] = combined[name] + scale * g
            else:
                combined[name] = scale * g
    return combined, norms


def _raw_total_norm(per_term_grads: dict, weights: dict) -> float:
    """L2 norm of the unnormalized weighted-sum gradient: the quantity whose
    decay the stationarity trend check monitors."""
    acc: dict[str, np.ndarray] = {}
    for term, grads in per_term_grads.items():
        w = weights.get(term, 1.0)
        for name, g in grads.items():
            acc[name] = acc.get(name, 0.0) + w * g
    return math.sqrt(sum(float((g * g).sum()) for g in acc.values()))


def _assert_balance(per_term_grads: dict, weights: dict, norms: dict) -> None:
    """No normalized term may out-pull another beyond its weight ratio."""
    contrib = {
        t: weights.get(t, 1.0) for t, n in norms.items() if n >= 1e-12
    }
    live = {t: w for t, w in contrib.items() if w > 0}
    if len(live) < 2:
        return
    min_w = min(live.values())
    for ti, wi in live.items():
        for tj, wj in live.items():
            if wi > (wi / min_w) * wj + 1e-9:
                raise TrainError(
                    f"gradient balance violated: {ti} ({wi}) vs {tj} ({wj})"
                )


# --------------------------------------------------------------- schedules


@dataclass
class Schedules:
    """Temperature and learning-rate annealing; every value stays positive."""

    total_steps: int
    gumbel_tau: tuple[float, float] = (1.0, 0.1)
    search_tau: tuple[float, float] = (1.0, 0.1)
    lr0: float = 0.1
    lr_mode: str = "cosine"  # "rm" = Robbins-Monro decay for the trend check
    lr_floor: float = 0.05  # cosine floor as a fraction of lr0

    def __post_init__(self) -> None:
        if self.total_steps < 0:
            raise TrainError(f"total_steps must be >= 0, got {self.total_steps}")
        for name, pair in (("gumbel_tau", self.gumbel_tau), ("search_tau", self.search_tau)):
            if pair[0] <= 0 or pair[1] <= 0:
                raise TrainError(f"{name} must stay positive, got {pair}")
        if self.lr0 <= 0:
            raise TrainError(f"lr0 must be > 0, got {self.lr0}")
        if not (0 < self.lr_floor <= 1):
            raise TrainError(f"lr_floor must be in (0,1], got {self.lr_floor}")
        if self.lr_mode not in ("cosine", "rm"):
            raise TrainError(f"unknown lr_mode {self.lr_mode!r}")

    def _linear(self, pair: tuple[float, float], step: int) -> float:
        if self.total_steps <= 1:
            return pair[0]
        frac = min(max(step / (self.total_steps - 1), 0.0), 1.0)
        return pair[0] + (pair[1] - pair[0]) * frac

    def gumbel_tau_at(self, step: int) -> float:
        return self._linear(self.gumbel_tau, step)

    def search_tau_at(self, step: int) -> float:
        return self._linear(self.search_tau, step)

    def lr_at(self, step: int) -> float:
        if self.lr_mode == "rm":
            return self.lr0 / (1.0 + step) ** 0.6
        lo = self.lr_floor * self.lr0
        if self.total_steps <= 1:
            return self.lr0
        frac = min(max(step / (self.total_steps - 1), 0.0), 1.0)
        return lo + 0.5 * (self.lr0 - lo) * (1.0 + math.cos(math.pi * frac))


class SGD:
    """Momentum SGD over named parameters; velocity per name."""

    def __init__(self, params: dict[str, Tensor], momentum: float = 0.9):
        if not (0.0 <= momentum < 1.0):
            raise TrainError(f"momentum must be in [0,1), got {momentum}")
        self.params = params
        self.momentum = momentum
        self.vel: dict[str, np.ndarray] = {}

    def step(self, grads: dict[str, np.ndarray], lr: float) -> None:
        if lr <= 0:
            raise TrainError(f"lr must be > 0, got {lr}")
        for name, g in grads.items():
            p = self.params.get(name)
            if p is None:
                continue
            v = self.vel.get(name)
            v = g.copy() if v is None else self.momentum * v + g
            self.vel[name] = v
            p.data[...] = p.data - lr * v.reshape(p.data.shape)


# ------------------------------------------------------------- train loop


@dataclass
class TrainConfig:
    d: int = 16
    steps: int = 50
    batch_size: int = 4
    seed: int = 0
    lr: float = 0.05
    lr_mode: str = "cosine"
    momentum: float = 0.9
    lambdas: tuple[float, float, float] = (0.3, 0.5, 0.2)
    n_rules: int = 8
    rollouts: int = 16
    human_queries: int = 2
    n_inner: int = 4
    max_depth: int = 4
    a_max: int = 8
    oracle_noise: float = 0.05
    aux_lr: float = 0.02
    aux_batch: int = 16
    variant: str = "full"
    full_batch: bool = False  # every item once per step, in order
    descent: str = "sample"
    tau_hop: float = 0.55
    tau_human: float = 0.65
    beta: float = 0.3
    c_human: float = 0.3
    lambda_cost: float = 0.1

    def __post_init__(self) -> None:
        if self.variant not in VARIANTS:
            raise TrainError(f"unknown variant {self.variant!r}; choose from {VARIANTS}")
        if self.steps < 0 or self.batch_size <= 0:
            raise TrainError("steps must be >= 0 and batch_size > 0")
        if self.d <= 0 or self.rollouts < 0 or self.human_queries < 0:
            raise TrainError("d > 0, rollouts >= 0, human_queries >= 0 required")


@dataclass
class TrainResult:
    model: Model
    metrics: list
    metrics_path: Path | None
    checkpoint_path: Path | None
    steps_done: int
    diverged: bool


def _acq_config(cfg: TrainConfig) -> AcquisitionConfig:
    return AcquisitionConfig(
        tau_hop=cfg.tau_hop,
        tau_human=cfg.tau_human,
        beta=cfg.beta,
        c_human=cfg.c_human,
        lambda_cost=cfg.lambda_cost,
    )


def _search_config(cfg: TrainConfig, tau_gumbel: float, tau_search: float) -> SearchConfig:
    if cfg.variant == "hard_ste":
        tau_search = 1e-3  # commits collapse to argmax: hard straight-through
    return SearchConfig(
        tau_search=tau_search,
        tau_gumbel=tau_gumbel,
        n_rollouts=cfg.rollouts,
        max_depth=cfg.max_depth,
        n_inner=cfg.n_inner,
        a_max=cfg.a_max,
        descent=cfg.descent,
    )


def _grads_of(tape: Tape, params: dict[str, Tensor], term: Tensor) -> dict[str, np.ndarray]:
    """Backward one loss term and harvest parameter gradients. Terms that
    never touched the tape (pure measurements) yield no gradients."""
    for p in params.values():
        p.grad = None
    if not term.requires_grad:
        return {}
    tape.backward(term)
    out = {name: p.grad.copy() for name, p in params.items() if p.grad is not None}
    tape.reset()
    for p in params.values():
        p.grad = None
    return out


def _snapshot(params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    return {name: p.data.copy() for name, p in params.items()}


def _restore(params: dict[str, Tensor], snap: dict[str, np.ndarray]) -> None:
    for name, p in params.items():
        p.data[...] = snap[name]


def _measured_entropy(dist) -> float:
    p = np.clip(np.asarray(dist.probs.data, dtype=np.float64), 1e-12, 1.0)
    return float(-(p * np.log(p)).sum())


def _final_frontier(graph: KnowledgeGraph, item: BenchmarkItem, committed) -> tuple[int, ...]:
    frontier = frozenset(item.anchors)
    for r in committed:
        nxt = graph.reach(frontier, r)
        if not nxt:
            break
        frontier = nxt
    return tuple(sorted(frontier))


def _triples_around(graph: KnowledgeGraph, frontier) -> list:
    out = []
    for h in frontier:
        for r in graph.relations_from(h):
            for t in graph.tails(h, r):
                out.append((h, r, t))
    return out


def train_run(
    graph: KnowledgeGraph,
    items: list[BenchmarkItem],
    cfg: TrainConfig,
    schedules: Schedules | None = None,
    oracle=None,
    metrics_path: str | Path | None = None,
    checkpoint_path: str | Path | None = None,
    model: Model | None = None,
) -> TrainResult:
    """Run the joint loop: sampled episodes -> four-term loss -> normalized
    SGD update, then the off-policy oracle-replay phase. Deterministic under
    cfg.seed. On divergence (non-finite loss) the last finite-state
    checkpoint is restored and saved."""
    if not items:
        raise TrainError("train_run: empty benchmark")
    sched = schedules or Schedules(total_steps=cfg.steps, lr0=cfg.lr, lr_mode=cfg.lr_mode)
    rng_model = np.random.default_rng(cfg.seed)
    rng_data = np.random.default_rng(cfg.seed + 1)
    rng_search = np.random.default_rng(cfg.seed + 2)
    rng_oracle = np.random.default_rng(cfg.seed + 3)

    n_rules = 0 if cfg.variant == "neural_only" else cfg.n_rules
    lambdas = cfg.lambdas
    if cfg.variant == "neural_only":
        lambdas = (lambdas[0], 0.0, lambdas[2])
    if model is None:
        model = Model.init(rng_model, graph, cfg.d, h_max=cfg.max_depth, n_rules=n_rules)
    params = model.params()
    trainable = dict(params)
    if cfg.variant == "fixed_rules":
        trainable = {k: v for k, v in trainable.items() if not k.startswith("rules/")}
    opt = SGD(trainable, momentum=cfg.momentum)
    buffer = ReplayBuffer()
    acq = _acq_config(cfg)
    strategy = "random" if cfg.variant == "random_queries" else "adaptive"

    if oracle is None:
        from .oracle import simulated_answer

        def oracle(q, item):
            return simulated_answer(q, item, cfg.oracle_noise, rng_oracle)

    weights = {"answer": 1.0, "explore": lambdas[0], "symbolic": lambdas[1], "active": lambdas[2]}
    metrics: list[dict] = []
    last_good = _snapshot(params)
    diverged = False
    steps_done = 0

    for step in range(cfg.steps):
        tau_g = sched.gumbel_tau_at(step)
        tau_s = sched.search_tau_at(step)
        lr = sched.lr_at(step)
        scfg = _search_config(cfg, tau_g, tau_s)
        budgets = Budgets(rollouts=cfg.rollouts, human_queries=cfg.human_queries)
        if cfg.full_batch:
            batch = list(items)
        else:
            batch = [items[int(rng_data.integers(len(items)))] for _ in range(cfg.batch_size)]

        episode_leaves: list[list] = []
        pi_records: list[Tensor] = []
        sym_pairs: list[tuple[Tensor, Tensor]] = []
        aux_value: list[tuple[np.ndarray, float]] = []
        aux_entropy: list[tuple[BenchmarkItem, tuple[int, ...], float]] = []
        n_queries = 0
        with Tape() as tape:
            for item in batch:
                ctx = model.context(
                    graph, acq, buffer, lambda q, it=item: oracle(q, it), query_strategy=strategy
                )
                res = run_episode(item, ctx, scfg, budgets, rng_search)
                episode_leaves.append([(1.0, res.gen)])
                pi_records.extend(res.pi_tree_probs)
                if res.z_sym is not None and len(model.rules) > 0:
                    target = validity_target(model.validity_head, res.z_path_neural, model.rules)
                    sym_pairs.append((res.z_sym, target))
                n_queries += len(res.human_queries)
                aux_value.append((_root_state_vec(model, graph, item), 1.0 if res.correct else 0.0))
                aux_entropy.append(
                    (item, _final_frontier(graph, item, res.committed), _measured_entropy(res.answer_dist))
                )

            terms = {
                "answer": loss_answer(episode_leaves),
                "explore": loss_explore(pi_records),
                "symbolic": loss_symbolic(sym_pairs),
                "active": loss_active(buffer, acq.tau_human),
            }
            if any(not np.isfinite(t.data).all() for t in terms.values()):
                diverged = True
            else:
                bundle = LossBundle(lambdas=lambdas, **terms)
                per_term = {
                    name: _grads_of(tape, trainable, term)
                    for name, term in bundle.terms().items()
                }
        if diverged:
            _restore(params, last_good)
            break

        per_term = {k: v for k, v in per_term.items() if v}
        grad_total_raw = _raw_total_norm(per_term, weights)
        if per_term:
            combined, norms = grad_normalize(per_term, weights)
            _assert_balance(per_term, weights, norms)
            opt.step(combined, lr)
        else:
            norms = {}
        bundle.per_term_grad_norms = norms

        _aux_phase(model, graph, trainable, buffer, aux_value, aux_entropy, cfg, rng_search)

        row = {
            "step": step,
            "loss_answer": float(bundle.answer.data.reshape(())),
            "loss_explore": float(bundle.explore.data.reshape(())),
            "loss_symbolic": float(bundle.symbolic.data.reshape(())),
            "loss_active": float(bundle.active.data.reshape(())),
            "grad_norms": {k: float(v) for k, v in norms.items()},
            "tau_gumbel": tau_g,
            "tau_search": tau_s,
            "lr": lr,
            "queries": n_queries,
            "grad_total_raw": grad_total_raw,
            "rule_confidence": [r.confidence for r in model.rules.rules],
        }
        metrics.append(row)
        steps_done = step + 1
        if all(np.isfinite(p.data).all() for p in params.values()):
            last_good = _snapshot(params)
        else:
            diverged = True
            _restore(params, last_good)
            break

    mpath = cpath = None
    if metrics_path is not None:
        mpath = Path(metrics_path)
        with mpath.open("w") as f:
            for row in metrics:
                f.write(json.dumps(row, sort_keys=True) + "\n")
    if checkpoint_path is not None:
        cpath = Path(checkpoint_path)
        save_checkpoint(cpath, params)
    return TrainResult(
        model=model, metrics=metrics, metrics_path=mpath, checkpoint_path=cpath,
        steps_done=steps_done, diverged=diverged,
    )


def _anchor_ids(graph: KnowledgeGraph, tokens) -> frozenset:
    """Anchor entity ids recovered from a query's anchor:<name> tokens."""
    index = {name: i for i, name in enumerate(graph.entities)}
    return frozenset(
        index[name]
        for t in tokens
        if t.startswith("anchor:") and (name := t.split(":", 1)[1]) in index
    )


def _root_state_vec(model: Model, graph: KnowledgeGraph, item: BenchmarkItem) -> np.ndarray:
    with dn.no_tape():
        v_q = encode_query(item.question_tokens, model.tables, model.query_encoder)
        s = make_state(
            item.anchors, 1, (), frozenset(), v_q, model.tables, model.state_proj
        )
    return np.asarray(s.neural.data, dtype=np.float64).copy()


# -------------------------------------------------------- off-policy phase


def _aux_phase(
    model: Model,
    graph: KnowledgeGraph,
    trainable: dict[str, Tensor],
    buffer: ReplayBuffer,
    value_batch: list[tuple[np.ndarray, float]],
    entropy_batch: list[tuple[BenchmarkItem, tuple[int, ...], float]],
    cfg: TrainConfig,
    rng: np.random.Generator,
) -> None:
    """Slow-timescale replay of oracle feedback and episode outcomes.

    Hop answers supervise the hop head (cross entropy), relevance answers
    supervise the tree policy (behavior cloning) and the validity labels both
    the validity head and, through the logic loss, rule confidences. Episode
    outcomes regress the value net toward correctness and the entropy net
    toward the measured answer entropy."""
    cap = cfg.aux_batch
    hop_entries = buffer.by_kind("hop_depth")[-cap:]
    rel_entries = buffer.by_kind("relation_relevance")[-cap:]
    val_entries = buffer.by_kind("path_validity")[-cap:]

    terms = []
    with Tape() as tape:
        for e in hop_entries:
            v_q = encode_query(
                tuple(e.query.payload["question_tokens"]), model.tables, model.query_encoder
            )
            dist = hop_head(v_q, model.hop_params, rng, n_samples=1)
            logp = dn.log_softmax(dist.logits)
            label = int(e.answer.label)
            idx = min(max(label - 1, 0), dist.logits.data.shape[0] - 1)
            terms.append(dn.neg(dn.pick(logp, idx)))
        n_pos = sum(1 for e in rel_entries if e.answer.label)
        n_neg = len(rel_entries) - n_pos
        w_pos = (n_neg / n_pos) if 0 < n_pos < len(rel_entries) else 1.0
        for e in rel_entries:
            rel = int(e.query.payload["relation"])
            # re-encode from the payload so the encoder and both embedding
            # tables co-adapt; the frozen state_vec variant cannot align the
            # token and relation spaces and the head degenerates to the
            # label base rate. Positive labels are rare (one gold chain vs
            # the whole action set), hence the class reweighting.
            tokens = tuple(e.query.payload["question_tokens"])
            v_q = encode_query(tokens, model.tables, model.query_encoder)
            anchors = _anchor_ids(graph, tokens)
            state = make_state(
                anchors, cfg.max_depth, (), frozenset(), v_q, model.tables, model.state_proj
            )
            logit = model.nets.action_logit(state.neural, rel, model.tables)
            t = dn.bce_with_logits(logit, 1.0 if e.answer.label else 0.0)
            if e.answer.label and w_pos != 1.0:
                t = dn.mul(t, dn.constant(float(w_pos)))
            terms.append(t)
        for e in val_entries:
            path = tuple(tuple(int(x) for x in t) for t in e.query.payload["path"])
            with dn.no_tape():
                enc = encode_path(path, model.tables, model.path_params)
            logit = dn.pick(model.validity_head(Tensor(enc.z_f_neural.data.copy())), 0)
            terms.append(dn.bce_with_logits(logit, 1.0 if e.answer.label else 0.0))
        for vec, target in value_batch:
            v = model.nets.value_of(Tensor(vec.copy()))
            terms.append(dn.square(dn.sub(v, dn.constant(target))))
        for item, frontier, h_meas in entropy_batch:
            if not frontier:
                continue
            with dn.no_tape():
                v_q_const = Tensor(
                    encode_query(item.question_tokens, model.tables, model.query_encoder).data.copy()
                )
            sub = Subgraph(
                triples=_triples_around(graph, frontier), frontier=frozenset(frontier), graph=graph
            )
            pred = entropy_predict(sub, None, v_q_const, model.tables, model.entropy_params)
            terms.append(dn.square(dn.sub(pred, dn.constant(h_meas))))
        if not terms:
            return
        total = terms[0]
        for t in terms[1:]:
            total = dn.add(total, t)
        total = dn.div(total, dn.constant(float(len(terms))))
        for p in trainable.values():
            p.grad = None
        if total.requires_grad:
            tape.backward(total)
    grads = {n: p.grad for n, p in trainable.items() if p.grad is not None}
    for name, g in grads.items():
        p = trainable[name]
        if np.isfinite(g).all():
            p.data[...] = p.data - cfg.aux_lr * g.reshape(p.data.shape)
        p.grad = None

    if val_entries and cfg.variant != "fixed_rules" and len(model.rules) > 0:
        batch = []
        for e in val_entries:
            path_t = tuple(tuple(int(x) for x in t) for t in e.query.payload["path"])
            with dn.no_tape():
                enc = encode_path(path_t, model.tables, model.path_params)
            from .kg import ReasoningPath

            batch.append((ReasoningPath(triples=path_t), enc, bool(e.answer.label)))
        rule_update(model.rules, batch, lr=cfg.aux_lr)
