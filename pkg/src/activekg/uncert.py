"""Retrieval-side uncertainty machinery: the Bayesian hop head with learned
heteroscedastic variance, the neural entropy predictor and its information
gain, the two-mode acquisition utility, Gumbel-Softmax relation selection,
and the episode-level uncertainty score that drives both progressive
widening and the human-query gate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import diffnum as dn
from .diffnum import Tensor
from .encode import EmbeddingTables, Perceptron
from .kg import KnowledgeGraph

# message-passing budget for the entropy predictor; keeps per-call cost flat
MP_MAX_EDGES = 16
MP_MAX_HYPO = 8
MP_ROUNDS = 2


@dataclass
class AcquisitionConfig:
    lambda_cost: float = 0.1
    c_human: float = 0.3
    tau_hop: float = 0.6
    tau_human: float = 0.7
    beta: float = 1.0

    def __post_init__(self) -> None:
        if self.lambda_cost < 0 or self.c_human <= 0 or self.beta < 0:
            raise ValueError("AcquisitionConfig: lambda_cost/c_human/beta out of range")
        # tau_human may sit above 1: state uncertainty is capped at 1, so any
        # such threshold disables oracle queries outright
        if not (0 < self.tau_hop < 1) or not (0 < self.tau_human < 2):
            raise ValueError("AcquisitionConfig: tau thresholds out of range")


@dataclass
class CognitiveState:
    """Search state: continuous subgraph summary plus symbolic constraints."""

    frontier: tuple[int, ...]
    hop_budget: int
    visited_relations: tuple[int, ...]
    pruned_relations: frozenset[int]
    neural: Tensor  # d-vector summary

    def __post_init__(self) -> None:
        if self.hop_budget < 0:
            raise ValueError("CognitiveState: hop budget must be >= 0")


def make_state(
    frontier,
    hop_budget: int,
    visited_relations,
    pruned_relations,
    v_q: Tensor,
    tables: EmbeddingTables,
    proj: Perceptron,
) -> CognitiveState:
    """Neural summary: mean frontier embedding concatenated with V_q, projected."""
    frontier = tuple(sorted(frontier))
    if frontier:
        mean_emb = dn.mean0(dn.stack([tables.entity_emb[e] for e in frontier]))
    else:
        mean_emb = Tensor(np.zeros(tables.d))
    return CognitiveState(
        frontier=frontier,
        hop_budget=hop_budget,
        visited_relations=tuple(visited_relations),
        pruned_relations=frozenset(pruned_relations),
        neural=proj(dn.concat([mean_emb, v_q])),
    )


# ------------------------------------------------------------ hop prediction


@dataclass
class HopDistribution:
    probs: Tensor  # simplex over {1..H_max}
    sigma2: Tensor  # scalar >= 0
    logits: Tensor

    def __post_init__(self) -> None:
        s = float(self.probs.data.sum())
        if abs(s - 1.0) > 1e-9:
            raise ValueError(f"HopDistribution: probs sum to {s}")
        if float(self.sigma2.data.reshape(())) < 0:
            raise ValueError("HopDistribution: sigma2 < 0")


@dataclass
class HopHeadParams:
    mlp: Perceptron  # d -> H_max
    var_head: Perceptron  # d -> 1, linear

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, h_max: int) -> "HopHeadParams":
        return cls(mlp=Perceptron.init(rng, d, d, h_max), var_head=Perceptron.init(rng, d, None, 1))

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {**self.mlp.params(f"{prefix}/mlp"), **self.var_head.params(f"{prefix}/var")}


def hop_head(v_q: Tensor, p: HopHeadParams, rng: np.random.Generator, n_samples: int = 8) -> HopDistribution:
    """Noisy-logit hop posterior: probs = E_z softmax(logits + sigma*z)."""
    if n_samples < 1:
        raise ValueError("hop_head: n_samples must be >= 1")
    logits = p.mlp(v_q)
    sigma2 = dn.pick(dn.softplus(p.var_head(v_q)), 0)
    sigma = dn.sqrt(sigma2)
    acc = None
    for _ in range(n_samples):
        z = dn.normal_sample(logits.data.shape[0], rng)
        probs_i = dn.softmax(dn.add(logits, dn.mul(sigma, z)))
        acc = probs_i if acc is None else dn.add(acc, probs_i)
    probs = acc if n_samples == 1 else dn.div(acc, dn.constant(float(n_samples)))
    return HopDistribution(probs=probs, sigma2=sigma2, logits=logits)


@dataclass(frozen=True)
class HopDecision:
    query_human: bool
    hop: int | None
    confidence: float


def hop_gate(dist: HopDistribution, tau_hop: float) -> HopDecision:
    """Accept the modal hop when confident enough, else ask the oracle.
    Hops are 1-based; ties break toward the smaller hop."""
    probs = dist.probs.data
    best = int(probs.argmax())  # argmax returns the first (smallest) maximizer
    conf = float(probs[best])
    if conf >= tau_hop:
        return HopDecision(query_human=False, hop=best + 1, confidence=conf)
    return HopDecision(query_human=True, hop=best + 1, confidence=conf)


def coverage_halfwidth(delta: float) -> float:
    """Sub-Gaussian interval half-width multiplier c_delta = sqrt(2 ln(2/delta))."""
    if not (0 < delta < 1):
        raise ValueError("delta must lie in (0,1)")
    return math.sqrt(2.0 * math.log(2.0 / delta))


def coverage_interval(dist: HopDistribution, delta: float) -> tuple[float, float]:
    """Interval around the posterior mode that should cover the true hop
    with probability >= 1 - delta under sub-Gaussian logit noise."""
    mode = float(dist.probs.data.argmax()) + 1.0
    half = coverage_halfwidth(delta) * math.sqrt(float(dist.sigma2.data.reshape(())))
    return (mode - half, mode + half)


# -------------------------------------------------------- entropy prediction


@dataclass
class Subgraph:
    """The retrieved-so-far slice handed to the entropy predictor."""

    triples: list[tuple[int, int, int]]
    frontier: tuple[int, ...]
    graph: KnowledgeGraph


@dataclass
class EntropyNetParams:
    msg_mlp: Perceptron  # (2d + 1) -> d ; flag marks hypothetical edges
    upd_mlp: Perceptron  # 2d -> d
    readout: Perceptron  # 2d -> 1

    @classmethod
    def init(cls, rng: np.random.Generator, d: int) -> "EntropyNetParams":
        return cls(
            msg_mlp=Perceptron.init(rng, 2 * d + 1, d, d),
            upd_mlp=Perceptron.init(rng, 2 * d, d, d),
            readout=Perceptron.init(rng, 2 * d, d, 1),
        )

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {
            **self.msg_mlp.params(f"{prefix}/msg"),
            **self.upd_mlp.params(f"{prefix}/upd"),
            **self.readout.params(f"{prefix}/readout"),
        }


def entropy_predict(
    sub: Subgraph,
    r: int | None,
    v_q: Tensor,
    tables: EmbeddingTables,
    p: EntropyNetParams,
) -> Tensor:
    """Predicted answer entropy for the current subgraph, optionally as if
    relation r had been expanded. Two rounds of relation-conditioned message
    passing, mean readout, softplus to enforce nonnegativity."""
    edges = [(h, rel, t, 0.0) for h, rel, t in sorted(sub.triples)[:MP_MAX_EDGES]]
    if r is not None:
        hypo = []
        for h in sorted(sub.frontier):
            for t in sorted(sub.graph.tails(h, r)):
                hypo.append((h, r, t, 1.0))
                if len(hypo) >= MP_MAX_HYPO:
                    break
            if len(hypo) >= MP_MAX_HYPO:
                break
        edges.extend(hypo)

    nodes = sorted({h for h, _, _, _ in edges} | {t for _, _, t, _ in edges})
    if nodes:
        state = {e: tables.entity_emb[e] for e in nodes}
        for _ in range(MP_ROUNDS):
            inbox: dict[int, list[Tensor]] = {}
            for h, rel, t, flag in edges:
                m = p.msg_mlp(dn.concat([state[h], tables.relation_emb[rel], Tensor([flag])]))
                inbox.setdefault(t, []).append(m)
            nxt = {}
            for e in nodes:
                msgs = inbox.get(e)
                if msgs:
                    pooled = dn.mean0(dn.stack(msgs)) if len(msgs) > 1 else msgs[0]
                    nxt[e] = dn.tanh(p.upd_mlp(dn.concat([state[e], pooled])))
                else:
                    nxt[e] = state[e]
            state = nxt
        summary = dn.mean0(dn.stack([state[e] for e in nodes]))
    else:
        summary = Tensor(np.zeros(tables.d))
    out = p.readout(dn.concat([summary, v_q]))
    return dn.pick(dn.softplus(out), 0)


def info_gain(sub: Subgraph, r: int | None, v_q: Tensor, tables: EmbeddingTables, p: EntropyNetParams) -> float:
    """Predicted entropy reduction from expanding r (larger = more informative)."""
    if r is None:
        return 0.0
    with dn.no_tape():
        without = entropy_predict(sub, None, v_q, tables, p).item()
        with_r = entropy_predict(sub, r, v_q, tables, p).item()
    return without - with_r


# ------------------------------------------------------------- acquisition


def retrieval_cost(graph: KnowledgeGraph, frontier, r: int, scale: float = 8.0) -> float:
    """C(r): number of edges an expansion would add, normalized by `scale`."""
    return graph.edge_count(frontier, r) / scale


def acquisition_utility(r: int, mode: str, ig: float, cost: float, cfg: AcquisitionConfig) -> float:
    if cost < 0:
        raise ValueError("acquisition_utility: cost must be >= 0")
    if mode == "auto":
        return ig - cfg.lambda_cost * cost
    if mode == "human":
        return ig - cfg.lambda_cost * cost - cfg.c_human
    raise ValueError(f"acquisition_utility: unknown mode {mode!r}")


def gumbel_select(logits: Tensor, tau: float, rng: np.random.Generator, hard: bool) -> Tensor:
    """Gumbel-Softmax selection weights over candidates; straight-through
    one-hot when hard=True."""
    if tau <= 0:
        raise ValueError(f"gumbel_select: tau must be > 0, got {tau}")
    k = logits.data.shape[0]
    if k < 1:
        raise ValueError("gumbel_select: empty logits")
    g = dn.gumbel_sample(k, rng)
    soft = dn.softmax(dn.div(dn.add(logits, g), dn.constant(tau)))
    if hard:
        return dn.straight_through_onehot(soft)
    return soft


# --------------------------------------------------------- state uncertainty


@dataclass
class RunningScale:
    """Running 90th-percentile scale of observed information gains."""

    window: int = 512
    values: list[float] = field(default_factory=list)

    def update(self, v: float) -> None:
        self.values.append(float(v))
        if len(self.values) > self.window:
            del self.values[: len(self.values) - self.window]

    @property
    def scale(self) -> float:
        if not self.values:
            return 1.0
        p = float(np.percentile(self.values, 90))
        return max(p, 1e-9)


def state_uncertainty(
    s: CognitiveState | None,
    dist: HopDistribution,
    recent_ig,
    ig_ref: float = 1.0,
) -> float:
    """Scalar in [0,1]: half normalized hop entropy, half IG saturation."""
    recent = list(recent_ig)
    if not recent:
        raise ValueError("state_uncertainty: recent_ig window is empty")
    probs = dist.probs.data
    h_max = probs.shape[0]
    pz = probs[probs > 0]
    ent = float(-(pz * np.log(pz)).sum())
    ent_norm = ent / math.log(h_max) if h_max > 1 else 0.0
    ratio = float(np.clip(np.mean(recent) / max(ig_ref, 1e-9), 0.0, 1.0))
    u = 0.5 * ent_norm + 0.5 * (1.0 - ratio)
    return float(min(max(u, 0.0), 1.0))
