"""Human-oracle abstraction: typed queries and answers, the replay buffer
feeding off-policy updates, a KNN response model over buffered states, and
the accuracy-minus-annotation-cost objective.

Simulated answers read gold labels off benchmark items; interactive answers
arrive through the HTTP bridge and fall back to simulation on timeout.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np

from .kg import MAX_HOPS, BenchmarkItem
from .uncert import AcquisitionConfig, CognitiveState

QUERY_KINDS = ("hop_depth", "relation_relevance", "path_validity")
BOOLEAN_KINDS = ("relation_relevance", "path_validity")
KNN_K = 16

# payload keys each query kind must carry
_REQUIRED_PAYLOAD = {
    "hop_depth": ("question_tokens",),
    "relation_relevance": ("question_tokens", "relation"),
    "path_validity": ("question_tokens", "path"),
}


class OracleError(ValueError):
    pass


@dataclass(frozen=True)
class OracleQuery:
    query_id: str
    kind: str
    payload: dict
    issued_at: int

    def __post_init__(self) -> None:
        if self.kind not in QUERY_KINDS:
            raise OracleError(f"unknown query kind {self.kind!r}")
        missing = [k for k in _REQUIRED_PAYLOAD[self.kind] if k not in self.payload]
        if missing:
            raise OracleError(f"{self.kind} query {self.query_id}: payload missing {missing}")


@dataclass(frozen=True)
class OracleAnswer:
    query_id: str
    label: int | bool
    cost: float
    source: str  # simulated | interactive | interactive-timeout

    def __post_init__(self) -> None:
        if self.cost <= 0:
            raise OracleError(f"answer {self.query_id}: cost must be > 0")
        if self.source not in ("simulated", "interactive", "interactive-timeout"):
            raise OracleError(f"answer {self.query_id}: unknown source {self.source!r}")


def _check_label(kind: str, label) -> None:
    if kind == "hop_depth":
        if isinstance(label, bool) or not isinstance(label, (int, np.integer)):
            raise OracleError(f"hop_depth label must be an integer, got {label!r}")
        if not (1 <= int(label) <= MAX_HOPS):
            raise OracleError(f"hop_depth label {label} outside 1..{MAX_HOPS}")
    elif not isinstance(label, (bool, np.bool_)):
        raise OracleError(f"{kind} label must be boolean, got {label!r}")


@dataclass(frozen=True)
class BufferEntry:
    query: OracleQuery
    answer: OracleAnswer
    state_vec: np.ndarray  # detached neural state at issue time
    uncertainty: float  # episode uncertainty at issue time
    entropy_before: float | None = None
    entropy_after: float | None = None

    def __post_init__(self) -> None:
        self.state_vec.flags.writeable = False


class ReplayBuffer:
    """FIFO ring of answered oracle queries with their issue-time state."""

    def __init__(self, capacity: int = 4096) -> None:
        if capacity < 1:
            raise OracleError(f"buffer capacity must be >= 1, got {capacity}")
        self.capacity = capacity
        self.entries: deque[BufferEntry] = deque(maxlen=capacity)

    def __len__(self) -> int:
        return len(self.entries)

    def add(
        self,
        query: OracleQuery,
        answer: OracleAnswer,
        state: CognitiveState,
        uncertainty: float,
        entropy_before: float | None = None,
        entropy_after: float | None = None,
    ) -> BufferEntry:
        if query.query_id != answer.query_id:
            raise OracleError(f"answer {answer.query_id} does not match query {query.query_id}")
        _check_label(query.kind, answer.label)
        entry = BufferEntry(
            query=query,
            answer=answer,
            state_vec=np.array(state.neural.data, copy=True),
            uncertainty=float(uncertainty),
            entropy_before=entropy_before,
            entropy_after=entropy_after,
        )
        self.entries.append(entry)
        return entry

    def uncertain_subset(self, tau_human: float) -> list[BufferEntry]:
        return [e for e in self.entries if e.uncertainty > tau_human]

    def by_kind(self, kind: str) -> list[BufferEntry]:
        return [e for e in self.entries if e.query.kind == kind]


# ---------------------------------------------------------- simulated oracle


def simulated_answer(
    q: OracleQuery,
    item: BenchmarkItem,
    noise_rate: float,
    rng: np.random.Generator,
    cost: float = 0.3,
) -> OracleAnswer:
    """Gold label with probability 1 - noise_rate; perturbed otherwise
    (hop answers shift by ±1 and clip into 1..MAX_HOPS)."""
    if not (0.0 <= noise_rate <= 1.0):
        raise OracleError(f"noise_rate {noise_rate} outside [0,1]")
    if q.kind == "hop_depth":
        label: int | bool = int(item.gold_hops)
        if rng.random() < noise_rate:
            step = 1 if rng.random() < 0.5 else -1
            label = int(np.clip(label + step, 1, MAX_HOPS))
    elif q.kind == "relation_relevance":
        rel = q.payload["relation"]
        if rel not in item.relevance_labels:
            raise OracleError(f"item has no relevance label for relation {rel}")
        label = bool(item.relevance_labels[rel])
        if rng.random() < noise_rate:
            label = not label
    else:  # path_validity
        path = tuple(tuple(t) for t in q.payload["path"])
        if not item.gold_paths:
            raise OracleError("item has no gold paths to judge validity against")
        label = path in {p.triples for p in item.gold_paths}
        if rng.random() < noise_rate:
            label = not label
    return OracleAnswer(query_id=q.query_id, label=label, cost=cost, source="simulated")


# ------------------------------------------------------------ response model


def response_model(buffer: ReplayBuffer, s: CognitiveState, kind: str, k: int = KNN_K) -> dict:
    """Laplace-smoothed label frequencies over the k nearest buffered states
    (cosine similarity on the neural summary). Uniform prior when nothing of
    this kind is buffered."""
    if kind not in QUERY_KINDS:
        raise OracleError(f"unknown query kind {kind!r}")
    labels = list(range(1, MAX_HOPS + 1)) if kind == "hop_depth" else [True, False]
    entries = buffer.by_kind(kind)
    counts = {lab: 1.0 for lab in labels}  # Laplace +1
    if entries:
        sv = np.asarray(s.neural.data)
        sn = np.linalg.norm(sv)
        sims = []
        for e in entries:
            en = np.linalg.norm(e.state_vec)
            denom = sn * en
            sims.append(float(sv @ e.state_vec / denom) if denom > 0 else 0.0)
        order = np.argsort(sims, kind="stable")[::-1][:k]
        for i in order:
            lab = entries[int(i)].answer.label
            lab = int(lab) if kind == "hop_depth" else bool(lab)
            counts[lab] += 1.0
    total = sum(counts.values())
    return {lab: c / total for lab, c in counts.items()}


# -------------------------------------------------------------- objectives


def objective_value(correct: bool, human_queries: int, cfg: AcquisitionConfig) -> float:
    """Per-episode accuracy-minus-annotation-cost contribution."""
    if human_queries < 0:
        raise OracleError(f"human_queries must be >= 0, got {human_queries}")
    return (1.0 if correct else 0.0) - cfg.beta * human_queries * cfg.c_human


def active_efficiency(pairs, costs) -> float:
    """Mean measured entropy reduction per unit cost over answered queries;
    the active-learning loss is this value negated. Callers draw `pairs`
    from the buffer's uncertain subset."""
    pairs = list(pairs)
    costs = list(costs)
    if not pairs or len(pairs) != len(costs):
        raise OracleError(f"need matching non-empty pairs/costs, got {len(pairs)}/{len(costs)}")
    vals = []
    for (before, after), c in zip(pairs, costs):
        if c <= 0:
            raise OracleError(f"cost must be > 0, got {c}")
        vals.append((before - after) / c)
    return float(np.mean(vals))


def buffer_efficiency(buffer: ReplayBuffer, tau_human: float) -> float | None:
    """active_efficiency over the buffered uncertain subset; None when no
    entry carries measured entropies."""
    sel = [
        e
        for e in buffer.uncertain_subset(tau_human)
        if e.entropy_before is not None and e.entropy_after is not None
    ]
    if not sel:
        return None
    return active_efficiency(
        [(e.entropy_before, e.entropy_after) for e in sel],
        [e.answer.cost for e in sel],
    )
