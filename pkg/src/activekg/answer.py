"""Answer scoring over candidate entities from the fused path vector, plus
the answer loss. A bilinear projection into entity-embedding space stands in
for a frozen language model at desk scale; all downstream answer gradients
route through this scorer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffnum as dn
from .diffnum import ShapeError, Tensor
from .encode import EmbeddingTables

EPS_MISS = 1e-6
MISS_PENALTY = -math.log(EPS_MISS)


class AnswerError(ValueError):
    pass


@dataclass
class AnswerScorer:
    projection: Tensor  # d x d
    temperature: float = 1.0

    def __post_init__(self) -> None:
        if self.projection.data.ndim != 2 or self.projection.data.shape[0] != self.projection.data.shape[1]:
            raise ShapeError(f"AnswerScorer: projection must be square, got {self.projection.data.shape}")
        if not np.all(np.isfinite(self.projection.data)):
            raise AnswerError("AnswerScorer: projection has non-finite entries")
        if self.temperature <= 0:
            raise AnswerError(f"AnswerScorer: temperature must be > 0, got {self.temperature}")

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, temperature: float = 1.0) -> "AnswerScorer":
        lim = math.sqrt(6.0 / (2 * d))
        return cls(projection=Tensor(rng.uniform(-lim, lim, (d, d)), requires_grad=True), temperature=temperature)

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}/proj": self.projection}


@dataclass
class AnswerDistribution:
    candidates: tuple[int, ...]
    probs: Tensor  # simplex aligned with candidates

    def prob_of(self, entity: int) -> float:
        try:
            return float(self.probs.data[self.candidates.index(entity)])
        except ValueError:
            return 0.0

    def top1(self) -> int:
        return self.candidates[int(self.probs.data.argmax())]


def score_answers(z_f: Tensor, candidates, tables: EmbeddingTables, scorer: AnswerScorer) -> AnswerDistribution:
    """Softmax over ⟨projection·z_f, entity embedding⟩ / temperature."""
    cands = tuple(candidates)
    if not cands:
        raise AnswerError("score_answers: empty candidate set")
    query = dn.matmul(scorer.projection, z_f)
    scores = dn.concat([dn.dot(query, tables.entity_emb[c]) for c in cands])
    return AnswerDistribution(candidates=cands, probs=dn.softmax(dn.div(scores, dn.constant(scorer.temperature))))


def gen_loss(dist: AnswerDistribution, gold) -> tuple[Tensor, bool]:
    """Negative log mass on gold candidates. A gold set absent from the
    candidates draws the fixed miss penalty -log(1e-6) and flags the episode
    as a retrieval failure."""
    gold = frozenset(gold)
    if not gold:
        raise AnswerError("gen_loss: empty gold set")
    idx = [i for i, c in enumerate(dist.candidates) if c in gold]
    if not idx:
        return dn.constant(MISS_PENALTY), True
    acc = None
    for i in idx:
        p = dn.pick(dist.probs, i)
        acc = p if acc is None else dn.add(acc, p)
    return dn.neg(dn.log(acc)), False


def hits_at_1(dist: AnswerDistribution, gold) -> bool:
    return dist.top1() in frozenset(gold)
