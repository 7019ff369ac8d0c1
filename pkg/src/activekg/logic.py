"""Differentiable soft-rule layer: chain rules with wildcard bodies, product
t-norm grounding against neural path encodings, aggregation into a symbolic
path vector, gated neural/symbolic fusion, and confidence updates driven by
the logic loss.

Rule confidences live as logits so gradient steps can never leave [0,1]
after the sigmoid. The dimensional lift from scalar rule activations to the
d-vector the fusion gate expects uses learned per-rule embeddings weighted
by activation.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from . import diffnum as dn
from .diffnum import ShapeError, Tensor
from .encode import PathEncoding, Perceptron
from .kg import MAX_HOPS, KnowledgeGraph, ReasoningPath

WILDCARD = None  # matches any relation at its body position


class RuleError(ValueError):
    pass


@dataclass
class Rule:
    rule_id: int
    body: tuple[int | None, ...]
    w_logit: Tensor  # confidence logit; sigmoid keeps w in [0,1]
    grounding_head: Perceptron  # d -> 1
    embedding: Tensor  # d-vector lift used by the symbolic aggregate
    note: str = ""

    def __post_init__(self) -> None:
        if not (1 <= len(self.body) <= MAX_HOPS):
            raise RuleError(f"rule {self.rule_id}: body length {len(self.body)} outside 1..{MAX_HOPS}")

    @classmethod
    def init(
        cls,
        rng: np.random.Generator,
        rule_id: int,
        body,
        d: int,
        confidence: float = 0.5,
        note: str = "",
    ) -> "Rule":
        if not (0.0 < confidence < 1.0):
            raise RuleError(f"rule {rule_id}: confidence {confidence} outside (0,1)")
        logit = float(np.log(confidence / (1.0 - confidence)))
        return cls(
            rule_id=rule_id,
            body=tuple(body),
            w_logit=Tensor(logit, requires_grad=True),
            grounding_head=Perceptron.init(rng, d, d, 1),
            embedding=Tensor(rng.uniform(-1.0, 1.0, d) / np.sqrt(d), requires_grad=True),
            note=note,
        )

    @property
    def confidence(self) -> float:
        return float(1.0 / (1.0 + np.exp(-self.w_logit.data.reshape(()))))

    def matches(self, relations: tuple[int, ...]) -> bool:
        if len(relations) != len(self.body):
            return False
        return all(b is WILDCARD or b == r for b, r in zip(self.body, relations))

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}/w": self.w_logit, f"{prefix}/emb": self.embedding}
        out.update(self.grounding_head.params(f"{prefix}/head"))
        return out


class RuleBase:
    """Rule store with a signature -> rule-id applicability cache."""

    def __init__(self, rules) -> None:
        self.rules: list[Rule] = list(rules)
        ids = [r.rule_id for r in self.rules]
        if len(set(ids)) != len(ids):
            raise RuleError("duplicate rule ids")
        self._by_id = {r.rule_id: r for r in self.rules}
        self._by_len: dict[int, list[int]] = {}
        for r in self.rules:
            self._by_len.setdefault(len(r.body), []).append(r.rule_id)
        self.applicability_index: dict[tuple[int, ...], list[int]] = {}

    def __len__(self) -> int:
        return len(self.rules)

    def rule(self, rule_id: int) -> Rule:
        return self._by_id[rule_id]

    def applicable(self, signature: tuple[int, ...]) -> list[int]:
        sig = tuple(signature)
        hit = self.applicability_index.get(sig)
        if hit is None:
            hit = [rid for rid in self._by_len.get(len(sig), []) if self._by_id[rid].matches(sig)]
            self.applicability_index[sig] = hit
        return list(hit)

    def rebuild_index(self) -> None:
        self._by_id = {r.rule_id: r for r in self.rules}
        self._by_len = {}
        for r in self.rules:
            self._by_len.setdefault(len(r.body), []).append(r.rule_id)
        self.applicability_index.clear()

    def params(self, prefix: str) -> dict[str, Tensor]:
        out: dict[str, Tensor] = {}
        for r in self.rules:
            out.update(r.params(f"{prefix}/r{r.rule_id}"))
        return out


@dataclass
class SymbolicOutput:
    z_sym: Tensor  # d-vector
    plausibility: Tensor  # scalar in (0,1)
    per_rule: dict[int, Tensor]

    def __post_init__(self) -> None:
        p = self.plausibility.item()
        # open interval in exact arithmetic; saturated sigmoids can hit the
        # endpoints in float, so validate the closure
        if not (0.0 <= p <= 1.0):
            raise RuleError(f"plausibility {p} outside [0,1]")
        for rid, phi in self.per_rule.items():
            v = phi.item()
            if not (0.0 <= v <= 1.0):
                raise RuleError(f"rule {rid}: activation {v} outside [0,1]")


def t_norm(a: Tensor, b: Tensor, kind: str = "product") -> Tensor:
    """Fuzzy conjunction. Product is the default; Gödel (min) picks the
    smaller operand, giving it the subgradient."""
    if kind == "product":
        return dn.mul(a, b)
    if kind == "godel":
        return a if float(a.data.reshape(())) <= float(b.data.reshape(())) else b
    raise RuleError(f"unknown t-norm {kind!r}")


def ground_rule(rule: Rule, p: ReasoningPath, p_enc: PathEncoding, tnorm: str = "product") -> Tensor:
    """Soft activation of one rule on one path: T(confidence, grounding)."""
    if not rule.matches(p.relations):
        return dn.constant(0.0)
    w = dn.sigmoid(rule.w_logit)
    pi = dn.sigmoid(rule.grounding_head(p_enc.z_f_neural))
    return t_norm(w, pi, tnorm)


def symbolic_score(rb: RuleBase, p: ReasoningPath, p_enc: PathEncoding, tnorm: str = "product") -> SymbolicOutput:
    """Activation-weighted mean of rule embeddings plus mean plausibility
    over the rules whose body matches the path; 0.5 prior with no rules."""
    matched = rb.applicable(p.relations)
    d = p_enc.z_f_neural.data.shape[0]
    if not matched:
        return SymbolicOutput(z_sym=Tensor(np.zeros(d)), plausibility=dn.constant(0.5), per_rule={})
    per_rule: dict[int, Tensor] = {}
    terms = []
    for rid in matched:
        phi = ground_rule(rb.rule(rid), p, p_enc, tnorm)
        per_rule[rid] = phi
        terms.append(dn.mul(phi, rb.rule(rid).embedding))
    n = dn.constant(float(len(matched)))
    z_sym = dn.div(dn.sum0(dn.stack(terms)) if len(terms) > 1 else terms[0], n)
    acc = None
    for phi in per_rule.values():
        acc = phi if acc is None else dn.add(acc, phi)
    plaus = dn.div(acc, n)
    return SymbolicOutput(z_sym=z_sym, plausibility=plaus, per_rule=per_rule)


@dataclass
class FuseGateParams:
    gate: Perceptron  # 2d -> d

    @classmethod
    def init(cls, rng: np.random.Generator, d: int) -> "FuseGateParams":
        return cls(gate=Perceptron.init(rng, 2 * d, d, d))

    def params(self, prefix: str) -> dict[str, Tensor]:
        return self.gate.params(f"{prefix}/gate")


def fuse(z_neural: Tensor, z_sym: Tensor, gp: FuseGateParams) -> Tensor:
    """Elementwise learned convex combination of the two pathways."""
    if z_neural.data.shape != z_sym.data.shape or z_neural.data.ndim != 1:
        raise ShapeError(f"fuse: shapes {z_neural.data.shape} and {z_sym.data.shape} must be equal d-vectors")
    g = dn.sigmoid(gp.gate(dn.concat([z_neural, z_sym])))
    one_minus = dn.sub(dn.constant(1.0), g)
    return dn.add(dn.mul(g, z_neural), dn.mul(one_minus, z_sym))


def plausibility_logit(p: Tensor) -> Tensor:
    """log(p / (1-p)). Values at the float rails 0/1 are squeezed inward so
    the logit stays finite; interior values pass through untouched."""
    eps = 1e-12
    v = float(p.data.reshape(()))
    if v < eps or v > 1.0 - eps:
        p = dn.add(dn.mul(p, dn.constant(1.0 - 2.0 * eps)), dn.constant(eps))
    return dn.sub(dn.log(p), dn.log(dn.sub(dn.constant(1.0), p)))


def logic_loss(plaus_logit: Tensor, y_human: int) -> Tensor:
    if y_human not in (0, 1):
        raise RuleError(f"logic_loss: label {y_human!r} not in {{0,1}}")
    return dn.bce_with_logits(plaus_logit, float(y_human))


def rule_update(rb: RuleBase, batch, lr: float, tnorm: str = "product") -> RuleBase:
    """One gradient step on every rule's confidence logit under the summed
    logic loss. batch holds (path, path_encoding, label) triples."""
    if lr <= 0:
        raise RuleError(f"rule_update: lr must be > 0, got {lr}")
    if not batch:
        return rb
    logits = [r.w_logit for r in rb.rules]
    for t in logits:
        t.grad = None
    with dn.Tape() as tape:
        total = None
        for path, p_enc, label in batch:
            out = symbolic_score(rb, path, p_enc, tnorm)
            if not out.per_rule:
                continue
            term = logic_loss(plausibility_logit(out.plausibility), label)
            total = term if total is None else dn.add(total, term)
        if total is None:
            return rb
        tape.backward(total)
    for t in logits:
        if t.grad is not None:
            t.data -= lr * t.grad
    return rb


# ------------------------------------------------------------------ rule IO


def save_rules(rb: RuleBase, path: str, graph: KnowledgeGraph) -> None:
    rows = []
    for r in rb.rules:
        body = ["*" if b is WILDCARD else graph.relations[b] for b in r.body]
        rows.append({"body": body, "confidence": r.confidence, "note": r.note})
    with open(path, "w", encoding="utf-8") as f:
        json.dump(rows, f, indent=2)
        f.write("\n")


def load_rules(path: str, graph: KnowledgeGraph, rng: np.random.Generator, d: int) -> RuleBase:
    with open(path, encoding="utf-8") as f:
        rows = json.load(f)
    if not isinstance(rows, list):
        raise RuleError(f"{path}: expected a JSON list of rules")
    rules = []
    for i, row in enumerate(rows):
        try:
            names = row["body"]
            conf = float(row["confidence"])
        except (KeyError, TypeError) as exc:
            raise RuleError(f"{path}: rule {i} malformed: {exc}") from exc
        body = []
        for name in names:
            if name == "*":
                body.append(WILDCARD)
            elif name in graph.relation_id:
                body.append(graph.relation_id[name])
            else:
                raise RuleError(f"{path}: rule {i} references unknown relation {name!r}")
        rules.append(Rule.init(rng, i, body, d, confidence=conf, note=str(row.get("note", ""))))
    return RuleBase(rules)


# ------------------------------------------------------------ rule induction


def induce_rules(
    items,
    graph: KnowledgeGraph,
    rng: np.random.Generator,
    d: int,
    n_distractors: int = 8,
    max_rules: int = 64,
    wildcard_variants: bool = True,
) -> RuleBase:
    """Seed the rule base from relation sequences observed in gold paths,
    optionally with single-position wildcard generalizations, plus random
    distractor bodies that match no gold sequence."""
    gold: list[tuple[int | None, ...]] = []
    seen: set[tuple[int | None, ...]] = set()
    for item in items:
        for p in item.gold_paths:
            sig = tuple(p.relations)
            if sig not in seen:
                seen.add(sig)
                gold.append(sig)
    bodies: list[tuple[tuple[int | None, ...], str]] = [(b, "gold") for b in gold]
    if wildcard_variants:
        for b in gold:
            if len(b) < 2:
                continue
            for i in range(len(b)):
                v = tuple(WILDCARD if j == i else rel for j, rel in enumerate(b))
                if v not in seen:
                    seen.add(v)
                    bodies.append((v, "gold-wildcard"))
    gold_sigs = set(gold)
    tries = 0
    added = 0
    while added < n_distractors and tries < 200 * max(1, n_distractors):
        tries += 1
        length = int(rng.integers(1, MAX_HOPS + 1))
        cand = tuple(int(rng.integers(0, graph.n_relations)) for _ in range(length))
        if cand in gold_sigs or cand in seen:
            continue
        seen.add(cand)
        bodies.append((cand, "distractor"))
        added += 1
    bodies = bodies[:max_rules]
    rules = [Rule.init(rng, i, body, d, confidence=0.5, note=note) for i, (body, note) in enumerate(bodies)]
    return RuleBase(rules)
