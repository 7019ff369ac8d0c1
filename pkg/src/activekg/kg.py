"""Knowledge graph storage, IO, and the synthetic benchmark generator.

Entities and relations are interned to integer ids; triples are (head,
relation, tail) id tuples. Files use names so they stay portable:

  * graph TSV: one `head<TAB>relation<TAB>tail` per line, `#` comments
  * benchmark JSONL: one item per line, see `item_to_json`
"""

from __future__ import annotations

import json
import warnings
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAX_HOPS = 4


class GraphError(ValueError):
    pass


class GeneratorError(ValueError):
    pass


class KnowledgeGraph:
    def __init__(self) -> None:
        self.entities: list[str] = []
        self.relations: list[str] = []
        self.entity_id: dict[str, int] = {}
        self.relation_id: dict[str, int] = {}
        self.triples: list[tuple[int, int, int]] = []
        self._triple_set: set[tuple[int, int, int]] = set()
        self._out: dict[tuple[int, int], list[int]] = {}
        self._rels_from: dict[int, list[int]] = {}

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        return len(self.relations)

    @property
    def n_triples(self) -> int:
        return len(self.triples)

    def add_entity(self, name: str) -> int:
        eid = self.entity_id.get(name)
        if eid is None:
            eid = len(self.entities)
            self.entities.append(name)
            self.entity_id[name] = eid
        return eid

    def add_relation(self, name: str) -> int:
        rid = self.relation_id.get(name)
        if rid is None:
            rid = len(self.relations)
            self.relations.append(name)
            self.relation_id[name] = rid
        return rid

    def add_triple(self, h: int, r: int, t: int) -> bool:
        """Insert an edge; returns False if it was already present."""
        tri = (h, r, t)
        if tri in self._triple_set:
            return False
        self._triple_set.add(tri)
        self.triples.append(tri)
        key = (h, r)
        tails = self._out.get(key)
        if tails is None:
            self._out[key] = [t]
            rels = self._rels_from.setdefault(h, [])
            # keep the per-head relation list sorted for deterministic candidates
            lo, hi = 0, len(rels)
            while lo < hi:
                mid = (lo + hi) // 2
                if rels[mid] < r:
                    lo = mid + 1
                else:
                    hi = mid
            rels.insert(lo, r)
        else:
            tails.append(t)
        return True

    def tails(self, h: int, r: int) -> list[int]:
        return self._out.get((h, r), [])

    def relations_from(self, h: int) -> list[int]:
        return self._rels_from.get(h, [])

    def reach(self, frontier, relation: int) -> frozenset[int]:
        """One-hop frontier image: union of tails of `relation` edges."""
        out: set[int] = set()
        for h in frontier:
            out.update(self._out.get((h, relation), ()))
        return frozenset(out)

    def edge_count(self, frontier, relation: int) -> int:
        return sum(len(self._out.get((h, relation), ())) for h in frontier)

    def candidate_relations(self, frontier, a_max: int) -> list[int]:
        """Relations leaving the frontier, by descending edge count then id,
        truncated to a_max."""
        counts: dict[int, int] = {}
        for h in frontier:
            for r in self._rels_from.get(h, ()):
                counts[r] = counts.get(r, 0) + len(self._out[(h, r)])
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return [r for r, _ in ranked[:a_max]]

    def shortest_distance(self, src: int, dst: int, cap: int) -> int | None:
        """Directed BFS distance src -> dst, or None if beyond `cap` hops."""
        if src == dst:
            return 0
        seen = {src}
        ring = deque([(src, 0)])
        while ring:
            node, d = ring.popleft()
            if d >= cap:
                continue
            for r in self._rels_from.get(node, ()):
                for t in self._out[(node, r)]:
                    if t == dst:
                        return d + 1
                    if t not in seen:
                        seen.add(t)
                        ring.append((t, d + 1))
        return None


def expand(graph: KnowledgeGraph, frontier, relation: int) -> list[tuple[int, int, int]]:
    """All triples (e, relation, t) with e in the frontier, ordered by
    ascending (head, tail)."""
    if not (0 <= relation < graph.n_relations):
        raise GraphError(f"expand: unknown relation id {relation}")
    out = []
    for h in sorted(frontier):
        for t in sorted(graph.tails(h, relation)):
            out.append((h, relation, t))
    return out


def enumerate_candidate_relations(graph: KnowledgeGraph, frontier, a_max: int = 8) -> list[int]:
    """Relations with at least one edge leaving the frontier, ranked by
    descending edge count with ascending-id tie-break, truncated to a_max."""
    return graph.candidate_relations(frontier, a_max)


# ----------------------------------------------------------------------- IO


def save_tsv(graph: KnowledgeGraph, path: str | Path) -> None:
    with open(path, "w") as fh:
        fh.write("# head\trelation\ttail\n")
        for h, r, t in graph.triples:
            fh.write(f"{graph.entities[h]}\t{graph.relations[r]}\t{graph.entities[t]}\n")


def load_graph(path: str | Path) -> KnowledgeGraph:
    graph = KnowledgeGraph()
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GraphError(f"{path}:{lineno}: expected 3 tab-separated fields, got {len(parts)}")
            h, r, t = parts
            fresh = graph.add_triple(graph.add_entity(h), graph.add_relation(r), graph.add_entity(t))
            if not fresh:
                warnings.warn(f"{path}:{lineno}: duplicate triple {line!r} ignored", stacklevel=2)
    return graph


load_tsv = load_graph


@dataclass(frozen=True)
class ReasoningPath:
    """A chain of triples: tail of each hop is the head of the next."""

    triples: tuple[tuple[int, int, int], ...]

    def __post_init__(self) -> None:
        if not (1 <= len(self.triples) <= MAX_HOPS):
            raise GraphError(f"ReasoningPath: length {len(self.triples)} outside 1..{MAX_HOPS}")
        for a, b in zip(self.triples, self.triples[1:]):
            if a[2] != b[0]:
                raise GraphError(f"ReasoningPath: broken chain at {a} -> {b}")

    @property
    def start(self) -> int:
        return self.triples[0][0]

    @property
    def endpoint(self) -> int:
        return self.triples[-1][2]

    @property
    def relations(self) -> tuple[int, ...]:
        return tuple(r for _, r, _ in self.triples)

    def __len__(self) -> int:
        return len(self.triples)


@dataclass
class BenchmarkItem:
    question_tokens: list[str]
    anchors: list[int]
    gold_answers: frozenset[int]
    gold_hops: int
    gold_paths: list[ReasoningPath]
    relevance_labels: dict[int, bool]


def item_to_json(item: BenchmarkItem, graph: KnowledgeGraph) -> dict:
    ents, rels = graph.entities, graph.relations
    return {
        "question_tokens": item.question_tokens,
        "anchors": [ents[a] for a in item.anchors],
        "gold_answers": sorted(ents[a] for a in item.gold_answers),
        "gold_hops": item.gold_hops,
        "gold_paths": [
            [[ents[h], rels[r], ents[t]] for h, r, t in p.triples] for p in item.gold_paths
        ],
        "relevance_labels": {rels[r]: v for r, v in sorted(item.relevance_labels.items())},
    }


def item_from_json(rec: dict, graph: KnowledgeGraph) -> BenchmarkItem:
    eid, rid = graph.entity_id, graph.relation_id
    try:
        return BenchmarkItem(
            question_tokens=list(rec["question_tokens"]),
            anchors=[eid[a] for a in rec["anchors"]],
            gold_answers=frozenset(eid[a] for a in rec["gold_answers"]),
            gold_hops=int(rec["gold_hops"]),
            gold_paths=[
                ReasoningPath(tuple((eid[h], rid[r], eid[t]) for h, r, t in p))
                for p in rec["gold_paths"]
            ],
            relevance_labels={rid[r]: bool(v) for r, v in rec["relevance_labels"].items()},
        )
    except KeyError as exc:
        raise GraphError(f"benchmark item references unknown name {exc}") from exc


def save_items_jsonl(items: list[BenchmarkItem], graph: KnowledgeGraph, path: str | Path) -> None:
    with open(path, "w") as fh:
        for item in items:
            fh.write(json.dumps(item_to_json(item, graph)) + "\n")


def load_items_jsonl(path: str | Path, graph: KnowledgeGraph) -> list[BenchmarkItem]:
    items = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                items.append(item_from_json(json.loads(line), graph))
    return items


# ------------------------------------------------------------- generation


@dataclass
class GeneratorConfig:
    n_entities: int = 300
    n_relations: int = 12
    branching: tuple[int, int] = (2, 3)  # base relations per entity (lo, hi)
    max_fanout: int = 2  # tails per (head, relation)
    inverse_relations: bool = True
    distractor_ratio: float = 0.15
    hop_distribution: dict[int, float] = field(default_factory=lambda: {1: 0.35, 2: 0.4, 3: 0.25})
    n_items: int = 200
    max_answer_set: int = 6
    max_gold_paths: int = 64
    seed: int = 0
    max_hops: int = 4
    item_retries: int = 200


def _validate(cfg: GeneratorConfig) -> None:
    if cfg.n_entities < 4:
        raise GeneratorError("n_entities must be at least 4")
    if cfg.n_relations < 1:
        raise GeneratorError("n_relations must be at least 1")
    if cfg.branching[0] < 1 or cfg.branching[1] < cfg.branching[0]:
        raise GeneratorError(f"branching range {cfg.branching} is empty or zero")
    if cfg.branching[1] > cfg.n_relations:
        raise GeneratorError(
            f"branching upper bound {cfg.branching[1]} exceeds n_relations {cfg.n_relations}"
        )
    if not cfg.hop_distribution:
        raise GeneratorError("hop_distribution is empty")
    for h, p in cfg.hop_distribution.items():
        if not (1 <= h <= cfg.max_hops):
            raise GeneratorError(f"hop_distribution requests {h} hops, outside 1..{cfg.max_hops}")
        if p < 0:
            raise GeneratorError("hop_distribution has negative mass")
    if sum(cfg.hop_distribution.values()) <= 0:
        raise GeneratorError("hop_distribution has zero total mass")
    if cfg.max_fanout < 1:
        raise GeneratorError("max_fanout must be at least 1")


def _enumerate_paths(graph: KnowledgeGraph, anchor: int, rels: list[int], cap: int) -> list[ReasoningPath] | None:
    """All concrete triple chains from anchor along `rels`; None if over cap."""
    partial: list[tuple[tuple[int, int, int], ...]] = [()]
    node_of = {(): anchor}
    for r in rels:
        grown: list[tuple[tuple[int, int, int], ...]] = []
        next_node = {}
        for p in partial:
            h = node_of[p]
            for t in graph.tails(h, r):
                q = p + ((h, r, t),)
                grown.append(q)
                next_node[q] = t
                if len(grown) > cap:
                    return None
        partial, node_of = grown, next_node
    return [ReasoningPath(p) for p in partial]


def generate_benchmark(cfg: GeneratorConfig, rng: np.random.Generator | None = None) -> tuple[KnowledgeGraph, list[BenchmarkItem]]:
    """Build a random graph, then derive question items from the final graph.

    Per-item guarantees, all enforced against the finished graph (including
    distractor edges):
      * gold_answers is exactly the set reachable from the anchor along the
        gold relation sequence
      * no proper prefix of the gold sequence already yields gold_answers
      * every gold answer is at BFS distance exactly gold_hops from the
        anchor, so no shorter alternative path exists
    """
    _validate(cfg)
    if rng is None:
        rng = np.random.default_rng(cfg.seed)
    graph = KnowledgeGraph()
    for i in range(cfg.n_entities):
        graph.add_entity(f"e{i}")
    base_rel = [graph.add_relation(f"r{i}") for i in range(cfg.n_relations)]
    inv_of: dict[int, int] = {}
    if cfg.inverse_relations:
        for i in range(cfg.n_relations):
            inv_of[base_rel[i]] = graph.add_relation(f"r{i}_inv")

    def put(h: int, r: int, t: int) -> None:
        graph.add_triple(h, r, t)
        if cfg.inverse_relations:
            graph.add_triple(t, inv_of[r], h)

    n, lo, hi = cfg.n_entities, cfg.branching[0], cfg.branching[1]
    for h in range(n):
        k = int(rng.integers(lo, hi + 1))
        rels = rng.choice(cfg.n_relations, size=k, replace=False)
        for r in rels:
            fanout = int(rng.integers(1, cfg.max_fanout + 1))
            for t in rng.choice(n, size=fanout, replace=False):
                if int(t) != h:
                    put(h, int(r), int(t))

    n_base = graph.n_triples
    n_extra = int(cfg.distractor_ratio * n_base)
    added = 0
    guard = 0
    while added < n_extra and guard < 50 * n_extra + 100:
        guard += 1
        h = int(rng.integers(0, n))
        r = int(rng.integers(0, cfg.n_relations))
        t = int(rng.integers(0, n))
        if h == t or (h, r, t) in graph._triple_set:
            continue
        put(h, r, t)
        added += 1

    hops = sorted(cfg.hop_distribution)
    probs = np.array([cfg.hop_distribution[h] for h in hops], dtype=np.float64)
    probs /= probs.sum()

    items: list[BenchmarkItem] = []
    for _ in range(cfg.n_items):
        item = None
        for _ in range(cfg.item_retries):
            want_h = int(rng.choice(hops, p=probs))
            anchor = int(rng.integers(0, n))
            seq: list[int] = []
            frontier = frozenset([anchor])
            prefixes = [frontier]
            ok = True
            for _ in range(want_h):
                avail = graph.candidate_relations(frontier, a_max=10**9)
                if not avail:
                    ok = False
                    break
                r = int(avail[int(rng.integers(0, len(avail)))])
                seq.append(r)
                frontier = graph.reach(frontier, r)
                prefixes.append(frontier)
            if not ok or not frontier or len(frontier) > cfg.max_answer_set:
                continue
            answers = frontier
            # hop supervision must be well posed: no prefix already answers
            if any(prefixes[i] == answers for i in range(want_h)):
                continue
            # no shortcut through any relation, distractors included
            if any(graph.shortest_distance(anchor, y, cfg.max_hops) != want_h for y in answers):
                continue
            paths = _enumerate_paths(graph, anchor, seq, cfg.max_gold_paths)
            if paths is None:
                continue
            assert {p.endpoint for p in paths} == set(answers)
            tokens = [f"anchor:{graph.entities[anchor]}"] + [f"rel:{graph.relations[r]}" for r in seq]
            labels = {r: (r in set(seq)) for r in range(graph.n_relations)}
            item = BenchmarkItem(
                question_tokens=tokens,
                anchors=[anchor],
                gold_answers=frozenset(answers),
                gold_hops=want_h,
                gold_paths=paths,
                relevance_labels=labels,
            )
            break
        if item is None:
            raise GeneratorError(
                f"could not realize an item after {cfg.item_retries} retries; "
                f"graph too sparse for hop_distribution {cfg.hop_distribution} "
                f"(n_entities={cfg.n_entities}, branching={cfg.branching})"
            )
        items.append(item)
    return graph, items
