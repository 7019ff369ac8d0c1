"""Query, triple, and path encoders producing V_q and the neural path vector.

All encoders are small tanh perceptrons over learned embedding tables. The
query side replaces a pretrained text encoder: questions are synthetic token
sequences ("anchor:e4 rel:r1 ..."), so a position-weighted token mean through
a perceptron is enough for the mapping to be learnable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import diffnum as dn
from .diffnum import ShapeError, Tensor
from .kg import KnowledgeGraph


class Perceptron:
    """Two-layer tanh perceptron; hidden=None collapses to one affine map."""

    def __init__(self, w1: Tensor, b1: Tensor, w2: Tensor | None, b2: Tensor | None):
        self.w1, self.b1, self.w2, self.b2 = w1, b1, w2, b2

    @classmethod
    def init(cls, rng: np.random.Generator, d_in: int, d_hidden: int | None, d_out: int) -> "Perceptron":
        def glorot(n_out, n_in):
            lim = math.sqrt(6.0 / (n_in + n_out))
            return Tensor(rng.uniform(-lim, lim, (n_out, n_in)), requires_grad=True)

        if d_hidden is None:
            return cls(glorot(d_out, d_in), Tensor(np.zeros(d_out), requires_grad=True), None, None)
        return cls(
            glorot(d_hidden, d_in),
            Tensor(np.zeros(d_hidden), requires_grad=True),
            glorot(d_out, d_hidden),
            Tensor(np.zeros(d_out), requires_grad=True),
        )

    def __call__(self, x: Tensor) -> Tensor:
        h = dn.affine(self.w1, x, self.b1)
        if self.w2 is None:
            return h
        return dn.affine(self.w2, dn.tanh(h), self.b2)

    def params(self, prefix: str) -> dict[str, Tensor]:
        out = {f"{prefix}/w1": self.w1, f"{prefix}/b1": self.b1}
        if self.w2 is not None:
            out[f"{prefix}/w2"] = self.w2
            out[f"{prefix}/b2"] = self.b2
        return out


class EmbeddingTable:
    """A table of per-row tensors (sparse-friendly: only touched rows get grads)."""

    def __init__(self, rows: list[Tensor]):
        self.rows = rows

    @classmethod
    def init(cls, rng: np.random.Generator, n: int, d: int) -> "EmbeddingTable":
        lim = 1.0 / math.sqrt(d)
        return cls([Tensor(rng.uniform(-lim, lim, d), requires_grad=True) for _ in range(n)])

    def __getitem__(self, i: int) -> Tensor:
        return self.rows[i]

    def __len__(self) -> int:
        return len(self.rows)

    @property
    def d(self) -> int:
        return self.rows[0].data.shape[0]

    def as_tensor(self) -> Tensor:
        return Tensor(np.stack([r.data for r in self.rows]))

    def load_array(self, arr: np.ndarray) -> None:
        if arr.shape != (len(self.rows), self.d):
            raise ShapeError(f"embedding table shape {arr.shape} != {(len(self.rows), self.d)}")
        for i, r in enumerate(self.rows):
            r.data[...] = arr[i]


@dataclass
class EmbeddingTables:
    entity_emb: EmbeddingTable
    relation_emb: EmbeddingTable
    token_emb: EmbeddingTable
    token_vocab: dict[str, int]
    d: int


def entity_token(name: str) -> str:
    return f"anchor:{name}"


def relation_token(name: str) -> str:
    return f"rel:{name}"


def build_tables(graph: KnowledgeGraph, d: int, rng: np.random.Generator) -> EmbeddingTables:
    vocab: dict[str, int] = {}
    for name in graph.entities:
        vocab[entity_token(name)] = len(vocab)
    for name in graph.relations:
        vocab[relation_token(name)] = len(vocab)
    return EmbeddingTables(
        entity_emb=EmbeddingTable.init(rng, graph.n_entities, d),
        relation_emb=EmbeddingTable.init(rng, graph.n_relations, d),
        token_emb=EmbeddingTable.init(rng, len(vocab), d),
        token_vocab=vocab,
        d=d,
    )


@dataclass
class QueryEncoder:
    pos_weights: Tensor  # (L_max,) logits, softmax-normalized over the sequence
    mlp: Perceptron

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, l_max: int = 16) -> "QueryEncoder":
        return cls(
            pos_weights=Tensor(rng.standard_normal(l_max) * 0.1, requires_grad=True),
            mlp=Perceptron.init(rng, d, d, d),
        )

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}/pos_weights": self.pos_weights, **self.mlp.params(f"{prefix}/mlp")}


def encode_query(tokens: list[str], tables: EmbeddingTables, enc: QueryEncoder) -> Tensor:
    """Position-weighted mean of token embeddings through a 2-layer perceptron."""
    if not tokens:
        raise ValueError("encode_query: empty token list")
    l_max = enc.pos_weights.data.shape[0]
    if len(tokens) > l_max:
        raise ValueError(f"encode_query: {len(tokens)} tokens exceed position capacity {l_max}")
    try:
        ids = [tables.token_vocab[t] for t in tokens]
    except KeyError as exc:
        raise KeyError(f"encode_query: unknown token {exc}") from None
    rows = dn.stack([tables.token_emb[i] for i in ids])
    w = dn.softmax(dn.slice_vec(enc.pos_weights, 0, len(ids)))
    return enc.mlp(dn.matmul(w, rows))


def struct_emb(e_h: Tensor, e_r: Tensor, e_t: Tensor, mlp: Perceptron) -> Tensor:
    """Order-sensitive triple feature: perceptron over [head || relation || tail]."""
    if not (e_h.data.shape == e_r.data.shape == e_t.data.shape):
        raise ShapeError(
            f"struct_emb: mismatched shapes {e_h.data.shape}, {e_r.data.shape}, {e_t.data.shape}"
        )
    return mlp(dn.concat([e_h, e_r, e_t]))


@dataclass
class AggParams:
    score_w: Tensor  # (d,)
    score_b: Tensor  # ()

    @classmethod
    def init(cls, rng: np.random.Generator, d: int) -> "AggParams":
        return cls(
            score_w=Tensor(rng.standard_normal(d) / math.sqrt(d), requires_grad=True),
            score_b=Tensor(np.float64(0.0), requires_grad=True),
        )

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {f"{prefix}/score_w": self.score_w, f"{prefix}/score_b": self.score_b}


def agg(states: list[Tensor], p: AggParams) -> Tensor:
    """Softmax-weighted mean with a learned scalar score per state."""
    if not states:
        raise ValueError("agg: empty state list")
    s = dn.stack(states)
    scores = dn.matmul(s, p.score_w) + p.score_b
    return dn.matmul(dn.softmax(scores), s)


def positional_code(l_max: int, d: int) -> np.ndarray:
    """Sinusoidal position codes shifted so the code at index 0 is zero."""
    pe = np.zeros((l_max, d))
    pos = np.arange(l_max)[:, None].astype(np.float64)
    div = np.exp(np.arange(0, d, 2) * (-math.log(10000.0) / d))
    pe[:, 0::2] = np.sin(pos * div)
    pe[:, 1::2] = np.cos(pos * div[: pe[:, 1::2].shape[1]]) - 1.0
    return pe


@dataclass
class FuseTextParams:
    agg: AggParams
    pe: np.ndarray  # constant (l_max, d)

    @classmethod
    def init(cls, rng: np.random.Generator, d: int, l_max: int = 8) -> "FuseTextParams":
        return cls(agg=AggParams.init(rng, d), pe=positional_code(l_max, d))

    def params(self, prefix: str) -> dict[str, Tensor]:
        return self.agg.params(f"{prefix}/agg")


def fuse_text(path_embeddings: list[Tensor], p: FuseTextParams) -> Tensor:
    """Order-aware pooling: additive sinusoidal position codes, then agg()."""
    if not path_embeddings:
        raise ValueError("fuse_text: empty embedding list")
    if len(path_embeddings) > p.pe.shape[0]:
        raise ValueError(f"fuse_text: path length {len(path_embeddings)} exceeds position capacity {p.pe.shape[0]}")
    coded = [dn.add(e, Tensor(p.pe[i])) for i, e in enumerate(path_embeddings)]
    return agg(coded, p.agg)


def knowledge_encode(z_t: Tensor, z_s: Tensor, mlp: Perceptron) -> Tensor:
    """Fused neural path vector: 2-layer perceptron over [z_t || z_s]."""
    if z_t.data.shape != z_s.data.shape:
        raise ShapeError(f"knowledge_encode: mismatched shapes {z_t.data.shape} and {z_s.data.shape}")
    return mlp(dn.concat([z_t, z_s]))


@dataclass
class PathEncoderParams:
    """Everything needed to turn a concrete triple path into z_t, z_s, z_f_neural."""

    struct_mlp: Perceptron  # 3d -> d
    struct_agg: AggParams
    fuse: FuseTextParams
    knowledge_mlp: Perceptron  # 2d -> d

    @classmethod
    def init(cls, rng: np.random.Generator, d: int) -> "PathEncoderParams":
        return cls(
            struct_mlp=Perceptron.init(rng, 3 * d, d, d),
            struct_agg=AggParams.init(rng, d),
            fuse=FuseTextParams.init(rng, d),
            knowledge_mlp=Perceptron.init(rng, 2 * d, d, d),
        )

    def params(self, prefix: str) -> dict[str, Tensor]:
        return {
            **self.struct_mlp.params(f"{prefix}/struct_mlp"),
            **self.struct_agg.params(f"{prefix}/struct_agg"),
            **self.fuse.params(f"{prefix}/fuse"),
            **self.knowledge_mlp.params(f"{prefix}/knowledge_mlp"),
        }


@dataclass
class PathEncoding:
    z_t: Tensor
    z_s: Tensor
    z_f_neural: Tensor


def encode_path(triples, tables: EmbeddingTables, p: PathEncoderParams) -> PathEncoding:
    """Structural + textual path summaries fused into the neural path vector."""
    if not triples:
        raise ValueError("encode_path: empty path")
    hop_states = []
    rel_embs = []
    for h, r, t in triples:
        e_h, e_r, e_t = tables.entity_emb[h], tables.relation_emb[r], tables.entity_emb[t]
        hop_states.append(struct_emb(e_h, e_r, e_t, p.struct_mlp))
        rel_embs.append(e_r)
    z_s = agg(hop_states, p.struct_agg)
    z_t = fuse_text(rel_embs, p.fuse)
    return PathEncoding(z_t=z_t, z_s=z_s, z_f_neural=knowledge_encode(z_t, z_s, p.knowledge_mlp))
