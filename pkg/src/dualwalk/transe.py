"""Translational embedding pretraining (margin ranking over corrupted triples).

Entity and relation vectors are trained with plain SGD so that
``source + relation ~ target`` in L2 distance. The resulting store feeds
clustering and the cluster/entity consistency score; it is never
fine-tuned during policy training.

The training set is the graph's indexed raw+inverse train edges. The
self-loop relation, when present, keeps a zero vector: a self-loop is a
zero translation by definition.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .kg import KnowledgeGraph

_MAGIC = b"DWEMB1\n"


class EmbeddingError(ValueError):
    pass


@dataclass
class TransEConfig:
    dim: int = 50
    margin: float = 1.0
    learning_rate: float = 0.01
    epochs: int = 500
    negatives: int = 1
    batch_size: int = 512
    seed: int = 0


class EmbeddingStore:
    """Pretrained entity/relation vectors, immutable once training ends."""

    def __init__(self, entity: np.ndarray, relation: np.ndarray, seed: int = 0):
        self.entity = np.ascontiguousarray(entity, dtype=np.float32)
        self.relation = np.ascontiguousarray(relation, dtype=np.float32)
        if self.entity.shape[1] != self.relation.shape[1]:
            raise EmbeddingError("entity/relation dimension mismatch")
        self.dim = self.entity.shape[1]
        self.seed = seed

    @property
    def num_entities(self) -> int:
        return self.entity.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relation.shape[0]

    def check_finite(self) -> None:
        if not (np.isfinite(self.entity).all() and np.isfinite(self.relation).all()):
            raise EmbeddingError("embeddings contain NaN/Inf")


def _init_store(num_entities: int, num_relations: int, cfg: TransEConfig) -> EmbeddingStore:
    rng = np.random.default_rng(cfg.seed)
    bound = 6.0 / np.sqrt(cfg.dim)
    ent = rng.uniform(-bound, bound, size=(num_entities, cfg.dim))
    rel = rng.uniform(-bound, bound, size=(num_relations, cfg.dim))
    norms = np.linalg.norm(rel, axis=1, keepdims=True)
    rel = rel / np.maximum(norms, 1e-12)
    return EmbeddingStore(ent, rel, seed=cfg.seed)


def _project_unit_ball(mat: np.ndarray) -> None:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    np.divide(mat, norms, out=mat, where=norms > 1.0)


def train_transe(kg: KnowledgeGraph, cfg: TransEConfig) -> EmbeddingStore:
    """Pretrain embeddings on the graph's raw+inverse train edges.

    Deterministic under cfg.seed. Entity rows are projected back to the
    unit ball at the start of every epoch.
    """
    triples = [(t.source, t.relation, t.target) for t in kg.triples["train"]]
    if kg.options.add_inverse:
        triples += [(t.target, kg.inverse_of(t.relation), t.source) for t in kg.triples["train"]]
    if not triples:
        raise EmbeddingError("empty train split")
    data = np.asarray(triples, dtype=np.int64)
    known = {tuple(row) for row in triples}

    store = _init_store(kg.num_entities, kg.num_relations, cfg)
    ent = store.entity.astype(np.float64)
    rel = store.relation.astype(np.float64)
    if kg.no_op_relation is not None:
        rel[kg.no_op_relation] = 0.0
    rng = np.random.default_rng(cfg.seed + 1)
    n = len(data)

    for epoch in range(cfg.epochs):
        _project_unit_ball(ent)
        order = rng.permutation(n)
        for lo in range(0, n, cfg.batch_size):
            batch = data[order[lo : lo + cfg.batch_size]]
            for _ in range(cfg.negatives):
                neg = _corrupt(batch, kg.num_entities, known, rng)
                _sgd_margin_step(ent, rel, batch, neg, cfg.margin, cfg.learning_rate)
        if not (np.isfinite(ent).all() and np.isfinite(rel).all()):
            raise EmbeddingError(f"training diverged at epoch {epoch} (NaN/Inf)")

    if kg.no_op_relation is not None:
        rel[kg.no_op_relation] = 0.0
    out = EmbeddingStore(ent, rel, seed=cfg.seed)
    out.check_finite()
    return out


def _corrupt(batch: np.ndarray, num_entities: int, known: set, rng) -> np.ndarray:
    """Uniformly corrupt head or tail; resample a few times to dodge true triples."""
    neg = batch.copy()
    heads = rng.random(len(batch)) < 0.5
    repl = rng.integers(0, num_entities, size=len(batch))
    neg[heads, 0] = repl[heads]
    neg[~heads, 2] = repl[~heads]
    for i in range(len(neg)):
        tries = 0
        while tuple(neg[i]) in known and tries < 10:
            if heads[i]:
                neg[i, 0] = rng.integers(0, num_entities)
            else:
                neg[i, 2] = rng.integers(0, num_entities)
            tries += 1
    return neg


def _sgd_margin_step(ent, rel, pos, neg, margin, lr):
    dp = ent[pos[:, 0]] + rel[pos[:, 1]] - ent[pos[:, 2]]
    dn = ent[neg[:, 0]] + rel[neg[:, 1]] - ent[neg[:, 2]]
    norm_p = np.linalg.norm(dp, axis=1)
    norm_n = np.linalg.norm(dn, axis=1)
    active = margin + norm_p - norm_n > 0
    if not active.any():
        return
    # d||v||/dv = v/||v||
    gp = dp[active] / np.maximum(norm_p[active], 1e-12)[:, None]
    gn = dn[active] / np.maximum(norm_n[active], 1e-12)[:, None]
    pa, na = pos[active], neg[active]
    np.add.at(ent, pa[:, 0], -lr * gp)
    np.add.at(rel, pa[:, 1], -lr * gp)
    np.add.at(ent, pa[:, 2], lr * gp)
    np.add.at(ent, na[:, 0], lr * gn)
    np.add.at(rel, na[:, 1], lr * gn)
    np.add.at(ent, na[:, 2], -lr * gn)


# -- persistence ----------------------------------------------------------------


def save_embeddings(store: EmbeddingStore, path: str | Path) -> None:
    """Little-endian binary: header (magic, version, d, |E|, |R|, seed), then rows."""
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IIIIq", 1, store.dim, store.num_entities,
                             store.num_relations, store.seed))
        fh.write(store.entity.astype("<f4").tobytes())
        fh.write(store.relation.astype("<f4").tobytes())


def load_embeddings(path: str | Path, kg: KnowledgeGraph | None = None,
                    expect_dim: int | None = None) -> EmbeddingStore:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise EmbeddingError(f"{path}: not an embedding file")
        version, dim, ne, nr, seed = struct.unpack("<IIIIq", fh.read(24))
        if version != 1:
            raise EmbeddingError(f"{path}: unsupported version {version}")
        ent = np.frombuffer(fh.read(ne * dim * 4), dtype="<f4").reshape(ne, dim)
        rel = np.frombuffer(fh.read(nr * dim * 4), dtype="<f4").reshape(nr, dim)
    if expect_dim is not None and dim != expect_dim:
        raise EmbeddingError(f"{path}: dimension {dim}, expected {expect_dim}")
    if kg is not None and (ne != kg.num_entities or nr != kg.num_relations):
        raise EmbeddingError(
            f"{path}: vocabulary mismatch ({ne} entities/{nr} relations vs "
            f"{kg.num_entities}/{kg.num_relations})"
        )
    return EmbeddingStore(ent.copy(), rel.copy(), seed=seed)


def dump_embeddings_text(store: EmbeddingStore, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# entities={store.num_entities} relations={store.num_relations} d={store.dim}\n")
        for i, row in enumerate(store.entity):
            fh.write(f"e{i}\t" + " ".join(f"{v:.6f}" for v in row) + "\n")
        for i, row in enumerate(store.relation):
            fh.write(f"r{i}\t" + " ".join(f"{v:.6f}" for v in row) + "\n")


def file_sha256(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
