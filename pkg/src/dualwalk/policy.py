"""Collaborative policy networks for the two graph walkers.

Two separate single-layer LSTMs encode each walker's search history. At
every step past the first, an agent's recurrent state is rebuilt from the
concatenation of its own and its partner's previous hidden state through
a learned projection, so path information flows both ways while cell
states stay private to each agent.

Action scoring: a two-layer ReLU network reads [current-node embedding;
query embedding (entity agent only); hidden state], and its output is
projected to the action-embedding width and dotted against each candidate
action embedding. Candidate lists are padded per batch row and normalized
with a masked softmax.

All tensors live on the autodiff tape; batches are rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .clustering import ClusterMap
from .transe import EmbeddingStore


@dataclass
class PolicyDims:
    embed_dim: int = 50          # d: entity/relation embedding width
    hidden_dim: int = 200        # H: LSTM hidden width
    num_entities: int = 0
    num_relations: int = 0       # real relations (dummy start relation is extra)
    num_clusters: int = 0

    @property
    def action_dim(self) -> int:
        return 2 * self.embed_dim

    @property
    def head_dim(self) -> int:
        return 2 * self.embed_dim + self.hidden_dim


class DualHistories:
    """Paired recurrent states; step counters always advance together."""

    __slots__ = ("h_c", "c_c", "h_e", "c_e", "t")

    def __init__(self, h_c, c_c, h_e, c_e, t=0):
        self.h_c, self.c_c = h_c, c_c
        self.h_e, self.c_e = h_e, c_e
        self.t = t

    def select_rows(self, idx: np.ndarray) -> "DualHistories":
        """Gather rows (used by beam search to keep surviving hypotheses)."""
        return DualHistories(
            ad.gather(self.h_c, idx), ad.gather(self.c_c, idx),
            ad.gather(self.h_e, idx), ad.gather(self.c_e, idx), self.t,
        )


class PolicyParameters:
    """All learnable tensors for both walkers, with paired gradient buffers."""

    def __init__(self, dims: PolicyDims, seed: int = 0, dtype=ad.DEFAULT_DTYPE,
                 partner_sharing: bool = True):
        self.dims = dims
        self.seed = seed
        self.dtype = np.dtype(dtype)
        self.partner_sharing = partner_sharing
        d, H = dims.embed_dim, dims.hidden_dim
        rng = np.random.default_rng(seed)

        def xav(fi, fo):
            return ad.xavier_uniform(rng, fi, fo)

        self.ent_emb = ad.parameter(xav(dims.num_entities, d), "ent_emb", dtype)
        # one extra row: the reserved dummy relation fed at step 0
        self.rel_emb = ad.parameter(xav(dims.num_relations + 1, d), "rel_emb", dtype)
        self.cluster_emb = ad.parameter(xav(dims.num_clusters, 2 * d), "cluster_emb", dtype)

        self.lstm_c = ad.LstmParams(2 * d, H, rng, "lstm_c", dtype)
        self.lstm_e = ad.LstmParams(2 * d, H, rng, "lstm_e", dtype)
        # [own hidden; partner hidden] -> hidden
        self.share_c = ad.parameter(xav(2 * H, H), "share_c", dtype)
        self.share_e = ad.parameter(xav(2 * H, H), "share_e", dtype)

        hd, a = dims.head_dim, dims.action_dim
        self.w1_c = ad.parameter(xav(hd, hd), "w1_c", dtype)
        self.w2_c = ad.parameter(xav(hd, hd), "w2_c", dtype)
        self.out_c = ad.parameter(xav(hd, a), "out_c", dtype)
        self.w1_e = ad.parameter(xav(hd, hd), "w1_e", dtype)
        self.w2_e = ad.parameter(xav(hd, hd), "w2_e", dtype)
        self.out_e = ad.parameter(xav(hd, a), "out_e", dtype)

        if not partner_sharing:
            self.zero_partner_blocks()

    @property
    def dummy_relation(self) -> int:
        return self.dims.num_relations

    def zero_partner_blocks(self) -> None:
        H = self.dims.hidden_dim
        self.share_c.value[H:, :] = 0.0
        self.share_e.value[H:, :] = 0.0

    def mask_partner_gradients(self) -> None:
        """Keep the partner halves pinned at zero (single-agent ablation)."""
        H = self.dims.hidden_dim
        for t in (self.share_c, self.share_e):
            if t.grad is not None:
                t.grad[H:, :] = 0.0

    def tensors(self) -> list[ad.Tensor]:
        return [
            self.ent_emb, self.rel_emb, self.cluster_emb,
            *self.lstm_c.tensors(), *self.lstm_e.tensors(),
            self.share_c, self.share_e,
            self.w1_c, self.w2_c, self.out_c,
            self.w1_e, self.w2_e, self.out_e,
        ]

    def named_tensors(self) -> dict[str, ad.Tensor]:
        return {t.name: t for t in self.tensors()}

    # -- warm start ------------------------------------------------------------

    def warm_start(self, store: EmbeddingStore, cmap: ClusterMap) -> None:
        """Initialize embedding tables from pretrained vectors and cluster means."""
        if store.dim != self.dims.embed_dim:
            raise ValueError(f"pretrained dim {store.dim} != policy dim {self.dims.embed_dim}")
        self.ent_emb.value[...] = store.entity.astype(self.dtype)
        self.rel_emb.value[: self.dims.num_relations] = store.relation.astype(self.dtype)
        self.rel_emb.value[self.dims.num_relations] = 0.0  # dummy start relation
        if cmap.lifted is None:
            cmap.compute_embeddings(store)
        self.cluster_emb.value[...] = cmap.lifted.astype(self.dtype)

    # -- recurrent encoders ------------------------------------------------------

    def init_histories(self, c0: np.ndarray, e_s: np.ndarray, r_q: np.ndarray) -> DualHistories:
        """Step-0 states: zero LSTM state fed the start cluster / [r0; e_s]."""
        B = len(c0)
        H = self.dims.hidden_dim
        zeros_c = ad.constant(np.zeros((B, H)), self.dtype)
        zeros_e = ad.constant(np.zeros((B, H)), self.dtype)
        x_c = ad.gather(self.cluster_emb, np.asarray(c0))
        dummy = np.full(B, self.dummy_relation, dtype=np.int64)
        x_e = ad.concat([ad.gather(self.rel_emb, dummy), ad.gather(self.ent_emb, np.asarray(e_s))])
        h_c, cc = ad.lstm_cell(self.lstm_c, zeros_c, zeros_c, x_c)
        h_e, ce = ad.lstm_cell(self.lstm_e, zeros_e, zeros_e, x_e)
        return DualHistories(h_c, cc, h_e, ce, t=0)

    def step_histories(self, hist: DualHistories, a_c_emb: ad.Tensor,
                       a_e_emb: ad.Tensor) -> DualHistories:
        """Advance both walkers one step with state sharing.

        Each LSTM's incoming hidden is a projection of [own; partner]
        previous hiddens; the incoming cell state is the agent's own.
        Both agents read the partner's pre-step hidden (simultaneous move).
        """
        shared_c = ad.matmul(ad.concat([hist.h_c, hist.h_e]), self.share_c)
        shared_e = ad.matmul(ad.concat([hist.h_e, hist.h_c]), self.share_e)
        h_c, c_c = ad.lstm_cell(self.lstm_c, shared_c, hist.c_c, a_c_emb)
        h_e, c_e = ad.lstm_cell(self.lstm_e, shared_e, hist.c_e, a_e_emb)
        return DualHistories(h_c, c_c, h_e, c_e, t=hist.t + 1)

    # -- action scoring -------------------------------------------------------------

    def score_cluster_actions(self, c_t: np.ndarray, h_c: ad.Tensor,
                              cand_clusters: np.ndarray,
                              mask: np.ndarray) -> ad.Tensor:
        """Probabilities over padded cluster candidates, rows = batch.

        ``cand_clusters`` is (B, A) of cluster ids with STOP already
        resolved to the current cluster id (staying = choosing yourself).
        """
        x = ad.concat([ad.gather(self.cluster_emb, np.asarray(c_t)), h_c])
        v = ad.matmul(ad.mlp2_relu(x, self.w1_c, self.w2_c), self.out_c)
        return self._dot_scores(v, ad.gather(self.cluster_emb, cand_clusters.reshape(-1)),
                                cand_clusters.shape, mask)

    def score_entity_actions(self, e_t: np.ndarray, r_q: np.ndarray, h_e: ad.Tensor,
                             cand_rels: np.ndarray, cand_tgts: np.ndarray,
                             mask: np.ndarray) -> ad.Tensor:
        """Probabilities over padded (relation, target) candidates."""
        x = ad.concat([
            ad.gather(self.ent_emb, np.asarray(e_t)),
            ad.gather(self.rel_emb, np.asarray(r_q)),
            h_e,
        ])
        v = ad.matmul(ad.mlp2_relu(x, self.w1_e, self.w2_e), self.out_e)
        cand = ad.concat([
            ad.gather(self.rel_emb, cand_rels.reshape(-1)),
            ad.gather(self.ent_emb, cand_tgts.reshape(-1)),
        ])
        return self._dot_scores(v, cand, cand_rels.shape, mask)

    def action_embedding_clusters(self, cluster_ids: np.ndarray) -> ad.Tensor:
        return ad.gather(self.cluster_emb, np.asarray(cluster_ids))

    def action_embedding_edges(self, rels: np.ndarray, tgts: np.ndarray) -> ad.Tensor:
        return ad.concat([
            ad.gather(self.rel_emb, np.asarray(rels)),
            ad.gather(self.ent_emb, np.asarray(tgts)),
        ])

    @staticmethod
    def _dot_scores(v: ad.Tensor, cand_emb: ad.Tensor, shape, mask) -> ad.Tensor:
        B, A = shape
        scores = ad.reshape(ad.row_sum(ad.mul(cand_emb, ad.repeat_rows(v, A))), (B, A))
        return ad.masked_softmax(scores, mask)

    # -- persistence --------------------------------------------------------------------

    def save(self, path, extra: dict | None = None) -> None:
        manifest = {
            "embed_dim": self.dims.embed_dim,
            "hidden_dim": self.dims.hidden_dim,
            "num_entities": self.dims.num_entities,
            "num_relations": self.dims.num_relations,
            "num_clusters": self.dims.num_clusters,
            "seed": self.seed,
            "partner_sharing": self.partner_sharing,
        }
        if extra:
            manifest.update(extra)
        ad.save_tensors(path, {n: t.value for n, t in self.named_tensors().items()}, manifest)

    @classmethod
    def load(cls, path) -> tuple["PolicyParameters", dict]:
        named, manifest = ad.load_tensors(path)
        dims = PolicyDims(
            embed_dim=manifest["embed_dim"],
            hidden_dim=manifest["hidden_dim"],
            num_entities=manifest["num_entities"],
            num_relations=manifest["num_relations"],
            num_clusters=manifest["num_clusters"],
        )
        dtype = named["ent_emb"].dtype
        pp = cls(dims, seed=manifest.get("seed", 0), dtype=dtype,
                 partner_sharing=manifest.get("partner_sharing", True))
        for name, t in pp.named_tensors().items():
            if named[name].shape != t.value.shape:
                raise ValueError(f"{path}: shape mismatch for {name}")
            t.value = named[name].astype(dtype)
        return pp, manifest
