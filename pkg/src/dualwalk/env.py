"""The synchronized dual MDP: cluster walker over the cluster graph with
STOP, entity walker over the KG with self-loops.

Both agents act exactly once per step from step-(t-1) information
(simultaneous moves), and every episode is unrolled for exactly T steps;
"staying" is an ordinary action, so trajectories always align.

Rollouts are vectorized: a batch row is one rollout, candidate lists are
padded per step and masked. The same engine serves sampled training
rollouts, greedy evaluation, and teacher-forced replays (used to verify
recorded log-probabilities and beam trajectories).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .clustering import ClusterMap
from .kg import KnowledgeGraph
from .policy import DualHistories, PolicyParameters


@dataclass
class DualState:
    """Positional state for the single-query API."""

    e_s: int
    r_q: int
    c_s: int
    e_t: int
    c_t: int
    t: int = 0
    terminal: bool = False


@dataclass
class EpisodeBatch:
    """Per-rollout trajectories for both agents; rows are rollouts."""

    e_s: np.ndarray                  # (B,)
    r_q: np.ndarray                  # (B,)
    ent_path: np.ndarray             # (B, T+1), column 0 is e_s
    clu_path: np.ndarray             # (B, T+1)
    dwarf_rel: np.ndarray            # (B, T) chosen relation per step
    dwarf_logp: list[ad.Tensor]      # T tensors of shape (B,)
    dwarf_entropy: list[ad.Tensor]
    giant_stop: np.ndarray           # (B, T) bool, True where STOP was chosen
    giant_logp: list[ad.Tensor]
    giant_entropy: list[ad.Tensor]

    @property
    def batch_size(self) -> int:
        return self.ent_path.shape[0]

    @property
    def horizon(self) -> int:
        return self.ent_path.shape[1] - 1

    def final_entities(self) -> np.ndarray:
        return self.ent_path[:, -1]

    def final_clusters(self) -> np.ndarray:
        return self.clu_path[:, -1]

    def dwarf_logp_matrix(self) -> np.ndarray:
        return np.stack([t.value for t in self.dwarf_logp], axis=1)

    def giant_logp_matrix(self) -> np.ndarray:
        return np.stack([t.value for t in self.giant_logp], axis=1)


class DualEnv:
    """Owns candidate construction and episode rollout for one (kg, clusters)."""

    def __init__(self, kg: KnowledgeGraph, cmap: ClusterMap, policy: PolicyParameters):
        self.kg = kg
        self.cmap = cmap
        self.policy = policy
        self._edge_cache: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self._edge_cache_version = kg.version

    # -- single-query API ------------------------------------------------------

    def reset(self, e_s: int, r_q: int) -> DualState:
        if not (0 <= e_s < self.kg.num_entities):
            raise ValueError(f"unknown entity id {e_s}")
        if not (0 <= r_q < self.kg.num_relations):
            raise ValueError(f"unknown relation id {r_q}")
        c_s = self.cmap.cluster_of(e_s)
        return DualState(e_s=e_s, r_q=r_q, c_s=c_s, e_t=e_s, c_t=c_s)

    def legal_actions(self, state: DualState) -> tuple[list[int], list[tuple[int, int]]]:
        """(cluster candidates incl. STOP as the current cluster, entity edges)."""
        if state.terminal:
            raise ValueError("episode already terminal")
        giant = [state.c_t] + self.cmap.neighbors(state.c_t)
        dwarf = self.kg.outgoing_actions(state.e_t)
        return giant, dwarf

    def step(self, state: DualState, cluster_choice: int, edge_choice: int,
             horizon: int) -> DualState:
        giant, dwarf = self.legal_actions(state)
        if not (0 <= cluster_choice < len(giant)) or not (0 <= edge_choice < len(dwarf)):
            raise IndexError("illegal action index")
        _, tgt = dwarf[edge_choice]
        nxt = DualState(
            e_s=state.e_s, r_q=state.r_q, c_s=state.c_s,
            e_t=tgt, c_t=giant[cluster_choice], t=state.t + 1,
        )
        nxt.terminal = nxt.t >= horizon
        return nxt

    # -- candidate padding ----------------------------------------------------------

    def _entity_edges(self, entity: int) -> tuple[np.ndarray, np.ndarray]:
        if self._edge_cache_version != self.kg.version:
            self._edge_cache.clear()
            self._edge_cache_version = self.kg.version
        hit = self._edge_cache.get(entity)
        if hit is None:
            acts = self.kg.outgoing_actions(entity)
            rels = np.asarray([r for r, _ in acts], dtype=np.int64)
            tgts = np.asarray([t for _, t in acts], dtype=np.int64)
            hit = (rels, tgts)
            self._edge_cache[entity] = hit
        return hit

    def dwarf_candidates(self, entities: np.ndarray):
        rows = [self._entity_edges(int(e)) for e in entities]
        width = max(1, max(len(r) for r, _ in rows))
        B = len(entities)
        rels = np.zeros((B, width), dtype=np.int64)
        tgts = np.zeros((B, width), dtype=np.int64)
        mask = np.zeros((B, width), dtype=bool)
        for i, (r, t) in enumerate(rows):
            k = len(r)
            rels[i, :k] = r
            tgts[i, :k] = t
            mask[i, :k] = True
        return rels, tgts, mask

    def giant_candidates(self, clusters: np.ndarray):
        """Padded (B, A) cluster-id matrix; index 0 is STOP = stay at c_t."""
        rows = [self.cmap.neighbors(int(c)) for c in clusters]
        width = 1 + max((len(r) for r in rows), default=0)
        B = len(clusters)
        cand = np.zeros((B, width), dtype=np.int64)
        mask = np.zeros((B, width), dtype=bool)
        cand[:, 0] = clusters
        mask[:, 0] = True
        for i, nbrs in enumerate(rows):
            k = len(nbrs)
            if k:
                cand[i, 1 : 1 + k] = nbrs
                mask[i, 1 : 1 + k] = True
        return cand, mask

    # -- batched rollout -----------------------------------------------------------

    def run(
        self,
        e_s: np.ndarray,
        r_q: np.ndarray,
        horizon: int,
        mode: str = "sample",
        rng: np.random.Generator | None = None,
        forced_edges: list[np.ndarray] | None = None,
        forced_clusters: list[np.ndarray] | None = None,
    ) -> EpisodeBatch:
        """Roll every row for exactly ``horizon`` steps.

        mode: 'sample' draws from the policy, 'greedy' takes the argmax.
        ``forced_edges`` (per-step candidate indices) and
        ``forced_clusters`` (per-step cluster ids) each override their own
        agent, so a replay can force one walker while the other follows
        the policy.
        """
        if mode == "sample" and rng is None:
            raise ValueError("sample mode needs an rng")
        e_s = np.asarray(e_s, dtype=np.int64)
        r_q = np.asarray(r_q, dtype=np.int64)
        B = len(e_s)
        ent = e_s.copy()
        clu = self.cmap.assignment[ent]

        ent_path = np.zeros((B, horizon + 1), dtype=np.int64)
        clu_path = np.zeros((B, horizon + 1), dtype=np.int64)
        ent_path[:, 0] = ent
        clu_path[:, 0] = clu
        dwarf_rel = np.zeros((B, horizon), dtype=np.int64)
        giant_stop = np.zeros((B, horizon), dtype=bool)
        dwarf_logp, dwarf_entropy, giant_logp, giant_entropy = [], [], [], []

        hist = self.policy.init_histories(clu, ent, r_q)
        for t in range(horizon):
            g_cand, g_mask = self.giant_candidates(clu)
            g_probs = self.policy.score_cluster_actions(clu, hist.h_c, g_cand, g_mask)
            if forced_clusters is not None:
                g_choice = self._match_cluster(g_cand, g_mask, forced_clusters[t], clu)
            else:
                g_choice = _choose(g_probs.value, g_mask, mode, rng)
            giant_logp.append(ad.log(ad.pick(g_probs, g_choice)))
            giant_entropy.append(ad.masked_entropy(g_probs, g_mask))
            giant_stop[:, t] = g_choice == 0
            new_clu = g_cand[np.arange(B), g_choice]

            d_rels, d_tgts, d_mask = self.dwarf_candidates(ent)
            d_probs = self.policy.score_entity_actions(ent, r_q, hist.h_e, d_rels, d_tgts, d_mask)
            if forced_edges is not None:
                d_choice = np.asarray(forced_edges[t], dtype=np.int64)
                if (d_choice >= d_mask.shape[1]).any() or not d_mask[np.arange(B), d_choice].all():
                    raise IndexError("forced edge index out of range")
            else:
                d_choice = _choose(d_probs.value, d_mask, mode, rng)
            dwarf_logp.append(ad.log(ad.pick(d_probs, d_choice)))
            dwarf_entropy.append(ad.masked_entropy(d_probs, d_mask))
            rows = np.arange(B)
            dwarf_rel[:, t] = d_rels[rows, d_choice]
            new_ent = d_tgts[rows, d_choice]

            a_c = self.policy.action_embedding_clusters(new_clu)
            a_e = self.policy.action_embedding_edges(dwarf_rel[:, t], new_ent)
            hist = self.policy.step_histories(hist, a_c, a_e)

            ent, clu = new_ent, new_clu
            ent_path[:, t + 1] = ent
            clu_path[:, t + 1] = clu

        return EpisodeBatch(
            e_s=e_s, r_q=r_q, ent_path=ent_path, clu_path=clu_path,
            dwarf_rel=dwarf_rel, dwarf_logp=dwarf_logp, dwarf_entropy=dwarf_entropy,
            giant_stop=giant_stop, giant_logp=giant_logp, giant_entropy=giant_entropy,
        )

    @staticmethod
    def _match_cluster(g_cand, g_mask, wanted, current):
        """Index of the forced next cluster; equality with current means STOP."""
        B, A = g_cand.shape
        choice = np.zeros(B, dtype=np.int64)
        for i in range(B):
            if wanted[i] == current[i]:
                choice[i] = 0
                continue
            hits = np.flatnonzero((g_cand[i] == wanted[i]) & g_mask[i])
            hits = hits[hits > 0]
            if len(hits) == 0:
                raise IndexError(f"cluster {wanted[i]} not reachable from {current[i]}")
            choice[i] = hits[0]
        return choice

    def rollout(self, e_s: int, r_q: int, horizon: int, mode: str = "sample",
                seed: int = 0) -> EpisodeBatch:
        """Single-query rollout; sample mode is deterministic under seed."""
        rng = np.random.default_rng(seed)
        return self.run(np.array([e_s]), np.array([r_q]), horizon, mode, rng)

    def replay_log_prob(self, e_s: int, r_q: int, edges: list[tuple[int, int]],
                        clusters: list[int]) -> tuple[float, float]:
        """Teacher-forced replay; returns (dwarf, giant) trajectory log-probs."""
        horizon = len(edges)
        ent = e_s
        forced_edges = []
        for t, (rel, tgt) in enumerate(edges):
            rels, tgts, mask = self.dwarf_candidates(np.array([ent]))
            hits = np.flatnonzero((rels[0] == rel) & (tgts[0] == tgt) & mask[0])
            if len(hits) == 0:
                raise IndexError(f"edge ({rel}, {tgt}) not available at step {t}")
            forced_edges.append(np.array([hits[0]]))
            ent = tgt
        forced_clusters = [np.array([c]) for c in clusters]
        batch = self.run(np.array([e_s]), np.array([r_q]), horizon, mode="greedy",
                         forced_edges=forced_edges, forced_clusters=forced_clusters)
        return (
            float(batch.dwarf_logp_matrix().sum()),
            float(batch.giant_logp_matrix().sum()),
        )


def _choose(probs: np.ndarray, mask: np.ndarray, mode: str,
            rng: np.random.Generator | None) -> np.ndarray:
    B, A = probs.shape
    if mode == "greedy":
        return probs.argmax(axis=1)
    if mode != "sample":
        raise ValueError(f"unknown mode {mode!r}")
    cdf = probs.cumsum(axis=1)
    u = rng.random((B, 1))
    choice = (cdf < u).sum(axis=1)
    np.clip(choice, 0, A - 1, out=choice)
    # guard the float edge: never land on a masked slot
    bad = ~mask[np.arange(B), choice]
    if bad.any():
        last_legal = A - 1 - mask[:, ::-1].argmax(axis=1)
        choice[bad] = last_legal[bad]
    return choice


def dump_trajectories(path, kg: KnowledgeGraph, batch: EpisodeBatch) -> None:
    """CSV feed for qualitative path inspection."""
    import csv

    dlp = batch.dwarf_logp_matrix()
    glp = batch.giant_logp_matrix()
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query", "step", "giant_cluster", "giant_logp",
                    "dwarf_relation", "dwarf_entity", "dwarf_logp"])
        for i in range(batch.batch_size):
            query = (f"{kg.entities.token(int(batch.e_s[i]))},"
                     f"{kg.relations.token(int(batch.r_q[i]))}")
            for t in range(batch.horizon):
                w.writerow([
                    query, t + 1,
                    int(batch.clu_path[i, t + 1]), f"{glp[i, t]:.6f}",
                    kg.relations.token(int(batch.dwarf_rel[i, t])),
                    kg.entities.token(int(batch.ent_path[i, t + 1])),
                    f"{dlp[i, t]:.6f}",
                ])
