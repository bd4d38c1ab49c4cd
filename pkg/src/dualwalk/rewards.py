"""Terminal rewards, the cluster/entity consistency score, and the
per-step mutual reinforcement rewards assigned to finished episodes.

Each agent's step reward is its own terminal reward plus the partner's
terminal reward weighted by the consistency of the step-t (cluster,
entity) pair, so an agent borrows signal only when its partner actually
succeeded, and only in proportion to how aligned their positions were.
The consistency weight is the raw cosine of the pretrained embeddings
(negative values are kept: inconsistent steps are penalized).
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .clustering import ClusterMap
from .env import EpisodeBatch
from .transe import EmbeddingStore


@dataclass
class RewardVector:
    """Per-step rewards for a batch; rows are rollouts, columns steps 1..T."""

    r_c: np.ndarray        # (B,) terminal cluster reward, 0/1
    r_e: np.ndarray        # (B,) terminal entity reward, 0/1
    phi: np.ndarray        # (B, T) consistency per visited pair
    giant: np.ndarray      # (B, T) R_c per step
    dwarf: np.ndarray      # (B, T) R_e per step


class ConsistencyScorer:
    """Cosine between pretrained cluster means and entity embeddings.

    Zero-norm vectors yield a consistency of 0 (counted, not raised).
    """

    def __init__(self, store: EmbeddingStore, cmap: ClusterMap):
        if cmap.means is None:
            cmap.compute_embeddings(store)
        self.cluster_unit = _unit_rows(cmap.means)
        self.entity_unit = _unit_rows(store.entity.astype(np.float64))
        self.zero_norm_count = int(
            (np.linalg.norm(cmap.means, axis=1) == 0).sum()
            + (np.linalg.norm(store.entity.astype(np.float64), axis=1) == 0).sum()
        )

    def phi(self, clusters: np.ndarray, entities: np.ndarray) -> np.ndarray:
        return (self.cluster_unit[clusters] * self.entity_unit[entities]).sum(axis=-1)


def _unit_rows(mat: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(mat, axis=1, keepdims=True)
    out = np.zeros_like(mat)
    np.divide(mat, norms, out=out, where=norms > 0)
    return out


def default_rewards(
    final_entities: np.ndarray,
    final_clusters: np.ndarray,
    answers: list[np.ndarray],
    answer_clusters: list[np.ndarray],
) -> tuple[np.ndarray, np.ndarray]:
    """Terminal 0/1 rewards: entity hit, and any-answer-in-final-cluster."""
    B = len(final_entities)
    r_e = np.zeros(B)
    r_c = np.zeros(B)
    for i in range(B):
        r_e[i] = 1.0 if final_entities[i] in answers[i] else 0.0
        r_c[i] = 1.0 if final_clusters[i] in answer_clusters[i] else 0.0
    return r_c, r_e


def mutual_rewards(
    batch: EpisodeBatch,
    answers: list[np.ndarray],
    cmap: ClusterMap,
    scorer: ConsistencyScorer,
    disable_phi: bool = False,
) -> RewardVector:
    """Per-step rewards for every rollout of a finished batch.

    ``answers`` holds the correct target ids per row (training: the train
    split's answer set for the row's query).
    """
    answer_clusters = [np.unique(cmap.assignment[a]) if len(a) else a for a in answers]
    r_c, r_e = default_rewards(
        batch.final_entities(), batch.final_clusters(), answers, answer_clusters
    )
    phi = scorer.phi(batch.clu_path[:, 1:], batch.ent_path[:, 1:])
    if disable_phi:
        phi = np.zeros_like(phi)
    giant = r_c[:, None] + phi * r_e[:, None]
    dwarf = r_e[:, None] + phi * r_c[:, None]
    return RewardVector(r_c=r_c, r_e=r_e, phi=phi, giant=giant, dwarf=dwarf)


def dump_reward_breakdown(path, rewards: RewardVector) -> None:
    """Per-episode, per-step reward components for diagnostics."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["episode", "t", "phi", "reward_cluster", "reward_entity"])
        B, T = rewards.phi.shape
        for i in range(B):
            for t in range(T):
                w.writerow([
                    i, t + 1, f"{rewards.phi[i, t]:.6f}",
                    f"{rewards.giant[i, t]:.6f}", f"{rewards.dwarf[i, t]:.6f}",
                ])
