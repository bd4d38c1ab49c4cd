"""Batched REINFORCE over both policies with entropy regularization and a
per-agent moving-average baseline.

One episode is one training query triple; an epoch shuffles all of them.
For every query in a batch, L rollouts are sampled, mutual rewards are
assigned to the finished episodes, and each agent's loss is

    -(1/B) sum_rows sum_t (R_t - b) * log pi(a_t)  -  beta * mean entropy

with B the rollout rows in the batch and b that agent's scalar baseline
(exponential moving average, decay lambda, of the batch-mean cumulative
reward; lambda = 0 degenerates to the batch mean). Both losses backprop
through one tape and a single Adam step updates both parameter sets.

A return-to-go variant (sum of step-t..T rewards as the step weight) is
available behind a config flag.
"""

from __future__ import annotations

import csv
import time
from dataclasses import dataclass, field, fields

import numpy as np

from . import autodiff as ad
from .clustering import ClusterMap
from .env import DualEnv, EpisodeBatch
from .evaluation import link_prediction_metrics, link_prediction_ranks
from .kg import KnowledgeGraph
from .policy import PolicyParameters
from .rewards import ConsistencyScorer, RewardVector, mutual_rewards
from .transe import EmbeddingStore


class TrainingDiverged(RuntimeError):
    def __init__(self, message, batch_queries=None):
        super().__init__(message)
        self.batch_queries = batch_queries


@dataclass
class TrainConfig:
    horizon: int = 3                 # T, maximum path length
    epochs: int = 200
    rollouts_train: int = 20         # L during training
    rollouts_eval: int = 100         # L during testing (rollout-based eval)
    batch_size: int = 128            # queries per update
    learning_rate: float = 0.001
    entropy_beta: float = 0.2
    baseline_decay: float = 0.2      # lambda
    seed: int = 0
    num_clusters: int = 75
    embed_dim: int = 50
    hidden_dim: int = 200
    beam_width: int = 50             # dev evaluation during training
    eval_every: int = 1
    return_to_go: bool = False
    disable_phi: bool = False
    partner_sharing: bool = True
    grad_clip_norm: float = 5.0

    @classmethod
    def from_dict(cls, raw: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        unknown = set(raw) - names
        if unknown:
            raise KeyError(f"unknown config keys: {sorted(unknown)}")
        return cls(**raw)

    def validate(self) -> None:
        positive = ("horizon", "epochs", "rollouts_train", "rollouts_eval",
                    "batch_size", "learning_rate", "num_clusters", "embed_dim",
                    "hidden_dim", "beam_width", "eval_every")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.baseline_decay < 1.0:
            raise ValueError("baseline_decay must be in [0, 1)")
        if self.entropy_beta < 0.0:
            raise ValueError("entropy_beta must be >= 0")


@dataclass
class BaselineState:
    giant: float = 0.0
    dwarf: float = 0.0

    def update(self, decay: float, mean_return_c: float, mean_return_e: float) -> None:
        self.giant = decay * self.giant + (1.0 - decay) * mean_return_c
        self.dwarf = decay * self.dwarf + (1.0 - decay) * mean_return_e


def positive_reward_rate(reward_vectors: list[RewardVector]) -> float:
    """Fraction of rollouts whose final entity-agent step reward is positive."""
    total = sum(rv.dwarf.shape[0] for rv in reward_vectors)
    if total == 0:
        raise ValueError("no rollouts")
    positive = sum(int((rv.dwarf[:, -1] > 0).sum()) for rv in reward_vectors)
    return positive / total


METRICS_HEADER = ["epoch", "loss_c", "loss_e", "positive_reward_rate",
                  "dev_hits1", "dev_mrr", "wall_time"]


class Trainer:
    def __init__(
        self,
        kg: KnowledgeGraph,
        cmap: ClusterMap,
        store: EmbeddingStore,
        policy: PolicyParameters,
        config: TrainConfig,
        train_queries: list[tuple[int, int, int]],
        dev_queries: list[tuple[int, int, int]] | None = None,
    ):
        config.validate()
        self.kg = kg
        self.cmap = cmap
        self.config = config
        self.policy = policy
        self.env = DualEnv(kg, cmap, policy)
        self.scorer = ConsistencyScorer(store, cmap)
        self.train_queries = list(train_queries)
        self.dev_queries = list(dev_queries or [])
        # reward answers come from the training splits only (no dev/test leak)
        self.train_answers = kg.answer_sets(("train", "train_queries"))
        self.dev_filter = kg.answer_sets(("train", "train_queries", "dev", "test"))
        self.baselines = BaselineState()
        self.optimizer = ad.AdamOptimizer(
            policy.tensors(), lr=config.learning_rate, clip_norm=config.grad_clip_norm
        )
        self.rng = np.random.default_rng(config.seed)
        if not self.train_queries:
            raise ValueError("no training queries")

    # -- one REINFORCE update ---------------------------------------------------

    def train_batch(self, queries: list[tuple[int, int, int]]) -> dict:
        cfg = self.config
        L = cfg.rollouts_train
        e_s = np.repeat([q[0] for q in queries], L)
        r_q = np.repeat([q[1] for q in queries], L)
        batch = self.env.run(e_s, r_q, cfg.horizon, mode="sample", rng=self.rng)

        answers = []
        empty = np.zeros(0, dtype=np.int64)
        for q in queries:
            found = self.train_answers.get((q[0], q[1]))
            arr = np.fromiter(found, dtype=np.int64) if found else empty
            answers.extend([arr] * L)
        rv = mutual_rewards(batch, answers, self.cmap, self.scorer,
                            disable_phi=cfg.disable_phi)

        loss_c = self._agent_loss(batch.giant_logp, batch.giant_entropy,
                                  rv.giant, self.baselines.giant)
        loss_e = self._agent_loss(batch.dwarf_logp, batch.dwarf_entropy,
                                  rv.dwarf, self.baselines.dwarf)
        loss_c_val = float(loss_c.value)
        loss_e_val = float(loss_e.value)
        if not (np.isfinite(loss_c_val) and np.isfinite(loss_e_val)):
            raise TrainingDiverged(
                f"non-finite loss (cluster {loss_c_val}, entity {loss_e_val})",
                batch_queries=queries,
            )
        ad.backward(ad.add(loss_c, loss_e))
        if not self.policy.partner_sharing:
            self.policy.mask_partner_gradients()
        self.optimizer.step()
        self.baselines.update(cfg.baseline_decay,
                              float(rv.giant.sum(axis=1).mean()),
                              float(rv.dwarf.sum(axis=1).mean()))
        return {"loss_c": loss_c_val, "loss_e": loss_e_val, "rewards": rv}

    def _agent_loss(self, logps, entropies, step_rewards: np.ndarray,
                    baseline: float) -> ad.Tensor:
        cfg = self.config
        B, T = step_rewards.shape
        if cfg.return_to_go:
            weights = step_rewards[:, ::-1].cumsum(axis=1)[:, ::-1] - baseline
        else:
            weights = step_rewards - baseline
        terms = []
        for t in range(T):
            w = ad.constant(weights[:, t], dtype=logps[t].dtype)
            terms.append(ad.tsum(ad.mul(logps[t], w)))
        reinforce = terms[0]
        for term in terms[1:]:
            reinforce = ad.add(reinforce, term)
        entropy = entropies[0]
        for ent in entropies[1:]:
            entropy = ad.add(entropy, ent)
        loss = ad.scale(reinforce, -1.0 / B)
        return ad.add(loss, ad.scale(ad.tsum(entropy), -cfg.entropy_beta / (B * T)))

    # -- full loop -----------------------------------------------------------------

    def train(self, metrics_path=None, checkpoint_path=None) -> list[dict]:
        cfg = self.config
        rows = []
        best_mrr = -1.0
        start = time.monotonic()
        writer = _MetricsWriter(metrics_path) if metrics_path else None
        try:
            for epoch in range(1, cfg.epochs + 1):
                order = self.rng.permutation(len(self.train_queries))
                epoch_rvs, losses_c, losses_e = [], [], []
                for lo in range(0, len(order), cfg.batch_size):
                    chunk = [self.train_queries[i] for i in order[lo : lo + cfg.batch_size]]
                    stats = self.train_batch(chunk)
                    epoch_rvs.append(stats["rewards"])
                    losses_c.append(stats["loss_c"])
                    losses_e.append(stats["loss_e"])

                row = {
                    "epoch": epoch,
                    "loss_c": float(np.mean(losses_c)),
                    "loss_e": float(np.mean(losses_e)),
                    "positive_reward_rate": positive_reward_rate(epoch_rvs),
                    "dev_hits1": "",
                    "dev_mrr": "",
                    "wall_time": time.monotonic() - start,
                }
                if self.dev_queries and epoch % cfg.eval_every == 0:
                    metrics = self.evaluate_dev()
                    row["dev_hits1"] = metrics["hits1"]
                    row["dev_mrr"] = metrics["mrr"]
                    if metrics["mrr"] > best_mrr:
                        best_mrr = metrics["mrr"]
                        if checkpoint_path:
                            self.policy.save(checkpoint_path,
                                             extra={"epoch": epoch, "dev_mrr": metrics["mrr"]})
                rows.append(row)
                if writer:
                    writer.write(row)
        finally:
            if writer:
                writer.close()
        if checkpoint_path and best_mrr < 0:
            self.policy.save(checkpoint_path, extra={"epoch": cfg.epochs})
        return rows

    def evaluate_dev(self) -> dict[str, float]:
        ranks = link_prediction_ranks(
            self.env, self.dev_queries, self.config.horizon,
            self.config.beam_width, filter_sets=self.dev_filter,
        )
        return link_prediction_metrics(ranks)


class _MetricsWriter:
    def __init__(self, path):
        self.fh = open(path, "w", newline="", encoding="utf-8")
        self.writer = csv.writer(self.fh, lineterminator="\n")
        self.writer.writerow(METRICS_HEADER)

    def write(self, row: dict) -> None:
        self.writer.writerow([
            row["epoch"], f"{row['loss_c']:.6f}", f"{row['loss_e']:.6f}",
            f"{row['positive_reward_rate']:.6f}",
            "" if row["dev_hits1"] == "" else f"{row['dev_hits1']:.6f}",
            "" if row["dev_mrr"] == "" else f"{row['dev_mrr']:.6f}",
            f"{row['wall_time']:.3f}",
        ])
        self.fh.flush()

    def close(self) -> None:
        self.fh.close()
