"""Beam-search inference on the entity walker plus ranking metrics.

Beam search keeps the top-B partial entity-level trajectories by
cumulative log-probability. The cluster walker is not searched: each beam
carries its own cluster-walker state advanced greedily, which keeps the
state sharing alive for scoring. After T steps, beams collapse to an
entity ranking (best trajectory per final entity); entities no beam
reached rank at infinity.

Ranks are filtered by default: other known-true answers are dropped from
above the gold answer. A gold's rank is 1 + the number of strictly
better scores, so ties never hurt the gold.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .env import DualEnv
from .kg import KnowledgeGraph


@dataclass
class RankedAnswers:
    """Entity ranking for one query, best-trajectory score per entity."""

    e_s: int
    r_q: int
    entities: np.ndarray               # sorted by descending log-prob, ties by id
    log_probs: np.ndarray              # float64, aligned with entities
    trails: dict[int, tuple] = field(default_factory=dict)  # entity -> (edges, clusters)

    def score_of(self, entity: int) -> float | None:
        hits = np.flatnonzero(self.entities == entity)
        return float(self.log_probs[hits[0]]) if len(hits) else None

    def rank_of(self, gold: int, known_true: set[int] | None = None,
                filtered: bool = True) -> float:
        """Optimistic rank of the gold answer; unreachable golds rank inf."""
        score = self.score_of(gold)
        if score is None:
            return math.inf
        exclude = (known_true or set()) - {gold} if filtered else set()
        better = 0
        for ent, lp in zip(self.entities, self.log_probs):
            if int(ent) == gold or int(ent) in exclude:
                continue
            if lp > score:
                better += 1
        return float(better + 1)


def beam_search(env: DualEnv, e_s: int, r_q: int, horizon: int,
                beam_width: int) -> RankedAnswers:
    """Top-``beam_width`` entity-level trajectories for the query."""
    policy = env.policy
    entities = np.array([e_s], dtype=np.int64)
    clusters = env.cmap.assignment[entities].copy()
    cum = np.zeros(1, dtype=np.float64)
    edge_trails: list[tuple] = [()]
    cluster_trails: list[tuple] = [()]
    hist = policy.init_histories(clusters, entities, np.array([r_q], dtype=np.int64))

    for _ in range(horizon):
        K = len(entities)
        rq_k = np.full(K, r_q, dtype=np.int64)

        # cluster walker advances greedily per beam
        g_cand, g_mask = env.giant_candidates(clusters)
        g_probs = policy.score_cluster_actions(clusters, hist.h_c, g_cand, g_mask)
        g_choice = g_probs.value.argmax(axis=1)
        greedy_clusters = g_cand[np.arange(K), g_choice]

        d_rels, d_tgts, d_mask = env.dwarf_candidates(entities)
        d_probs = policy.score_entity_actions(entities, rq_k, hist.h_e,
                                              d_rels, d_tgts, d_mask)
        p = d_probs.value.astype(np.float64)
        legal = d_mask & (p > 0)
        step_logp = np.full_like(p, -np.inf)
        np.log(p, out=step_logp, where=legal)
        total = cum[:, None] + step_logp

        flat = total.reshape(-1)
        beam_idx, cand_idx = np.divmod(np.arange(flat.size), total.shape[1])
        order = np.lexsort((cand_idx, beam_idx, -flat))
        order = order[np.isfinite(flat[order])]
        keep = order[:beam_width]
        parents = beam_idx[keep]
        chosen = cand_idx[keep]

        new_rels = d_rels[parents, chosen]
        new_entities = d_tgts[parents, chosen]
        new_clusters = greedy_clusters[parents]
        cum = flat[keep]
        edge_trails = [
            edge_trails[pi] + ((int(r), int(e)),)
            for pi, r, e in zip(parents, new_rels, new_entities)
        ]
        cluster_trails = [
            cluster_trails[pi] + (int(c),) for pi, c in zip(parents, new_clusters)
        ]

        parent_hist = hist.select_rows(parents)
        a_c = policy.action_embedding_clusters(new_clusters)
        a_e = policy.action_embedding_edges(new_rels, new_entities)
        hist = policy.step_histories(parent_hist, a_c, a_e)
        entities, clusters = new_entities, new_clusters

    best: dict[int, tuple[float, tuple, tuple]] = {}
    for i, (ent, lp) in enumerate(zip(entities, cum)):
        e = int(ent)
        if e not in best or lp > best[e][0]:
            best[e] = (float(lp), edge_trails[i], cluster_trails[i])
    ranked = sorted(best.items(), key=lambda kv: (-kv[1][0], kv[0]))
    return RankedAnswers(
        e_s=e_s, r_q=r_q,
        entities=np.array([e for e, _ in ranked], dtype=np.int64),
        log_probs=np.array([v[0] for _, v in ranked], dtype=np.float64),
        trails={e: (v[1], v[2]) for e, v in ranked},
    )


# -- link prediction ------------------------------------------------------------


def link_prediction_ranks(
    env: DualEnv,
    queries: list[tuple[int, int, int]],
    horizon: int,
    beam_width: int,
    filter_sets: dict[tuple[int, int], set[int]] | None = None,
    filtered: bool = True,
) -> list[float]:
    """Filtered rank of each (e_s, r_q, gold) query; memoizes per query pair."""
    cache: dict[tuple[int, int], RankedAnswers] = {}
    ranks = []
    for e_s, r_q, gold in queries:
        key = (e_s, r_q)
        if key not in cache:
            cache[key] = beam_search(env, e_s, r_q, horizon, beam_width)
        known = filter_sets.get(key, set()) if filter_sets else set()
        ranks.append(cache[key].rank_of(gold, known, filtered))
    return ranks


def link_prediction_metrics(ranks: list[float]) -> dict[str, float]:
    """Hits@1/3/10 and MRR; rank inf contributes zero everywhere."""
    n = max(len(ranks), 1)
    hits = {k: sum(1 for r in ranks if r <= k) / n for k in (1, 3, 10)}
    mrr = sum(1.0 / r for r in ranks if math.isfinite(r)) / n
    return {"hits1": hits[1], "hits3": hits[3], "hits10": hits[10], "mrr": mrr}


# -- fact prediction --------------------------------------------------------------


def average_precision(labels: list[bool]) -> float:
    """AP of a ranked candidate list; labels in rank order."""
    total = sum(labels)
    if total == 0:
        return 0.0
    hits = 0
    ap = 0.0
    for k, lab in enumerate(labels, start=1):
        if lab:
            hits += 1
            ap += hits / k
    return ap / total


def fact_prediction_map(
    env: DualEnv,
    tasks: list[tuple[int, int, list[int], list[int]]],
    horizon: int,
    beam_width: int,
    seed: int = 0,
) -> float:
    """MAP over queries of (e_s, r_q, positives, negatives).

    Candidates reached by some trajectory are ordered by best trajectory
    log-probability; unreached candidates follow in a seeded random
    permutation (the random-ordering fallback).
    """
    rng = np.random.default_rng(seed)
    aps = []
    for e_s, r_q, positives, negatives in tasks:
        ranked = beam_search(env, e_s, r_q, horizon, beam_width)
        cands = list(positives) + list(negatives)
        labels = [True] * len(positives) + [False] * len(negatives)
        scored = [(ranked.score_of(c), c, lab) for c, lab in zip(cands, labels)]
        reached = sorted(
            [(s, c, lab) for s, c, lab in scored if s is not None],
            key=lambda x: (-x[0], x[1]),
        )
        unreached = [(c, lab) for s, c, lab in scored if s is None]
        perm = rng.permutation(len(unreached))
        ordered_labels = [lab for _, _, lab in reached]
        ordered_labels += [unreached[i][1] for i in perm]
        aps.append(average_precision(ordered_labels))
    return float(np.mean(aps)) if aps else 0.0


# -- uniform random-walk baseline ---------------------------------------------------


def random_walk_ranking(kg: KnowledgeGraph, e_s: int, horizon: int,
                        rollouts: int, seed: int) -> RankedAnswers:
    """Rank final entities of uniform random walks by visit frequency."""
    rng = np.random.default_rng(seed)
    finals: dict[int, int] = {}
    for _ in range(rollouts):
        e = e_s
        for _ in range(horizon):
            acts = kg.outgoing_actions(e)
            if not acts:
                break
            e = acts[rng.integers(0, len(acts))][1]
        finals[e] = finals.get(e, 0) + 1
    ranked = sorted(finals.items(), key=lambda kv: (-kv[1], kv[0]))
    counts = np.array([c for _, c in ranked], dtype=np.float64)
    return RankedAnswers(
        e_s=e_s, r_q=-1,
        entities=np.array([e for e, _ in ranked], dtype=np.int64),
        log_probs=np.log(counts / rollouts),
    )


def random_walk_ranks(kg: KnowledgeGraph, queries, horizon, rollouts, seed,
                      filter_sets=None, filtered=True) -> list[float]:
    ranks = []
    for i, (e_s, r_q, gold) in enumerate(queries):
        ranked = random_walk_ranking(kg, e_s, horizon, rollouts, seed + i)
        known = filter_sets.get((e_s, r_q), set()) if filter_sets else set()
        ranks.append(ranked.rank_of(gold, known, filtered))
    return ranks


# -- results CSV -----------------------------------------------------------------------


def write_results_csv(path, rows: list[dict]) -> None:
    """Rows of (dataset, task, metric, value, beam, T, seed)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["dataset", "task", "metric", "value", "beam", "T", "seed"])
        for r in rows:
            w.writerow([r["dataset"], r["task"], r["metric"], f"{r['value']:.6f}",
                        r["beam"], r["T"], r["seed"]])
