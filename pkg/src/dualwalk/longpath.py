"""Long-path experiment harness.

Short connecting paths for task triples are discovered by bi-directional
probing: sample an intermediate entity, BFS both halves, and keep the
concrete paths whose total edge count stays under the cutoff. Removing
every edge those paths traverse (inverse twins included, via the graph's
removal contract) forces the walkers to reason over longer routes; a
recovery variant instead keeps the graph intact and simply raises the
unroll length.

Self-loop edges never participate: they are MDP plumbing, not graph
structure, and must survive ablation.
"""

from __future__ import annotations

import csv
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .kg import KnowledgeGraph, Triple, write_triple_file

# a concrete path is a tuple of (source, relation, target) edges
Path_ = tuple[tuple[int, int, int], ...]


@dataclass
class ShortPathReport:
    paths: dict[Path_, int] = field(default_factory=dict)  # path -> visit count

    def add(self, path: Path_) -> None:
        self.paths[path] = self.paths.get(path, 0) + 1

    def edges(self) -> set[tuple[int, int, int]]:
        return {edge for path in self.paths for edge in path}

    def by_frequency(self) -> list[tuple[Path_, int]]:
        return sorted(self.paths.items(), key=lambda kv: (-kv[1], kv[0]))


def _bfs_distances(kg: KnowledgeGraph, start: int, no_op: int | None) -> np.ndarray:
    dist = np.full(kg.num_entities, -1, dtype=np.int64)
    dist[start] = 0
    queue = deque([start])
    while queue:
        e = queue.popleft()
        for rel, tgt in kg.full_outgoing(e):
            if rel == no_op or dist[tgt] >= 0:
                continue
            dist[tgt] = dist[e] + 1
            queue.append(tgt)
    return dist


def _paths_of_length(kg: KnowledgeGraph, source: int, target: int, length: int,
                     no_op: int | None) -> list[Path_]:
    """All concrete edge paths of exactly ``length`` from source to target."""
    if length == 0:
        return [()] if source == target else []
    out: list[Path_] = []
    stack: list[tuple[int, Path_]] = [(source, ())]
    while stack:
        e, prefix = stack.pop()
        remaining = length - len(prefix)
        for rel, tgt in kg.full_outgoing(e):
            if rel == no_op:
                continue
            nxt = prefix + ((e, rel, tgt),)
            if remaining == 1:
                if tgt == target:
                    out.append(nxt)
            else:
                stack.append((tgt, nxt))
    return out


def find_short_paths(
    kg: KnowledgeGraph,
    task_triples: list[Triple],
    repetitions: int = 50,
    max_edges: int = 2,
    seed: int = 0,
) -> ShortPathReport:
    """Bi-directional probe for short source-to-target paths.

    For each task triple, ``repetitions`` intermediates are sampled
    uniformly; when the BFS distances source->mid and mid->target sum to
    at most ``max_edges``, every concrete composition of shortest halves
    through that intermediate is recorded (so paths shorter than 3 edges
    at the default cutoff). Triples with no short connection contribute
    nothing.
    """
    rng = np.random.default_rng(seed)
    no_op = kg.no_op_relation
    report = ShortPathReport()
    for triple in task_triples:
        s, o = triple.source, triple.target
        d_from = _bfs_distances(kg, s, no_op)
        mids = rng.integers(0, kg.num_entities, size=repetitions)
        back_cache: dict[int, np.ndarray] = {}
        for mid in mids:
            mid = int(mid)
            d1 = int(d_from[mid])
            if d1 < 0 or d1 > max_edges:
                continue
            if mid not in back_cache:
                back_cache[mid] = _bfs_distances(kg, mid, no_op)
            d2 = int(back_cache[mid][o])
            if d2 < 0 or d1 + d2 > max_edges or d1 + d2 == 0:
                continue
            for first in _paths_of_length(kg, s, mid, d1, no_op):
                for second in _paths_of_length(kg, mid, o, d2, no_op):
                    report.add(first + second)
    return report


def remove_reported_edges(kg: KnowledgeGraph, report: ShortPathReport,
                          min_frequency: int = 1) -> int:
    """Remove every edge traversed by a reported path; returns distinct count.

    Inverse twins disappear with their partners through the graph's
    removal contract.
    """
    edges = {
        edge
        for path, freq in report.paths.items()
        if freq >= min_frequency
        for edge in path
    }
    for s, r, o in sorted(edges):
        if kg.has_edge(s, r, o):
            kg.remove_edge(Triple(s, r, o))
    return len(edges)


def write_removed_edges(path: str | Path, kg: KnowledgeGraph) -> None:
    triples = [Triple(s, r, o) for s, r, o in sorted(kg.removed_edges)]
    write_triple_file(path, kg, triples)


@dataclass
class LengthSweepResult:
    horizon: int
    metrics: dict[str, float]


def ablate_and_run(
    kg: KnowledgeGraph,
    task_triples: list[Triple],
    run_fn,
    horizons: list[int],
    repetitions: int = 50,
    max_edges: int = 2,
    seed: int = 0,
    recovery_mode: bool = False,
    csv_path: str | Path | None = None,
) -> list[LengthSweepResult]:
    """Run the metric callback at each horizon, with or without ablation.

    ``run_fn(kg, horizon) -> dict`` retrains/evaluates at one unroll
    length. In ablation mode, short paths are found and removed first and
    the graph is restored afterwards; recovery mode keeps the graph
    intact and only raises the horizon.
    """
    removed = 0
    try:
        if not recovery_mode:
            report = find_short_paths(kg, task_triples, repetitions, max_edges, seed)
            removed = remove_reported_edges(kg, report)
        results = []
        for horizon in horizons:
            metrics = run_fn(kg, horizon)
            results.append(LengthSweepResult(horizon=horizon, metrics=dict(metrics)))
    finally:
        if not recovery_mode:
            kg.restore_all()
    if csv_path is not None:
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["horizon", "metric", "value", "removed_edges", "mode"])
            mode = "recovery" if recovery_mode else "ablation"
            for res in results:
                for k, v in res.metrics.items():
                    w.writerow([res.horizon, k, f"{v:.6f}", removed, mode])
    return results
