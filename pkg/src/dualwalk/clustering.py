"""K-means partition of entities plus the cluster-level connection graph.

Clusters become the nodes the high-level walker moves over: two clusters
are connected iff some indexed entity edge bridges them. Each cluster's
action list also carries a STOP marker so the walker can stay put while
the entity-level walker catches up.

Cluster embeddings are the mean of member entity vectors (dim d), lifted
to 2d by self-concatenation so they match the action-embedding width of
the policy heads; consumers that compare clusters with entities (the
consistency score) use only the first d components.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .kg import KnowledgeGraph
from .transe import EmbeddingStore

STOP_ACTION = -1  # sentinel in cluster action lists


class ClusterMap:
    def __init__(self, assignment: np.ndarray, centroids: np.ndarray):
        self.assignment = np.asarray(assignment, dtype=np.int64)
        self.centroids = np.asarray(centroids, dtype=np.float64)
        self.num_clusters = centroids.shape[0]
        self.members: list[np.ndarray] = [
            np.flatnonzero(self.assignment == c) for c in range(self.num_clusters)
        ]
        self.means: np.ndarray | None = None       # (N, d) member means
        self.lifted: np.ndarray | None = None      # (N, 2d) [mean; mean]
        self.adjacency: list[list[int]] = [[] for _ in range(self.num_clusters)]

    def cluster_of(self, entity: int) -> int:
        return int(self.assignment[entity])

    def neighbors(self, cluster: int) -> list[int]:
        return self.adjacency[cluster]

    def actions(self, cluster: int) -> list[int]:
        """Sorted neighbor clusters plus STOP (exactly once, first)."""
        return [STOP_ACTION] + self.adjacency[cluster]

    def compute_embeddings(self, store: EmbeddingStore) -> None:
        d = store.dim
        means = np.zeros((self.num_clusters, d), dtype=np.float64)
        ent = store.entity.astype(np.float64)
        for c, idx in enumerate(self.members):
            if len(idx) == 0:
                raise ValueError(f"cluster {c} is empty")
            means[c] = ent[idx].mean(axis=0)
        self.means = means
        self.lifted = np.concatenate([means, means], axis=1)

    def cluster_embedding(self, cluster: int) -> np.ndarray:
        if self.lifted is None:
            raise ValueError("compute_embeddings was not called")
        return self.lifted[cluster]

    # -- dumps -------------------------------------------------------------

    def dump_assignment(self, path: str | Path, kg: KnowledgeGraph) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for e in range(kg.num_entities):
                fh.write(f"{kg.entities.token(e)}\t{self.assignment[e]}\n")

    def dump_cluster_graph(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for c, nbrs in enumerate(self.adjacency):
                for n in nbrs:
                    if c < n:
                        fh.write(f"{c}\t{n}\n")

    def save(self, path: str | Path) -> None:
        if self.means is None:
            raise ValueError("compute_embeddings was not called")
        edges = np.asarray(
            [(c, n) for c, nbrs in enumerate(self.adjacency) for n in nbrs if c < n],
            dtype=np.int64,
        ).reshape(-1, 2)
        np.savez(
            path,
            assignment=self.assignment,
            centroids=self.centroids,
            means=self.means,
            edges=edges,
        )

    @classmethod
    def load(cls, path: str | Path) -> "ClusterMap":
        data = np.load(path)
        cm = cls(data["assignment"], data["centroids"])
        cm.means = data["means"]
        cm.lifted = np.concatenate([cm.means, cm.means], axis=1)
        for c, n in data["edges"]:
            cm.adjacency[int(c)].append(int(n))
            cm.adjacency[int(n)].append(int(c))
        for lst in cm.adjacency:
            lst.sort()
        return cm


def kmeans(
    store: EmbeddingStore,
    num_clusters: int,
    max_iters: int = 100,
    tol: float = 1e-4,
    seed: int = 0,
    collect_inertia: list | None = None,
) -> ClusterMap:
    """Lloyd's iterations with k-means++ seeding and empty-cluster repair.

    Empty clusters are reseeded from the point farthest from its assigned
    centroid. Stops when the relative centroid shift drops below tol.
    """
    points = store.entity.astype(np.float64)
    n = points.shape[0]
    if num_clusters < 2:
        raise ValueError("need at least 2 clusters")
    if num_clusters > n:
        raise ValueError(f"{num_clusters} clusters > {n} entities")

    rng = np.random.default_rng(seed)
    centroids = _kmeanspp_init(points, num_clusters, rng)
    assignment = np.zeros(n, dtype=np.int64)

    for _ in range(max_iters):
        dists = _sq_dists(points, centroids)
        assignment = dists.argmin(axis=1)
        point_d2 = dists[np.arange(n), assignment]

        new_centroids = centroids.copy()
        for c in range(num_clusters):
            mask = assignment == c
            if mask.any():
                new_centroids[c] = points[mask].mean(axis=0)
            else:
                far = int(point_d2.argmax())
                new_centroids[c] = points[far]
                assignment[far] = c
                point_d2[far] = 0.0

        if collect_inertia is not None:
            collect_inertia.append(float(
                ((points - new_centroids[assignment]) ** 2).sum()
            ))
        shift = np.linalg.norm(new_centroids - centroids)
        scale = max(np.linalg.norm(centroids), 1e-12)
        centroids = new_centroids
        if shift / scale < tol:
            break

    dists = _sq_dists(points, centroids)
    assignment = dists.argmin(axis=1)
    # final repair pass: guarantee non-empty clusters
    point_d2 = dists[np.arange(n), assignment]
    for c in range(num_clusters):
        if not (assignment == c).any():
            far = int(point_d2.argmax())
            assignment[far] = c
            point_d2[far] = 0.0
    return ClusterMap(assignment, centroids)


def _sq_dists(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    # ||p - c||^2 = ||p||^2 - 2 p.c + ||c||^2
    p2 = (points**2).sum(axis=1, keepdims=True)
    c2 = (centroids**2).sum(axis=1)
    return np.maximum(p2 - 2.0 * points @ centroids.T + c2, 0.0)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]), dtype=np.float64)
    first = int(rng.integers(0, n))
    centroids[0] = points[first]
    d2 = ((points - centroids[0]) ** 2).sum(axis=1)
    for i in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(0, n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[i] = points[idx]
        d2 = np.minimum(d2, ((points - centroids[i]) ** 2).sum(axis=1))
    return centroids


def build_cluster_graph(kg: KnowledgeGraph, cmap: ClusterMap) -> None:
    """Connect clusters bridged by at least one indexed entity edge.

    Self-edges are excluded (STOP covers staying). Respects removed edges
    because it reads the live adjacency.
    """
    pairs: set[tuple[int, int]] = set()
    for e in range(kg.num_entities):
        ce = cmap.cluster_of(e)
        for rel, tgt in kg.full_outgoing(e):
            ct = cmap.cluster_of(tgt)
            if ct != ce:
                pairs.add((min(ce, ct), max(ce, ct)))
    adjacency: list[list[int]] = [[] for _ in range(cmap.num_clusters)]
    for a, b in pairs:
        adjacency[a].append(b)
        adjacency[b].append(a)
    for lst in adjacency:
        lst.sort()
    cmap.adjacency = adjacency


def load_assignment_file(path: str | Path, kg: KnowledgeGraph) -> np.ndarray:
    assignment = np.full(kg.num_entities, -1, dtype=np.int64)
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if not line:
                continue
            tok, cid = line.split("\t")
            assignment[kg.entities.id(tok)] = int(cid)
    if (assignment < 0).any():
        raise ValueError(f"{path}: assignment does not cover every entity")
    return assignment
