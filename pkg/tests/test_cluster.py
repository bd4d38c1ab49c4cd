import numpy as np
import pytest

from dualwalk.clustering import (
    STOP_ACTION,
    ClusterMap,
    build_cluster_graph,
    kmeans,
    load_assignment_file,
)
from dualwalk.kg import GraphOptions, KnowledgeGraph, Triple
from dualwalk.transe import EmbeddingStore


def store_from(points):
    pts = np.asarray(points, dtype=np.float32)
    return EmbeddingStore(pts, np.zeros((1, pts.shape[1]), dtype=np.float32))


def graph_from_rows(tmp_path, rows, **opts):
    path = tmp_path / "train.txt"
    with open(path, "w") as fh:
        for r in rows:
            fh.write("\t".join(r) + "\n")
    return KnowledgeGraph.load({"train": path}, GraphOptions(**opts) if opts else None)


def test_square_corners_two_clusters():
    # two tight pairs far apart
    store = store_from([[0, 0], [0, 1], [10, 0], [10, 1]])
    cmap = kmeans(store, 2, seed=0)
    a = cmap.assignment
    assert a[0] == a[1] and a[2] == a[3] and a[0] != a[2]


def test_one_cluster_per_point_zero_variance():
    rng = np.random.default_rng(0)
    pts = rng.standard_normal((6, 3))
    store = store_from(pts)
    cmap = kmeans(store, 6, seed=1)
    assert sorted(cmap.assignment.tolist()) == list(range(6))
    wcss = sum(
        ((pts[cmap.members[c]] - cmap.centroids[c]) ** 2).sum()
        for c in range(6)
    )
    assert wcss == pytest.approx(0.0, abs=1e-9)


def test_kmeans_monotone_inertia():
    rng = np.random.default_rng(3)
    store = store_from(rng.standard_normal((120, 8)))
    inertia = []
    kmeans(store, 5, seed=2, collect_inertia=inertia)
    assert all(b <= a + 1e-9 for a, b in zip(inertia, inertia[1:]))


def test_partition_covers_all_entities():
    rng = np.random.default_rng(4)
    store = store_from(rng.standard_normal((50, 4)))
    cmap = kmeans(store, 7, seed=3)
    sizes = [len(m) for m in cmap.members]
    assert sum(sizes) == 50
    assert all(s > 0 for s in sizes)


def test_kmeans_determinism_and_bounds():
    rng = np.random.default_rng(5)
    store = store_from(rng.standard_normal((30, 4)))
    a = kmeans(store, 4, seed=9).assignment
    b = kmeans(store, 4, seed=9).assignment
    assert np.array_equal(a, b)
    with pytest.raises(ValueError):
        kmeans(store, 31, seed=0)
    with pytest.raises(ValueError):
        kmeans(store, 1, seed=0)


def test_cluster_graph_bridging(tmp_path):
    kg = graph_from_rows(tmp_path, [("a", "r", "b"), ("c", "r", "d")])
    # a,c in cluster 0; b,d in cluster 1
    assignment = np.array([kg.entities.id(x) in (kg.entities.id("b"), kg.entities.id("d"))
                           for x in "abcd"], dtype=np.int64)
    cmap = ClusterMap(assignment, np.zeros((2, 1)))
    build_cluster_graph(kg, cmap)
    assert cmap.neighbors(0) == [1]
    assert cmap.neighbors(1) == [0]
    assert cmap.actions(0) == [STOP_ACTION, 1]


def test_cluster_graph_single_cluster_only_stop(tmp_path):
    kg = graph_from_rows(tmp_path, [("a", "r", "b")])
    cmap = ClusterMap(np.zeros(2, dtype=np.int64), np.zeros((2, 1)))
    # all entities in cluster 0; cluster 1 unused but present
    build_cluster_graph(kg, cmap)
    assert cmap.actions(0) == [STOP_ACTION]


def test_cluster_graph_respects_removed_bridge(tmp_path):
    kg = graph_from_rows(tmp_path, [("a", "r", "b")])
    a, b = kg.entities.id("a"), kg.entities.id("b")
    assignment = np.zeros(2, dtype=np.int64)
    assignment[b] = 1
    cmap = ClusterMap(assignment, np.zeros((2, 1)))
    build_cluster_graph(kg, cmap)
    assert cmap.neighbors(0) == [1]
    kg.remove_edge(Triple(a, kg.relations.id("r"), b))
    build_cluster_graph(kg, cmap)
    assert cmap.neighbors(0) == []
    kg.restore_all()


def test_cluster_graph_soundness_random(tmp_path):
    rng = np.random.default_rng(8)
    rows = []
    seen = set()
    while len(rows) < 40:
        s, o = rng.integers(0, 12, size=2)
        if s == o:
            continue
        key = (f"e{s}", f"r{rng.integers(0, 3)}", f"e{o}")
        if key not in seen:
            seen.add(key)
            rows.append(key)
    kg = graph_from_rows(tmp_path, rows)
    assignment = rng.integers(0, 4, size=kg.num_entities)
    cmap = ClusterMap(assignment, np.zeros((4, 1)))
    build_cluster_graph(kg, cmap)
    # every indexed edge's endpoint clusters are equal or connected
    for e in range(kg.num_entities):
        for _, tgt in kg.full_outgoing(e):
            ca, cb = cmap.cluster_of(e), cmap.cluster_of(tgt)
            assert ca == cb or cb in cmap.neighbors(ca)
    # every connection has a witnessing edge
    for c, nbrs in enumerate(cmap.adjacency):
        for nb in nbrs:
            witness = any(
                cmap.cluster_of(tgt) == nb
                for e in cmap.members[c]
                for _, tgt in kg.full_outgoing(e)
            ) or any(
                cmap.cluster_of(tgt) == c
                for e in cmap.members[nb]
                for _, tgt in kg.full_outgoing(e)
            )
            assert witness


def test_cluster_embeddings():
    pts = np.array([[1.0, 2.0], [-1.0, -2.0], [3.0, 0.0], [1.0, 1.0], [2.0, 2.0]])
    store = store_from(pts)
    assignment = np.array([0, 0, 1, 2, 2])
    cmap = ClusterMap(assignment, np.zeros((3, 2)))
    cmap.compute_embeddings(store)
    # opposite pair -> zero mean
    assert np.allclose(cmap.means[0], 0.0)
    # singleton -> its own embedding, lifted to 2d
    assert np.allclose(cmap.cluster_embedding(1), [3.0, 0.0, 3.0, 0.0])
    # mean verified against direct summation
    direct = (pts[3] + pts[4]) / 2.0
    assert np.allclose(cmap.means[2], direct)
    assert cmap.lifted.shape == (3, 4)


def test_dump_and_reload(tmp_path):
    kg = graph_from_rows(tmp_path, [("a", "r", "b"), ("b", "r", "c")])
    rng = np.random.default_rng(1)
    store = EmbeddingStore(
        rng.standard_normal((3, 4)).astype(np.float32),
        rng.standard_normal((5, 4)).astype(np.float32),
    )
    cmap = kmeans(store, 2, seed=0)
    build_cluster_graph(kg, cmap)
    cmap.compute_embeddings(store)

    cmap.dump_assignment(tmp_path / "assign.tsv", kg)
    back = load_assignment_file(tmp_path / "assign.tsv", kg)
    assert np.array_equal(back, cmap.assignment)

    cmap.dump_cluster_graph(tmp_path / "cgraph.tsv")

    cmap.save(tmp_path / "clusters.npz")
    loaded = ClusterMap.load(tmp_path / "clusters.npz")
    assert np.array_equal(loaded.assignment, cmap.assignment)
    assert loaded.adjacency == cmap.adjacency
    assert np.allclose(loaded.lifted, cmap.lifted)
