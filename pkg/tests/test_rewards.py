import numpy as np
import pytest

from dualwalk.clustering import ClusterMap
from dualwalk.env import EpisodeBatch
from dualwalk.rewards import (
    ConsistencyScorer,
    default_rewards,
    dump_reward_breakdown,
    mutual_rewards,
)
from dualwalk.transe import EmbeddingStore


def make_batch(ent_path, clu_path):
    ent_path = np.asarray(ent_path)
    clu_path = np.asarray(clu_path)
    B, Tp1 = ent_path.shape
    return EpisodeBatch(
        e_s=ent_path[:, 0], r_q=np.zeros(B, dtype=np.int64),
        ent_path=ent_path, clu_path=clu_path,
        dwarf_rel=np.zeros((B, Tp1 - 1), dtype=np.int64),
        dwarf_logp=[], dwarf_entropy=[],
        giant_stop=np.zeros((B, Tp1 - 1), bool),
        giant_logp=[], giant_entropy=[],
    )


def scorer_for(entity_vectors, assignment):
    store = EmbeddingStore(np.asarray(entity_vectors, dtype=np.float32),
                           np.zeros((1, len(entity_vectors[0])), dtype=np.float32))
    n_clusters = int(np.max(assignment)) + 1
    cmap = ClusterMap(np.asarray(assignment), np.zeros((n_clusters, len(entity_vectors[0]))))
    cmap.compute_embeddings(store)
    return store, cmap, ConsistencyScorer(store, cmap)


def test_default_rewards_cases():
    # entities 0,1 in cluster 0; 2,3 in cluster 1
    answers = [np.array([2])] * 3
    answer_clusters = [np.array([1])] * 3
    finals_e = np.array([2, 3, 0])  # correct; sibling of answer; wrong cluster
    finals_c = np.array([1, 1, 0])
    r_c, r_e = default_rewards(finals_e, finals_c, answers, answer_clusters)
    assert r_e.tolist() == [1.0, 0.0, 0.0]
    assert r_c.tolist() == [1.0, 1.0, 0.0]


def test_phi_cases():
    vecs = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0], [0.0, 0.0]]
    # cluster 0 = {0} mean (1,0); cluster 1 = {1} mean (0,1); cluster 2 = {2}; cluster 3 = {3}
    _, _, scorer = scorer_for(vecs, [0, 1, 2, 3])
    assert scorer.phi(np.array([0]), np.array([0]))[0] == pytest.approx(1.0)   # self
    assert scorer.phi(np.array([0]), np.array([1]))[0] == pytest.approx(0.0)   # orthogonal
    assert scorer.phi(np.array([0]), np.array([2]))[0] == pytest.approx(-1.0)  # antipodal
    assert scorer.phi(np.array([3]), np.array([0]))[0] == pytest.approx(0.0)   # zero norm
    assert scorer.zero_norm_count >= 1


def test_mutual_rewards_hand_cases():
    vecs = [[1.0, 0.0], [0.8, 0.6], [0.0, 1.0], [-0.5, np.sqrt(3) / 2]]
    store, cmap, scorer = scorer_for(vecs, [0, 0, 1, 1])

    # single row, T=1: visited pair (cluster 0 mean, entity 0)
    batch = make_batch([[0, 0]], [[0, 0]])
    # case r_c=1, r_e=1, phi known
    rv = mutual_rewards(batch, [np.array([0])], cmap, scorer)
    phi = scorer.phi(np.array([0]), np.array([0]))[0]
    assert rv.giant[0, 0] == pytest.approx(1.0 + phi)
    assert rv.dwarf[0, 0] == pytest.approx(1.0 + phi)

    # r_e = 0: partner term vanishes for the cluster agent
    rv2 = mutual_rewards(batch, [np.array([1])], cmap, scorer)
    assert rv2.r_e[0] == 0.0 and rv2.r_c[0] == 1.0
    assert np.allclose(rv2.giant[0], rv2.r_c[0])

    # exact plug-in: r_c=1, r_e=1, phi=0.8 -> both rewards 1.8
    # entity 1 has cosine 0.8 against the x-axis; make it a singleton answer
    _, cm3, sc3 = scorer_for([[1.0, 0.0], [0.8, 0.6]], [0, 1])
    b3 = make_batch([[0, 1]], [[0, 0]])  # visit pair (cluster 0, entity 1)
    rv3 = mutual_rewards(b3, [np.array([1])], cm3, sc3)
    assert rv3.r_e[0] == 1.0 and rv3.r_c[0] == 0.0  # answer 1 lives in cluster 1
    assert rv3.dwarf[0, 0] == pytest.approx(1.0)    # own term only
    assert rv3.giant[0, 0] == pytest.approx(0.8)    # 0 + 0.8 * 1

    # negative phi with r_c=0, r_e=1: R_e stays 1, R_c goes negative
    _, cm4, sc4 = scorer_for([[1.0, 0.0], [-0.5, np.sqrt(3) / 2]], [0, 1])
    b4 = make_batch([[0, 1]], [[0, 0]])
    rv4 = mutual_rewards(b4, [np.array([1])], cm4, sc4)
    assert rv4.dwarf[0, 0] == pytest.approx(1.0)
    assert rv4.giant[0, 0] == pytest.approx(-0.5)


def test_reward_algebra_randomized():
    rng = np.random.default_rng(0)
    n_ent, n_clu, T = 12, 4, 3
    vecs = rng.standard_normal((n_ent, 5))
    assignment = rng.integers(0, n_clu, size=n_ent)
    assignment[:n_clu] = np.arange(n_clu)
    store, cmap, scorer = scorer_for(vecs, assignment)

    B = 1000
    ent_path = rng.integers(0, n_ent, size=(B, T + 1))
    clu_path = np.zeros((B, T + 1), dtype=np.int64)
    clu_path[:, 0] = cmap.assignment[ent_path[:, 0]]
    clu_path[:, 1:] = rng.integers(0, n_clu, size=(B, T))
    batch = make_batch(ent_path, clu_path)
    answers = [rng.choice(n_ent, size=rng.integers(1, 3), replace=False) for _ in range(B)]
    rv = mutual_rewards(batch, answers, cmap, scorer)

    # direct recomputation against the definition
    for i in range(0, B, 37):
        r_e = float(ent_path[i, T] in answers[i])
        ans_clusters = set(cmap.assignment[answers[i]].tolist())
        r_c = float(clu_path[i, T] in ans_clusters)
        for t in range(T):
            c, e = clu_path[i, t + 1], ent_path[i, t + 1]
            cm = cmap.means[c]
            ev = store.entity[e].astype(np.float64)
            denom = np.linalg.norm(cm) * np.linalg.norm(ev)
            phi = float(cm @ ev / denom) if denom > 0 else 0.0
            assert rv.giant[i, t] == pytest.approx(r_c + phi * r_e, abs=1e-9)
            assert rv.dwarf[i, t] == pytest.approx(r_e + phi * r_c, abs=1e-9)

    # partner gating: a step reward differing from the own terminal reward
    # implies the partner succeeded
    changed_e = np.abs(rv.dwarf - rv.r_e[:, None]) > 1e-12
    assert np.all(rv.r_c[np.where(changed_e.any(axis=1))[0]] == 1.0)
    changed_c = np.abs(rv.giant - rv.r_c[:, None]) > 1e-12
    assert np.all(rv.r_e[np.where(changed_c.any(axis=1))[0]] == 1.0)

    # boundedness
    assert np.abs(rv.giant).max() <= 2.0 + 1e-9
    assert np.abs(rv.dwarf).max() <= 2.0 + 1e-9
    assert np.abs(rv.phi).max() <= 1.0 + 1e-9

    # phi = 0 reduction recovers the terminal-only scheme per step
    rv0 = mutual_rewards(batch, answers, cmap, scorer, disable_phi=True)
    assert np.allclose(rv0.giant, rv0.r_c[:, None])
    assert np.allclose(rv0.dwarf, rv0.r_e[:, None])


def test_reward_breakdown_csv(tmp_path):
    vecs = [[1.0, 0.0], [0.0, 1.0]]
    store, cmap, scorer = scorer_for(vecs, [0, 1])
    batch = make_batch([[0, 1], [1, 0]], [[0, 1], [1, 0]])
    rv = mutual_rewards(batch, [np.array([1]), np.array([0])], cmap, scorer)
    out = tmp_path / "rewards.csv"
    dump_reward_breakdown(out, rv)
    lines = out.read_text().strip().split("\n")
    assert lines[0] == "episode,t,phi,reward_cluster,reward_entity"
    assert len(lines) == 3
