"""Synthetic worlds with planted structure, used by the acceptance harness
and for quick end-to-end runs.

Both generators hold the query-relation edges out of the fact graph (they
appear only in the query splits), so the walkers must compose real edges
to reach answers.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np


@dataclass
class SynthWorld:
    facts: list[tuple[str, str, str]]
    train_queries: list[tuple[str, str, str]]
    dev_queries: list[tuple[str, str, str]]
    cluster_of_token: dict[str, int]
    num_clusters: int
    horizon: int
    notes: dict = field(default_factory=dict)

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        paths = {}
        for name, rows in (
            ("train", self.facts),
            ("train_queries", self.train_queries),
            ("dev", self.dev_queries),
        ):
            p = out / f"{name}.txt"
            with open(p, "w", encoding="utf-8") as fh:
                for s, r, o in rows:
                    fh.write(f"{s}\t{r}\t{o}\n")
            paths[name] = p
        return paths

    def assignment_for(self, kg) -> np.ndarray:
        """Planted cluster assignment mapped onto the graph's entity ids."""
        a = np.zeros(kg.num_entities, dtype=np.int64)
        for tok, c in self.cluster_of_token.items():
            a[kg.entities.id(tok)] = c
        return a


def composition_world(seed: int = 0, n_chains: int = 16, n_dev: int = 5) -> SynthWorld:
    """Planted two-hop rule: rq(a) = r2(r1(a)) over disjoint 3-node chains.

    50 entities: n_chains source/middle/target triples plus two isolated
    padding nodes. The rq edges exist only as queries. Two clusters:
    targets vs everything else.
    """
    rng = np.random.default_rng(seed)
    facts, queries = [], []
    cluster_of = {}
    for i in range(n_chains):
        a, b, c = f"a{i:02d}", f"b{i:02d}", f"c{i:02d}"
        facts.append((a, "r1", b))
        facts.append((b, "r2", c))
        queries.append((a, "rq", c))
        cluster_of[a] = 0
        cluster_of[b] = 0
        cluster_of[c] = 1
    pads = ["x0", "x1"]
    for p in pads:
        cluster_of[p] = 0
    # isolated pads still need vocabulary entries: self-referential filler fact
    facts.append((pads[0], "r1", pads[1]))

    order = rng.permutation(n_chains)
    dev_idx = set(order[:n_dev].tolist())
    dev = [q for i, q in enumerate(queries) if i in dev_idx]
    train_q = [q for i, q in enumerate(queries) if i not in dev_idx]
    return SynthWorld(
        facts=facts, train_queries=train_q, dev_queries=dev,
        cluster_of_token=cluster_of, num_clusters=2, horizon=3,
        notes={"rule": "rq = r1 then r2", "n_chains": n_chains},
    )


def chain_world(seed: int = 0, n_families: int = 8, heads_per_family: int = 19,
                trunk_len: int = 4, cross: int = 2, n_dev_per_family: int = 4) -> SynthWorld:
    """Fan-in chain families: answers exactly ``trunk_len + 1`` hops away.

    Each family has many head entities feeding a shared trunk that ends at
    the family's answer node, plus a decoy node hanging off the last trunk
    link. Every forward position also carries ``cross`` same-direction
    distractor edges into other families (each family's step relation is
    its own, so the pretrained geometry separates families), and inverse
    edges make wandering backwards easy. Reaching the right answer
    therefore needs five consecutive family-consistent forward choices.

    Clusters follow depth, not family: head / trunk tiers / answers /
    decoys, so a cluster-level walk that strides one tier per step mirrors
    exactly the progress an entity-level walk should make. 200 entities
    and 8 clusters at the defaults.
    """
    rng = np.random.default_rng(seed)
    facts, queries, cluster_of = [], [], {}
    for f in range(n_families):
        trunk = [f"f{f}m{t}" for t in range(1, trunk_len + 1)]
        tail, decoy = f"f{f}tail", f"f{f}x"
        heads = [f"f{f}h{h}" for h in range(heads_per_family)]
        for h in heads:
            cluster_of[h] = f % 2            # two head tiers
        for t, tok in enumerate(trunk):
            cluster_of[tok] = 2 + t          # one tier per trunk depth
        cluster_of[tail] = 2 + trunk_len     # answers
        cluster_of[decoy] = 3 + trunk_len    # decoys
        rel = f"step{f}"
        for h in heads:
            facts.append((h, rel, trunk[0]))
            queries.append((h, "rq", tail))
        for a, b in zip(trunk, trunk[1:]):
            facts.append((a, rel, b))
        facts.append((trunk[-1], rel, tail))
        facts.append((trunk[-1], rel, decoy))
    for f in range(n_families):
        others = [g for g in range(n_families) if g != f]
        for h in range(heads_per_family):
            for g in rng.choice(others, size=cross, replace=False):
                facts.append((f"f{f}h{h}", f"step{g}", f"f{g}m1"))
        for t in range(1, trunk_len):
            for g in rng.choice(others, size=cross, replace=False):
                facts.append((f"f{f}m{t}", f"step{g}", f"f{g}m{t + 1}"))
        for g in rng.choice(others, size=cross, replace=False):
            facts.append((f"f{f}m{trunk_len}", f"step{g}", f"f{g}tail"))

    dev, train_q = [], []
    for f in range(n_families):
        fam = [q for q in queries if q[0].startswith(f"f{f}h")]
        which = set(rng.permutation(len(fam))[:n_dev_per_family].tolist())
        for c, q in enumerate(fam):
            (dev if c in which else train_q).append(q)
    return SynthWorld(
        facts=facts, train_queries=train_q, dev_queries=dev,
        cluster_of_token=cluster_of, num_clusters=4 + trunk_len, horizon=trunk_len + 1,
        notes={"families": n_families, "hops": trunk_len + 1},
    )
