"""Triple store with adjacency index, inverse-edge and self-loop augmentation.

Entities and relations are dense 0-based integer ids. The id layout for
relations is fixed at load time:

    NO_OP (self-loop relation, only when self_loop=True)  -> id 0
    raw relations, lexicographically sorted               -> next block
    inverse relations, one per raw relation               -> final block

The adjacency index is built from the train split only and stores sorted
(relation, target) pairs per source entity so that action ordering is
deterministic. Edge removal (for the long-path harness) hides an edge and
its inverse twin from every adjacency answer until ``restore_all``.
"""

from __future__ import annotations

import bisect
import logging
import statistics
from dataclasses import dataclass, field
from pathlib import Path

log = logging.getLogger(__name__)

NO_OP_TOKEN = "NO_OP"
INVERSE_SUFFIX = "^-1"

SPLITS = ("train", "train_queries", "dev", "test")


class GraphFormatError(ValueError):
    """Raised for malformed triple files or vocabulary violations."""


@dataclass(frozen=True)
class Triple:
    source: int
    relation: int
    target: int


@dataclass
class GraphOptions:
    add_inverse: bool = True
    add_self_loop: bool = True
    max_out_degree: int = 200


@dataclass
class Vocab:
    """Bijective token<->id mapping."""

    token_to_id: dict[str, int] = field(default_factory=dict)
    id_to_token: list[str] = field(default_factory=list)

    def add(self, token: str) -> int:
        if token in self.token_to_id:
            return self.token_to_id[token]
        idx = len(self.id_to_token)
        self.token_to_id[token] = idx
        self.id_to_token.append(token)
        return idx

    def __len__(self) -> int:
        return len(self.id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self.token_to_id

    def id(self, token: str) -> int:
        return self.token_to_id[token]

    def token(self, idx: int) -> str:
        return self.id_to_token[idx]

    def dump(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for idx, tok in enumerate(self.id_to_token):
                fh.write(f"{tok}\t{idx}\n")


def _read_triple_file(path: str | Path) -> list[tuple[str, str, str]]:
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise GraphFormatError(
                    f"{path}:{lineno}: expected source<TAB>relation<TAB>target, got {line!r}"
                )
            out.append((parts[0], parts[1], parts[2]))
    return out


class KnowledgeGraph:
    """Entity/relation vocabularies plus an adjacency-indexed triple store.

    Immutable after load except for ``remove_edge``/``restore_all``, which
    must not run concurrently with readers.
    """

    def __init__(self, options: GraphOptions | None = None):
        self.options = options or GraphOptions()
        self.entities = Vocab()
        self.relations = Vocab()
        self.num_raw_relations = 0
        self.triples: dict[str, list[Triple]] = {s: [] for s in SPLITS}
        # adjacency: entity id -> sorted list of (relation id, target id)
        self._adj: list[list[tuple[int, int]]] = []
        self._pristine_adj: list[list[tuple[int, int]]] | None = None
        self._removed: set[tuple[int, int, int]] = set()
        self.removed_missing_count = 0
        self.version = 0  # bumped on remove/restore so adjacency caches invalidate

    # -- vocabulary layout -------------------------------------------------

    @property
    def no_op_relation(self) -> int | None:
        return 0 if self.options.add_self_loop else None

    def inverse_of(self, rel: int) -> int:
        """Inverse relation id; an involution. NO_OP is its own inverse."""
        base = 1 if self.options.add_self_loop else 0
        if self.options.add_self_loop and rel == 0:
            return 0
        if not self.options.add_inverse:
            raise ValueError("inverse relations not materialized")
        raw_end = base + self.num_raw_relations
        if rel < raw_end:
            return rel + self.num_raw_relations
        return rel - self.num_raw_relations

    def is_inverse_relation(self, rel: int) -> bool:
        base = 1 if self.options.add_self_loop else 0
        return self.options.add_inverse and rel >= base + self.num_raw_relations

    @property
    def num_entities(self) -> int:
        return len(self.entities)

    @property
    def num_relations(self) -> int:
        return len(self.relations)

    # -- loading -----------------------------------------------------------

    @classmethod
    def load(
        cls,
        paths: dict[str, str | Path],
        options: GraphOptions | None = None,
    ) -> "KnowledgeGraph":
        """Load splits from TSV triple files and build the train adjacency.

        ``paths`` maps split names (train required; train_queries/dev/test
        optional) to files. Vocabularies are the union of all splits;
        adjacency comes from the train split only.
        """
        kg = cls(options)
        if "train" not in paths:
            raise GraphFormatError("a 'train' split is required")
        raw: dict[str, list[tuple[str, str, str]]] = {}
        for split, path in paths.items():
            if split not in SPLITS:
                raise GraphFormatError(f"unknown split {split!r}")
            raw[split] = _read_triple_file(path)
        if not raw["train"]:
            raise GraphFormatError("train split is empty")

        ent_tokens = sorted(
            {t for trips in raw.values() for (s, _, o) in trips for t in (s, o)}
        )
        rel_tokens = sorted({r for trips in raw.values() for (_, r, _) in trips})
        if kg.options.add_self_loop and NO_OP_TOKEN in rel_tokens:
            raise GraphFormatError(f"relation token {NO_OP_TOKEN!r} is reserved")
        for tok in ent_tokens:
            kg.entities.add(tok)
        if kg.options.add_self_loop:
            kg.relations.add(NO_OP_TOKEN)
        for tok in rel_tokens:
            kg.relations.add(tok)
        kg.num_raw_relations = len(rel_tokens)
        if kg.options.add_inverse:
            for tok in rel_tokens:
                inv = tok + INVERSE_SUFFIX
                if inv in kg.relations:
                    raise GraphFormatError(f"relation token {inv!r} collides with inverse naming")
                kg.relations.add(inv)

        for split, trips in raw.items():
            seen: set[tuple[int, int, int]] = set()
            for s, r, o in trips:
                t = Triple(kg.entities.id(s), kg.relations.id(r), kg.entities.id(o))
                key = (t.source, t.relation, t.target)
                if key in seen:
                    continue
                seen.add(key)
                kg.triples[split].append(t)

        kg._build_adjacency()
        return kg

    def _build_adjacency(self) -> None:
        adj: list[list[tuple[int, int]]] = [[] for _ in range(self.num_entities)]
        edges: set[tuple[int, int, int]] = set()
        for t in self.triples["train"]:
            edges.add((t.source, t.relation, t.target))
            if self.options.add_inverse:
                edges.add((t.target, self.inverse_of(t.relation), t.source))
        if self.options.add_self_loop:
            for e in range(self.num_entities):
                edges.add((e, 0, e))
        for s, r, o in edges:
            adj[s].append((r, o))
        for lst in adj:
            lst.sort()
        self._adj = adj
        self._pristine_adj = None
        self._removed = set()

    def save(self, path: str | Path, split: str = "train") -> None:
        """Write a split back out as TSV (token form, original order-free)."""
        with open(path, "w", encoding="utf-8") as fh:
            for t in self.triples[split]:
                fh.write(
                    f"{self.entities.token(t.source)}\t"
                    f"{self.relations.token(t.relation)}\t"
                    f"{self.entities.token(t.target)}\n"
                )

    # -- adjacency queries ---------------------------------------------------

    def outgoing_actions(self, entity: int) -> list[tuple[int, int]]:
        """Sorted (relation, target) edges, truncated to max_out_degree.

        Truncation keeps the first entries after sorting; the self-loop has
        relation id 0 so it always survives.
        """
        lst = self._adj[entity]
        cap = self.options.max_out_degree
        if cap and len(lst) > cap:
            return lst[:cap]
        return lst

    def full_outgoing(self, entity: int) -> list[tuple[int, int]]:
        return self._adj[entity]

    def has_edge(self, source: int, relation: int, target: int) -> bool:
        lst = self._adj[source]
        i = bisect.bisect_left(lst, (relation, target))
        return i < len(lst) and lst[i] == (relation, target)

    def total_indexed_edges(self) -> int:
        return sum(len(lst) for lst in self._adj)

    def degree_stats(self) -> tuple[float, float]:
        """Mean and median out-degree over raw train facts (no augmentation)."""
        deg = [0] * self.num_entities
        for t in self.triples["train"]:
            deg[t.source] += 1
        return (sum(deg) / len(deg), float(statistics.median(deg)))

    # -- edge removal (long-path harness) -------------------------------------

    def remove_edge(self, triple: Triple) -> None:
        """Hide an edge and its inverse twin from adjacency answers."""
        self.version += 1
        if self._pristine_adj is None:
            self._pristine_adj = [list(lst) for lst in self._adj]
        targets = [(triple.source, triple.relation, triple.target)]
        if self.options.add_inverse:
            targets.append((triple.target, self.inverse_of(triple.relation), triple.source))
        for s, r, o in targets:
            if (s, r, o) in self._removed:
                continue
            lst = self._adj[s]
            i = bisect.bisect_left(lst, (r, o))
            if i < len(lst) and lst[i] == (r, o):
                del lst[i]
                self._removed.add((s, r, o))
            else:
                self.removed_missing_count += 1
                log.warning("remove_edge: (%d, %d, %d) not indexed", s, r, o)

    @property
    def removed_edges(self) -> set[tuple[int, int, int]]:
        return set(self._removed)

    def restore_all(self) -> None:
        """Revert every removal; adjacency returns to its as-loaded state."""
        self.version += 1
        if self._pristine_adj is not None:
            self._adj = [list(lst) for lst in self._pristine_adj]
            self._pristine_adj = None
        self._removed = set()

    # -- answer sets -----------------------------------------------------------

    def answer_sets(self, splits: tuple[str, ...]) -> dict[tuple[int, int], set[int]]:
        """(source, relation) -> set of targets over the given splits."""
        out: dict[tuple[int, int], set[int]] = {}
        for split in splits:
            for t in self.triples[split]:
                out.setdefault((t.source, t.relation), set()).add(t.target)
        return out


def write_triple_file(path: str | Path, kg: KnowledgeGraph, triples: list[Triple]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for t in triples:
            fh.write(
                f"{kg.entities.token(t.source)}\t"
                f"{kg.relations.token(t.relation)}\t"
                f"{kg.entities.token(t.target)}\n"
            )


def read_id_triples(path: str | Path, kg: KnowledgeGraph) -> list[Triple]:
    """Read a TSV triple file, mapping tokens through the graph's vocabularies."""
    out = []
    for s, r, o in _read_triple_file(path):
        for tok, vocab in ((s, kg.entities), (r, kg.relations), (o, kg.entities)):
            if tok not in vocab:
                raise GraphFormatError(f"{path}: unknown token {tok!r}")
        out.append(Triple(kg.entities.id(s), kg.relations.id(r), kg.entities.id(o)))
    return out
