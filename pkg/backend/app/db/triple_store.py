"""
Triple store for the app recommendation knowledge graph.

Handles:
- Entity dictionary (dense ids, one kind and label per entity)
- Signature-checked triple insertion (no duplicates, no SIMILAR self-loops)
- Head index N_v and CSR adjacency arrays for propagation
- Persistence to triples.tsv / entities.tsv / relations.tsv
"""

import os
from typing import Any, Dict, Iterable, List, Optional, Set, Tuple

import numpy as np
from loguru import logger

from app.exceptions import SchemaViolationError, UnknownEntityError
from app.models.schemas import (
    RELATION_ORDER,
    RELATION_SIGNATURES,
    EntityKind,
    RelationKind,
    Triple,
)


ENTITY_KINDS: List[EntityKind] = list(EntityKind)
_KIND_CODE = {kind: i for i, kind in enumerate(ENTITY_KINDS)}


def _escape(label: str) -> str:
    return label.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def _unescape(text: str) -> str:
    out = []
    it = iter(text)
    for ch in it:
        if ch == "\\":
            nxt = next(it, "")
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(nxt, nxt))
        else:
            out.append(ch)
    return "".join(out)


class KnowledgeGraph:
    """
    Directed heterogeneous graph of (head, relation, tail) triples.

    Entity ids are dense integers 0..|E|-1 in insertion order. The head
    index maps every entity v to N_v = {(r, t) | (v, r, t) in G}; leaves map
    to an empty list.
    """

    def __init__(self):
        self._kinds: List[EntityKind] = []
        self._labels: List[str] = []
        self._by_label: Dict[str, int] = {}
        self._triples: Set[Tuple[int, int, int]] = set()
        self._head_index: Dict[int, List[Tuple[RelationKind, int]]] = {}
        self._csr: Optional[Tuple[np.ndarray, np.ndarray, np.ndarray]] = None
        self._kind_array: Optional[np.ndarray] = None
        self._array: Optional[np.ndarray] = None

    # ===== ENTITIES =====

    def add_entity(self, kind: EntityKind, label: str) -> int:
        """Register an entity; re-adding the same label returns its id"""
        existing = self._by_label.get(label)
        if existing is not None:
            if self._kinds[existing] != kind:
                raise SchemaViolationError(
                    (existing, "-", existing),
                    f"label {label!r} already registered as {self._kinds[existing].value}",
                )
            return existing
        entity_id = len(self._kinds)
        self._kinds.append(kind)
        self._labels.append(label)
        self._by_label[label] = entity_id
        self._kind_array = None
        return entity_id

    @property
    def n_entities(self) -> int:
        return len(self._kinds)

    @property
    def n_relations(self) -> int:
        return len(RELATION_ORDER)

    def entity_id(self, label: str) -> int:
        try:
            return self._by_label[label]
        except KeyError:
            raise UnknownEntityError(f"unknown entity {label!r}") from None

    def has_entity(self, label: str) -> bool:
        return label in self._by_label

    def kind_of(self, entity_id: int) -> EntityKind:
        self._check_id(entity_id)
        return self._kinds[entity_id]

    def label_of(self, entity_id: int) -> str:
        self._check_id(entity_id)
        return self._labels[entity_id]

    def kind_codes(self) -> np.ndarray:
        if self._kind_array is None:
            self._kind_array = np.array([_KIND_CODE[k] for k in self._kinds], dtype=np.int64)
        return self._kind_array

    def entities_of_kind(self, kind: EntityKind) -> np.ndarray:
        """Ids of all entities of one kind, ascending"""
        return np.flatnonzero(self.kind_codes() == _KIND_CODE[kind])

    def _check_id(self, entity_id: int) -> None:
        if not 0 <= entity_id < len(self._kinds):
            raise UnknownEntityError(f"entity id {entity_id} out of range [0, {len(self._kinds)})")

    # ===== TRIPLES =====

    def add_triple(self, head: int, relation: RelationKind, tail: int) -> bool:
        """
        Insert one triple after checking it against its relation signature.

        Returns:
            False when the triple was already present
        """
        triple = (head, relation.value, tail)
        if not (0 <= head < len(self._kinds) and 0 <= tail < len(self._kinds)):
            raise SchemaViolationError(triple, "entity id out of range")
        head_kind, tail_kind = RELATION_SIGNATURES[relation]
        if self._kinds[head] != head_kind or self._kinds[tail] != tail_kind:
            raise SchemaViolationError(
                triple,
                f"{relation.value} expects ({head_kind.value}, {tail_kind.value}), "
                f"got ({self._kinds[head].value}, {self._kinds[tail].value})",
            )
        if relation.is_similarity and head == tail:
            raise SchemaViolationError(triple, "self-loop on a similarity relation")

        key = (head, relation.relation_id, tail)
        if key in self._triples:
            return False
        self._triples.add(key)
        self._head_index.setdefault(head, []).append((relation, tail))
        self._csr = None
        self._array = None
        return True

    def add_triples(self, triples: Iterable[Triple]) -> int:
        return sum(self.add_triple(t.head, t.relation, t.tail) for t in triples)

    @property
    def n_triples(self) -> int:
        return len(self._triples)

    def has_triple(self, head: int, relation: RelationKind, tail: int) -> bool:
        return (head, relation.relation_id, tail) in self._triples

    def triple_array(self) -> np.ndarray:
        """(n, 3) int64 array of (head, relation_id, tail), sorted lexicographically"""
        if self._array is None:
            if self._triples:
                self._array = np.array(sorted(self._triples), dtype=np.int64)
            else:
                self._array = np.zeros((0, 3), dtype=np.int64)
            self._array.flags.writeable = False
        return self._array

    def triples(self) -> List[Triple]:
        return [Triple(head=h, relation=RELATION_ORDER[r], tail=t) for h, r, t in self.triple_array().tolist()]

    def triples_of(self, relation: RelationKind) -> np.ndarray:
        arr = self.triple_array()
        return arr[arr[:, 1] == relation.relation_id]

    def neighbors(self, entity_id: int) -> List[Tuple[RelationKind, int]]:
        """N_v as (relation, tail) pairs, sorted by (relation id, tail)"""
        self._check_id(entity_id)
        return sorted(self._head_index.get(entity_id, []), key=lambda rt: (rt[0].relation_id, rt[1]))

    def adjacency(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        CSR view of the head index.

        Returns:
            (indptr, relation_ids, tails): the neighbours of v are
            relation_ids[indptr[v]:indptr[v+1]] / tails[...], sorted by
            (relation id, tail)
        """
        if self._csr is None:
            arr = self.triple_array()
            counts = np.bincount(arr[:, 0], minlength=self.n_entities) if len(arr) else np.zeros(self.n_entities, dtype=np.int64)
            indptr = np.zeros(self.n_entities + 1, dtype=np.int64)
            np.cumsum(counts, out=indptr[1:])
            self._csr = (indptr, arr[:, 1].copy(), arr[:, 2].copy())
        return self._csr

    def out_degree(self) -> np.ndarray:
        indptr, _, _ = self.adjacency()
        return np.diff(indptr)

    # ===== PERSISTENCE =====

    def save(self, out_dir: str) -> Dict[str, str]:
        """Write triples.tsv, entities.tsv and relations.tsv"""
        try:
            os.makedirs(out_dir, exist_ok=True)
            paths = {
                "triples": os.path.join(out_dir, "triples.tsv"),
                "entities": os.path.join(out_dir, "entities.tsv"),
                "relations": os.path.join(out_dir, "relations.tsv"),
            }
            with open(paths["triples"], "w", encoding="utf-8", newline="\n") as f:
                for h, r, t in self.triple_array().tolist():
                    f.write(f"{h}\t{r}\t{t}\n")
            with open(paths["entities"], "w", encoding="utf-8", newline="\n") as f:
                for i, (kind, label) in enumerate(zip(self._kinds, self._labels)):
                    f.write(f"{i}\t{kind.value}\t{_escape(label)}\n")
            with open(paths["relations"], "w", encoding="utf-8", newline="\n") as f:
                for relation in RELATION_ORDER:
                    f.write(f"{relation.relation_id}\t{relation.value}\n")
            logger.info(f"Saved knowledge graph ({self.n_entities} entities, {self.n_triples} triples) to {out_dir}")
            return paths
        except Exception as e:
            logger.error(f"Error saving knowledge graph: {e}")
            raise

    @classmethod
    def load(cls, out_dir: str) -> "KnowledgeGraph":
        """Rebuild a graph from the three TSV files; every triple is re-validated"""
        kg = cls()
        entities_path = os.path.join(out_dir, "entities.tsv")
        triples_path = os.path.join(out_dir, "triples.tsv")
        relations_path = os.path.join(out_dir, "relations.tsv")

        with open(relations_path, "r", encoding="utf-8") as f:
            stored = [line.rstrip("\n").split("\t") for line in f if line.strip()]
        expected = [[str(r.relation_id), r.value] for r in RELATION_ORDER]
        if stored != expected:
            raise SchemaViolationError((-1, "-", -1), f"{relations_path} does not match the relation table")

        with open(entities_path, "r", encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                idx, kind, label = line.rstrip("\n").split("\t", 2)
                entity_id = kg.add_entity(EntityKind(kind), _unescape(label))
                if entity_id != int(idx):
                    raise SchemaViolationError((int(idx), "-", int(idx)), "entity ids are not dense and ordered")

        with open(triples_path, "r", encoding="utf-8") as f:
            for line in f:
                if not line.strip():
                    continue
                h, r, t = (int(x) for x in line.split("\t"))
                kg.add_triple(h, RELATION_ORDER[r], t)

        logger.info(f"Loaded knowledge graph from {out_dir} ({kg.n_entities} entities, {kg.n_triples} triples)")
        return kg

    def get_stats(self) -> Dict[str, Any]:
        """Entity counts per kind and triple counts per relation"""
        kinds = self.kind_codes()
        arr = self.triple_array()
        rel_counts = np.bincount(arr[:, 1], minlength=self.n_relations) if len(arr) else np.zeros(self.n_relations, dtype=np.int64)
        return {
            "total_entities": self.n_entities,
            "total_triples": self.n_triples,
            "entities_by_kind": {k.value: int(np.sum(kinds == _KIND_CODE[k])) for k in ENTITY_KINDS},
            "triples_by_relation": {r.value: int(rel_counts[r.relation_id]) for r in RELATION_ORDER},
        }
