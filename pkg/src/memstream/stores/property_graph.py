"""Graph-flavored backend: entity postings over triplet records plus cosine.

Triplet records index their subject and object entities; a query earns one
bonus point per distinct matched entity on top of the folded cosine, so
entity-anchored facts outrank near-duplicates in embedding space. Records
without a triplet (raw turns, summaries) still participate through the
cosine term alone. Link maintenance is supported so the link-evolution
consolidation pass can attach neighbors.
"""

from __future__ import annotations

from typing import Optional

from ..records import Candidate, MemoryRecord, RetrievalSignal
from ..text import index_tokens
from .base import MemoryStore, cosine, fold_cosine, normalize_ratio, rank_candidates


def entity_keys(record: MemoryRecord) -> set[str]:
    """Index tokens of the triplet's subject and object, empty for non-triplets."""
    if record.triplet is None:
        return set()
    keys = set(index_tokens(record.triplet.subject))
    keys.update(index_tokens(record.triplet.object))
    return keys


class PropertyGraphStore(MemoryStore):
    name = "property_graph"
    supports_links = True

    def __init__(self, **kwargs):
        super().__init__(**kwargs)
        self._entities: dict[str, set[str]] = {}
        self._entity_of: dict[str, set[str]] = {}

    def _add_indexes(self, record: MemoryRecord):
        keys = entity_keys(record)
        if keys:
            self._entity_of[record.record_id] = keys
            for key in keys:
                self._entities.setdefault(key, set()).add(record.record_id)

    def _forget_indexes(self, record: MemoryRecord):
        keys = self._entity_of.pop(record.record_id, None)
        if not keys:
            return
        for key in keys:
            members = self._entities.get(key)
            if members is not None:
                members.discard(record.record_id)
                if not members:
                    del self._entities[key]

    def _search(self, signal: RetrievalSignal, k: int,
                now: Optional[int]) -> list[Candidate]:
        query_entities = set(index_tokens(signal.lexical_text()))
        scored = []
        for record in self.visible_records(now):
            bonus = float(len(query_entities & self._entity_of.get(record.record_id, set())))
            sim = 0.0
            if signal.embedding is not None and record.embedding is not None:
                sim = fold_cosine(cosine(signal.embedding, record.embedding))
            score = bonus + sim
            if score > 0.0:
                scored.append((record, score))
        return rank_candidates(normalize_ratio(scored), k, source="graph")

    def _index_sizes(self) -> dict[str, int]:
        return {
            "entities": len(self._entities),
            "linked_records": sum(1 for r in self.all_records() if r.links),
        }
