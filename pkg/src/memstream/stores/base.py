"""Store contract and mechanics shared by every backend.

All backends guarantee, via this base class:

* deterministic record ids ("m000001", ...) in insertion order;
* a strictly-earlier visibility rule — retrieval at time ``now`` never
  returns a record with ``record.ts >= now`` (causality is enforced here
  again, independently of the protocol's request ordering);
* candidate ordering by descending score with record_id as the tie-break;
* scores normalized to [0, 1] (cosine folded via (1+cos)/2, ratio-style
  scores divided by the list maximum);
* access bookkeeping on hits: access_count += 1, last_access = now, and the
  retention strength multiplied by ``strength_gain``;
* tombstoning that cleans every index (subclasses hook _forget_indexes).

Insert and retrieve return a StageTiming covering exactly the state-update
or search work, so the orchestrator can attribute wall time per stage.
"""

from __future__ import annotations

import time
from abc import ABC, abstractmethod
from collections import Counter
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from ..errors import DimensionMismatch, EmptySignal, StoreError, UnknownRecord, UnsupportedBackend
from ..metrics import STAGE_SEARCH, STAGE_STATE_UPDATE
from ..records import (
    KIND_RAW,
    KIND_TRIPLET,
    Candidate,
    MemoryRecord,
    RetrievalSignal,
    StageTiming,
    StoreStats,
    TIER_FLAT,
    Triplet,
)
from ..text import index_tokens

Unit = Union[MemoryRecord, Triplet]


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    denom = float(np.linalg.norm(a)) * float(np.linalg.norm(b))
    if denom == 0:
        return 0.0
    return float(np.dot(a, b)) / denom


def fold_cosine(value: float) -> float:
    """Map cosine from [-1, 1] onto [0, 1]."""
    return (1.0 + value) / 2.0


def normalize_ratio(scored: list[tuple[MemoryRecord, float]]) -> list[tuple[MemoryRecord, float]]:
    """Divide positive raw scores by the list maximum."""
    if not scored:
        return scored
    top = max(score for _, score in scored)
    if top <= 0:
        return []
    return [(rec, score / top) for rec, score in scored]


def rank_candidates(scored: Iterable[tuple[MemoryRecord, float]], k: int,
                    source: str) -> list[Candidate]:
    ordered = sorted(scored, key=lambda item: (-item[1], item[0].record_id))
    return [Candidate(record=rec, score=score, source=source) for rec, score in ordered[:k]]


class MemoryStore(ABC):
    """Abstract backend. Subclasses implement _add_indexes/_forget_indexes/_search."""

    name = "abstract"
    supports_tiers = False
    supports_links = False

    def __init__(self, embed_dim: Optional[int] = None, strength_gain: float = 2.0):
        self._records: dict[str, MemoryRecord] = {}
        self._turn_map: dict[tuple[str, int], str] = {}
        self._counter = 0
        self.embed_dim = embed_dim
        self.strength_gain = strength_gain
        self.evicted_total = 0

    # ------------------------------------------------------------------
    # insertion
    # ------------------------------------------------------------------
    def insert(self, units: Sequence[Unit], now: int) -> tuple[list[str], StageTiming]:
        t0 = time.perf_counter_ns()
        ids = []
        for unit in units:
            record = self._coerce(unit, now)
            self._check_dim(record)
            self._counter += 1
            record.record_id = f"m{self._counter:06d}"
            self._records[record.record_id] = record
            if record.kind == KIND_RAW:
                self._turn_map[(record.session_id, record.turn_index)] = record.record_id
            self._add_indexes(record)
            self._after_add(record)
            ids.append(record.record_id)
        return ids, StageTiming(STAGE_STATE_UPDATE, time.perf_counter_ns() - t0)

    def _coerce(self, unit: Unit, now: int) -> MemoryRecord:
        if isinstance(unit, Triplet):
            return MemoryRecord(
                record_id="", text=unit.linearize(), ts=now, session_id="",
                kind=KIND_TRIPLET, triplet=unit, tier=self._default_tier(),
            )
        if not isinstance(unit, MemoryRecord):
            raise StoreError(f"cannot insert {type(unit).__name__}")
        if unit.record_id:
            raise StoreError("records arrive without ids; the store assigns them")
        unit.tier = self._default_tier()
        return unit

    def _check_dim(self, record: MemoryRecord):
        if record.embedding is None:
            return
        if self.embed_dim is None:
            self.embed_dim = int(record.embedding.shape[0])
        elif int(record.embedding.shape[0]) != self.embed_dim:
            raise DimensionMismatch(
                f"expected dim {self.embed_dim}, got {record.embedding.shape[0]}")

    def _default_tier(self) -> str:
        return TIER_FLAT

    def _after_add(self, record: MemoryRecord):
        """Capacity/eviction hook; default none."""

    # ------------------------------------------------------------------
    # retrieval
    # ------------------------------------------------------------------
    def retrieve(self, signal: RetrievalSignal, k: int,
                 now: Optional[int] = None) -> tuple[list[Candidate], StageTiming]:
        t0 = time.perf_counter_ns()
        if signal.skip:
            return [], StageTiming(STAGE_SEARCH, time.perf_counter_ns() - t0)
        if signal.is_empty():
            raise EmptySignal("retrieval signal carries no text, keywords or embedding")
        if k < 1:
            raise StoreError(f"k must be >= 1, got {k}")
        candidates = self._search(signal, k, now)
        for cand in candidates:
            self._touch(cand.record, now)
        return candidates, StageTiming(STAGE_SEARCH, time.perf_counter_ns() - t0)

    def _touch(self, record: MemoryRecord, now: Optional[int]):
        record.access_count += 1
        if now is not None and now > record.last_access:
            record.last_access = now
        record.strength *= self.strength_gain

    def _is_visible(self, record: MemoryRecord, now: Optional[int]) -> bool:
        if record.tombstoned:
            return False
        return now is None or record.ts < now

    def visible_records(self, now: Optional[int]) -> list[MemoryRecord]:
        return [r for r in self._records.values() if self._is_visible(r, now)]

    # ------------------------------------------------------------------
    # maintenance surface (used by consolidation policies)
    # ------------------------------------------------------------------
    def get(self, record_id: str) -> MemoryRecord:
        record = self._records.get(record_id)
        if record is None or record.tombstoned:
            raise UnknownRecord(record_id)
        return record

    def all_records(self) -> list[MemoryRecord]:
        """Live records in insertion order."""
        return [r for r in self._records.values() if not r.tombstoned]

    def remove(self, record_id: str):
        """Tombstone a record and drop it from every index."""
        record = self.get(record_id)
        record.tombstoned = True
        self._forget_indexes(record)
        if record.kind == KIND_RAW:
            key = (record.session_id, record.turn_index)
            if self._turn_map.get(key) == record_id:
                del self._turn_map[key]
        for other_id in list(record.links):
            other = self._records.get(other_id)
            if other is not None:
                other.links.discard(record_id)
        self.evicted_total += 1

    def reindex(self, record: MemoryRecord):
        """Refresh index entries after an in-place text/embedding change."""
        self._forget_indexes(record)
        self._check_dim(record)
        self._add_indexes(record)

    def migrate(self, record_id: str, to_tier: str):
        raise UnsupportedBackend(f"{self.name} has no tiers")

    def turn_neighbors(self, session_id: str, turn_index: int, window: int,
                       now: Optional[int] = None) -> list[MemoryRecord]:
        """Live, visible raw turns adjacent to (session_id, turn_index)."""
        out = []
        for delta in range(-window, window + 1):
            if delta == 0:
                continue
            rec_id = self._turn_map.get((session_id, turn_index + delta))
            if rec_id is None:
                continue
            record = self._records[rec_id]
            if self._is_visible(record, now):
                out.append(record)
        out.sort(key=lambda r: r.turn_index)
        return out

    # ------------------------------------------------------------------
    # introspection
    # ------------------------------------------------------------------
    def stats(self) -> StoreStats:
        live = self.all_records()
        return StoreStats(
            backend=self.name,
            record_count=len(live),
            tier_counts=dict(Counter(r.tier for r in live)),
            evicted_total=self.evicted_total,
            index_sizes=self._index_sizes(),
        )

    def dump(self) -> list[str]:
        """One JSON line per live record, insertion order (snapshot format)."""
        return [r.dump_line() for r in self.all_records()]

    # ------------------------------------------------------------------
    # subclass surface
    # ------------------------------------------------------------------
    @abstractmethod
    def _add_indexes(self, record: MemoryRecord):
        ...

    @abstractmethod
    def _forget_indexes(self, record: MemoryRecord):
        ...

    @abstractmethod
    def _search(self, signal: RetrievalSignal, k: int,
                now: Optional[int]) -> list[Candidate]:
        ...

    def _index_sizes(self) -> dict[str, int]:
        return {}


def lexical_scores(records: Iterable[MemoryRecord], signal: RetrievalSignal,
                   token_counts: dict[str, Counter]) -> list[tuple[MemoryRecord, float]]:
    """Term-frequency scores over pre-tokenized records; positive scores only."""
    query_tokens = set(index_tokens(signal.lexical_text()))
    if not query_tokens:
        return []
    scored = []
    for record in records:
        counts = token_counts.get(record.record_id)
        if not counts:
            continue
        score = float(sum(counts[t] for t in query_tokens if t in counts))
        if score > 0:
            scored.append((record, score))
    return scored
