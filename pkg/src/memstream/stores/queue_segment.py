"""Tiered backend: bounded short-term FIFO plus per-session mid-term segments.

New records enter the short-term tier. When the short-term queue exceeds its
bound, the oldest record overflows into the mid-term tier, where records
stay grouped by session (the segment structure is simply the tier label
plus session_id). Retrieval scans the union of all tiers: cosine scoring
when both the signal and a record carry embeddings, term-frequency
otherwise. Tier migration preserves records — nothing is evicted here.
"""

from __future__ import annotations

from collections import Counter, deque
from typing import Optional

from ..errors import UnsupportedBackend
from ..records import (
    Candidate,
    MemoryRecord,
    RetrievalSignal,
    TIER_MID,
    TIER_ORDER,
    TIER_SHORT,
)
from ..text import index_tokens
from .base import (
    MemoryStore,
    cosine,
    fold_cosine,
    lexical_scores,
    normalize_ratio,
    rank_candidates,
)


class QueueSegmentStore(MemoryStore):
    name = "queue_segment"
    supports_tiers = True

    def __init__(self, short_capacity: int = 32, **kwargs):
        super().__init__(**kwargs)
        if short_capacity < 1:
            raise ValueError(f"short_capacity must be >= 1, got {short_capacity}")
        self.short_capacity = short_capacity
        self._short: deque[str] = deque()
        self._tokens: dict[str, Counter] = {}

    def _default_tier(self) -> str:
        return TIER_SHORT

    def _add_indexes(self, record: MemoryRecord):
        self._tokens[record.record_id] = Counter(index_tokens(record.text))

    def _forget_indexes(self, record: MemoryRecord):
        self._tokens.pop(record.record_id, None)
        try:
            self._short.remove(record.record_id)
        except ValueError:
            pass

    def _after_add(self, record: MemoryRecord):
        self._short.append(record.record_id)
        while len(self._short) > self.short_capacity:
            overflow_id = self._short.popleft()
            self._records[overflow_id].tier = TIER_MID

    def reindex(self, record: MemoryRecord):
        # content changed in place: refresh the token map without running
        # _forget_indexes, which would evict the record from the short queue
        self._check_dim(record)
        self._add_indexes(record)

    def migrate(self, record_id: str, to_tier: str):
        """Move a record between tiers without losing it.

        Promoting into the bounded short-term tier may push its oldest
        member down to mid-term so the bound holds; record count is
        preserved either way.
        """
        if to_tier not in TIER_ORDER:
            raise UnsupportedBackend(f"unknown tier {to_tier!r}")
        record = self.get(record_id)
        if record.tier == to_tier:
            return
        if record.tier == TIER_SHORT:
            try:
                self._short.remove(record_id)
            except ValueError:
                pass
        record.tier = to_tier
        if to_tier == TIER_SHORT:
            self._short.append(record_id)
            while len(self._short) > self.short_capacity:
                demoted = self._short.popleft()
                self._records[demoted].tier = TIER_MID

    def _search(self, signal: RetrievalSignal, k: int,
                now: Optional[int]) -> list[Candidate]:
        visible = self.visible_records(now)
        if signal.embedding is not None:
            scored = [
                (rec, fold_cosine(cosine(signal.embedding, rec.embedding)))
                for rec in visible
                if rec.embedding is not None
            ]
            return rank_candidates(scored, k, source="vector")
        scored = normalize_ratio(lexical_scores(visible, signal, self._tokens))
        return rank_candidates(scored, k, source="lexical")

    def _index_sizes(self) -> dict[str, int]:
        segments = len({(r.session_id) for r in self.all_records() if r.tier == TIER_MID})
        return {"short_queue": len(self._short), "mid_segments": segments}
