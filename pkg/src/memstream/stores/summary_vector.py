"""Vector backend that maintains one rolling summary record per session.

Every raw turn is stored with its embedding; alongside, the store keeps a
session-level summary record whose text is the first sentence of each member
turn (capped) and whose embedding is the L2-normalized mean of the member
embeddings. The summary is rebuilt in place on every raw insert for that
session, keeping its record_id stable, so retrieval sees the session gist
and the raw turns side by side under plain cosine ranking.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..records import (
    KIND_RAW,
    KIND_SUMMARY,
    Candidate,
    MemoryRecord,
    RetrievalSignal,
)
from ..text import split_sentences
from .base import MemoryStore, cosine, fold_cosine, rank_candidates


def mean_embedding(vectors: list[np.ndarray]) -> Optional[np.ndarray]:
    """L2-normalized mean; None when no vectors or the mean is zero."""
    if not vectors:
        return None
    mean = np.mean(np.stack(vectors), axis=0)
    norm = float(np.linalg.norm(mean))
    if norm == 0.0:
        return None
    return (mean / norm).astype(np.float64)


class SummaryVectorStore(MemoryStore):
    name = "summary_vector"

    def __init__(self, summary_max_sentences: int = 12, **kwargs):
        super().__init__(**kwargs)
        self.summary_max_sentences = summary_max_sentences
        self._session_summary: dict[str, str] = {}  # session_id -> summary record_id
        self._session_members: dict[str, list[str]] = {}

    def _add_indexes(self, record: MemoryRecord):
        pass  # flat scan; no auxiliary index

    def _forget_indexes(self, record: MemoryRecord):
        pass

    def _after_add(self, record: MemoryRecord):
        if record.kind != KIND_RAW or not record.session_id:
            return
        members = self._session_members.setdefault(record.session_id, [])
        members.append(record.record_id)
        self._refresh_summary(record.session_id)

    def _summary_text(self, members: list[MemoryRecord]) -> str:
        leads = []
        for member in members:
            sentences = split_sentences(member.text)
            if sentences:
                leads.append(sentences[0])
            if len(leads) >= self.summary_max_sentences:
                break
        return " ".join(leads)

    def _refresh_summary(self, session_id: str):
        member_ids = self._session_members.get(session_id, [])
        members = [
            self._records[mid]
            for mid in member_ids
            if mid in self._records and not self._records[mid].tombstoned
        ]
        summary_id = self._session_summary.get(session_id)
        if summary_id is not None and self._records[summary_id].tombstoned:
            # summary was evicted externally; rebuild under a fresh id
            del self._session_summary[session_id]
            summary_id = None
        if not members:
            if summary_id is not None:
                # remove() drops the session mapping for summary records
                self.remove(summary_id)
            return
        text = self._summary_text(members)
        embedding = mean_embedding([m.embedding for m in members if m.embedding is not None])
        newest_ts = max(m.ts for m in members)
        if summary_id is None:
            self._counter += 1
            summary_id = f"m{self._counter:06d}"
            summary = MemoryRecord(
                record_id=summary_id, text=text, ts=newest_ts,
                session_id=session_id, kind=KIND_SUMMARY, embedding=embedding,
            )
            self._records[summary_id] = summary
            self._session_summary[session_id] = summary_id
        else:
            summary = self._records[summary_id]
            summary.text = text
            summary.embedding = embedding
            summary.ts = newest_ts
            if summary.last_access < newest_ts:
                summary.last_access = newest_ts
            self.reindex(summary)

    def remove(self, record_id: str):
        record = self._records.get(record_id)
        was_member = (
            record is not None
            and record.kind == KIND_RAW
            and record.session_id in self._session_members
        )
        session_id = record.session_id if was_member else None
        super().remove(record_id)
        if was_member:
            self._session_members[session_id] = [
                mid for mid in self._session_members[session_id] if mid != record_id
            ]
            self._refresh_summary(session_id)
        elif record is not None and record.kind == KIND_SUMMARY:
            for sid, sum_id in list(self._session_summary.items()):
                if sum_id == record_id:
                    del self._session_summary[sid]

    def _search(self, signal: RetrievalSignal, k: int,
                now: Optional[int]) -> list[Candidate]:
        if signal.embedding is None:
            return []
        scored = []
        for record in self.visible_records(now):
            if record.embedding is None:
                continue
            scored.append((record, fold_cosine(cosine(signal.embedding, record.embedding))))
        return rank_candidates(scored, k, source="vector")

    def _index_sizes(self) -> dict[str, int]:
        return {"sessions": len(self._session_summary)}
