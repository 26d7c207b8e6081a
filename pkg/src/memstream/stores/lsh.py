"""Random-hyperplane LSH backend with exact cosine rescoring.

Each of T tables hashes an embedding to an H-bit signature (one bit per
hyperplane: 1 iff the projection is >= 0). Retrieval unions the query's
bucket across tables and rescores the collected candidates with exact
cosine, so result ordering is exact within whatever the buckets recall.
Hyperplanes are drawn once from the store seed; same seed, same buckets.
"""

from __future__ import annotations

from typing import Optional

import numpy as np

from ..errors import StoreError
from ..records import Candidate, MemoryRecord, RetrievalSignal
from .base import MemoryStore, cosine, fold_cosine, rank_candidates


def lsh_signature(vector: np.ndarray, planes: np.ndarray) -> int:
    """Pack sign bits of ``planes @ vector`` into an int, MSB = first plane."""
    projections = planes @ vector
    signature = 0
    for value in projections:
        signature = (signature << 1) | (1 if value >= 0 else 0)
    return signature


class LshStore(MemoryStore):
    name = "lsh_hash"

    def __init__(self, bits: int = 16, tables: int = 8, dim: int = 256,
                 seed: int = 0, **kwargs):
        super().__init__(embed_dim=dim, **kwargs)
        if bits < 1 or tables < 1:
            raise ValueError("bits and tables must both be >= 1")
        self.bits = bits
        self.tables = tables
        rng = np.random.default_rng(seed)
        self._planes = [rng.standard_normal((bits, dim)) for _ in range(tables)]
        self._buckets: list[dict[int, list[str]]] = [{} for _ in range(tables)]
        self._signatures: dict[str, list[int]] = {}

    def _add_indexes(self, record: MemoryRecord):
        if record.embedding is None:
            raise StoreError("lsh_hash stores embedded records only")
        sigs = []
        for t in range(self.tables):
            sig = lsh_signature(record.embedding, self._planes[t])
            self._buckets[t].setdefault(sig, []).append(record.record_id)
            sigs.append(sig)
        self._signatures[record.record_id] = sigs

    def _forget_indexes(self, record: MemoryRecord):
        sigs = self._signatures.pop(record.record_id, None)
        if not sigs:
            return
        for t, sig in enumerate(sigs):
            bucket = self._buckets[t].get(sig)
            if bucket:
                try:
                    bucket.remove(record.record_id)
                except ValueError:
                    pass
                if not bucket:
                    del self._buckets[t][sig]

    def _search(self, signal: RetrievalSignal, k: int,
                now: Optional[int]) -> list[Candidate]:
        if signal.embedding is None:
            # No embedding, no buckets to probe; deterministic empty result.
            return []
        candidate_ids: set[str] = set()
        for t in range(self.tables):
            sig = lsh_signature(signal.embedding, self._planes[t])
            candidate_ids.update(self._buckets[t].get(sig, ()))
        scored = []
        for rec_id in candidate_ids:
            record = self._records[rec_id]
            if not self._is_visible(record, now):
                continue
            scored.append((record, fold_cosine(cosine(signal.embedding, record.embedding))))
        return rank_candidates(scored, k, source="vector")

    def _index_sizes(self) -> dict[str, int]:
        return {
            "tables": self.tables,
            "buckets": sum(len(b) for b in self._buckets),
        }
