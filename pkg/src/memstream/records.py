"""Data types shared by stores and lifecycle operators."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Optional

import numpy as np

# Tier labels. Tierless backends report everything under TIER_FLAT.
TIER_SHORT = "short_term"
TIER_MID = "mid_term"
TIER_LONG = "long_term"
TIER_FLAT = "flat"
TIER_ORDER = (TIER_SHORT, TIER_MID, TIER_LONG)

KIND_RAW = "raw_turn"
KIND_SUMMARY = "summary"
KIND_TRIPLET = "triplet"


def ts_to_iso(ts_us: int) -> str:
    """Microsecond epoch timestamp -> ISO-8601 UTC string."""
    dt = datetime.fromtimestamp(ts_us / 1_000_000, tz=timezone.utc)
    return dt.isoformat().replace("+00:00", "Z")


@dataclass(frozen=True)
class Triplet:
    """A (subject, relation, object) unit; entities are stored lowercase."""

    subject: str
    relation: str
    object: str
    source_record: str = ""

    def __post_init__(self):
        for name in ("subject", "relation", "object"):
            value = getattr(self, name)
            if not value or not value.strip():
                raise ValueError(f"triplet {name} must be non-empty")
            object.__setattr__(self, name, value.strip().lower())

    def linearize(self) -> str:
        return f"{self.subject} {self.relation} {self.object}"


@dataclass
class MemoryRecord:
    """One stored unit. Mutable: access stats and tier evolve in place."""

    record_id: str
    text: str
    ts: int  # microseconds since epoch
    session_id: str
    turn_index: int = 0
    speaker: Optional[str] = None
    kind: str = KIND_RAW
    embedding: Optional[np.ndarray] = None
    triplet: Optional[Triplet] = None
    tier: str = TIER_FLAT
    access_count: int = 0
    last_access: int = 0  # microseconds; >= ts always
    strength: float = 604_800.0  # retention time constant, seconds
    links: set = field(default_factory=set)
    tombstoned: bool = False

    def __post_init__(self):
        if self.last_access < self.ts:
            self.last_access = self.ts

    def dump_line(self) -> str:
        """JSON line mirroring the record fields; embedding as a float list."""
        payload = {
            "record_id": self.record_id,
            "text": self.text,
            "ts": self.ts,
            "session_id": self.session_id,
            "turn_index": self.turn_index,
            "speaker": self.speaker,
            "kind": self.kind,
            "tier": self.tier,
            "access_count": self.access_count,
            "last_access": self.last_access,
            "strength": self.strength,
            "links": sorted(self.links),
            "triplet": (
                [self.triplet.subject, self.triplet.relation, self.triplet.object]
                if self.triplet
                else None
            ),
            "embedding": (
                [float(x) for x in self.embedding] if self.embedding is not None else None
            ),
        }
        return json.dumps(payload, sort_keys=True)


@dataclass
class RetrievalSignal:
    """What the query-formulation stage hands to a store.

    At least one of raw_query / keywords / embedding must be present unless
    skip is set (stores raise EmptySignal otherwise).
    """

    raw_query: str = ""
    embedding: Optional[np.ndarray] = None
    keywords: tuple[str, ...] = ()
    sub_queries: tuple[str, ...] = ()
    skip: bool = False
    flags: tuple[str, ...] = ()

    def lexical_text(self) -> str:
        """Text used for lexical matching: keywords replace the raw query."""
        if self.keywords:
            return " ".join(self.keywords)
        return self.raw_query

    def is_empty(self) -> bool:
        has_text = bool(self.raw_query.strip()) if self.raw_query else False
        return not has_text and not self.keywords and self.embedding is None


@dataclass
class Candidate:
    """One retrieval hit: record reference plus a score normalized to [0, 1]."""

    record: MemoryRecord
    score: float
    source: str = ""  # which index produced it (diagnostic)

    @property
    def record_id(self) -> str:
        return self.record.record_id


@dataclass(frozen=True)
class StageTiming:
    """Wall time of one pipeline stage for one call, integer nanoseconds."""

    stage: str
    wall_ns: int

    @property
    def wall_us(self) -> float:
        return self.wall_ns / 1000.0


@dataclass
class StoreStats:
    backend: str
    record_count: int
    tier_counts: dict[str, int]
    evicted_total: int
    index_sizes: dict[str, int] = field(default_factory=dict)

    def as_dict(self) -> dict:
        return {
            "backend": self.backend,
            "record_count": self.record_count,
            "tier_counts": dict(sorted(self.tier_counts.items())),
            "evicted_total": self.evicted_total,
            "index_sizes": dict(sorted(self.index_sizes.items())),
        }


@dataclass
class ContextBundle:
    """What the integration stage hands to answer generation."""

    text: str
    provenance: tuple[tuple[str, float, int], ...]  # (record_id, score, record_ts)
    token_estimate: int

    @property
    def empty(self) -> bool:
        return not self.text
