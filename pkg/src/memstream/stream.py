"""Stream model: interleaved insert/retrieve request sequences.

A stream is a flat, timestamp-ordered sequence of requests. Inserts carry
conversation turns; retrieves carry queries with gold answers. Causality is
purely an ordering property: a retrieve placed at timestamp T may observe
only inserts with strictly earlier timestamps (ties are NOT visible — the
stores enforce the same rule again with a visibility filter).

Timestamps are integer microseconds since the epoch. Synthetic workloads
use logical ticks (request index * 1 second). Equal-timestamp requests are
ordered (inserts first, then retrieves) and tie-broken by
(session_id lexicographic, turn_index).

Validation findings are data, not exceptions: validate_stream returns every
violation it can find rather than stopping at the first.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Union

from .errors import DanglingEvidence, InvalidGap, MissingTimestamp, SchemaError

KIND_INSERT = "insert"
KIND_RETRIEVE = "retrieve"

TICK_US = 1_000_000  # one logical tick = one second


def logical_tick(index: int) -> int:
    return index * TICK_US


@dataclass(frozen=True)
class InsertPayload:
    context: str
    session_id: str
    speaker: Optional[str] = None
    turn_index: int = 0

    def __post_init__(self):
        if not self.context or not self.context.strip():
            raise ValueError("insert context must be non-empty after trimming")
        if not self.session_id:
            raise ValueError("insert session_id must be non-empty")
        if self.turn_index < 0:
            raise ValueError("turn_index must be >= 0")


@dataclass(frozen=True)
class RetrievePayload:
    query: str
    gold_answer: str
    query_id: str
    category: str = "unknown"
    session_id: str = ""

    def __post_init__(self):
        if not self.query or not self.query.strip():
            raise ValueError("query must be non-empty after trimming")
        if not self.query_id:
            raise ValueError("query_id must be non-empty")
        if not self.gold_answer and self.category != "abstention":
            raise ValueError("empty gold_answer is only legal for category='abstention'")


Payload = Union[InsertPayload, RetrievePayload]


@dataclass(frozen=True)
class Request:
    seq: int
    ts: int  # microseconds since epoch
    kind: str
    payload: Payload


@dataclass(frozen=True)
class StreamManifest:
    requests: tuple[Request, ...]
    source: str = "unknown"

    @property
    def insert_count(self) -> int:
        return sum(1 for r in self.requests if r.kind == KIND_INSERT)

    @property
    def retrieve_count(self) -> int:
        return sum(1 for r in self.requests if r.kind == KIND_RETRIEVE)


# ---------------------------------------------------------------------------
# Inputs to the serializer
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Turn:
    text: str
    ts: Optional[int] = None
    speaker: Optional[str] = None
    turn_index: Optional[int] = None  # defaults to its position in the session


@dataclass(frozen=True)
class SessionTurns:
    session_id: str
    turns: tuple[Turn, ...]
    base_ts: Optional[int] = None  # fallback clock: base + turn_index ticks


@dataclass(frozen=True)
class AfterEvidence:
    """Place the query immediately after its latest evidence insert."""

    evidence: tuple[tuple[str, int], ...]  # (session_id, turn_index) pairs


@dataclass(frozen=True)
class AtFraction:
    """Place the query right after a fraction of all inserts has streamed."""

    fraction: float


@dataclass(frozen=True)
class AfterCount:
    """Place the query right after the nth insert (1-based, clamped)."""

    count: int


Trigger = Union[AfterEvidence, AtFraction, AfterCount]


@dataclass(frozen=True)
class QuerySpec:
    payload: RetrievePayload
    trigger: Trigger


# ---------------------------------------------------------------------------
# Serialization into a causal stream
# ---------------------------------------------------------------------------

def serialize_stream(sessions: Iterable[SessionTurns],
                     queries: Iterable[QuerySpec] = (),
                     source: str = "inline") -> StreamManifest:
    """Lay sessions and triggered queries out as one causal request stream.

    Each query's trigger resolves to a timestamp strictly greater than its
    anchor insert's, so evidence is always strictly earlier than the query
    that needs it. Raises MissingTimestamp, DanglingEvidence, or SchemaError
    on malformed input.
    """
    inserts: list[tuple[int, str, int, InsertPayload]] = []  # (ts, sid, ti, payload)
    seen_keys: set[tuple[str, int]] = set()
    for session in sessions:
        for position, turn in enumerate(session.turns):
            turn_index = position if turn.turn_index is None else turn.turn_index
            ts = turn.ts
            if ts is None:
                if session.base_ts is None:
                    raise MissingTimestamp(
                        f"turn {turn_index} of session {session.session_id!r} has no "
                        "timestamp and the session has no base_ts"
                    )
                ts = session.base_ts + turn_index * TICK_US
            key = (session.session_id, turn_index)
            if key in seen_keys:
                raise SchemaError(f"duplicate turn key {key}")
            seen_keys.add(key)
            inserts.append((ts, session.session_id, turn_index,
                            InsertPayload(context=turn.text,
                                          session_id=session.session_id,
                                          speaker=turn.speaker,
                                          turn_index=turn_index)))

    inserts.sort(key=lambda item: (item[0], item[1], item[2]))
    by_key = {(sid, ti): ts for ts, sid, ti, _ in inserts}

    resolved: list[tuple[int, RetrievePayload]] = []
    for spec in queries:
        trigger = spec.trigger
        if isinstance(trigger, AfterEvidence):
            if not trigger.evidence:
                raise DanglingEvidence(f"query {spec.payload.query_id!r} has no evidence")
            try:
                anchor_ts = max(by_key[key] for key in trigger.evidence)
            except KeyError as exc:
                raise DanglingEvidence(
                    f"query {spec.payload.query_id!r} references missing turn {exc.args[0]}"
                ) from exc
        elif isinstance(trigger, AtFraction):
            if not 0 < trigger.fraction <= 1:
                raise SchemaError(f"fraction out of (0, 1]: {trigger.fraction}")
            if not inserts:
                raise DanglingEvidence("fraction trigger on a stream with no inserts")
            idx = max(1, math.ceil(trigger.fraction * len(inserts)))
            anchor_ts = inserts[idx - 1][0]
        elif isinstance(trigger, AfterCount):
            if not inserts:
                raise DanglingEvidence("count trigger on a stream with no inserts")
            idx = min(max(1, trigger.count), len(inserts))
            anchor_ts = inserts[idx - 1][0]
        else:
            raise SchemaError(f"unknown trigger type: {type(trigger).__name__}")
        resolved.append((anchor_ts + 1, spec.payload))

    merged: list[tuple[tuple, str, int, Payload]] = []
    for ts, sid, ti, payload in inserts:
        merged.append(((ts, 0, sid, ti), KIND_INSERT, ts, payload))
    for ts, payload in resolved:
        merged.append(((ts, 1, payload.query_id, 0), KIND_RETRIEVE, ts, payload))
    merged.sort(key=lambda item: item[0])

    requests = tuple(
        Request(seq=i, ts=ts, kind=kind, payload=payload)
        for i, (_, kind, ts, payload) in enumerate(merged)
    )
    return StreamManifest(requests=requests, source=source)


# ---------------------------------------------------------------------------
# Validation (violations are data)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    index: int
    kind: str
    detail: str


@dataclass
class ValidationReport:
    violations: list[Violation] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_stream(manifest: StreamManifest) -> ValidationReport:
    report = ValidationReport()
    seen_seq: set[int] = set()
    prev_ts: Optional[int] = None
    prev_seq: Optional[int] = None
    for i, request in enumerate(manifest.requests):
        if request.seq in seen_seq:
            report.violations.append(Violation(i, "seq_duplicate",
                                               f"seq {request.seq} repeats"))
        seen_seq.add(request.seq)
        if prev_seq is not None and request.seq <= prev_seq:
            report.violations.append(Violation(i, "seq_order",
                                               f"seq {request.seq} after {prev_seq}"))
        prev_seq = request.seq
        if prev_ts is not None and request.ts < prev_ts:
            report.violations.append(Violation(i, "ts_order",
                                               f"ts {request.ts} after {prev_ts}"))
        prev_ts = request.ts
        expected = InsertPayload if request.kind == KIND_INSERT else (
            RetrievePayload if request.kind == KIND_RETRIEVE else None)
        if expected is None:
            report.violations.append(Violation(i, "kind_unknown",
                                               f"kind {request.kind!r}"))
        elif not isinstance(request.payload, expected):
            report.violations.append(Violation(
                i, "payload_mismatch",
                f"kind {request.kind} with {type(request.payload).__name__}"))
    return report


# ---------------------------------------------------------------------------
# Concatenation
# ---------------------------------------------------------------------------

def concat_streams(manifests: list[StreamManifest], gap_us: int = TICK_US) -> StreamManifest:
    """Chain manifests on one timeline.

    Later manifests are shifted so each starts at least gap_us after the
    previous one ends. With more than one input, session_ids and query_ids
    get a 'k/' namespace prefix so identically named sessions stay
    distinct; a single input comes back identical modulo seq renumbering.
    """
    if gap_us < 0:
        raise InvalidGap(f"gap must be >= 0, got {gap_us}")
    if not manifests:
        return StreamManifest(requests=(), source="concat")
    if len(manifests) == 1:
        renumbered = tuple(
            Request(seq=i, ts=r.ts, kind=r.kind, payload=r.payload)
            for i, r in enumerate(manifests[0].requests)
        )
        return StreamManifest(requests=renumbered, source=manifests[0].source)

    out: list[Request] = []
    clock_end: Optional[int] = None
    for k, manifest in enumerate(manifests):
        if not manifest.requests:
            continue
        first_ts = manifest.requests[0].ts
        shift = 0 if clock_end is None else max(0, clock_end + gap_us - first_ts)
        for request in manifest.requests:
            payload = request.payload
            if isinstance(payload, InsertPayload):
                payload = InsertPayload(context=payload.context,
                                        session_id=f"{k}/{payload.session_id}",
                                        speaker=payload.speaker,
                                        turn_index=payload.turn_index)
            else:
                payload = RetrievePayload(query=payload.query,
                                          gold_answer=payload.gold_answer,
                                          query_id=f"{k}/{payload.query_id}",
                                          category=payload.category,
                                          session_id=(f"{k}/{payload.session_id}"
                                                      if payload.session_id else ""))
            out.append(Request(seq=len(out), ts=request.ts + shift,
                               kind=request.kind, payload=payload))
        clock_end = out[-1].ts
    return StreamManifest(requests=tuple(out), source="concat")


# ---------------------------------------------------------------------------
# Wire format (line-delimited JSON, UTF-8)
# ---------------------------------------------------------------------------

def request_to_line(request: Request) -> str:
    row: dict = {"seq": request.seq, "ts_us": request.ts, "kind": request.kind}
    payload = request.payload
    if isinstance(payload, InsertPayload):
        row["session_id"] = payload.session_id
        row["turn_index"] = payload.turn_index
        row["context"] = payload.context
        if payload.speaker is not None:
            row["speaker"] = payload.speaker
    else:
        row["session_id"] = payload.session_id
        row["query"] = payload.query
        row["gold_answer"] = payload.gold_answer
        row["category"] = payload.category
        row["query_id"] = payload.query_id
    return json.dumps(row, sort_keys=True, ensure_ascii=False)


def line_to_request(line: str, lineno: int = 0) -> Request:
    try:
        row = json.loads(line)
    except json.JSONDecodeError as exc:
        raise SchemaError(f"line {lineno}: not valid JSON: {exc}") from exc
    if not isinstance(row, dict):
        raise SchemaError(f"line {lineno}: expected an object")
    try:
        seq = int(row["seq"])
        ts = int(row["ts_us"])
        kind = row["kind"]
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"line {lineno}: missing/invalid seq, ts_us or kind") from exc
    try:
        if kind == KIND_INSERT:
            payload: Payload = InsertPayload(
                context=row["context"],
                session_id=row["session_id"],
                speaker=row.get("speaker"),
                turn_index=int(row.get("turn_index", 0)),
            )
        elif kind == KIND_RETRIEVE:
            payload = RetrievePayload(
                query=row["query"],
                gold_answer=row.get("gold_answer", ""),
                query_id=row["query_id"],
                category=row.get("category", "unknown"),
                session_id=row.get("session_id", ""),
            )
        else:
            raise SchemaError(f"line {lineno}: unknown kind {kind!r}")
    except SchemaError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise SchemaError(f"line {lineno}: bad {kind} payload: {exc}") from exc
    return Request(seq=seq, ts=ts, kind=kind, payload=payload)


def write_stream_file(manifest: StreamManifest, path: str):
    tmp = f"{path}.tmp"
    with open(tmp, "w", encoding="utf-8") as fh:
        for request in manifest.requests:
            fh.write(request_to_line(request) + "\n")
    os.replace(tmp, path)


def read_stream_file(path: str, source: Optional[str] = None) -> StreamManifest:
    requests = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            requests.append(line_to_request(line, lineno))
    return StreamManifest(requests=tuple(requests), source=source or path)
