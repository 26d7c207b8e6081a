"""Insertion-side operators: normalization strategies and consolidation
policies, plus the pipeline wrappers the orchestrator calls.

Normalization turns one inbound turn into storable units (records or
triplets) before the tentative insert; consolidation mutates the store right
after it. Gateway chat during normalization is attributed to the PreIns
stage, during consolidation to PostIns; the orchestrator reads those stage
tags off the gateway timing log.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .config import ConsolidateConfig, NormalizeConfig
from .errors import GatewayError, UnparseableExtraction, UnsupportedBackend
from .gateway import ChatRequest, Gateway
from .metrics import STAGE_POST_INSERT, STAGE_PRE_INSERT
from .records import (
    KIND_SUMMARY,
    KIND_TRIPLET,
    MemoryRecord,
    TIER_ORDER,
    Triplet,
)
from .stores.base import MemoryStore, cosine
from .stream import InsertPayload
from .text import index_tokens

US_PER_S = 1_000_000.0


# ----------------------------------------------------------------------
# normalization (runs before the tentative insert)
# ----------------------------------------------------------------------

def normalize_none(h: InsertPayload, ts: int, gateway: Gateway) -> list[MemoryRecord]:
    """Store the turn verbatim with its embedding."""
    embedding = gateway.embed([h.context], stage=STAGE_PRE_INSERT)[0]
    return [MemoryRecord(
        record_id="", text=h.context, ts=ts, session_id=h.session_id,
        turn_index=h.turn_index, speaker=h.speaker, embedding=embedding,
    )]


def normalize_enrich(h: InsertPayload, ts: int, gateway: Gateway,
                     max_sentences: int) -> list[MemoryRecord]:
    """Raw record plus a gateway-written summary record."""
    summary_text = gateway.chat(
        ChatRequest("summarize", {"text": h.context, "max_sentences": max_sentences}),
        stage=STAGE_PRE_INSERT,
    ).strip()
    if not summary_text:
        raise GatewayError("empty", "summarizer returned an empty completion")
    raw_vec, summary_vec = gateway.embed([h.context, summary_text],
                                         stage=STAGE_PRE_INSERT)
    raw = MemoryRecord(
        record_id="", text=h.context, ts=ts, session_id=h.session_id,
        turn_index=h.turn_index, speaker=h.speaker, embedding=raw_vec,
    )
    summary = MemoryRecord(
        record_id="", text=summary_text, ts=ts, session_id=h.session_id,
        turn_index=h.turn_index, kind=KIND_SUMMARY, embedding=summary_vec,
    )
    return [raw, summary]


def normalize_rewrite(h: InsertPayload, gateway: Gateway,
                      max_triplets: int) -> list[Triplet]:
    """Extract at most max_triplets facts; the raw text is NOT kept."""
    reply = gateway.chat(
        ChatRequest("triplets", {"text": h.context, "max_triplets": max_triplets}),
        stage=STAGE_PRE_INSERT,
    ).strip()
    if reply.lower() == "no facts" or not reply:
        return []
    source = f"turn/{h.session_id}/{h.turn_index}"
    triplets = []
    for line in reply.splitlines():
        line = line.strip()
        if not line:
            continue
        parts = [p.strip() for p in line.split("|")]
        if len(parts) != 3 or not all(parts):
            raise UnparseableExtraction(
                f"expected 'subject | relation | object', got {line!r}")
        triplets.append(Triplet(subject=parts[0], relation=parts[1],
                                object=parts[2], source_record=source))
        if len(triplets) >= max_triplets:
            break
    return triplets


def run_normalize(h: InsertPayload, ts: int, cfg: NormalizeConfig,
                  gateway: Gateway) -> tuple[list[MemoryRecord], list[str]]:
    """Dispatch by strategy with the pipeline's fail-open policy.

    Gateway trouble downgrades to the raw record (never drop the turn);
    the returned flags record that a downgrade happened.
    """
    flags: list[str] = []
    if cfg.strategy == "enrich":
        try:
            return normalize_enrich(h, ts, gateway, cfg.summary_max_sentences), flags
        except GatewayError:
            flags.append("enrich_fallback")
    elif cfg.strategy == "rewrite":
        try:
            triplets = normalize_rewrite(h, gateway, cfg.max_triplets)
            records = []
            if triplets:
                texts = [t.linearize() for t in triplets]
                vectors = gateway.embed(texts, stage=STAGE_PRE_INSERT)
                for triplet, vec in zip(triplets, vectors):
                    records.append(MemoryRecord(
                        record_id="", text=triplet.linearize(), ts=ts,
                        session_id=h.session_id, turn_index=h.turn_index,
                        kind=KIND_TRIPLET, triplet=triplet, embedding=vec,
                    ))
            return records, flags
        except (GatewayError, UnparseableExtraction):
            flags.append("rewrite_fallback")
    try:
        return normalize_none(h, ts, gateway), flags
    except GatewayError:
        # embedding service down: keep the turn, lexical search still works
        flags.append("embed_failed")
        return [MemoryRecord(
            record_id="", text=h.context, ts=ts, session_id=h.session_id,
            turn_index=h.turn_index, speaker=h.speaker,
        )], flags


# ----------------------------------------------------------------------
# consolidation (runs right after the tentative insert)
# ----------------------------------------------------------------------

@dataclass
class ConsolidationOutcome:
    actions: list[str] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


def consolidate_none(store: MemoryStore, new_ids: list[str], now: int) -> list[str]:
    return []


def _nearest_existing(store: MemoryStore, record: MemoryRecord,
                      exclude: set[str], limit: int) -> list[MemoryRecord]:
    """Top existing records by embedding cosine, lexical overlap fallback."""
    pool = [r for r in store.all_records() if r.record_id not in exclude]
    if record.embedding is not None:
        scored = [
            (r, cosine(record.embedding, r.embedding))
            for r in pool if r.embedding is not None
        ]
    else:
        tokens = set(index_tokens(record.text))
        scored = []
        for r in pool:
            overlap = len(tokens & set(index_tokens(r.text)))
            if overlap:
                scored.append((r, float(overlap)))
    scored.sort(key=lambda item: (-item[1], item[0].record_id))
    return [r for r, _ in scored[:limit]]


def consolidate_crud(store: MemoryStore, new_ids: list[str], gateway: Gateway,
                     neighbor_count: int = 3) -> ConsolidationOutcome:
    """Ask the gateway for one ADD/UPDATE/DELETE/NOOP decision per new unit.

    New units are already inserted, so ADD and NOOP both leave them in
    place; UPDATE removes the superseded record; DELETE removes its target.
    A gateway failure keeps everything (NOOP) and flags the request.
    """
    outcome = ConsolidationOutcome()
    exclude = set(new_ids)
    for new_id in new_ids:
        record = store.get(new_id)
        neighbors = _nearest_existing(store, record, exclude, neighbor_count)
        neighbor_lines = "\n".join(f"{n.record_id}\t{n.text}" for n in neighbors)
        try:
            reply = gateway.chat(
                ChatRequest("crud", {"new": record.text, "neighbors": neighbor_lines}),
                stage=STAGE_POST_INSERT,
            ).strip()
        except GatewayError:
            outcome.actions.append(f"NOOP {new_id}")
            outcome.flags.append("crud_fallback")
            continue
        parts = reply.split()
        verb = parts[0].upper() if parts else ""
        target = parts[1] if len(parts) > 1 else ""
        if verb == "ADD":
            outcome.actions.append(f"ADD {new_id}")
        elif verb == "NOOP":
            outcome.actions.append(f"NOOP {new_id}")
        elif verb == "UPDATE" and target:
            known = {n.record_id for n in neighbors}
            if target in known:
                store.remove(target)
                outcome.actions.append(f"UPDATE {target}<-{new_id}")
            else:
                outcome.actions.append(f"NOOP {new_id}")
                outcome.flags.append("crud_unknown_target")
        elif verb == "DELETE" and target:
            known = {n.record_id for n in neighbors}
            if target in known:
                store.remove(target)
                outcome.actions.append(f"DELETE {target}")
            else:
                outcome.actions.append(f"NOOP {new_id}")
                outcome.flags.append("crud_unknown_target")
        else:
            outcome.actions.append(f"NOOP {new_id}")
            outcome.flags.append("crud_unparseable")
    return outcome


def retention(record: MemoryRecord, now: int) -> float:
    """r = exp(-dt/S), dt in seconds since last access."""
    dt_s = max(0.0, (now - record.last_access) / US_PER_S)
    return math.exp(-dt_s / record.strength)


def forgetting_curve(store: MemoryStore, now: int,
                     retention_threshold: float) -> list[str]:
    """Evict every record whose retention dropped below the threshold."""
    evicted = [
        record.record_id
        for record in store.all_records()
        if retention(record, now) < retention_threshold
    ]
    for record_id in evicted:
        store.remove(record_id)
    return evicted


def heat(record: MemoryRecord, now: int, alpha: float, beta: float,
         tau_s: float) -> float:
    dt_s = max(0.0, (now - record.last_access) / US_PER_S)
    return alpha * record.access_count + beta * math.exp(-dt_s / tau_s)


def heat_migration(store: MemoryStore, now: int,
                   cfg: ConsolidateConfig) -> list[str]:
    """Promote hot records one tier toward short_term, demote cold ones.

    Only meaningful on tiered backends; others raise UnsupportedBackend.
    """
    if not store.supports_tiers:
        raise UnsupportedBackend(
            f"backend {store.name!r} has no tiers to migrate between")
    migrations = []
    for record in store.all_records():
        if record.tier not in TIER_ORDER:
            continue
        idx = TIER_ORDER.index(record.tier)
        score = heat(record, now, cfg.heat_alpha, cfg.heat_beta, cfg.heat_tau_s)
        if score >= cfg.hot_heat and idx > 0:
            target = TIER_ORDER[idx - 1]
        elif score < cfg.cold_heat and idx < len(TIER_ORDER) - 1:
            target = TIER_ORDER[idx + 1]
        else:
            continue
        origin = record.tier
        store.migrate(record.record_id, target)
        migrations.append(f"MIGRATE {record.record_id} {origin}->{target}")
    return migrations


def link_evolution(store: MemoryStore, new_ids: list[str],
                   link_top_m: int, link_threshold: float) -> list[str]:
    """Bidirectional links from each new record to its nearest neighbors."""
    if not store.supports_links:
        raise UnsupportedBackend(
            f"backend {store.name!r} does not maintain links")
    created = []
    exclude = set(new_ids)
    for new_id in new_ids:
        record = store.get(new_id)
        if record.embedding is None:
            continue
        scored = [
            (other, cosine(record.embedding, other.embedding))
            for other in store.all_records()
            if other.record_id not in exclude and other.embedding is not None
        ]
        scored = [(other, sim) for other, sim in scored if sim >= link_threshold]
        scored.sort(key=lambda item: (-item[1], item[0].record_id))
        for other, _sim in scored[:link_top_m]:
            record.links.add(other.record_id)
            other.links.add(new_id)
            created.append(f"LINK {new_id}<->{other.record_id}")
    return created


def merge_records(store: MemoryStore, older: MemoryRecord,
                  newer: MemoryRecord):
    """Older record absorbs the newer one; the newer id is tombstoned."""
    older.access_count += newer.access_count
    older.last_access = max(older.last_access, newer.last_access)
    older.strength = max(older.strength, newer.strength)
    if newer.text and newer.text != older.text:
        older.text = f"{older.text} {newer.text}"
    if older.embedding is not None and newer.embedding is not None:
        merged = older.embedding + newer.embedding
        norm = float(np.linalg.norm(merged))
        if norm > 0.0:
            older.embedding = merged / norm
    elif older.embedding is None:
        older.embedding = newer.embedding
    store.reindex(older)
    store.remove(newer.record_id)


def semantic_consolidation(store: MemoryStore, new_ids: list[str],
                           dedup_threshold: float) -> list[str]:
    """Merge each new record into its closest near-duplicate predecessor."""
    merged = []
    exclude = set(new_ids)
    for new_id in new_ids:
        newer = store.get(new_id)
        if newer.tombstoned or newer.embedding is None:
            continue
        best: Optional[MemoryRecord] = None
        best_sim = -2.0
        for older in store.all_records():
            if older.record_id in exclude or older.embedding is None:
                continue
            sim = cosine(newer.embedding, older.embedding)
            if sim > best_sim or (sim == best_sim and best is not None
                                  and older.record_id < best.record_id):
                best, best_sim = older, sim
        if best is not None and best_sim >= dedup_threshold:
            merge_records(store, best, newer)
            merged.append(f"MERGE {new_id}->{best.record_id}")
    return merged


def run_consolidate(store: MemoryStore, new_ids: list[str], now: int,
                    cfg: ConsolidateConfig, gateway: Gateway,
                    insert_index: int) -> ConsolidationOutcome:
    """Dispatch by strategy; fires only on every_n boundaries."""
    if cfg.strategy == "none":
        return ConsolidationOutcome(actions=consolidate_none(store, new_ids, now))
    if insert_index % cfg.every_n != 0:
        return ConsolidationOutcome()
    # capacity eviction during a multi-unit insert can take out a sibling
    live = {record.record_id for record in store.all_records()}
    new_ids = [record_id for record_id in new_ids if record_id in live]
    if cfg.strategy == "crud":
        return consolidate_crud(store, new_ids, gateway)
    if cfg.strategy == "forgetting_curve":
        evicted = forgetting_curve(store, now, cfg.retention_threshold)
        return ConsolidationOutcome(actions=[f"EVICT {rid}" for rid in evicted])
    if cfg.strategy == "heat_migration":
        return ConsolidationOutcome(actions=heat_migration(store, now, cfg))
    if cfg.strategy == "link_evolution":
        return ConsolidationOutcome(
            actions=link_evolution(store, new_ids, cfg.link_top_m, cfg.link_threshold))
    if cfg.strategy == "semantic_consolidation":
        return ConsolidationOutcome(
            actions=semantic_consolidation(store, new_ids, cfg.dedup_threshold))
    raise ValueError(f"unknown consolidation strategy {cfg.strategy!r}")
