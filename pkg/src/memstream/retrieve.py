"""Retrieval-side operators: query formulation strategies, search execution,
context integration strategies, and bundle assembly.

Formulation produces RetrievalSignals (gateway work tagged PreRet), search
runs against the store, integration reshapes the candidate list and builds
the final ContextBundle (gateway work for multi_query tagged PostRet).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

from .config import FormulateConfig, IntegrateConfig
from .errors import GatewayError
from .gateway import ChatRequest, Gateway
from .metrics import STAGE_POST_RETRIEVE, STAGE_PRE_RETRIEVE
from .records import (
    KIND_RAW,
    TIER_FLAT,
    TIER_ORDER,
    Candidate,
    ContextBundle,
    MemoryRecord,
    RetrievalSignal,
    ts_to_iso,
)
from .stores import fuse_scores
from .stores.base import MemoryStore, normalize_ratio
from .stream import RetrievePayload

US_PER_DAY = 86_400.0 * 1_000_000.0
TOKEN_FACTOR = 1.3  # whitespace tokens to budget-token estimate


@dataclass
class FormulatedQuery:
    """A primary signal plus optional per-sub-query signals (decompose)."""

    signal: RetrievalSignal
    sub_signals: tuple[RetrievalSignal, ...] = ()
    flags: tuple[str, ...] = ()


# ----------------------------------------------------------------------
# D4: query formulation
# ----------------------------------------------------------------------

def formulate_none(q: RetrievePayload, gateway: Gateway) -> RetrievalSignal:
    embedding = gateway.embed([q.query], stage=STAGE_PRE_RETRIEVE)[0]
    return RetrievalSignal(raw_query=q.query, embedding=embedding)


def formulate_validate(q: RetrievePayload, gateway: Gateway) -> RetrievalSignal:
    """Ask whether retrieval is needed at all; small talk skips the search."""
    reply = gateway.chat(ChatRequest("validate", {"query": q.query}),
                         stage=STAGE_PRE_RETRIEVE).strip().upper()
    if reply == "SKIP":
        return RetrievalSignal(raw_query=q.query, skip=True)
    return formulate_none(q, gateway)


def formulate_keyword(q: RetrievePayload, gateway: Gateway, max_keywords: int,
                      augments: bool = False) -> RetrievalSignal:
    """Keywords replace the raw query as the lexical signal.

    With augments=True they extend it instead: the signal text becomes
    the raw query plus the keywords (flagged so reports can tell).
    """
    reply = gateway.chat(
        ChatRequest("keywords", {"query": q.query, "max_keywords": max_keywords}),
        stage=STAGE_PRE_RETRIEVE,
    ).strip()
    if not reply:
        signal = formulate_none(q, gateway)
        return RetrievalSignal(
            raw_query=signal.raw_query, embedding=signal.embedding,
            flags=("keyword_fallback",),
        )
    keywords = tuple(reply.split())
    if augments:
        joined = f"{q.query} {' '.join(keywords)}"
        embedding = gateway.embed([joined], stage=STAGE_PRE_RETRIEVE)[0]
        return RetrievalSignal(raw_query=joined, embedding=embedding,
                               flags=("keyword_augmented",))
    embedding = gateway.embed([" ".join(keywords)], stage=STAGE_PRE_RETRIEVE)[0]
    return RetrievalSignal(raw_query=q.query, embedding=embedding,
                           keywords=keywords)


def formulate_decompose(q: RetrievePayload, gateway: Gateway,
                        max_subqueries: int) -> tuple[RetrievalSignal, tuple[RetrievalSignal, ...]]:
    """Split a compound question; each part gets its own embedded signal."""
    reply = gateway.chat(
        ChatRequest("decompose", {"query": q.query, "max_subqueries": max_subqueries}),
        stage=STAGE_PRE_RETRIEVE,
    ).strip()
    parts = [line.strip() for line in reply.splitlines() if line.strip()]
    if not parts:
        parts = [q.query]
    parts = parts[:max_subqueries]
    vectors = gateway.embed(parts, stage=STAGE_PRE_RETRIEVE)
    subs = tuple(
        RetrievalSignal(raw_query=part, embedding=vec)
        for part, vec in zip(parts, vectors)
    )
    primary = RetrievalSignal(raw_query=q.query, embedding=vectors[0],
                              sub_queries=tuple(parts))
    return primary, subs


def run_formulate(q: RetrievePayload, cfg: FormulateConfig,
                  gateway: Gateway) -> FormulatedQuery:
    """Dispatch by strategy; gateway failures fall back to plain embedding."""
    flags: list[str] = []
    if cfg.strategy == "validate":
        try:
            return FormulatedQuery(signal=formulate_validate(q, gateway))
        except GatewayError:
            flags.append("validate_fallback")
    elif cfg.strategy == "keyword":
        try:
            signal = formulate_keyword(q, gateway, cfg.max_keywords,
                                       cfg.keyword_augments)
            return FormulatedQuery(signal=signal, flags=signal.flags)
        except GatewayError:
            flags.append("keyword_fallback")
    elif cfg.strategy == "decompose":
        try:
            primary, subs = formulate_decompose(q, gateway, cfg.max_subqueries)
            sub_signals = subs if len(subs) > 1 else ()
            return FormulatedQuery(signal=primary, sub_signals=sub_signals)
        except GatewayError:
            flags.append("decompose_fallback")
    try:
        return FormulatedQuery(signal=formulate_none(q, gateway),
                               flags=tuple(flags))
    except GatewayError:
        flags.append("embed_failed")
        return FormulatedQuery(signal=RetrievalSignal(raw_query=q.query),
                               flags=tuple(flags))


# ----------------------------------------------------------------------
# search execution
# ----------------------------------------------------------------------

def execute_search(store: MemoryStore, fq: FormulatedQuery, k: int,
                   now: Optional[int]) -> list[Candidate]:
    """Single retrieve, or per-sub-query retrieves fused by RRF."""
    if not fq.sub_signals:
        candidates, _ = store.retrieve(fq.signal, k, now=now)
        return candidates
    per_sub = math.ceil(k / len(fq.sub_signals))
    rankings: list[list[str]] = []
    by_id: dict[str, Candidate] = {}
    for signal in fq.sub_signals:
        candidates, _ = store.retrieve(signal, per_sub, now=now)
        rankings.append([c.record_id for c in candidates])
        for cand in candidates:
            if cand.record_id not in by_id:
                by_id[cand.record_id] = cand
    fused = fuse_scores(rankings)
    scored = [(by_id[rec_id].record, score) for rec_id, score in fused]
    return [
        Candidate(record=rec, score=score, source="decompose")
        for rec, score in normalize_ratio(scored)
    ][:k]


# ----------------------------------------------------------------------
# D5: context integration
# ----------------------------------------------------------------------

def integrate_time_weighted(cands: list[Candidate], now: int,
                            decay_lambda: float) -> list[Candidate]:
    """score' = score * exp(-lambda * age_days); stable on ties."""
    rescored = [
        Candidate(
            record=c.record,
            score=c.score * math.exp(-decay_lambda * max(0, now - c.record.ts) / US_PER_DAY),
            source=c.source,
        )
        for c in cands
    ]
    return sorted(rescored, key=lambda c: -c.score)


def integrate_threshold(cands: list[Candidate],
                        score_threshold: float) -> list[Candidate]:
    return [c for c in cands if c.score >= score_threshold]


def integrate_multi_tier(cands: list[Candidate],
                         quotas: dict[str, int]) -> list[Candidate]:
    """Per-tier quotas in tier order, dedup by id keeping max score."""
    by_tier: dict[str, list[Candidate]] = {}
    for cand in cands:
        by_tier.setdefault(cand.record.tier, []).append(cand)
    best: dict[str, Candidate] = {}
    for tier in (*TIER_ORDER, TIER_FLAT):
        quota = quotas.get(tier, 0)
        for cand in by_tier.get(tier, [])[:quota]:
            held = best.get(cand.record_id)
            if held is None or cand.score > held.score:
                best[cand.record_id] = cand
    return sorted(best.values(), key=lambda c: (-c.score, c.record_id))


def integrate_augment(cands: list[Candidate], store: MemoryStore, window: int,
                      now: Optional[int]) -> list[Candidate]:
    """Attach +-window neighboring turns after each raw-turn candidate.

    Neighbors carry zero score (pure provenance) and are never duplicated
    against existing candidates or each other.
    """
    if window <= 0:
        return list(cands)
    seen = {c.record_id for c in cands}
    out: list[Candidate] = []
    for cand in cands:
        out.append(cand)
        record = cand.record
        if record.kind != KIND_RAW or not record.session_id:
            continue
        for neighbor in store.turn_neighbors(record.session_id,
                                             record.turn_index, window, now):
            if neighbor.record_id in seen:
                continue
            seen.add(neighbor.record_id)
            out.append(Candidate(record=neighbor, score=0.0, source="augment"))
    return out


def integrate_multi_query(query: str, cands: list[Candidate],
                          store: MemoryStore, gateway: Gateway,
                          n_queries: int, k: int,
                          now: Optional[int]) -> tuple[list[Candidate], list[str]]:
    """Paraphrase the query n times, re-retrieve, RRF-fuse with the original.

    Any gateway failure returns the original candidates, flagged.
    """
    flags: list[str] = []
    rankings = [[c.record_id for c in cands]]
    by_id: dict[str, Candidate] = {c.record_id: c for c in cands}
    try:
        for index in range(n_queries):
            paraphrase = gateway.chat(
                ChatRequest("paraphrase", {"query": query, "index": index}),
                stage=STAGE_POST_RETRIEVE,
            ).strip()
            if not paraphrase:
                continue
            embedding = gateway.embed([paraphrase], stage=STAGE_POST_RETRIEVE)[0]
            signal = RetrievalSignal(raw_query=paraphrase, embedding=embedding)
            extra, _ = store.retrieve(signal, k, now=now)
            rankings.append([c.record_id for c in extra])
            for cand in extra:
                by_id.setdefault(cand.record_id, cand)
    except GatewayError:
        flags.append("multi_query_fallback")
        return list(cands), flags
    fused = fuse_scores(rankings)
    scored = [(by_id[rec_id].record, score) for rec_id, score in fused]
    return [
        Candidate(record=rec, score=score, source="multi_query")
        for rec, score in normalize_ratio(scored)
    ][:max(k, len(cands))], flags


# ----------------------------------------------------------------------
# bundle assembly
# ----------------------------------------------------------------------

def estimate_tokens(text: str) -> int:
    return round(len(text.split()) * TOKEN_FACTOR)


def context_line(record: MemoryRecord) -> str:
    speaker = record.speaker if record.speaker else "unknown"
    return f"[ts={ts_to_iso(record.ts)}] {speaker}: {record.text}"


def build_bundle(cands: list[Candidate],
                 budget_tokens: int) -> tuple[ContextBundle, bool]:
    """Concatenate candidates in order until the token budget would overflow.

    Returns (bundle, truncated). Provenance covers exactly the included
    records, id-deduplicated.
    """
    lines: list[str] = []
    provenance: list[tuple[str, float, int]] = []
    seen: set[str] = set()
    used = 0
    truncated = False
    for cand in cands:
        if cand.record_id in seen:
            continue
        line = context_line(cand.record)
        cost = estimate_tokens(line)
        if lines and used + cost > budget_tokens:
            truncated = True
            break
        if not lines and cost > budget_tokens:
            truncated = True
            break
        seen.add(cand.record_id)
        lines.append(line)
        provenance.append((cand.record_id, cand.score, cand.record.ts))
        used += cost
    bundle = ContextBundle(text="\n".join(lines), provenance=tuple(provenance),
                           token_estimate=used)
    return bundle, truncated


@dataclass
class IntegrationResult:
    bundle: ContextBundle
    candidates: list[Candidate] = field(default_factory=list)
    flags: list[str] = field(default_factory=list)


def run_integrate(query: str, cands: list[Candidate], store: MemoryStore,
                  gateway: Gateway, cfg: IntegrateConfig, k: int,
                  now: Optional[int]) -> IntegrationResult:
    """Dispatch by strategy, then assemble the bundle under the budget."""
    flags: list[str] = []
    working = list(cands)
    if cfg.strategy == "time_weighted":
        working = integrate_time_weighted(working, now, cfg.decay_lambda)
    elif cfg.strategy == "threshold":
        working = integrate_threshold(working, cfg.score_threshold)
    elif cfg.strategy == "multi_tier":
        quotas = cfg.tier_quotas
        if quotas is None:
            quotas = {tier: k for tier in (*TIER_ORDER, TIER_FLAT)}
        working = integrate_multi_tier(working, quotas)
    elif cfg.strategy == "augment":
        working = integrate_augment(working, store, cfg.augment_window, now)
    elif cfg.strategy == "multi_query":
        working, mq_flags = integrate_multi_query(
            query, working, store, gateway, cfg.multi_query_count, k, now)
        flags.extend(mq_flags)
    bundle, truncated = build_bundle(working, cfg.budget_tokens)
    if truncated:
        flags.append("budget_truncated")
    return IntegrationResult(bundle=bundle, candidates=working, flags=flags)
