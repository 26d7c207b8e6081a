"""Shared text utilities: tokenization, stopwords, sentences, synonym table.

Two token pipelines live here and they are deliberately different:

* ``metric_tokens`` — scoring normalization. Lowercase, punctuation
  stripped by Unicode category, digits kept, stopwords KEPT, every token
  stemmed to a fixed point (single-pass stemming is not idempotent, e.g.
  "exceed" -> "excee" -> "exce" -> "exc"; iterating makes normalization
  idempotent, which downstream metrics rely on).
* ``index_tokens`` — lexical indexing/matching. Same pipeline but the 50
  fixed stopwords are dropped before stemming.
"""

from __future__ import annotations

import unicodedata

from .porter import porter_stem

# Exactly 50 entries, checked by the tests. Matched against raw lowercase
# tokens before any stemming.
STOPWORDS = frozenset({
    "a", "about", "after", "an", "and", "are", "as", "at", "be", "been",
    "before", "but", "by", "did", "do", "does", "for", "from", "go", "had",
    "has", "have", "he", "how", "i", "if", "in", "into", "is", "it", "of",
    "on", "or", "she", "that", "the", "then", "they", "this", "to", "was",
    "we", "went", "were", "what", "when", "where", "who", "with", "you",
})


def strip_punctuation(text: str) -> str:
    """Remove every character whose Unicode category starts with P."""
    return "".join(ch for ch in text if not unicodedata.category(ch).startswith("P"))


def stem_fixpoint(token: str) -> str:
    """Apply the stemmer until the token stops changing (always terminates)."""
    prev = token
    while True:
        cur = porter_stem(prev)
        if cur == prev:
            return cur
        prev = cur


def raw_tokens(text: str) -> list[str]:
    """Lowercase, strip punctuation, split on whitespace. No stemming."""
    return strip_punctuation(text.lower()).split()


def metric_tokens(text: str) -> list[str]:
    """Normalization used by scoring: stopwords kept, stems to fixed point."""
    out = []
    for tok in raw_tokens(text):
        stemmed = stem_fixpoint(tok)
        if stemmed:
            out.append(stemmed)
    return out


def index_tokens(text: str) -> list[str]:
    """Normalization used by lexical indexes: stopwords dropped, then stemmed."""
    out = []
    for tok in raw_tokens(text):
        if tok in STOPWORDS:
            continue
        stemmed = stem_fixpoint(tok)
        if stemmed:
            out.append(stemmed)
    return out


def split_sentences(text: str) -> list[str]:
    """Split on ., ! and ? keeping the terminator. Whitespace-trimmed, no empties."""
    sentences = []
    buf = []
    for ch in text:
        buf.append(ch)
        if ch in ".!?":
            sentence = "".join(buf).strip()
            if sentence:
                sentences.append(sentence)
            buf = []
    tail = "".join(buf).strip()
    if tail:
        sentences.append(tail)
    return sentences


# Word -> variant pairs used by the deterministic paraphrase template and by
# the synthetic workload's paraphrased queries. Pairs are chosen so the two
# sides stem to DIFFERENT tokens (no lexical-index overlap) while sharing
# most character trigrams (high mock-embedding similarity). The tests verify
# both properties for every entry.
SYNONYMS: dict[str, str] = {
    "color": "colour",
    "flavor": "flavour",
    "honor": "honour",
    "labor": "labour",
    "harbor": "harbour",
    "armor": "armour",
    "center": "centre",
    "meter": "metre",
    "fiber": "fibre",
    "theater": "theatre",
    "neighbor": "neighbour",
    "rumor": "rumour",
    "vapor": "vapour",
    "tumor": "tumour",
    "odor": "odour",
    "humor": "humour",
}

# The reverse direction, so paraphrasing maps variants back as well.
SYNONYMS_BIDIRECTIONAL: dict[str, str] = {
    **SYNONYMS,
    **{v: k for k, v in SYNONYMS.items()},
}


def apply_synonyms(text: str, table: dict[str, str] | None = None) -> str:
    """Replace whole words found in the table; casing/punctuation elsewhere kept."""
    table = SYNONYMS_BIDIRECTIONAL if table is None else table
    out = []
    for word in text.split():
        bare = strip_punctuation(word.lower())
        if bare in table:
            replacement = table[bare]
            # re-attach trailing punctuation of the original word
            suffix = ""
            while word and unicodedata.category(word[-1]).startswith("P"):
                suffix = word[-1] + suffix
                word = word[:-1]
            out.append(replacement + suffix)
        else:
            out.append(word)
    return " ".join(out)
