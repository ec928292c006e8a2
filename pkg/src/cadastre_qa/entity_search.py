"""Three-tier entity search: exact, fuzzy, then semantic.

Locates a question phrase inside a column's distinct vocabulary. The cheap
specific tiers run first; the embedding tier is only consulted when both
string tiers come up empty.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Protocol, Sequence

from .tabular_store import Dataset, normalize_text

MATCH_TIERS = ("exact", "fuzzy", "semantic")


class Embedder(Protocol):
    def embed(self, texts: Sequence[str]) -> list[tuple[float, ...]]: ...


@dataclass(frozen=True)
class SearchConfig:
    """Thresholds and limits for the fuzzy and semantic tiers."""

    fuzzy_threshold: float = 0.70
    semantic_threshold: float = 0.40
    semantic_top_k: int = 5


@dataclass(frozen=True)
class EntityMatch:
    """Result of searching one phrase in one column.

    ``matches`` is sorted by descending score; every value is a member of the
    column's distinct vocabulary; exact-tier scores are always 1.0.
    """

    phrase: str
    dataset_number: int
    column: str
    matches: tuple[tuple[str, float], ...]
    tier: str

    @property
    def values(self) -> tuple[str, ...]:
        return tuple(v for v, _ in self.matches)


def distinct_vocabulary(dataset: Dataset, column: str) -> list[str]:
    """Normalized, deduplicated, sorted distinct values of a textual column."""
    meta = dataset.schema.column(column)
    if meta.value_kind != "text":
        raise ValueError(f"column {column!r} is {meta.value_kind}, not text")
    seen = set()
    for value in dataset.column_values(column):
        if value is None:
            continue
        normalized = normalize_text(str(value))
        if normalized:
            seen.add(normalized)
    return sorted(seen)


def edit_distance(a: str, b: str) -> int:
    """Levenshtein distance with unit-cost insert, delete and substitute."""
    if a == b:
        return 0
    if not a:
        return len(b)
    if not b:
        return len(a)
    previous = list(range(len(b) + 1))
    for i, ca in enumerate(a, start=1):
        current = [i]
        for j, cb in enumerate(b, start=1):
            current.append(
                min(
                    previous[j] + 1,
                    current[j - 1] + 1,
                    previous[j - 1] + (ca != cb),
                )
            )
        previous = current
    return previous[-1]


def _ranked(scored: list[tuple[str, float]]) -> list[tuple[str, float]]:
    # Descending score, lexicographic tie-break for determinism.
    return sorted(scored, key=lambda pair: (-pair[1], pair[0]))


def fuzzy_match(
    phrase: str, vocabulary: Sequence[str], threshold: float = 0.70
) -> list[tuple[str, float]]:
    """Values whose normalized edit similarity reaches ``threshold``.

    Similarity is 1 - distance / max(len(a), len(b)) over normalized text.
    """
    if not 0 <= threshold <= 1:
        raise ValueError("threshold must be within [0, 1]")
    needle = normalize_text(phrase)
    scored = []
    for value in vocabulary:
        candidate = normalize_text(value)
        longest = max(len(needle), len(candidate))
        similarity = 1.0 if longest == 0 else 1.0 - edit_distance(needle, candidate) / longest
        if similarity >= threshold:
            scored.append((candidate, similarity))
    return _ranked(scored)


def cosine_similarity(u: Sequence[float], v: Sequence[float]) -> float:
    dot = sum(a * b for a, b in zip(u, v))
    nu = math.sqrt(sum(a * a for a in u))
    nv = math.sqrt(sum(b * b for b in v))
    if nu == 0 or nv == 0:
        return 0.0
    return dot / (nu * nv)


def semantic_match(
    phrase: str,
    vocabulary: Sequence[str],
    embedder: Embedder,
    threshold: float = 0.40,
    top_k: int = 5,
) -> list[tuple[str, float]]:
    """Up to ``top_k`` vocabulary values by embedding cosine similarity."""
    if top_k < 1:
        raise ValueError("top_k must be at least 1")
    if not vocabulary:
        return []
    normalized = [normalize_text(v) for v in vocabulary]
    vectors = embedder.embed([normalize_text(phrase), *normalized])
    phrase_vec, value_vecs = vectors[0], vectors[1:]
    scored = [
        (value, cosine_similarity(phrase_vec, vec))
        for value, vec in zip(normalized, value_vecs)
    ]
    return _ranked([(v, s) for v, s in scored if s >= threshold])[:top_k]


def exact_values(phrase: str, vocabulary: Sequence[str]) -> list[tuple[str, float]]:
    """Vocabulary values equal to the phrase after normalization, scored 1.0."""
    needle = normalize_text(phrase)
    return [(v, 1.0) for v in vocabulary if normalize_text(v) == needle]


def search_entity(
    phrase: str,
    dataset: Dataset,
    column: str,
    config: SearchConfig = SearchConfig(),
    embedder: Embedder | None = None,
) -> EntityMatch:
    """Tier escalation: exact, else fuzzy, else semantic.

    No embedding call is issued unless both string tiers are empty. When no
    embedder is configured the semantic tier is skipped and the (empty)
    result is still tagged semantic.
    """
    vocabulary = distinct_vocabulary(dataset, column)

    found = exact_values(phrase, vocabulary)
    if found:
        return EntityMatch(phrase, dataset.dataset_number, column, tuple(found), "exact")

    found = fuzzy_match(phrase, vocabulary, config.fuzzy_threshold)
    if found:
        return EntityMatch(phrase, dataset.dataset_number, column, tuple(found), "fuzzy")

    if embedder is not None:
        found = semantic_match(
            phrase, vocabulary, embedder, config.semantic_threshold, config.semantic_top_k
        )
    else:
        found = []
    return EntityMatch(phrase, dataset.dataset_number, column, tuple(found), "semantic")
