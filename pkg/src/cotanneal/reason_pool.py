"""From raw completion texts to a deduplicated pool of reasoning fragments.

The pool records which completions each fragment appeared in (membership),
plus the single, pair, and triple co-occurrence counts the model builder
needs.  Merging is single-linkage: fragments whose cosine similarity meets
the threshold land in one connected component and become one Reason.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from itertools import combinations
from typing import Sequence

import numpy as np

from .errors import InputError
from .llm_client import CompletionTrace, EmbeddingVector

DEFAULT_MERGE_THRESHOLD = 0.85
DEFAULT_MIN_FRAGMENT_CHARS = 8

_MARKER_RE = re.compile(r"^\s*(?:\d{1,3}[.)]\s+|[-*•]\s+)")
_ANSWER_LINE_RE = re.compile(r"^\s*(?:final\s+)?answer\b", re.IGNORECASE)


def extract_fragments(trace: CompletionTrace | str, min_chars: int = DEFAULT_MIN_FRAGMENT_CHARS) -> list[str]:
    """Split one completion into candidate reasoning fragments.

    Numbered or bulleted lines are preferred; their markers are stripped.
    Texts with no list markers fall back to sentence splitting.  Answer
    lines ("Answer: X") are never fragments.  Fragments shorter than
    ``min_chars`` are dropped.
    """
    text = trace.raw_text if isinstance(trace, CompletionTrace) else str(trace)
    if not text.strip():
        raise InputError("completion text is empty")

    kept_lines = [line for line in text.splitlines() if not _ANSWER_LINE_RE.match(line)]
    marked = []
    saw_marker = False
    for line in kept_lines:
        match = _MARKER_RE.match(line)
        if match:
            saw_marker = True
            marked.append(line[match.end() :].strip())
    if saw_marker:
        parts = marked
    else:
        prose = re.sub(r"\s+", " ", " ".join(kept_lines)).strip()
        parts = re.split(r"(?<=[.!?])\s+", prose) if prose else []
    return [p for p in (part.strip() for part in parts) if len(p) >= min_chars]


@dataclass
class Reason:
    """One deduplicated fragment: a canonical text plus all merged variants."""

    id: int
    canonical_text: str
    variants: list  # (sample_index, original_text) pairs, sorted
    embedding: EmbeddingVector | None = None

    def __post_init__(self):
        if not self.canonical_text:
            raise InputError("canonical_text must be nonempty")


@dataclass
class ReasonPool:
    """Deduplicated reasons with membership and occurrence counts.

    ``membership`` is an (n_samples, R) boolean array; counts are sparse
    dicts keyed by sorted index tuples, storing only nonzero values.  The
    counts are always recomputable from the membership matrix.
    """

    reasons: list
    n_samples: int
    membership: np.ndarray
    n_i: np.ndarray | None = None
    pair_counts: dict = field(default_factory=dict)
    triple_counts: dict = field(default_factory=dict)
    counts_order: int = 0  # highest order populated so far

    @property
    def num_reasons(self) -> int:
        return len(self.reasons)

    @property
    def popularity(self) -> np.ndarray:
        """p_i: fraction of completions containing reason i."""
        if self.n_i is None:
            occurrence_counts(self, max_order=2)
        return self.n_i / self.n_samples

    @property
    def risk(self) -> np.ndarray:
        """p_i (1 - p_i): occurrence variance of reason i."""
        p = self.popularity
        return p * (1.0 - p)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "n_samples": self.n_samples,
            "reasons": [
                {
                    "id": r.id,
                    "canonical_text": r.canonical_text,
                    "variants": [[int(s), t] for s, t in r.variants],
                }
                for r in self.reasons
            ],
            "membership": [
                "".join("1" if self.membership[s, j] else "0" for j in range(self.num_reasons))
                for s in range(self.n_samples)
            ],
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ReasonPool":
        reasons = [
            Reason(id=r["id"], canonical_text=r["canonical_text"],
                   variants=[(int(s), t) for s, t in r["variants"]])
            for r in doc["reasons"]
        ]
        n_samples = doc["n_samples"]
        rows = doc["membership"]
        if len(rows) != n_samples:
            raise InputError(f"membership has {len(rows)} rows for n_samples={n_samples}")
        membership = np.zeros((n_samples, len(reasons)), dtype=bool)
        for s, row in enumerate(rows):
            if len(row) != len(reasons):
                raise InputError(f"membership row {s} has length {len(row)}, expected {len(reasons)}")
            membership[s] = [c == "1" for c in row]
        pool = cls(reasons=reasons, n_samples=n_samples, membership=membership)
        occurrence_counts(pool, max_order=3)
        return pool


class _UnionFind:
    def __init__(self, n: int):
        self.parent = list(range(n))

    def find(self, a: int) -> int:
        while self.parent[a] != a:
            self.parent[a] = self.parent[self.parent[a]]
            a = self.parent[a]
        return a

    def union(self, a: int, b: int) -> None:
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[max(ra, rb)] = min(ra, rb)


def dedup_merge(
    fragments_per_sample: Sequence[Sequence[str]],
    embeddings_per_sample: Sequence[Sequence[EmbeddingVector]],
    merge_threshold: float = DEFAULT_MERGE_THRESHOLD,
    n_samples: int | None = None,
) -> ReasonPool:
    """Merge fragments across samples into a ReasonPool.

    Components are formed by single-linkage over pairwise cosine similarity
    at ``merge_threshold``.  The canonical text of a component is the
    variant with the highest total similarity to the component, ties broken
    by lexicographically smallest text, which makes the choice independent
    of sample ordering.
    """
    if not (0 < merge_threshold < 1):
        raise InputError(f"merge_threshold must be in (0, 1), got {merge_threshold}")
    if len(fragments_per_sample) != len(embeddings_per_sample):
        raise InputError("fragments and embeddings must have the same per-sample structure")
    if n_samples is None:
        n_samples = len(fragments_per_sample)

    flat_sample: list[int] = []
    flat_text: list[str] = []
    flat_emb: list[EmbeddingVector] = []
    for s, (frags, embs) in enumerate(zip(fragments_per_sample, embeddings_per_sample)):
        if len(frags) != len(embs):
            raise InputError(f"sample {s}: {len(frags)} fragments but {len(embs)} embeddings")
        for text, emb in zip(frags, embs):
            flat_sample.append(s)
            flat_text.append(text)
            flat_emb.append(emb)

    total = len(flat_text)
    if total == 0:
        return ReasonPool(reasons=[], n_samples=n_samples,
                          membership=np.zeros((n_samples, 0), dtype=bool))

    vectors = np.array([e.values for e in flat_emb], dtype=float)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms <= 0):
        raise InputError("zero-norm embedding in merge input")
    unit = vectors / norms[:, None]
    sim = unit @ unit.T

    uf = _UnionFind(total)
    for a in range(total):
        row = sim[a]
        for b in range(a + 1, total):
            if row[b] >= merge_threshold:
                uf.union(a, b)

    groups: dict[int, list[int]] = {}
    for a in range(total):
        groups.setdefault(uf.find(a), []).append(a)
    # dense ids in first-appearance order of each component
    ordered = sorted(groups.values(), key=min)

    reasons: list[Reason] = []
    membership = np.zeros((n_samples, len(ordered)), dtype=bool)
    for rid, members in enumerate(ordered):
        # fixed evaluation order keeps float sums identical under input permutation
        canon_order = sorted(members, key=lambda m: (flat_text[m], flat_sample[m]))
        block = sim[np.ix_(canon_order, canon_order)]
        totals = block.sum(axis=1)
        best = min(range(len(canon_order)),
                   key=lambda t: (-totals[t], flat_text[canon_order[t]]))
        canonical_idx = canon_order[best]
        variants = sorted({(flat_sample[m], flat_text[m]) for m in members})
        reasons.append(
            Reason(id=rid, canonical_text=flat_text[canonical_idx],
                   variants=variants, embedding=flat_emb[canonical_idx])
        )
        for m in members:
            membership[flat_sample[m], rid] = True

    pool = ReasonPool(reasons=reasons, n_samples=n_samples, membership=membership)
    occurrence_counts(pool, max_order=3)
    return pool


def occurrence_counts(pool: ReasonPool, max_order: int = 3) -> ReasonPool:
    """Populate n_i and the sparse pair/triple co-occurrence counts."""
    if max_order not in (2, 3):
        raise InputError(f"max_order must be 2 or 3, got {max_order}")
    m = pool.membership.astype(np.int64)
    pool.n_i = m.sum(axis=0)
    co = m.T @ m
    pool.pair_counts = {
        (i, j): int(co[i, j])
        for i in range(pool.num_reasons)
        for j in range(i + 1, pool.num_reasons)
        if co[i, j] > 0
    }
    pool.triple_counts = {}
    if max_order == 3:
        for (i, j), nij in pool.pair_counts.items():
            both = m[:, i] * m[:, j]
            with_k = both @ m
            for k in range(j + 1, pool.num_reasons):
                if with_k[k] > 0:
                    pool.triple_counts[(i, j, k)] = int(with_k[k])
    pool.counts_order = max_order
    return pool


def similarity_matrix(pool: ReasonPool) -> np.ndarray:
    """R x R cosine similarities between canonical reason embeddings."""
    r = pool.num_reasons
    if r == 0:
        return np.zeros((0, 0))
    for reason in pool.reasons:
        if reason.embedding is None:
            raise InputError(f"reason {reason.id} has no embedding")
    vectors = np.array([reason.embedding.values for reason in pool.reasons], dtype=float)
    norms = np.linalg.norm(vectors, axis=1)
    if np.any(norms <= 0):
        raise InputError("zero-norm reason embedding")
    unit = vectors / norms[:, None]
    sim = unit @ unit.T
    sim = (sim + sim.T) / 2.0
    np.clip(sim, -1.0, 1.0, out=sim)
    np.fill_diagonal(sim, 1.0)
    return sim


def mean_triple_similarity(sim: np.ndarray, i: int, j: int, k: int) -> float:
    """Mean of the three pairwise similarities within a triple."""
    return (sim[i, j] + sim[i, k] + sim[j, k]) / 3.0


def all_triples(r: int):
    return combinations(range(r), 3)
