"""Shared builders for synthetic corpora used across the test modules."""

from __future__ import annotations

import numpy as np
import pytest

from limv import EncodedDocument, EncodedQuery, TokenFlags, TokenRecord


def maxsim_oracle(query: np.ndarray, doc: np.ndarray) -> float:
    """Independent double loop over query and document tokens, float64."""
    total = 0.0
    for q in query.astype(np.float64):
        best = -np.inf
        for t in doc.astype(np.float64):
            best = max(best, float(np.dot(q, t)))
        total += best
    return total


def make_doc(
    doc_id: str,
    rng: np.random.Generator,
    n_tokens: int,
    d: int,
    vocab: int = 200,
    punct_rate: float = 0.0,
) -> EncodedDocument:
    """Random document; guarantees at least one non-punctuation token."""
    tokens = []
    for i in range(n_tokens):
        flags = TokenFlags.NONE
        if punct_rate and i > 0 and rng.random() < punct_rate:
            flags = TokenFlags.PUNCTUATION
        tokens.append(
            TokenRecord(
                token_id=int(rng.integers(vocab)),
                position=i,
                embedding=rng.normal(size=d).astype(np.float32),
                surface=f"t{i}",
                flags=flags,
                idf=float(rng.random()),
                attention_importance=float(rng.random()),
            )
        )
    return EncodedDocument(doc_id, tokens)


def make_query(query_id: str, rng: np.random.Generator, n_tokens: int, d: int) -> EncodedQuery:
    tokens = [
        TokenRecord(
            token_id=int(rng.integers(200)),
            position=i,
            embedding=rng.normal(size=d).astype(np.float32),
        )
        for i in range(n_tokens)
    ]
    return EncodedQuery(query_id, tokens)


def clustered_corpus(
    seed: int,
    n_docs: int,
    d: int,
    n_topics: int = 64,
    mean_tokens: int = 100,
    query_count: int = 0,
    query_tokens: int = 8,
):
    """Topic-structured corpus: each document's tokens scatter around one
    topic center, and each query perturbs tokens drawn from one document.

    The structure gives approximate search something real to exploit, the
    way contextual embeddings cluster in practice.
    """
    rng = np.random.default_rng(seed)
    centers = rng.normal(size=(n_topics, d)).astype(np.float32)
    docs = []
    for i in range(n_docs):
        topic = int(rng.integers(n_topics))
        t = int(rng.integers(mean_tokens - 20, mean_tokens + 21))
        vectors = centers[topic] + 0.35 * rng.normal(size=(t, d)).astype(np.float32)
        tokens = [
            TokenRecord(
                token_id=int(rng.integers(5000)),
                position=j,
                embedding=vectors[j],
                attention_importance=float(rng.random()),
            )
            for j in range(t)
        ]
        docs.append(EncodedDocument(f"doc{i:05d}", tokens))
    queries = []
    for i in range(query_count):
        source = docs[int(rng.integers(n_docs))]
        picks = rng.choice(len(source.tokens), size=query_tokens, replace=False)
        tokens = [
            TokenRecord(
                token_id=source.tokens[p].token_id,
                position=j,
                embedding=source.tokens[p].embedding
                + 0.05 * rng.normal(size=d).astype(np.float32),
            )
            for j, p in enumerate(sorted(int(p) for p in picks))
        ]
        queries.append(EncodedQuery(f"q{i:04d}", tokens))
    return docs, queries


@pytest.fixture(scope="session")
def small_clustered():
    docs, queries = clustered_corpus(
        seed=7, n_docs=120, d=16, n_topics=12, mean_tokens=40, query_count=10
    )
    return docs, queries
