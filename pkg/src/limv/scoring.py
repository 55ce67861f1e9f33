"""Late-interaction scoring.

A document's score for a query is the sum, over query tokens, of the
maximum dot product between that query token and any document token.
Accumulation order is fixed (query-token order, float32 accumulator) so
repeated runs and batched runs produce bit-identical scores.
"""

from __future__ import annotations

from typing import Sequence, Union

import numpy as np

from .corpus_io import EncodedQuery


def as_token_matrix(x, name: str = "matrix") -> np.ndarray:
    """Coerce to a non-empty float32 (t, d) matrix or raise ValueError."""
    arr = np.asarray(x, dtype=np.float32)
    if arr.ndim != 2:
        raise ValueError(f"{name} must be 2-dimensional, got shape {arr.shape}")
    if arr.shape[0] == 0 or arr.shape[1] == 0:
        raise ValueError(f"{name} must be non-empty, got shape {arr.shape}")
    return arr


def token_similarities(doc_matrix: np.ndarray, query_matrix: np.ndarray) -> np.ndarray:
    """All pairwise dot products, shape (doc tokens, query tokens).

    Uses a non-BLAS einsum so every entry is accumulated over the embedding
    axis in a fixed order, independent of which other rows are present.
    Removing document rows therefore never changes the value computed for a
    surviving row, which is what makes pruned-score monotonicity exact.
    """
    return np.einsum("td,qd->tq", doc_matrix, query_matrix, optimize=False)


def l2_normalize(matrix: np.ndarray) -> np.ndarray:
    """Scale every row onto the unit sphere; raises on a zero-norm row."""
    arr = as_token_matrix(matrix, "token matrix")
    norms = np.linalg.norm(arr, axis=1)
    zero = np.flatnonzero(norms == 0.0)
    if zero.size:
        raise ValueError(f"zero-norm row at position {int(zero[0])}")
    return (arr / norms[:, None]).astype(np.float32, copy=False)


def maxsim(query_matrix: np.ndarray, doc_matrix: np.ndarray) -> float:
    """Sum over query tokens of the best dot product against the document."""
    q = as_token_matrix(query_matrix, "query matrix")
    d = as_token_matrix(doc_matrix, "document matrix")
    if q.shape[1] != d.shape[1]:
        raise ValueError(
            f"dimension mismatch: query d={q.shape[1]}, document d={d.shape[1]}"
        )
    sims = token_similarities(d, q)
    per_query = sims.max(axis=0)
    total = np.float32(0.0)
    for value in per_query:
        total = total + value
    return float(total)


def score_batch(
    query: Union[EncodedQuery, np.ndarray],
    docs: Sequence[tuple[str, np.ndarray]],
    normalized: bool = False,
) -> list[tuple[str, float]]:
    """Score one query against many documents, preserving input order.

    ``docs`` is a sequence of (doc_id, token matrix) pairs.  Each score
    equals ``maxsim`` on that pair bit-for-bit.  When ``normalized`` is
    set the query rows are checked to actually sit on the unit sphere,
    catching corpora stored under the wrong manifest flag.
    """
    q = query.matrix() if isinstance(query, EncodedQuery) else query
    q = as_token_matrix(q, "query matrix")
    if normalized:
        norms = np.linalg.norm(q, axis=1)
        off = np.flatnonzero(np.abs(norms - 1.0) > 1e-3)
        if off.size:
            raise ValueError(
                f"normalized flag is set but query row {int(off[0])} has "
                f"norm {float(norms[off[0]]):.6f}"
            )
    return [(doc_id, maxsim(q, matrix)) for doc_id, matrix in docs]
