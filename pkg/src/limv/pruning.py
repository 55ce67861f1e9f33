"""Token-selection strategies applied at indexing time.

Four ways to keep at most k embeddings per document: the first k tokens,
the k rarest tokens by corpus IDF, the k reserved "unused" summary tokens
placed by the encoder, and the k tokens receiving the most last-layer
attention.  All selections are deterministic: score ties break toward the
earliest position, and kept tokens stay in original document order.
"""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .corpus_io import EncodedDocument, TokenRecord

PRUNING_METHODS = ("none", "first", "idf", "unused", "attention")


@dataclass
class PrunedDocument:
    """Subset of a document's token records chosen by one method.

    ``kept`` preserves original positions and order; ``source_token_count``
    is the token count of the document before pruning, which retention
    statistics are computed against.
    """

    doc_id: str
    kept: list[TokenRecord]
    method: str
    k: int
    source_token_count: int


@dataclass
class IdfTable:
    """Smoothed inverse document frequency per vocabulary id.

    idf(t) = ln((N + 1) / (df(t) + 1)) where df counts documents, not
    occurrences.  Always >= 0 and 0 for a token present in every document.
    """

    doc_count: int
    df: dict[int, int]

    def idf(self, token_id: int) -> float:
        try:
            return math.log((self.doc_count + 1) / (self.df[token_id] + 1))
        except KeyError:
            raise ValueError(f"token_id {token_id} missing from idf table") from None

    def __contains__(self, token_id: int) -> bool:
        return token_id in self.df


def build_idf_table(docs: Sequence[EncodedDocument]) -> IdfTable:
    """Count document frequencies over a corpus and derive IDF weights."""
    if not docs:
        raise ValueError("cannot build an idf table from an empty corpus")
    df: Counter[int] = Counter()
    for doc in docs:
        df.update({tok.token_id for tok in doc.tokens})
    return IdfTable(doc_count=len(docs), df=dict(df))


def prune_first_k(doc: EncodedDocument, k: int) -> PrunedDocument:
    """Keep the k earliest tokens, punctuation and special tokens included."""
    _check_budget(k)
    return PrunedDocument(
        doc_id=doc.doc_id,
        kept=list(doc.tokens[:k]),
        method="first",
        k=k,
        source_token_count=len(doc.tokens),
    )


def prune_idf_top_k(doc: EncodedDocument, k: int, table: IdfTable) -> PrunedDocument:
    """Keep the k rarest non-punctuation tokens by corpus IDF.

    Ties break toward the earliest position; kept tokens are re-emitted in
    original document order.
    """
    _check_budget(k)
    eligible = [i for i, tok in enumerate(doc.tokens) if not tok.is_punctuation()]
    weights = {i: table.idf(doc.tokens[i].token_id) for i in eligible}
    chosen = sorted(eligible, key=lambda i: (-weights[i], i))[:k]
    keep = sorted(chosen)
    return PrunedDocument(
        doc_id=doc.doc_id,
        kept=[doc.tokens[i] for i in keep],
        method="idf",
        k=k,
        source_token_count=len(doc.tokens),
    )


def prune_unused_tokens(doc: EncodedDocument, k: int) -> PrunedDocument:
    """Keep exactly the k reserved summary tokens flagged by the encoder."""
    _check_budget(k)
    unused = [tok for tok in doc.tokens if tok.is_unused()]
    if len(unused) < k:
        raise ValueError(
            f"document {doc.doc_id!r} has {len(unused)} unused-flagged tokens, "
            f"need {k}; corpus was not encoded in unused-token mode"
        )
    return PrunedDocument(
        doc_id=doc.doc_id,
        kept=unused[:k],
        method="unused",
        k=k,
        source_token_count=len(doc.tokens),
    )


def prune_attention_top_k(doc: EncodedDocument, k: int) -> PrunedDocument:
    """Keep the k non-punctuation tokens with the highest attention importance.

    Repeated vocabulary ids are kept independently: a token occurring at
    several positions can be selected at each of them.
    """
    _check_budget(k)
    eligible = [i for i, tok in enumerate(doc.tokens) if not tok.is_punctuation()]
    chosen = sorted(eligible, key=lambda i: (-doc.tokens[i].attention_importance, i))[:k]
    keep = sorted(chosen)
    return PrunedDocument(
        doc_id=doc.doc_id,
        kept=[doc.tokens[i] for i in keep],
        method="attention",
        k=k,
        source_token_count=len(doc.tokens),
    )


def prune_document(
    doc: EncodedDocument,
    method: str,
    k: int,
    table: IdfTable | None = None,
) -> PrunedDocument:
    """Dispatch to one selection strategy; method "none" keeps everything."""
    if method == "none":
        return PrunedDocument(
            doc_id=doc.doc_id,
            kept=list(doc.tokens),
            method="none",
            k=k,
            source_token_count=len(doc.tokens),
        )
    if method == "first":
        return prune_first_k(doc, k)
    if method == "idf":
        if table is None:
            raise ValueError("idf pruning requires an IdfTable")
        return prune_idf_top_k(doc, k, table)
    if method == "unused":
        return prune_unused_tokens(doc, k)
    if method == "attention":
        return prune_attention_top_k(doc, k)
    raise ValueError(f"unknown pruning method {method!r}")


def attention_importance(attention: np.ndarray) -> np.ndarray:
    """Total attention received by each token, summed over heads and payers.

    ``attention`` has shape (heads, t, t) and must be row-stochastic over
    the last axis: entry (h, i, j) is how much attention token i pays to
    token j under head h.  Returns a length-t vector whose total is
    heads * t (each of the h*t rows distributes exactly one unit of mass).
    """
    arr = np.asarray(attention, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ValueError(
            f"attention tensor must have shape (heads, t, t), got {arr.shape}"
        )
    row_sums = arr.sum(axis=2)
    off = np.abs(row_sums - 1.0)
    if (off > 1e-4).any():
        head, row = np.unravel_index(int(np.argmax(off)), off.shape)
        raise ValueError(
            f"attention row (head {head}, token {row}) sums to "
            f"{row_sums[head, row]:.6f}, not 1"
        )
    return arr.sum(axis=(0, 1))


def selection_diagnostics(pruned: Iterable[PrunedDocument]) -> list[dict]:
    """Per-(method, k) selection statistics over a pruned corpus.

    Reports retention (kept tokens as a percentage of source tokens), the
    share of kept records whose vocabulary id repeats within their
    document's kept set, and the share of kept records flagged as
    punctuation.
    """
    groups: dict[tuple[str, int], dict[str, float]] = {}
    for doc in pruned:
        stats = groups.setdefault(
            (doc.method, doc.k),
            {"kept": 0, "source": 0, "duplicated": 0, "punctuation": 0},
        )
        stats["kept"] += len(doc.kept)
        stats["source"] += doc.source_token_count
        counts = Counter(tok.token_id for tok in doc.kept)
        stats["duplicated"] += sum(
            1 for tok in doc.kept if counts[tok.token_id] >= 2
        )
        stats["punctuation"] += sum(1 for tok in doc.kept if tok.is_punctuation())
    report = []
    for (method, k), stats in sorted(groups.items()):
        kept = stats["kept"]
        report.append(
            {
                "method": method,
                "k": k,
                "retention": 100.0 * kept / stats["source"] if stats["source"] else 0.0,
                "duplicate_rate": stats["duplicated"] / kept if kept else 0.0,
                "punctuation_share": stats["punctuation"] / kept if kept else 0.0,
            }
        )
    return report


def _check_budget(k: int) -> None:
    if k < 1:
        raise ValueError(f"selection budget k must be >= 1, got {k}")
