"""Estimator-style wrappers so the engine composes with sklearn pipelines.

``TokenPruner`` is a transformer over sequences of encoded documents;
``MaxSimRetriever`` fits an index over documents and answers queries.
Both expose ``get_params``/``set_params`` and are clonable.
"""

from __future__ import annotations

from typing import Sequence, Union

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .corpus_io import EncodedDocument, EncodedQuery, IndexManifest
from .index import (
    SearchParams,
    build_flat,
    build_ivf,
    search_flat,
    search_ivf,
)
from .pruning import PrunedDocument, build_idf_table, prune_document


class TokenPruner(BaseEstimator, TransformerMixin):
    """Select at most ``k`` token records per document.

    Parameters
    ----------
    method : {"none", "first", "idf", "unused", "attention"}
        Selection strategy. ``"idf"`` learns document frequencies in
        ``fit``; the others are stateless and fit is a no-op.
    k : int
        Per-document token budget.
    """

    def __init__(self, method: str = "first", k: int = 50):
        self.method = method
        self.k = k

    def fit(self, X: Sequence[EncodedDocument], y=None) -> "TokenPruner":
        if self.method == "idf":
            self.idf_table_ = build_idf_table(list(X))
        else:
            self.idf_table_ = None
        return self

    def transform(self, X: Sequence[EncodedDocument]) -> list[PrunedDocument]:
        check_is_fitted(self, "idf_table_")
        return [prune_document(doc, self.method, self.k, self.idf_table_) for doc in X]


class MaxSimRetriever(BaseEstimator):
    """Late-interaction retriever over per-token document embeddings.

    Parameters
    ----------
    index_kind : {"flat", "ivf"}
        Exhaustive scoring or inverted-file candidate generation.
    n_clusters : int or None
        Partition count for the ivf index; defaults to the square root of
        the corpus token count.
    normalize : bool
        Project every stored token onto the unit sphere at fit time.
    top_n, nprobe, token_topk : int
        Search-time defaults; see ``SearchParams``.
    seed : int
        Drives centroid training and any sampling.
    """

    def __init__(
        self,
        index_kind: str = "flat",
        n_clusters: int | None = None,
        normalize: bool = False,
        top_n: int = 1000,
        nprobe: int = 128,
        token_topk: int = 8192,
        seed: int = 0,
    ):
        self.index_kind = index_kind
        self.n_clusters = n_clusters
        self.normalize = normalize
        self.top_n = top_n
        self.nprobe = nprobe
        self.token_topk = token_topk
        self.seed = seed

    def fit(
        self, X: Sequence[Union[EncodedDocument, PrunedDocument]], y=None
    ) -> "MaxSimRetriever":
        docs = list(X)
        if not docs:
            raise ValueError("cannot fit on an empty document collection")
        first = docs[0].kept if isinstance(docs[0], PrunedDocument) else docs[0].tokens
        if not first:
            raise ValueError(f"document {docs[0].doc_id!r} has no tokens")
        d = int(len(first[0].embedding))
        manifest = IndexManifest(d=d, normalized=self.normalize, seed=self.seed)
        if self.index_kind == "flat":
            self.index_ = build_flat(docs, manifest)
        elif self.index_kind == "ivf":
            self.index_ = build_ivf(docs, manifest, n_clusters=self.n_clusters, seed=self.seed)
        else:
            raise ValueError(f"unknown index_kind {self.index_kind!r}")
        return self

    def _params(self) -> SearchParams:
        return SearchParams(top_n=self.top_n, nprobe=self.nprobe, token_topk=self.token_topk)

    def search(self, queries: Sequence[EncodedQuery]) -> dict[str, list]:
        """Ranked (doc_id, rank, score) rows per query id."""
        check_is_fitted(self, "index_")
        params = self._params()
        if self.index_.manifest.index_kind == "ivf":
            return {q.query_id: search_ivf(self.index_, q, params) for q in queries}
        return {q.query_id: search_flat(self.index_, q, params) for q in queries}

    def predict(self, queries: Sequence[EncodedQuery]) -> list[str]:
        """Best-scoring doc_id per query, in input order."""
        run = self.search(queries)
        return [run[q.query_id][0][0] for q in queries]
