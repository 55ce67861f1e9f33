"""Token-level indexes: exact flat search and IVF-approximate search.

The flat index scores every document with the late-interaction formula and
is the ground truth for ranking.  The IVF index partitions token vectors
by nearest k-means centroid; a query probes the closest partitions per
query token, keeps the best candidate tokens, and then reranks the
candidate documents with full scoring, so approximation only changes
*which* documents get scored, never their scores.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import BinaryIO, Sequence, Union

import numpy as np

from . import corpus_io
from .corpus_io import (
    CorpusCorruptionError,
    EncodedDocument,
    EncodedQuery,
    INDEX_MAGIC,
    IndexManifest,
)
from .pruning import PrunedDocument
from .scoring import as_token_matrix, l2_normalize, maxsim

TRAIN_SAMPLE_CAP = 2**20

RankedRow = tuple[str, int, float]


@dataclass
class SearchParams:
    """Result depth and, for IVF, the two stage-1 candidate widths."""

    top_n: int = 1000
    nprobe: int = 128
    token_topk: int = 8192

    def __post_init__(self) -> None:
        if self.top_n < 1:
            raise ValueError(f"top_n must be >= 1, got {self.top_n}")
        if self.nprobe < 1:
            raise ValueError(f"nprobe must be >= 1, got {self.nprobe}")
        if self.token_topk < 1:
            raise ValueError(f"token_topk must be >= 1, got {self.token_topk}")


@dataclass
class FlatIndex:
    """All token matrices held per document for exhaustive scoring."""

    manifest: IndexManifest
    docs: list[EncodedDocument]
    matrices: list[np.ndarray]

    @property
    def doc_ids(self) -> list[str]:
        return [doc.doc_id for doc in self.docs]

    @property
    def total_tokens(self) -> int:
        return sum(m.shape[0] for m in self.matrices)


@dataclass
class IvfIndex:
    """Flat document table plus a token-level inverted file.

    ``assignments`` maps every stored token (corpus order: documents in
    table order, tokens in position order) to its nearest centroid.
    """

    manifest: IndexManifest
    docs: list[EncodedDocument]
    matrices: list[np.ndarray]
    centroids: np.ndarray
    assignments: np.ndarray
    cluster_tokens: list[np.ndarray] = field(init=False, repr=False)
    cluster_doc_refs: list[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self) -> None:
        n_clusters = self.centroids.shape[0]
        all_tokens = np.vstack(self.matrices)
        doc_refs = np.repeat(
            np.arange(len(self.matrices), dtype=np.int32),
            [m.shape[0] for m in self.matrices],
        )
        order = np.argsort(self.assignments, kind="stable")
        sorted_assign = self.assignments[order]
        bounds = np.searchsorted(sorted_assign, np.arange(n_clusters + 1))
        self.cluster_tokens = [
            all_tokens[order[bounds[c] : bounds[c + 1]]] for c in range(n_clusters)
        ]
        self.cluster_doc_refs = [
            doc_refs[order[bounds[c] : bounds[c + 1]]] for c in range(n_clusters)
        ]

    @property
    def doc_ids(self) -> list[str]:
        return [doc.doc_id for doc in self.docs]

    @property
    def total_tokens(self) -> int:
        return sum(m.shape[0] for m in self.matrices)

    @property
    def n_clusters(self) -> int:
        return self.centroids.shape[0]


def _source_tokens(doc: Union[EncodedDocument, PrunedDocument]):
    return doc.kept if isinstance(doc, PrunedDocument) else doc.tokens


def _ingest(
    docs: Sequence[Union[EncodedDocument, PrunedDocument]],
    manifest: IndexManifest,
) -> tuple[list[EncodedDocument], list[np.ndarray]]:
    """Materialize per-document matrices, normalizing if the manifest says so.

    Documents left with zero tokens (possible after pruning) are skipped:
    they carry nothing to score or to route through an inverted file.
    """
    if not docs:
        raise ValueError("cannot build an index from an empty corpus")
    stored_docs: list[EncodedDocument] = []
    matrices: list[np.ndarray] = []
    for doc in docs:
        tokens = _source_tokens(doc)
        if not tokens:
            continue
        matrix = np.stack(
            [np.asarray(t.embedding, dtype=np.float32) for t in tokens]
        )
        if matrix.shape[1] != manifest.d:
            raise ValueError(
                f"document {doc.doc_id!r} has embedding dimension "
                f"{matrix.shape[1]}, manifest says {manifest.d}"
            )
        if manifest.normalized:
            matrix = l2_normalize(matrix)
        records = [
            replace(tok, position=i, embedding=matrix[i])
            for i, tok in enumerate(tokens)
        ]
        stored_docs.append(EncodedDocument(doc.doc_id, records))
        matrices.append(matrix)
    if not stored_docs:
        raise ValueError("corpus contains no tokens after ingest")
    return stored_docs, matrices


def build_flat(
    docs: Sequence[Union[EncodedDocument, PrunedDocument]],
    manifest: IndexManifest,
) -> FlatIndex:
    """Build an exhaustive index holding exactly the given tokens."""
    stored, matrices = _ingest(docs, manifest)
    return FlatIndex(
        manifest=replace(manifest, index_kind="flat", n_clusters=0),
        docs=stored,
        matrices=matrices,
    )


def _sq_distances(points: np.ndarray, centroids: np.ndarray) -> np.ndarray:
    d2 = (
        np.sum(points * points, axis=1)[:, None]
        - 2.0 * (points @ centroids.T)
        + np.sum(centroids * centroids, axis=1)[None, :]
    )
    return np.maximum(d2, 0.0)


def _plusplus_init(points: np.ndarray, n_clusters: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    chosen = np.empty(n_clusters, dtype=np.int64)
    chosen[0] = rng.integers(n)
    # float64 so the sampling weights normalize cleanly at large n
    closest = _sq_distances(points, points[chosen[0]][None, :])[:, 0].astype(np.float64)
    taken = {int(chosen[0])}
    for c in range(1, n_clusters):
        total = float(closest.sum())
        if total > 0.0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # all remaining mass is zero (duplicate points); take the first unseen
            idx = next(i for i in range(n) if i not in taken)
        chosen[c] = idx
        taken.add(idx)
        closest = np.minimum(
            closest, _sq_distances(points, points[idx][None, :])[:, 0].astype(np.float64)
        )
    return points[chosen].astype(np.float32, copy=True)


def kmeans_train(
    tokens: np.ndarray,
    n_clusters: int,
    seed: int,
    max_iters: int = 20,
) -> np.ndarray:
    """Lloyd's algorithm with Euclidean assignment, deterministic per seed.

    Initialization is distance-weighted sampling from the data.  A cluster
    that empties out is reseeded with the point of the largest cluster
    farthest from that cluster's centroid.
    """
    points = as_token_matrix(tokens, "training sample")
    n = points.shape[0]
    if n_clusters < 1:
        raise ValueError(f"n_clusters must be >= 1, got {n_clusters}")
    if n < n_clusters:
        raise ValueError(
            f"training sample of {n} vectors is smaller than n_clusters={n_clusters}"
        )
    rng = np.random.default_rng(seed)
    centroids = _plusplus_init(points, n_clusters, rng)
    assign = np.argmin(_sq_distances(points, centroids), axis=1)
    for _ in range(max_iters):
        sums = np.zeros((n_clusters, points.shape[1]), dtype=np.float64)
        np.add.at(sums, assign, points.astype(np.float64))
        counts = np.bincount(assign, minlength=n_clusters)
        for c in np.flatnonzero(counts == 0):
            largest = int(np.argmax(counts))
            members = np.flatnonzero(assign == largest)
            dists = _sq_distances(points[members], centroids[largest][None, :])[:, 0]
            stray = int(members[np.argmax(dists)])
            sums[largest] -= points[stray]
            sums[c] = points[stray]
            counts[largest] -= 1
            counts[c] = 1
            assign[stray] = c
        centroids = (sums / counts[:, None]).astype(np.float32)
        new_assign = np.argmin(_sq_distances(points, centroids), axis=1)
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
    return centroids


def default_n_clusters(total_tokens: int) -> int:
    return max(1, math.ceil(math.sqrt(total_tokens)))


def build_ivf(
    docs: Sequence[Union[EncodedDocument, PrunedDocument]],
    manifest: IndexManifest,
    n_clusters: int | None = None,
    seed: int | None = None,
    max_iters: int = 20,
) -> IvfIndex:
    """Train centroids on (a sample of) the token vectors and assign all.

    ``n_clusters`` defaults to the square root of the token count; ``seed``
    defaults to the manifest seed.  Training uses at most 2**20 uniformly
    sampled tokens.
    """
    stored, matrices = _ingest(docs, manifest)
    all_tokens = np.vstack(matrices)
    total = all_tokens.shape[0]
    if n_clusters is None:
        n_clusters = default_n_clusters(total)
    n_clusters = min(n_clusters, total)
    if seed is None:
        seed = manifest.seed
    rng = np.random.default_rng(seed)
    if total > TRAIN_SAMPLE_CAP:
        sample_idx = np.sort(rng.choice(total, size=TRAIN_SAMPLE_CAP, replace=False))
        sample = all_tokens[sample_idx]
    else:
        sample = all_tokens
    centroids = kmeans_train(sample, n_clusters, seed, max_iters=max_iters)
    assignments = np.argmin(_sq_distances(all_tokens, centroids), axis=1).astype(np.uint32)
    return IvfIndex(
        manifest=replace(manifest, index_kind="ivf", n_clusters=n_clusters, seed=seed),
        docs=stored,
        matrices=matrices,
        centroids=centroids,
        assignments=assignments,
    )


def _query_matrix(query: Union[EncodedQuery, np.ndarray], d: int) -> np.ndarray:
    matrix = query.matrix() if isinstance(query, EncodedQuery) else query
    matrix = as_token_matrix(matrix, "query matrix")
    if matrix.shape[1] != d:
        raise ValueError(f"query dimension {matrix.shape[1]} does not match index d={d}")
    return matrix


def _rank(
    doc_ids: Sequence[str], scores: Sequence[float], top_n: int
) -> list[RankedRow]:
    order = sorted(range(len(doc_ids)), key=lambda i: (-scores[i], doc_ids[i]))
    return [
        (doc_ids[i], rank, scores[i])
        for rank, i in enumerate(order[:top_n], start=1)
    ]


def search_flat(
    index: FlatIndex,
    query: Union[EncodedQuery, np.ndarray],
    params: SearchParams | None = None,
) -> list[RankedRow]:
    """Score every document and return the top results, best first.

    Equal scores rank in lexicographic doc_id order.
    """
    params = params or SearchParams()
    q = _query_matrix(query, index.manifest.d)
    scores = [maxsim(q, matrix) for matrix in index.matrices]
    return _rank(index.doc_ids, scores, params.top_n)


def search_ivf(
    index: IvfIndex,
    query: Union[EncodedQuery, np.ndarray],
    params: SearchParams | None = None,
) -> list[RankedRow]:
    """Probe the nearest partitions per query token, then rerank exactly.

    Stage 1 ranks centroids (dot product on normalized corpora, negative
    Euclidean distance otherwise), gathers the tokens of the ``nprobe``
    best partitions, and keeps the ``token_topk`` highest-dot-product
    tokens per query token.  Stage 2 scores the union of candidate
    documents with the same exact routine the flat index uses.
    """
    params = params or SearchParams()
    q = _query_matrix(query, index.manifest.d)
    nprobe = min(params.nprobe, index.n_clusters)
    candidates: set[int] = set()
    for row in q:
        if index.manifest.normalized:
            centroid_scores = index.centroids @ row
        else:
            centroid_scores = -_sq_distances(index.centroids, row[None, :])[:, 0]
        probe = np.argsort(-centroid_scores, kind="stable")[:nprobe]
        gathered = np.concatenate([index.cluster_tokens[c] for c in probe])
        refs = np.concatenate([index.cluster_doc_refs[c] for c in probe])
        if gathered.shape[0] == 0:
            continue
        token_scores = gathered @ row
        if params.token_topk < token_scores.shape[0]:
            top = np.argpartition(-token_scores, params.token_topk - 1)[
                : params.token_topk
            ]
            refs = refs[top]
        candidates.update(int(r) for r in refs)
    chosen = sorted(candidates)
    doc_ids = [index.docs[i].doc_id for i in chosen]
    scores = [maxsim(q, index.matrices[i]) for i in chosen]
    return _rank(doc_ids, scores, params.top_n)


def save_index(
    index: Union[FlatIndex, IvfIndex],
    destination: Union[str, Path, BinaryIO],
) -> int:
    """Serialize an index; corpus sections plus centroid/assignment data."""
    payload = bytearray(
        corpus_io._serialize(index.docs, index.manifest, INDEX_MAGIC, "doc_id")
    )
    if isinstance(index, IvfIndex):
        payload += index.centroids.astype("<f4").tobytes()
        payload += index.assignments.astype("<u4").tobytes()
    sink, owned = corpus_io._open_sink(destination)
    try:
        sink.write(payload)
    finally:
        if owned:
            sink.close()
    return len(payload)


def load_index(source: Union[str, Path, BinaryIO, bytes]) -> Union[FlatIndex, IvfIndex]:
    """Reconstruct an index from its serialized form.

    Stored vectors are final: normalization recorded in the manifest was
    applied at build time and is not reapplied here.
    """
    buf = corpus_io._read_all(source)
    manifest, items, cur = corpus_io._parse_items(buf, INDEX_MAGIC)
    docs = []
    for doc_id, tokens in items:
        doc = EncodedDocument(doc_id, tokens)
        corpus_io.validate_document(doc, manifest.d)
        docs.append(doc)
    matrices = [doc.matrix() for doc in docs]
    if manifest.index_kind == "flat":
        if cur.offset != len(buf):
            raise CorpusCorruptionError("trailing data after flat index", cur.offset)
        return FlatIndex(manifest=manifest, docs=docs, matrices=matrices)
    total_tokens = sum(m.shape[0] for m in matrices)
    centroid_bytes = cur.take(manifest.n_clusters * manifest.d * 4, "centroid matrix")
    centroids = np.frombuffer(centroid_bytes, dtype="<f4").reshape(
        manifest.n_clusters, manifest.d
    ).astype(np.float32, copy=True)
    assign_bytes = cur.take(total_tokens * 4, "assignment array")
    assignments = np.frombuffer(assign_bytes, dtype="<u4").astype(np.uint32, copy=True)
    if cur.offset != len(buf):
        raise CorpusCorruptionError("trailing data after ivf index", cur.offset)
    if assignments.size and int(assignments.max()) >= manifest.n_clusters:
        raise corpus_io.CorpusValidationError(
            f"token assigned to cluster {int(assignments.max())}, "
            f"index has {manifest.n_clusters}"
        )
    return IvfIndex(
        manifest=manifest,
        docs=docs,
        matrices=matrices,
        centroids=centroids,
        assignments=assignments,
    )
