"""Late-interaction multi-vector retrieval with token pruning.

Stores one embedding per document token, prunes tokens at indexing time
(first-k, top-IDF, reserved summary tokens, or attention importance), and
answers queries by summing per-query-token maxima over exact or
IVF-approximate token search.
"""

import os as _os

# Cap BLAS/OpenMP pools before numpy spins them up; a no-op if numpy is
# already imported or the variables are already set.
_threads = _os.environ.get("LIMV_THREADS")
if _threads and _threads.isdigit():
    for _var in (
        "OMP_NUM_THREADS",
        "OPENBLAS_NUM_THREADS",
        "MKL_NUM_THREADS",
        "NUMEXPR_NUM_THREADS",
    ):
        _os.environ.setdefault(_var, _threads)

from .corpus_io import (
    CorpusCorruptionError,
    CorpusFormatError,
    CorpusValidationError,
    EncodedDocument,
    EncodedQuery,
    IndexManifest,
    TokenFlags,
    TokenRecord,
    read_corpus,
    read_queries,
    write_corpus,
    write_queries,
)
from .pruning import (
    IdfTable,
    PrunedDocument,
    attention_importance,
    build_idf_table,
    prune_attention_top_k,
    prune_document,
    prune_first_k,
    prune_idf_top_k,
    prune_unused_tokens,
    selection_diagnostics,
)
from .scoring import l2_normalize, maxsim, score_batch, token_similarities
from .index import (
    FlatIndex,
    IvfIndex,
    SearchParams,
    build_flat,
    build_ivf,
    kmeans_train,
    load_index,
    save_index,
    search_flat,
    search_ivf,
)
from .evaluation import (
    EvalReport,
    Qrels,
    RankedRun,
    evaluate_run,
    index_size_bytes,
    mrr_at_k,
    read_qrels,
    read_run,
    recall_at_k,
    retention,
    write_run,
)
from .estimators import MaxSimRetriever, TokenPruner

__version__ = "0.1.0"

__all__ = [
    "CorpusCorruptionError",
    "CorpusFormatError",
    "CorpusValidationError",
    "EncodedDocument",
    "EncodedQuery",
    "EvalReport",
    "FlatIndex",
    "IdfTable",
    "IndexManifest",
    "IvfIndex",
    "MaxSimRetriever",
    "PrunedDocument",
    "Qrels",
    "RankedRun",
    "SearchParams",
    "TokenFlags",
    "TokenPruner",
    "TokenRecord",
    "attention_importance",
    "build_flat",
    "build_idf_table",
    "build_ivf",
    "evaluate_run",
    "index_size_bytes",
    "kmeans_train",
    "l2_normalize",
    "load_index",
    "maxsim",
    "mrr_at_k",
    "prune_attention_top_k",
    "prune_document",
    "prune_first_k",
    "prune_idf_top_k",
    "prune_unused_tokens",
    "read_corpus",
    "read_qrels",
    "read_queries",
    "read_run",
    "recall_at_k",
    "retention",
    "save_index",
    "score_batch",
    "search_flat",
    "search_ivf",
    "selection_diagnostics",
    "token_similarities",
    "write_corpus",
    "write_queries",
    "write_run",
]
