"""Command-line pipeline: prune, index, search, evaluate, stats.

Reports go to stdout as JSON, diagnostics to stderr.  Output files are
written atomically (temp file + rename), so a failing command never
leaves a truncated artifact at the declared path.  All randomness flows
from --seed, which is recorded in output manifests.
"""

from __future__ import annotations

import argparse
import io
import json
import os
import sys
import tempfile
from collections import Counter
from dataclasses import replace
from pathlib import Path
from typing import Callable

from . import corpus_io, evaluation, index as index_mod, pruning, scoring


def _atomic_write(path: str, producer: Callable[[io.BufferedWriter], None]) -> None:
    """Write via a temp file in the target directory, then rename."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=target.parent, prefix=f".{target.name}.")
    try:
        with os.fdopen(fd, "wb") as handle:
            producer(handle)
        os.replace(tmp_name, target)
    except BaseException:
        try:
            os.unlink(tmp_name)
        except OSError:
            pass
        raise


def _emit_report(report: dict, output: str | None) -> None:
    text = json.dumps(report, indent=2, sort_keys=True)
    print(text)
    if output:
        _atomic_write(output, lambda h: h.write((text + "\n").encode("utf-8")))


def _cmd_prune(args: argparse.Namespace) -> int:
    manifest, docs = corpus_io.read_corpus(args.corpus)
    table = pruning.build_idf_table(docs) if args.method == "idf" else None
    pruned = [pruning.prune_document(doc, args.method, args.k, table) for doc in docs]
    out_manifest = replace(manifest, pruning=args.method, k=args.k)
    out_docs = [
        corpus_io.EncodedDocument(p.doc_id, corpus_io.renumber_positions(p.kept))
        for p in pruned
        if p.kept
    ]
    dropped = len(pruned) - len(out_docs)
    _atomic_write(
        args.output, lambda h: corpus_io.write_corpus(out_docs, out_manifest, h)
    )
    diag = pruning.selection_diagnostics(pruned)
    report = {
        "command": "prune",
        "documents": len(out_docs),
        "documents_dropped_empty": dropped,
        "selection": diag,
        "output": args.output,
    }
    _emit_report(report, None)
    return 0


def _cmd_index(args: argparse.Namespace) -> int:
    manifest, docs = corpus_io.read_corpus(args.corpus)
    normalized = manifest.normalized or args.normalize
    base = replace(manifest, normalized=normalized, seed=args.seed)
    if args.kind == "flat":
        built = index_mod.build_flat(docs, base)
    else:
        built = index_mod.build_ivf(docs, base, n_clusters=args.n_clusters, seed=args.seed)
    _atomic_write(args.output, lambda h: index_mod.save_index(built, h))
    report = {
        "command": "index",
        "kind": built.manifest.index_kind,
        "documents": len(built.docs),
        "total_tokens": built.total_tokens,
        "n_clusters": built.manifest.n_clusters,
        "output": args.output,
    }
    _emit_report(report, None)
    return 0


def _cmd_search(args: argparse.Namespace) -> int:
    idx = index_mod.load_index(args.index)
    qmanifest, queries = corpus_io.read_queries(args.queries)
    if qmanifest.d != idx.manifest.d:
        raise ValueError(
            f"query d={qmanifest.d} does not match index d={idx.manifest.d}"
        )
    if qmanifest.normalized and not idx.manifest.normalized:
        raise ValueError(
            "queries were stored normalized but the index is not; re-encode "
            "or rebuild so both sides agree"
        )
    params = index_mod.SearchParams(
        top_n=args.top_n, nprobe=args.nprobe, token_topk=args.token_topk
    )
    normalize_queries = idx.manifest.normalized and not qmanifest.normalized
    run: dict[str, list] = {}
    for query in queries:
        matrix = query.matrix()
        if normalize_queries:
            matrix = scoring.l2_normalize(matrix)
        if isinstance(idx, index_mod.IvfIndex):
            run[query.query_id] = index_mod.search_ivf(idx, matrix, params)
        else:
            run[query.query_id] = index_mod.search_flat(idx, matrix, params)
    _atomic_write(
        args.output,
        lambda h: h.write(_run_text(run, args.tag).encode("utf-8")),
    )
    report = {
        "command": "search",
        "queries": len(queries),
        "top_n": args.top_n,
        "output": args.output,
    }
    _emit_report(report, None)
    return 0


def _run_text(run: dict, tag: str) -> str:
    buf = io.StringIO()
    evaluation.write_run(run, buf, tag=tag)
    return buf.getvalue()


def _cmd_evaluate(args: argparse.Namespace) -> int:
    run = evaluation.read_run(args.run)
    qrels = evaluation.read_qrels(args.qrels)
    report = evaluation.evaluate_run(
        run, qrels, mrr_cutoff=args.mrr_k, recall_cutoff=args.recall_k
    )
    _emit_report(report.to_dict(), args.output)
    return 0


def _cmd_stats(args: argparse.Namespace) -> int:
    if args.index:
        idx = index_mod.load_index(args.index)
        manifest = idx.manifest
        total = idx.total_tokens
        documents = len(idx.docs)
        file_bytes = Path(args.index).stat().st_size
        kind = manifest.index_kind
    else:
        manifest, docs = corpus_io.read_corpus(args.corpus)
        total = sum(len(doc.tokens) for doc in docs)
        documents = len(docs)
        file_bytes = Path(args.corpus).stat().st_size
        kind = "corpus"
    report = {
        "command": "stats",
        "kind": kind,
        "documents": documents,
        "total_tokens": total,
        "d": manifest.d,
        "dtype": manifest.dtype,
        "pruning": {"method": manifest.pruning, "k": manifest.k},
        "embedding_bytes": evaluation.index_size_bytes(
            total, manifest.d, manifest.bytes_per_dim()
        ),
        "file_bytes": file_bytes,
    }
    if args.corpus and not args.index:
        duplicated = 0
        punct = 0
        for doc in docs:
            counts = Counter(t.token_id for t in doc.tokens)
            duplicated += sum(1 for t in doc.tokens if counts[t.token_id] >= 2)
            punct += sum(1 for t in doc.tokens if t.is_punctuation())
        report["duplicate_rate"] = duplicated / total if total else 0.0
        report["punctuation_share"] = punct / total if total else 0.0
    if args.original:
        _, originals = corpus_io.read_corpus(args.original)
        original_total = sum(len(doc.tokens) for doc in originals)
        report["retention"] = evaluation.retention(total, original_total)
    _emit_report(report, args.output)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="limv",
        description="Late-interaction multi-vector retrieval with token pruning.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_prune = sub.add_parser("prune", help="select at most k tokens per document")
    p_prune.add_argument("--corpus", required=True, help="input corpus file")
    p_prune.add_argument("--output", required=True, help="pruned corpus file")
    p_prune.add_argument(
        "--method",
        required=True,
        choices=[m for m in pruning.PRUNING_METHODS if m != "none"],
        help="token selection strategy",
    )
    p_prune.add_argument(
        "--k",
        type=int,
        required=True,
        help="per-document token budget (typical settings: 10 or 50)",
    )
    p_prune.set_defaults(func=_cmd_prune)

    p_index = sub.add_parser("index", help="build a searchable index from a corpus")
    p_index.add_argument("--corpus", required=True)
    p_index.add_argument("--output", required=True, help="index file")
    p_index.add_argument("--kind", choices=["flat", "ivf"], default="flat")
    p_index.add_argument(
        "--n-clusters",
        type=int,
        default=None,
        help="ivf partition count (default: sqrt of the token count)",
    )
    p_index.add_argument(
        "--normalize",
        action="store_true",
        help="project stored token embeddings onto the unit sphere",
    )
    p_index.add_argument("--seed", type=int, default=0)
    p_index.set_defaults(func=_cmd_index)

    p_search = sub.add_parser("search", help="rank documents for a query file")
    p_search.add_argument("--index", required=True)
    p_search.add_argument("--queries", required=True)
    p_search.add_argument("--output", required=True, help="run file")
    p_search.add_argument("--top-n", type=int, default=1000)
    p_search.add_argument(
        "--nprobe", type=int, default=128, help="ivf partitions probed per query token"
    )
    p_search.add_argument(
        "--token-topk",
        type=int,
        default=8192,
        help="candidate tokens kept per query token before exact rerank",
    )
    p_search.add_argument("--tag", default="limv", help="run tag written per line")
    p_search.set_defaults(func=_cmd_search)

    p_eval = sub.add_parser("evaluate", help="score a run file against qrels")
    p_eval.add_argument("--run", required=True)
    p_eval.add_argument("--qrels", required=True)
    p_eval.add_argument("--mrr-k", type=int, default=10)
    p_eval.add_argument("--recall-k", type=int, default=1000)
    p_eval.add_argument("--output", default=None, help="also write the JSON report here")
    p_eval.set_defaults(func=_cmd_evaluate)

    p_stats = sub.add_parser("stats", help="token, retention, and size accounting")
    group = p_stats.add_mutually_exclusive_group(required=True)
    group.add_argument("--corpus")
    group.add_argument("--index")
    p_stats.add_argument(
        "--original", default=None, help="unpruned corpus to compute retention against"
    )
    p_stats.add_argument("--output", default=None)
    p_stats.set_defaults(func=_cmd_stats)
    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # surfaced as a diagnostic, not a traceback
        print(f"limv: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
