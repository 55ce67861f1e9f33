"""Acceptance suite: one test per release criterion, printed pass/fail.

Run with ``pytest tests/test_acceptance.py -v -s`` to see one status line
per criterion.  Every tolerance is pinned here; the large-corpus criteria
share one session-scoped synthetic corpus and its prebuilt indexes.
"""

import functools
import io
import json
import time

import numpy as np
import pytest

from limv import (
    EncodedDocument,
    IndexManifest,
    SearchParams,
    TokenRecord,
    attention_importance,
    build_flat,
    build_idf_table,
    build_ivf,
    index_size_bytes,
    maxsim,
    mrr_at_k,
    prune_attention_top_k,
    prune_document,
    prune_first_k,
    read_corpus,
    recall_at_k,
    search_flat,
    search_ivf,
    selection_diagnostics,
    write_corpus,
    write_queries,
    Qrels,
)
from limv.cli import main as cli_main

from conftest import clustered_corpus, make_doc, make_query, maxsim_oracle


def criterion(name):
    """Print one pass/fail line per criterion, whatever pytest captures."""

    def wrap(fn):
        @functools.wraps(fn)
        def run(*args, **kwargs):
            try:
                result = fn(*args, **kwargs)
            except BaseException:
                print(f"[FAIL] {name}")
                raise
            print(f"[PASS] {name}")
            return result

        return run

    return wrap


@pytest.fixture(scope="module")
def big_corpus():
    """1,000 documents of ~100 16-d tokens, 100 queries, both indexes."""
    started = time.perf_counter()
    docs, queries = clustered_corpus(
        seed=1234, n_docs=1000, d=16, n_topics=64, mean_tokens=100,
        query_count=100, query_tokens=8,
    )
    manifest = IndexManifest(d=16)
    flat = build_flat(docs, manifest)
    ivf = build_ivf(docs, manifest, n_clusters=256, seed=4242)
    build_seconds = time.perf_counter() - started
    return docs, queries, flat, ivf, build_seconds


class TestAcceptance:
    @criterion("maxsim oracle equivalence (200 pairs, rel 1e-5, < 5 s)")
    def test_maxsim_oracle_equivalence(self):
        rng = np.random.default_rng(101)
        started = time.perf_counter()
        for _ in range(200):
            q = rng.normal(size=(int(rng.integers(1, 41)), 8)).astype(np.float32)
            d = rng.normal(size=(int(rng.integers(1, 41)), 8)).astype(np.float32)
            got = maxsim(q, d)
            want = maxsim_oracle(q, d)
            assert abs(got - want) <= 1e-5 * max(1.0, abs(want))
        elapsed = time.perf_counter() - started
        assert elapsed < 5.0, f"took {elapsed:.2f}s"

    @criterion("subset monotonicity under pruning (exact, < 10 s)")
    def test_subset_monotonicity(self):
        rng = np.random.default_rng(202)
        started = time.perf_counter()
        docs = [
            make_doc(f"d{i}", rng, int(rng.integers(5, 60)), 8,
                     vocab=50, punct_rate=0.15)
            for i in range(100)
        ]
        table = build_idf_table(docs)
        queries = [rng.normal(size=(int(rng.integers(2, 12)), 8)).astype(np.float32)
                   for _ in range(20)]
        full_matrices = [doc.matrix() for doc in docs]
        checked = 0
        for method in ("first", "idf", "attention"):
            for k in (1, 5, 10):
                pruned = [prune_document(doc, method, k, table) for doc in docs]
                for doc, full, cut in zip(docs, full_matrices, pruned):
                    if not cut.kept:
                        continue
                    cut_matrix = np.stack([t.embedding for t in cut.kept])
                    for q in queries:
                        assert maxsim(q, cut_matrix) <= maxsim(q, full)
                        checked += 1
        assert checked > 0
        elapsed = time.perf_counter() - started
        assert elapsed < 10.0, f"took {elapsed:.2f}s"

    @criterion("attention conservation and exact top-k selection")
    def test_attention_conservation_and_topk(self):
        rng = np.random.default_rng(303)
        for _ in range(100):
            h = int(rng.integers(1, 9))
            t = int(rng.integers(2, 65))
            tensor = rng.dirichlet(np.ones(t), size=(h, t))
            importance = attention_importance(tensor)
            assert abs(importance.sum() - h * t) <= 1e-3
            # engine's top-k against a brute-force sort oracle
            doc = EncodedDocument(
                "d",
                [
                    TokenRecord(
                        token_id=i, position=i,
                        embedding=np.zeros(4, dtype=np.float32),
                        attention_importance=float(importance[i]),
                    )
                    for i in range(t)
                ],
            )
            k = int(rng.integers(1, t + 1))
            got = [tok.position for tok in prune_attention_top_k(doc, k).kept]
            scores = [tok.attention_importance for tok in doc.tokens]
            want = sorted(sorted(range(t), key=lambda i: (-scores[i], i))[:k])
            assert got == want

    @criterion("ivf degenerate equivalence (50 queries, identical lists, < 60 s)")
    def test_ivf_degenerate_equivalence(self, big_corpus):
        docs, queries, flat, ivf, build_seconds = big_corpus
        started = time.perf_counter()
        exhaustive = SearchParams(
            top_n=1000, nprobe=ivf.n_clusters, token_topk=flat.total_tokens
        )
        for query in queries[:50]:
            flat_rows = search_flat(flat, query, SearchParams(top_n=1000))
            ivf_rows = search_ivf(ivf, query, exhaustive)
            assert ivf_rows == flat_rows
        elapsed = time.perf_counter() - started
        assert build_seconds + elapsed < 60.0, (
            f"build {build_seconds:.2f}s + search {elapsed:.2f}s"
        )

    @criterion("ivf quality floor (nprobe 32/256, token_topk 2048, overlap >= 90%)")
    def test_ivf_quality_floor(self, big_corpus):
        docs, queries, flat, ivf, _ = big_corpus
        assert ivf.n_clusters == 256
        narrow = SearchParams(top_n=10, nprobe=32, token_topk=2048)
        overlaps = []
        for query in queries:
            top_flat = {r[0] for r in search_flat(flat, query, SearchParams(top_n=10))}
            top_ivf = {r[0] for r in search_ivf(ivf, query, narrow)}
            overlaps.append(len(top_flat & top_ivf) / 10.0)
        mean_overlap = float(np.mean(overlaps))
        assert mean_overlap >= 0.90, f"mean top-10 overlap {mean_overlap:.3f}"

    @criterion("metric hand-checks exact; cutoffs monotone")
    def test_metric_hand_checks(self):
        # three queries: relevant at rank 1, rank 4, and rank 11
        run = {
            "q1": [("hit1", 1, 9.0), ("x1", 2, 8.0)],
            "q2": [("a", 1, 9.0), ("b", 2, 8.0), ("c", 3, 7.0), ("hit2", 4, 6.0)],
            "q3": [(f"f{r}", r, 20.0 - r) for r in range(1, 11)] + [("hit3", 11, 1.0)],
        }
        qrels = Qrels(
            {
                "q1": {"hit1": 1, "deep": 1},  # second relevant never retrieved
                "q2": {"hit2": 1},
                "q3": {"hit3": 1},
            }
        )
        assert mrr_at_k(run, qrels, 10) == (1.0 + 0.25 + 0.0) / 3.0
        assert recall_at_k(run, qrels, 1000) == (0.5 + 1.0 + 1.0) / 3.0

        rng = np.random.default_rng(404)
        random_run = {}
        random_qrels = {}
        for qi in range(25):
            docs = [f"d{j}" for j in range(60)]
            rng.shuffle(docs)
            random_run[f"q{qi}"] = [(d, r + 1, 60.0 - r) for r, d in enumerate(docs)]
            random_qrels[f"q{qi}"] = {
                f"d{j}": 1 for j in rng.choice(60, size=4, replace=False)
            }
        cutoffs = (1, 2, 3, 5, 10, 25, 60)
        mrrs = [mrr_at_k(random_run, Qrels(random_qrels), k) for k in cutoffs]
        recalls = [recall_at_k(random_run, Qrels(random_qrels), k) for k in cutoffs]
        assert mrrs == sorted(mrrs)
        assert recalls == sorted(recalls)

    @criterion("size accounting and first-k retention arithmetic")
    def test_size_accounting_and_retention(self):
        for n in (0, 1, 7, 1000, 10**6):
            assert index_size_bytes(n, 128, 2) == 256 * n
        rng = np.random.default_rng(505)
        lengths = [int(rng.integers(5, 121)) for _ in range(200)]
        docs = [make_doc(f"d{i}", rng, t, 4) for i, t in enumerate(lengths)]
        report = selection_diagnostics([prune_first_k(doc, 50) for doc in docs])
        expected = 100.0 * sum(min(t, 50) for t in lengths) / sum(lengths)
        got = report[0]["retention"]
        assert abs(got - expected) < 1e-9
        assert round(got, 1) == round(expected, 1)

    @criterion("format round-trips and byte-identical pipeline reruns")
    def test_format_and_pipeline_determinism(self, tmp_path, capsys):
        rng = np.random.default_rng(606)
        docs = [make_doc(f"d{i:02d}", rng, 30, 8, punct_rate=0.1) for i in range(40)]
        queries = [make_query(f"q{i}", rng, 5, 8) for i in range(6)]

        # interchange round-trips
        f32 = IndexManifest(d=8, seed=77)
        buf = io.BytesIO()
        write_corpus(docs, f32, buf)
        manifest_back, docs_back = read_corpus(buf.getvalue())
        assert docs_back == docs and manifest_back == f32
        f16 = IndexManifest(d=8, dtype="f16", seed=77)
        first = io.BytesIO()
        write_corpus(docs, f16, first)
        _, requantized = read_corpus(first.getvalue())
        second = io.BytesIO()
        write_corpus(requantized, f16, second)
        assert first.getvalue() == second.getvalue()

        # full pipeline twice under one seed
        corpus_path = tmp_path / "corpus.limv"
        query_path = tmp_path / "queries.limq"
        write_corpus(docs, f32, corpus_path)
        write_queries(queries, IndexManifest(d=8, seed=77), query_path)
        qrels_path = tmp_path / "qrels.txt"
        qrels_path.write_text(
            "".join(f"q{i} 0 d{i:02d} 1\n" for i in range(6)), encoding="utf-8"
        )
        outputs = []
        for label in ("a", "b"):
            pruned = tmp_path / f"{label}.pruned.limv"
            idx = tmp_path / f"{label}.limi"
            run = tmp_path / f"{label}.run"
            report = tmp_path / f"{label}.json"
            for argv in (
                ["prune", "--corpus", str(corpus_path), "--output", str(pruned),
                 "--method", "idf", "--k", "10"],
                ["index", "--corpus", str(pruned), "--output", str(idx),
                 "--kind", "ivf", "--n-clusters", "12", "--seed", "77"],
                ["search", "--index", str(idx), "--queries", str(query_path),
                 "--output", str(run), "--top-n", "25"],
                ["evaluate", "--run", str(run), "--qrels", str(qrels_path),
                 "--output", str(report)],
            ):
                assert cli_main(argv) == 0
            capsys.readouterr()
            outputs.append(
                (pruned.read_bytes(), idx.read_bytes(),
                 run.read_bytes(), report.read_bytes())
            )
        assert outputs[0] == outputs[1]
        loaded = json.loads(outputs[0][3])
        assert set(loaded) >= {"mrr_at_10", "recall_at_1000", "per_query"}
