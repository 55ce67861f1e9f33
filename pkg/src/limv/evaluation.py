"""Effectiveness metrics, retention statistics, and index size accounting.

Reads and writes the standard whitespace formats: qrels lines are
``query_id 0 doc_id grade`` and run lines are
``query_id Q0 doc_id rank score tag``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence, TextIO, Union

RunRow = tuple[str, int, float]

SCORE_DECIMALS = 6


@dataclass
class Qrels:
    """Relevance grades keyed by query id, then doc id."""

    grades: dict[str, dict[str, int]]

    def relevant(self, query_id: str) -> set[str]:
        return {d for d, g in self.grades.get(query_id, {}).items() if g >= 1}

    @property
    def query_ids(self) -> list[str]:
        return list(self.grades)


@dataclass
class RankedRun:
    """Per-query ranked results: contiguous ranks, non-increasing scores."""

    per_query: dict[str, list[RunRow]]

    def validate(self) -> None:
        for qid, rows in self.per_query.items():
            prev_score = None
            for i, (_, rank, score) in enumerate(rows):
                if rank != i + 1:
                    raise ValueError(
                        f"query {qid!r}: ranks must be contiguous from 1, "
                        f"found {rank} at index {i}"
                    )
                if prev_score is not None and score > prev_score:
                    raise ValueError(
                        f"query {qid!r}: score increases at rank {rank}"
                    )
                prev_score = score


@dataclass
class EvalReport:
    """Summary metrics plus the per-query reciprocal ranks and recalls."""

    mrr: float
    mrr_cutoff: int
    recall: float
    recall_cutoff: int
    per_query: dict[str, dict[str, float]] = field(default_factory=dict)
    token_retention: float | None = None
    index_bytes: int | None = None

    def to_dict(self) -> dict:
        out = {
            f"mrr_at_{self.mrr_cutoff}": self.mrr,
            f"recall_at_{self.recall_cutoff}": self.recall,
            "per_query": self.per_query,
        }
        if self.token_retention is not None:
            out["token_retention"] = self.token_retention
        if self.index_bytes is not None:
            out["index_bytes"] = self.index_bytes
        return out

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def read_qrels(source: Union[str, Path, TextIO, Iterable[str]]) -> Qrels:
    grades: dict[str, dict[str, int]] = {}
    for lineno, line in enumerate(_lines(source), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 4:
            raise ValueError(f"qrels line {lineno}: expected 4 fields, got {len(parts)}")
        qid, _, did, grade = parts
        grade_val = int(grade)
        if grade_val < 0:
            raise ValueError(f"qrels line {lineno}: negative grade {grade_val}")
        grades.setdefault(qid, {})[did] = grade_val
    return Qrels(grades)


def read_run(source: Union[str, Path, TextIO, Iterable[str]]) -> RankedRun:
    per_query: dict[str, list[RunRow]] = {}
    for lineno, line in enumerate(_lines(source), start=1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 6:
            raise ValueError(f"run line {lineno}: expected 6 fields, got {len(parts)}")
        qid, _, did, rank, score, _ = parts
        per_query.setdefault(qid, []).append((did, int(rank), float(score)))
    run = RankedRun(per_query)
    run.validate()
    return run


def write_run(
    run: Union[RankedRun, Mapping[str, Sequence[RunRow]]],
    destination: Union[str, Path, TextIO],
    tag: str = "limv",
) -> None:
    """Write a run; scores fixed to 6 decimals so round-trips are stable."""
    per_query = run.per_query if isinstance(run, RankedRun) else run
    lines = []
    for qid in per_query:
        for did, rank, score in per_query[qid]:
            lines.append(f"{qid} Q0 {did} {rank} {score:.{SCORE_DECIMALS}f} {tag}\n")
    text = "".join(lines)
    if isinstance(destination, (str, Path)):
        Path(destination).write_text(text, encoding="utf-8")
    else:
        destination.write(text)


def mrr_at_k(
    run: Union[RankedRun, Mapping[str, Sequence[RunRow]]], qrels: Qrels, k: int
) -> float:
    """Mean reciprocal rank of the first relevant document within rank k.

    Averages over every query in the qrels; queries the run misses, and
    queries whose first relevant document sits below k, contribute 0.
    """
    if k < 1:
        raise ValueError(f"cutoff k must be >= 1, got {k}")
    if not qrels.grades:
        raise ValueError("qrels is empty")
    per_query = run.per_query if isinstance(run, RankedRun) else run
    total = 0.0
    for qid in qrels.grades:
        relevant = qrels.relevant(qid)
        for did, rank, _ in sorted(per_query.get(qid, []), key=lambda r: r[1]):
            if rank > k:
                break
            if did in relevant:
                total += 1.0 / rank
                break
    return total / len(qrels.grades)


def recall_at_k(
    run: Union[RankedRun, Mapping[str, Sequence[RunRow]]], qrels: Qrels, k: int
) -> float:
    """Mean fraction of each query's relevant documents found within rank k.

    Queries with no relevant documents are excluded from the mean.
    """
    if k < 1:
        raise ValueError(f"cutoff k must be >= 1, got {k}")
    if not qrels.grades:
        raise ValueError("qrels is empty")
    per_query = run.per_query if isinstance(run, RankedRun) else run
    totals = []
    for qid in qrels.grades:
        relevant = qrels.relevant(qid)
        if not relevant:
            continue
        retrieved = {did for did, rank, _ in per_query.get(qid, []) if rank <= k}
        totals.append(len(relevant & retrieved) / len(relevant))
    if not totals:
        raise ValueError("no query in the qrels has a relevant document")
    return sum(totals) / len(totals)


def index_size_bytes(total_tokens: int, d: int, bytes_per_dim: int) -> int:
    """Embedding payload size: tokens x dims x bytes per dimension.

    Metadata is excluded on purpose; at d=128 in half precision every
    vector costs exactly 256 bytes.
    """
    if total_tokens < 0 or d < 1 or bytes_per_dim < 1:
        raise ValueError("total_tokens must be >= 0 and d, bytes_per_dim >= 1")
    return total_tokens * d * bytes_per_dim


def retention(kept_tokens: int, original_tokens: int) -> float:
    """Tokens surviving pruning, as a percentage of the original count."""
    if original_tokens <= 0:
        raise ValueError("original token count must be positive")
    if kept_tokens < 0:
        raise ValueError("kept token count must be >= 0")
    return 100.0 * kept_tokens / original_tokens


def evaluate_run(
    run: Union[RankedRun, Mapping[str, Sequence[RunRow]]],
    qrels: Qrels,
    mrr_cutoff: int = 10,
    recall_cutoff: int = 1000,
    token_retention: float | None = None,
    index_bytes: int | None = None,
) -> EvalReport:
    """Compute the summary metrics and a per-query breakdown."""
    per_query_rows = run.per_query if isinstance(run, RankedRun) else run
    breakdown: dict[str, dict[str, float]] = {}
    for qid in qrels.grades:
        relevant = qrels.relevant(qid)
        rr = 0.0
        for did, rank, _ in sorted(per_query_rows.get(qid, []), key=lambda r: r[1]):
            if rank > mrr_cutoff:
                break
            if did in relevant:
                rr = 1.0 / rank
                break
        entry: dict[str, float] = {"reciprocal_rank": rr}
        if relevant:
            retrieved = {
                did
                for did, rank, _ in per_query_rows.get(qid, [])
                if rank <= recall_cutoff
            }
            entry["recall"] = len(relevant & retrieved) / len(relevant)
        breakdown[qid] = entry
    return EvalReport(
        mrr=mrr_at_k(run, qrels, mrr_cutoff),
        mrr_cutoff=mrr_cutoff,
        recall=recall_at_k(run, qrels, recall_cutoff),
        recall_cutoff=recall_cutoff,
        per_query=breakdown,
        token_retention=token_retention,
        index_bytes=index_bytes,
    )


def _lines(source: Union[str, Path, TextIO, Iterable[str]]) -> Iterable[str]:
    if isinstance(source, (str, Path)):
        with open(source, "r", encoding="utf-8") as handle:
            yield from handle
    else:
        yield from source
