"""Filtered ranking, MRR/Hits@k reports, and the indegree-bucketed breakdown.

Head prediction happens through reciprocal relations, so every evaluation
query is an object query; the split's triples already include both
directions once reciprocals are added.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .data import Dataset, FilterIndex

Array = np.ndarray

DEFAULT_BUCKETS = ((0, 100), (100, 200), (200, 300), (300, 400), (400, 500),
                   (500, 1000), (1000, None))


@dataclass
class RankResult:
    subject: int
    relation: int
    gold: int
    rank: int
    candidates: int


@dataclass
class MetricReport:
    mrr: float = 0.0
    hits1: float = 0.0
    hits3: float = 0.0
    hits10: float = 0.0
    count: int = 0
    buckets: list["BucketReport"] | None = None

    @classmethod
    def from_ranks(cls, ranks) -> "MetricReport":
        ranks = np.asarray(ranks, dtype=np.float64)
        if ranks.size == 0:
            return cls()
        return cls(
            mrr=float(np.mean(1.0 / ranks)),
            hits1=float(np.mean(ranks <= 1)),
            hits3=float(np.mean(ranks <= 3)),
            hits10=float(np.mean(ranks <= 10)),
            count=int(ranks.size),
        )


@dataclass
class BucketReport:
    lo: int
    hi: int | None   # None = unbounded
    report: MetricReport = field(default_factory=MetricReport)


def filtered_rank(scores: Array, gold: int, filter_ids) -> int:
    """Rank of the gold entity after removing other known-true candidates.

    Ties resolve to the mean rank, rounded half up, so a constant scorer
    cannot look better than chance.
    """
    scores = np.asarray(scores)
    n = scores.shape[0]
    if not 0 <= gold < n:
        raise IndexError(f"gold id {gold} outside [0, {n})")
    keep = np.ones(n, dtype=bool)
    filter_ids = np.asarray(list(filter_ids), dtype=np.int64) \
        if not isinstance(filter_ids, np.ndarray) else filter_ids
    if filter_ids.size:
        keep[filter_ids] = False
    keep[gold] = True
    gold_score = scores[gold]
    kept = scores[keep]
    n_greater = int(np.count_nonzero(kept > gold_score))
    n_equal = int(np.count_nonzero(kept == gold_score)) - 1  # exclude gold itself
    return 1 + n_greater + (n_equal + 1) // 2


def rank_split(split_triples: Array, score_batch_fn, filter_index: FilterIndex,
               batch_size: int = 512) -> list[RankResult]:
    """Filtered rank for every (s, r, o) query, in split order."""
    results: list[RankResult] = []
    n_queries = split_triples.shape[0]
    for start in range(0, n_queries, batch_size):
        chunk = split_triples[start:start + batch_size]
        scores = score_batch_fn(chunk[:, 0], chunk[:, 1])
        for row, (s, r, o) in zip(scores, chunk):
            known = filter_index.objects_for(int(s), int(r))
            rank = filtered_rank(row, int(o), known)
            results.append(RankResult(int(s), int(r), int(o), rank, row.shape[0]))
    return results


def evaluate(dataset: Dataset, model, adjacency, split: str,
             batch_size: int = 512) -> MetricReport:
    """MRR and Hits@k over a split, filtered setting, both query directions."""
    triples = dataset.store.split_triples(split)
    if triples.shape[0] == 0:
        raise ValueError(f"split {split!r} is empty")
    entities = model.entity_matrix(adjacency)
    results = rank_split(
        triples, lambda s, r: model.score_eval(entities, s, r),
        dataset.filter_index, batch_size)
    return MetricReport.from_ranks([r.rank for r in results])


def check_buckets(buckets) -> list[tuple[int, int | None]]:
    cleaned = []
    for lo, hi in buckets:
        if hi is not None and hi <= lo:
            raise ValueError(f"empty bucket [{lo}, {hi})")
        cleaned.append((int(lo), None if hi is None else int(hi)))
    for i, (lo_a, hi_a) in enumerate(cleaned):
        for lo_b, hi_b in cleaned[i + 1:]:
            a_hi = np.inf if hi_a is None else hi_a
            b_hi = np.inf if hi_b is None else hi_b
            if lo_a < b_hi and lo_b < a_hi:
                raise ValueError(
                    f"overlapping buckets [{lo_a}, {hi_a}) and [{lo_b}, {hi_b})")
    return cleaned


def bucket_of(value: int, buckets) -> int | None:
    for i, (lo, hi) in enumerate(buckets):
        if value >= lo and (hi is None or value < hi):
            return i
    return None


def indegree_report(dataset: Dataset, model, adjacency, split: str,
                    buckets=DEFAULT_BUCKETS, batch_size: int = 512,
                    ) -> MetricReport:
    """Per-bucket metrics keyed by the gold entity's training-graph indegree.

    Buckets are half-open [lo, hi); a None upper bound means unbounded.
    """
    cleaned = check_buckets(buckets)
    triples = dataset.store.split_triples(split)
    if triples.shape[0] == 0:
        raise ValueError(f"split {split!r} is empty")
    degrees = adjacency.degrees()
    entities = model.entity_matrix(adjacency)
    results = rank_split(
        triples, lambda s, r: model.score_eval(entities, s, r),
        dataset.filter_index, batch_size)

    per_bucket: list[list[int]] = [[] for _ in cleaned]
    all_ranks = []
    for res in results:
        all_ranks.append(res.rank)
        b = bucket_of(int(degrees[res.gold]), cleaned)
        if b is not None:
            per_bucket[b].append(res.rank)
    report = MetricReport.from_ranks(all_ranks)
    report.buckets = [
        BucketReport(lo, hi, MetricReport.from_ranks(ranks))
        for (lo, hi), ranks in zip(cleaned, per_bucket)
    ]
    return report


def report_text(report: MetricReport) -> str:
    lines = [
        f"queries {report.count}",
        f"mrr     {report.mrr:.6f}",
        f"hits@1  {report.hits1:.6f}",
        f"hits@3  {report.hits3:.6f}",
        f"hits@10 {report.hits10:.6f}",
    ]
    if report.buckets:
        lines.append("")
        lines.append(f"{'indegree':>16}  {'n':>8}  {'hits@10':>8}  {'hits@3':>8}  "
                     f"{'hits@1':>8}  {'mrr':>8}")
        for b in report.buckets:
            hi = "max" if b.hi is None else str(b.hi)
            r = b.report
            lines.append(f"{f'[{b.lo},{hi})':>16}  {r.count:>8}  {r.hits10:>8.3f}  "
                         f"{r.hits3:>8.3f}  {r.hits1:>8.3f}  {r.mrr:>8.3f}")
    return "\n".join(lines) + "\n"


def report_csv(report: MetricReport) -> str:
    """Bucketed CSV; without buckets a single global row is emitted."""
    lines = ["bucket_lo,bucket_hi,n,hits10,hits3,hits1,mrr"]
    buckets = report.buckets or [BucketReport(0, None, report)]
    for b in buckets:
        hi = "" if b.hi is None else b.hi
        r = b.report
        lines.append(f"{b.lo},{hi},{r.count},{r.hits10:.6f},{r.hits3:.6f},"
                     f"{r.hits1:.6f},{r.mrr:.6f}")
    return "\n".join(lines) + "\n"
