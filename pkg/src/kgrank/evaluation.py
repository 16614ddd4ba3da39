"""Candidate ranking, recall/MRR metrics, and the inference latency benchmark.

Graph-free ranking goes through the encoder head only, and asserts that the
knowledge-graph access counter never moves while it runs; variants whose
prediction consumes graph artifacts rank through the full online pipeline
instead. The benchmark times both paths per instance with a monotonic clock,
median-of-repetitions, and warm-up iterations excluded.
"""

from __future__ import annotations

import statistics
import time
from dataclasses import asdict, dataclass

from .extraction import KG_COUNTER, Extractor

__all__ = [
    "RankResult", "LatencyReport", "rank_candidates", "rank_candidates_online",
    "r_at_k", "mrr", "evaluate", "latency_bench",
]


@dataclass
class RankResult:
    sample_id: int
    scores: list[float]
    rank: int  # 1-based rank of the ground-truth candidate

    def __post_init__(self):
        if not 1 <= self.rank <= len(self.scores):
            raise ValueError("rank must lie in [1, n_candidates]")


def _rank_of(scores, truth_index: int) -> int:
    """Descending rank; equal scores break toward the lower candidate index."""
    target = scores[truth_index]
    rank = 1
    for j, s in enumerate(scores):
        if s > target or (s == target and j < truth_index):
            rank += 1
    return rank


def rank_candidates(state, sample, sample_id: int = 0) -> RankResult:
    """Score all candidates through the encoder only; the graph must stay cold."""
    before = KG_COUNTER.count
    scores = [state.score_qo_free(sample, ci) for ci in range(len(sample.candidates))]
    if KG_COUNTER.count != before:
        raise RuntimeError(
            "knowledge-graph access during graph-free inference "
            f"(counter moved by {KG_COUNTER.count - before})")
    return RankResult(sample_id, scores, _rank_of(scores, sample.positive_index))


def rank_candidates_online(state, sample, extractor: Extractor,
                           sample_id: int = 0) -> RankResult:
    """Score all candidates through the full extraction + graph pipeline."""
    scores = [state.score_online(sample, ci, extractor)
              for ci in range(len(sample.candidates))]
    return RankResult(sample_id, scores, _rank_of(scores, sample.positive_index))


def r_at_k(results, n: int, k: int) -> float:
    """Fraction of instances whose ground truth ranks within the top k of n."""
    if not 1 <= k <= n:
        raise ValueError(f"k must lie in [1, {n}]")
    for r in results:
        if len(r.scores) != n:
            raise ValueError(f"instance {r.sample_id} has {len(r.scores)} candidates, expected {n}")
    if not results:
        raise ValueError("no results to score")
    return sum(1 for r in results if r.rank <= k) / len(results)


def mrr(results) -> float:
    """Mean reciprocal rank of the ground-truth candidate."""
    results = list(results)
    if not results:
        raise ValueError("no results to score")
    return sum(1.0 / r.rank for r in results) / len(results)


def evaluate(state, samples, extractor: Extractor = None) -> dict:
    """Rank every sample with the variant's inference path and report metrics."""
    samples = list(samples)
    if not samples:
        return {"n_samples": 0}
    if state.qo_free:
        results = [rank_candidates(state, s, i) for i, s in enumerate(samples)]
    else:
        if extractor is None:
            raise ValueError(f"variant {state.variant!r} needs the graph to rank candidates")
        results = [rank_candidates_online(state, s, extractor, i)
                   for i, s in enumerate(samples)]
    n = len(samples[0].candidates)
    report = {}
    for k in (1, 2, 5):
        if k <= n:
            report[f"r_at_{k}"] = r_at_k(results, n, k)
    report["mrr"] = mrr(results)
    report["n_samples"] = len(samples)
    return report


@dataclass
class LatencyReport:
    """Per-instance wall-clock comparison of the two inference paths."""

    qo_free_avg: float
    qo_free_worst: float
    qo_free_best: float
    online_avg: float
    online_worst: float
    online_best: float
    ratio: float  # online_avg / qo_free_avg
    n_instances: int
    repetitions: int

    def to_jsonable(self):
        return asdict(self)


def _median_time(fn, repetitions: int) -> float:
    times = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def latency_bench(state, samples, extractor: Extractor, repetitions: int = 3,
                  warmup: int = 3) -> LatencyReport:
    """Time graph-free ranking against the online pipeline, per instance."""
    samples = list(samples)
    if not samples:
        raise ValueError("no samples to benchmark")
    if state.variant == "plm":
        raise ValueError("the online path needs a graph-capable checkpoint")

    for _ in range(warmup):
        rank_candidates(state, samples[0])
        rank_candidates_online(state, samples[0], extractor)

    qo_times, online_times = [], []
    for i, sample in enumerate(samples):
        qo_times.append(_median_time(lambda: rank_candidates(state, sample, i), repetitions))
        online_times.append(_median_time(
            lambda: rank_candidates_online(state, sample, extractor, i), repetitions))

    return LatencyReport(
        qo_free_avg=statistics.mean(qo_times),
        qo_free_worst=max(qo_times),
        qo_free_best=min(qo_times),
        online_avg=statistics.mean(online_times),
        online_worst=max(online_times),
        online_best=min(online_times),
        ratio=statistics.mean(online_times) / statistics.mean(qo_times),
        n_instances=len(samples),
        repetitions=repetitions,
    )
