"""Benchmark harness: brute-force baseline vs tree search on one test set.

The brute pass is always timed on a single thread so the speedup figure is
comparable across machines and runs; an optional multi-threaded brute pass
is reported separately and never replaces the single-thread number.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Optional

from . import kernels
from .core import RecordStore, brute_force_knn
from .index import BuildConfig, SomTreeIndex, build_tree
from .query import QueryParams, search, vote_label
from .som import make_rng


@dataclass(frozen=True)
class BenchReport:
    dataset: str
    train_size: int
    test_size: int
    metric: str
    branching: str
    depth: int
    beam: int
    k: int
    brute_errors: int
    tree_errors: int
    brute_error_rate: float
    tree_error_rate: float
    brute_total_time: float
    tree_total_time: float
    speedup: float
    recall_at_1: float
    mean_distance_evaluations: float
    build_time: float
    threads: int = 1
    brute_total_time_threaded: Optional[float] = None

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True)

    def table(self) -> str:
        lines = [
            f"dataset            {self.dataset}",
            f"train / test       {self.train_size} / {self.test_size}",
            f"metric             {self.metric}",
            f"tree               branching {self.branching}, depth {self.depth}, "
            f"beam {self.beam}, k {self.k}",
            f"build time         {self.build_time:.2f} s",
            f"brute error rate   {self.brute_error_rate:.4%} ({self.brute_errors} errors)",
            f"tree  error rate   {self.tree_error_rate:.4%} ({self.tree_errors} errors)",
            f"brute time (1 thr) {self.brute_total_time:.3f} s "
            f"({1000 * self.brute_total_time / max(self.test_size, 1):.3f} ms/query)",
            f"tree  time         {self.tree_total_time:.3f} s "
            f"({1000 * self.tree_total_time / max(self.test_size, 1):.3f} ms/query)",
            f"speedup            {self.speedup:.1f}x",
            f"recall@1           {self.recall_at_1:.4f}",
            f"mean dist evals    {self.mean_distance_evaluations:.1f}",
        ]
        if self.brute_total_time_threaded is not None:
            lines.append(
                f"brute time ({self.threads} thr) {self.brute_total_time_threaded:.3f} s"
            )
        return "\n".join(lines)


def run_bench(
    train: RecordStore,
    test: RecordStore,
    config: BuildConfig,
    k: int = 1,
    beam: int = 1,
    sample: Optional[int] = None,
    seed: int = 0,
    threads: int = 1,
    dataset: str = "dataset",
    index: Optional[SomTreeIndex] = None,
) -> BenchReport:
    kernels.warm_up()
    if sample is not None and sample < test.n:
        rows = make_rng(seed).choice(test.n, size=sample, replace=False)
        rows.sort()
    else:
        rows = range(test.n)
    queries = [test.features[r] for r in rows]
    truths = [test.labels[r] for r in rows]

    t0 = time.perf_counter()
    if index is None:
        index = build_tree(train, config)
    build_time = time.perf_counter() - t0
    metric = index.config.metric

    def brute_predict(q):
        neighbors = brute_force_knn(q, train, k, metric)
        return neighbors[0].record_id, vote_label(train, neighbors)

    t0 = time.perf_counter()
    brute_results = [brute_predict(q) for q in queries]
    brute_time = time.perf_counter() - t0

    threaded_time = None
    if threads > 1:
        t0 = time.perf_counter()
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(brute_predict, queries))
        threaded_time = time.perf_counter() - t0

    params = QueryParams(k=k, beam=beam)
    t0 = time.perf_counter()
    tree_results = []
    for q in queries:
        res = search(index, q, params)
        tree_results.append(res)
    tree_time = time.perf_counter() - t0

    brute_errors = sum(1 for (_, pred), truth in zip(brute_results, truths) if pred != truth)
    tree_errors = 0
    hits = 0
    evals = 0
    for res, (brute_top, _), truth in zip(tree_results, brute_results, truths):
        pred = vote_label(index.store, res.neighbors)
        if pred != truth:
            tree_errors += 1
        if res.neighbors and res.neighbors[0].record_id == brute_top:
            hits += 1
        evals += res.distance_evaluations

    n = len(queries)
    return BenchReport(
        dataset=dataset,
        train_size=train.n,
        test_size=n,
        metric=metric.label(),
        branching=config.branching.label(),
        depth=config.max_depth,
        beam=beam,
        k=k,
        brute_errors=brute_errors,
        tree_errors=tree_errors,
        brute_error_rate=brute_errors / n,
        tree_error_rate=tree_errors / n,
        brute_total_time=brute_time,
        tree_total_time=tree_time,
        speedup=brute_time / tree_time if tree_time > 0 else float("inf"),
        recall_at_1=hits / n,
        mean_distance_evaluations=evals / n,
        build_time=build_time,
        threads=threads,
        brute_total_time_threaded=threaded_time,
    )
