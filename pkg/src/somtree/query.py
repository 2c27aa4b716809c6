"""Tree search: beam descent, exhaustive leaf scan, prediction, rejection.

Descent ranks candidate nodes by L2 distance to their centroids (the
geometry the SOMs were trained in); only the final scan inside the reached
leaves uses the index's configured query metric. A result whose best
similarity falls below the threshold is flagged rejected, and classify /
regress refuse to produce an answer from it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import kernels
from .core import (
    Neighbor,
    _as_feature_vector,
    dists_to_many,
    similarity,
    top_k_rows,
)
from .errors import DimensionMismatch, EmptyIndex, MissingResponse, UnlabeledData
from .index import SomTreeIndex


@dataclass(frozen=True)
class QueryParams:
    k: int = 1
    beam: int = 1
    min_similarity: float = 0.0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.beam < 1:
            raise ValueError("beam must be >= 1")
        if not (0.0 <= self.min_similarity <= 1.0):
            raise ValueError("min_similarity must lie in [0, 1]")


@dataclass(frozen=True)
class SearchResult:
    neighbors: tuple[Neighbor, ...]
    rejected: bool
    visited_leaves: int
    distance_evaluations: int

    @property
    def best(self) -> Optional[Neighbor]:
        return self.neighbors[0] if self.neighbors else None


def _check_query(index: SomTreeIndex, q) -> np.ndarray:
    v = _as_feature_vector(q, "query")
    if v.size != index.dim:
        raise DimensionMismatch(f"query has dimension {v.size}, index has {index.dim}")
    return v


def descend(index: SomTreeIndex, q, beam: int = 1) -> list[int]:
    """Level-synchronous beam descent; returns reached leaf ids in discovery
    order. The beam pools children across the whole frontier and keeps the
    best ``beam`` of them, so beam=1 is the pure greedy path."""
    v = _check_query(index, q)
    leaves, _ = _descend_counted(index, v, beam)
    return leaves


def _descend_counted(index: SomTreeIndex, v: np.ndarray, beam: int) -> tuple[list[int], int]:
    root = index.nodes[index.root]
    evaluations = 0
    if root.is_leaf:
        return [index.root], evaluations
    collected: list[int] = []
    frontier = [index.root]
    while True:
        pooled: list[int] = []
        for nid in frontier:
            pooled.extend(index.nodes[nid].children)
        if not pooled:
            break
        dists = kernels.sq_l2(index.child_centroids(pooled), v)
        evaluations += len(pooled)
        if len(pooled) > beam:
            pooled_ids = np.asarray(pooled, dtype=np.int64)
            order = np.lexsort((pooled_ids, dists))[:beam]
            chosen = pooled_ids[np.sort(order)]  # keep discovery (id) order
        else:
            chosen = np.asarray(pooled, dtype=np.int64)
        frontier = []
        for nid in chosen:
            nid = int(nid)
            if index.nodes[nid].is_leaf:
                collected.append(nid)
            else:
                frontier.append(nid)
        if not frontier:
            break
    return collected, evaluations


def search(index: SomTreeIndex, q, params: QueryParams = QueryParams()) -> SearchResult:
    """Beam descent plus exhaustive k-NN over the reached leaves' members."""
    v = _check_query(index, q)
    if index.store.n == 0:
        raise EmptyIndex("index holds no records")
    leaf_ids, evaluations = _descend_counted(index, v, params.beam)
    rows = np.concatenate([index.nodes[lid].member_rows for lid in leaf_ids])
    dists = dists_to_many(index.store.features[rows], v, index.config.metric)
    evaluations += rows.size
    picked = top_k_rows(dists, index.store.ids[rows], params.k)
    neighbors = tuple(
        Neighbor(
            int(index.store.ids[rows[r]]),
            float(dists[r]),
            similarity(float(dists[r])),
        )
        for r in picked
    )
    rejected = not neighbors or neighbors[0].similarity < params.min_similarity
    return SearchResult(
        neighbors=neighbors,
        rejected=rejected,
        visited_leaves=len(leaf_ids),
        distance_evaluations=evaluations,
    )


def vote_label(store, neighbors) -> str:
    """Weighted majority label over distance-ordered neighbors.

    Prototype weights count as that many votes. A tie goes to the label of
    the nearest neighbor among the tied labels.
    """
    votes: dict[str, int] = {}
    labels: list[str] = []
    for nb in neighbors:
        row = store.row_of(nb.record_id)
        label = store.labels[row]
        if label is None:
            raise UnlabeledData(f"record {nb.record_id} has no label")
        labels.append(label)
        votes[label] = votes.get(label, 0) + int(store.weights[row])
    top = max(votes.values())
    tied = {lab for lab, v in votes.items() if v == top}
    for label in labels:
        if label in tied:
            return label
    raise AssertionError("unreachable: tied label not among neighbor labels")


def classify(index: SomTreeIndex, result: SearchResult) -> Optional[str]:
    """Majority label of the result's neighbors; None when rejected."""
    if result.rejected:
        return None
    return vote_label(index.store, result.neighbors)


def regress(index: SomTreeIndex, result: SearchResult) -> Optional[float]:
    """Similarity- and weight-weighted mean response; None when rejected."""
    if result.rejected:
        return None
    num = 0.0
    den = 0.0
    for nb in result.neighbors:
        row = index.store.row_of(nb.record_id)
        resp = index.store.responses[row]
        if not np.isfinite(resp):
            raise MissingResponse(f"record {nb.record_id} has no response")
        w = float(index.store.weights[row]) * nb.similarity
        num += w * float(resp)
        den += w
    return num / den


def detect_novelty(index: SomTreeIndex, q, params: QueryParams) -> bool:
    """True when the query's best match is not similar enough to answer from."""
    return search(index, q, params).rejected
