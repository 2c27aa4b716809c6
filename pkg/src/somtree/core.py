"""Fundamental types, distance metrics, and the brute-force k-NN oracle.

The brute-force scan is both the baseline the tree index is benchmarked
against and the oracle the tree's results are tested against, so its
ordering contract (distance ascending, record id ascending) is load-bearing
for the whole package.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence, Union

import numpy as np

from . import kernels
from .errors import (
    DimensionMismatch,
    DuplicateId,
    EmptyDataset,
    NonFinite,
    ZeroVector,
)

METRIC_KINDS = ("l2", "l1", "cosine", "minkowski")


@dataclass(frozen=True)
class Metric:
    """Distance metric selector. ``p`` only matters for minkowski."""

    kind: str = "l2"
    p: float = 2.0

    def __post_init__(self):
        if self.kind not in METRIC_KINDS:
            raise ValueError(f"unknown metric kind {self.kind!r}")
        if not (self.p > 0):
            raise ValueError("minkowski p must be > 0")

    @classmethod
    def parse(cls, text: str) -> "Metric":
        """Parse CLI notation: l2, l1, cosine, or minkowski:<p>."""
        text = text.strip().lower()
        if text.startswith("minkowski"):
            _, _, p_part = text.partition(":")
            return cls("minkowski", float(p_part) if p_part else 2.0)
        return cls(text)

    def label(self) -> str:
        if self.kind == "minkowski":
            return f"minkowski:{self.p:g}"
        return self.kind


L2 = Metric("l2")
L1 = Metric("l1")
COSINE = Metric("cosine")


def _as_feature_vector(values, name: str = "vector") -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        raise DimensionMismatch(f"{name} must be one-dimensional, got shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise NonFinite(f"{name} contains NaN or infinity")
    return arr


@dataclass(frozen=True)
class Record:
    """One training object: feature vector plus optional label/response.

    ``weight`` counts how many original records a generalized prototype
    stands for; plain records have weight 1.
    """

    id: int
    features: np.ndarray
    label: Optional[str] = None
    response: Optional[float] = None
    payload: Optional[bytes] = None
    weight: int = 1

    def __post_init__(self):
        if self.id < 0:
            raise ValueError("record id must be non-negative")
        if self.weight < 1:
            raise ValueError("record weight must be >= 1")
        arr = _as_feature_vector(self.features, f"record {self.id} features")
        arr = arr.copy()
        arr.setflags(write=False)
        object.__setattr__(self, "features", arr)
        if self.response is not None and not np.isfinite(self.response):
            raise NonFinite(f"record {self.id} response is not finite")


@dataclass(frozen=True)
class Neighbor:
    record_id: int
    distance: float
    similarity: float


class RecordStore:
    """Columnar store of records, ordered by ascending id at construction.

    Appends (from incremental inserts) keep their arrival order, so lookups
    go through the id -> row map rather than binary search.
    """

    def __init__(self, ids, features, labels, responses, weights, payloads):
        self.ids = np.asarray(ids, dtype=np.int64)
        self.features = np.ascontiguousarray(features, dtype=np.float64)
        self.labels: list[Optional[str]] = list(labels)
        self.responses = np.asarray(responses, dtype=np.float64)
        self.weights = np.asarray(weights, dtype=np.int64)
        self.payloads: list[Optional[bytes]] = list(payloads)
        self._row_of = {int(rid): row for row, rid in enumerate(self.ids)}
        if len(self._row_of) != len(self.ids):
            raise DuplicateId("record ids are not unique")

    @classmethod
    def from_records(cls, records: Iterable[Record]) -> "RecordStore":
        recs = sorted(records, key=lambda r: r.id)
        if not recs:
            raise EmptyDataset("no records supplied")
        dim = recs[0].features.size
        for r in recs:
            if r.features.size != dim:
                raise DimensionMismatch(
                    f"record {r.id} has dimension {r.features.size}, expected {dim}"
                )
        return cls(
            ids=[r.id for r in recs],
            features=np.stack([r.features for r in recs]),
            labels=[r.label for r in recs],
            responses=[np.nan if r.response is None else r.response for r in recs],
            weights=[r.weight for r in recs],
            payloads=[r.payload for r in recs],
        )

    @property
    def n(self) -> int:
        return self.ids.size

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def __len__(self) -> int:
        return self.n

    def has_id(self, rid: int) -> bool:
        return rid in self._row_of

    def row_of(self, rid: int) -> int:
        return self._row_of[rid]

    def record(self, rid: int) -> Record:
        row = self._row_of[rid]
        resp = self.responses[row]
        return Record(
            id=int(self.ids[row]),
            features=self.features[row],
            label=self.labels[row],
            response=None if np.isnan(resp) else float(resp),
            payload=self.payloads[row],
            weight=int(self.weights[row]),
        )

    def iter_records(self) -> Iterator[Record]:
        for rid in self.ids:
            yield self.record(int(rid))

    def add(self, record: Record) -> int:
        """Append one record, returning its row. O(n) per call."""
        if record.id in self._row_of:
            raise DuplicateId(f"record id {record.id} already present")
        if record.features.size != self.dim:
            raise DimensionMismatch(
                f"record {record.id} has dimension {record.features.size}, expected {self.dim}"
            )
        row = self.n
        self.ids = np.append(self.ids, np.int64(record.id))
        self.features = np.ascontiguousarray(np.vstack([self.features, record.features]))
        self.labels.append(record.label)
        self.responses = np.append(
            self.responses, np.nan if record.response is None else record.response
        )
        self.weights = np.append(self.weights, np.int64(record.weight))
        self.payloads.append(record.payload)
        self._row_of[record.id] = row
        return row

    def any_labels(self) -> bool:
        return any(lab is not None for lab in self.labels)

    def any_responses(self) -> bool:
        return bool(np.isfinite(self.responses).any())


RecordsLike = Union[RecordStore, Sequence[Record]]


def as_store(records: RecordsLike) -> RecordStore:
    if isinstance(records, RecordStore):
        return records
    return RecordStore.from_records(records)


def similarity(d: float) -> float:
    """Map a distance onto (0, 1] via 1/(1+d); 1.0 exactly iff d == 0."""
    if not np.isfinite(d):
        raise NonFinite("similarity input is NaN or infinite")
    if d < 0:
        raise ValueError("distance must be non-negative")
    return 1.0 / (1.0 + d)


def similarity_to_distance(s: float) -> float:
    """Inverse of similarity(); used to turn CLI thresholds into bounds."""
    if not (0.0 < s <= 1.0):
        raise ValueError("similarity must lie in (0, 1]")
    return 1.0 / s - 1.0


def dists_to_many(points: np.ndarray, q: np.ndarray, metric: Metric) -> np.ndarray:
    """Distance from q to every row of points. Inputs assumed finite."""
    if metric.kind == "l2":
        return np.sqrt(kernels.sq_l2(points, q))
    if metric.kind == "l1":
        return kernels.l1_dists(points, q)
    if metric.kind == "minkowski":
        return kernels.minkowski_dists(points, q, metric.p)
    out = kernels.cosine_dists(points, q)
    if np.isnan(out).any():
        raise ZeroVector("cosine distance undefined for zero-norm vectors")
    # rounding in the norm product can push exact matches a hair negative
    return np.maximum(out, 0.0)


def distance(a, b, metric: Metric = L2) -> float:
    """Metric distance between two vectors."""
    va = _as_feature_vector(a, "a")
    vb = _as_feature_vector(b, "b")
    if va.size != vb.size:
        raise DimensionMismatch(f"vector lengths differ: {va.size} vs {vb.size}")
    return float(dists_to_many(va[None, :], vb, metric)[0])


def top_k_rows(dists: np.ndarray, ids: np.ndarray, k: int) -> np.ndarray:
    """Rows of the k smallest distances, ties broken by ascending id."""
    if k == 1:
        best = dists.min()
        cand = np.flatnonzero(dists == best)
        if cand.size > 1:
            cand = cand[np.argsort(ids[cand], kind="stable")]
        return cand[:1]
    order = np.lexsort((ids, dists))
    return order[: min(k, dists.size)]


def brute_force_knn(query, records: RecordsLike, k: int, metric: Metric = L2) -> list[Neighbor]:
    """Exhaustive k-NN scan; the oracle every approximate path is tested against.

    Returns min(k, n) neighbors sorted by (distance ascending, id ascending).
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    store = as_store(records)
    if store.n == 0:
        raise EmptyDataset("cannot search an empty record set")
    q = _as_feature_vector(query, "query")
    if q.size != store.dim:
        raise DimensionMismatch(f"query has dimension {q.size}, records have {store.dim}")
    dists = dists_to_many(store.features, q, metric)
    rows = top_k_rows(dists, store.ids, k)
    return [
        Neighbor(int(store.ids[r]), float(dists[r]), similarity(float(dists[r])))
        for r in rows
    ]


# --- CSV interchange -------------------------------------------------------
# One record per line: id,label,response,f1,...,fn with empty fields for
# absent label/response. '#'-prefixed lines are comments.


def load_csv(path) -> RecordStore:
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        rows = csv.reader(line for line in fh if not line.startswith("#"))
        for row in rows:
            if not row:
                continue
            rid = int(row[0])
            label = row[1] if row[1] != "" else None
            response = float(row[2]) if row[2] != "" else None
            features = [float(v) for v in row[3:]]
            records.append(Record(id=rid, features=features, label=label, response=response))
    return RecordStore.from_records(records)


def save_csv(store: RecordStore, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        for rec in store.iter_records():
            writer.writerow(
                [
                    rec.id,
                    rec.label if rec.label is not None else "",
                    repr(rec.response) if rec.response is not None else "",
                    *[repr(v) for v in rec.features],
                ]
            )
