"""Self-organizing maps over 1D/2D/3D grids: training, assignment, projection.

Winner selection is always squared-L2 against the node weights, independent
of whatever metric the surrounding index queries with. Grid distance (between
node positions on the lattice) is a separate space entirely.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass
from typing import Optional, Union

import numpy as np

from . import kernels
from .core import RecordsLike, RecordStore, _as_feature_vector, as_store
from .errors import DimensionMismatch, EmptyDataset, IndexOutOfRange

GENERATOR_ID = "numpy-pcg64"

KERNEL_CODES = {"gaussian": kernels.GAUSSIAN, "mexican_hat": kernels.MEXICAN_HAT}
GRID_METRICS = ("euclidean", "manhattan")


def make_rng(seed: int) -> np.random.Generator:
    """The package-wide seeded generator; identity recorded in index files."""
    return np.random.Generator(np.random.PCG64(seed))


def derive_seed(parent_seed: int, ordinal: int) -> int:
    """Stable child seed from (parent seed, child ordinal).

    blake2b keeps the derivation platform-independent so subtree builds are
    reproducible and could run in parallel.
    """
    digest = hashlib.blake2b(
        struct.pack("<QQ", parent_seed & 0xFFFFFFFFFFFFFFFF, ordinal), digest_size=8
    ).digest()
    return int.from_bytes(digest, "little")


@dataclass(frozen=True)
class SomTopology:
    """Node lattice: ``side`` nodes per axis, ``rank`` axes (1, 2 or 3)."""

    rank: int = 1
    side: int = 10
    grid_metric: str = "euclidean"

    def __post_init__(self):
        if self.rank not in (1, 2, 3):
            raise ValueError("rank must be 1, 2 or 3")
        if self.side < 1:
            raise ValueError("side must be >= 1")
        if self.grid_metric not in GRID_METRICS:
            raise ValueError(f"unknown grid metric {self.grid_metric!r}")

    @property
    def node_count(self) -> int:
        return self.side**self.rank

    @classmethod
    def parse(cls, text: str, grid_metric: str = "euclidean") -> "SomTopology":
        """Parse CLI notation like ``1d:10`` or ``2d:4``."""
        rank_part, _, side_part = text.strip().lower().partition(":")
        if not rank_part.endswith("d") or not side_part:
            raise ValueError(f"expected <rank>d:<side>, got {text!r}")
        return cls(rank=int(rank_part[:-1]), side=int(side_part), grid_metric=grid_metric)

    def label(self) -> str:
        return f"{self.rank}d:{self.side}"


@dataclass(frozen=True)
class SomParams:
    """Training schedule. ``sigma0=None`` resolves to side/2 at train time."""

    epochs: int = 20
    alpha0: float = 0.5
    sigma0: Optional[float] = None
    sigma_min: float = 0.5
    kernel: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not (0.0 < self.alpha0 <= 1.0):
            raise ValueError("alpha0 must lie in (0, 1]")
        if self.sigma_min <= 0:
            raise ValueError("sigma_min must be > 0")
        if self.sigma0 is not None and self.sigma0 < self.sigma_min:
            raise ValueError("sigma0 must be >= sigma_min")
        if self.kernel not in KERNEL_CODES:
            raise ValueError(f"unknown kernel {self.kernel!r}")

    def resolved_sigma0(self, topology: SomTopology) -> float:
        if self.sigma0 is not None:
            return self.sigma0
        return max(self.sigma_min, topology.side / 2.0)


@dataclass(frozen=True)
class SomMap:
    topology: SomTopology
    dim: int
    weights: np.ndarray  # (node_count, dim), read-only

    def __post_init__(self):
        w = np.ascontiguousarray(self.weights, dtype=np.float64)
        if w.shape != (self.topology.node_count, self.dim):
            raise DimensionMismatch(
                f"weights shape {w.shape} does not match "
                f"({self.topology.node_count}, {self.dim})"
            )
        w.setflags(write=False)
        object.__setattr__(self, "weights", w)


def grid_coordinates(topology: SomTopology) -> np.ndarray:
    """(node_count, rank) integer lattice coordinates, row-major order."""
    shape = (topology.side,) * topology.rank
    coords = np.unravel_index(np.arange(topology.node_count), shape)
    return np.stack(coords, axis=1).astype(np.int64)


def grid_distance(topology: SomTopology, j: int, j_star: int) -> float:
    """Lattice distance between two node indices."""
    count = topology.node_count
    if not (0 <= j < count and 0 <= j_star < count):
        raise IndexOutOfRange(f"node index out of range for {count} nodes")
    if topology.rank == 1:
        return float(abs(j - j_star))
    shape = (topology.side,) * topology.rank
    a = np.array(np.unravel_index(j, shape), dtype=np.float64)
    b = np.array(np.unravel_index(j_star, shape), dtype=np.float64)
    delta = a - b
    if topology.grid_metric == "manhattan":
        return float(np.abs(delta).sum())
    return float(np.sqrt((delta * delta).sum()))


def grid_distance_matrix(topology: SomTopology) -> np.ndarray:
    """All-pairs lattice distances, precomputed once per training run."""
    coords = grid_coordinates(topology).astype(np.float64)
    delta = coords[:, None, :] - coords[None, :, :]
    if topology.rank == 1 or topology.grid_metric == "euclidean":
        return np.sqrt((delta * delta).sum(axis=2))
    return np.abs(delta).sum(axis=2)


def neighborhood(kernel: str, d: float, sigma: float) -> float:
    """Neighborhood weight at lattice distance d for the given kernel width."""
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    if kernel not in KERNEL_CODES:
        raise ValueError(f"unknown kernel {kernel!r}")
    r = (d * d) / (sigma * sigma)
    if KERNEL_CODES[kernel] == kernels.GAUSSIAN:
        return float(np.exp(-0.5 * r))
    return float((1.0 - r) * np.exp(-0.5 * r))


def _as_matrix(records: Union[RecordsLike, np.ndarray]) -> np.ndarray:
    if isinstance(records, np.ndarray):
        mat = np.ascontiguousarray(records, dtype=np.float64)
        if mat.ndim != 2 or mat.shape[0] < 1:
            raise EmptyDataset("need a non-empty (n, dim) matrix")
        return mat
    return as_store(records).features


def _init_weights(rng: np.random.Generator, data: np.ndarray, topology: SomTopology) -> np.ndarray:
    """Seeded draw of distinct training vectors; jittered resampling when
    there are more nodes than records."""
    n = data.shape[0]
    count = topology.node_count
    if count <= n:
        rows = rng.choice(n, size=count, replace=False)
        return data[rows].copy()
    weights = np.empty((count, data.shape[1]), dtype=np.float64)
    weights[:n] = data[rng.permutation(n)]
    extra = count - n
    rows = rng.integers(0, n, size=extra)
    span = data.max(axis=0) - data.min(axis=0)
    jitter = rng.uniform(-1.0, 1.0, size=(extra, data.shape[1])) * (1e-6 * span)
    weights[n:] = data[rows] + jitter
    return weights


def init_som(records: Union[RecordsLike, np.ndarray], topology: SomTopology, seed: int) -> SomMap:
    """Initialize node weights from seeded sampling of the training set."""
    data = _as_matrix(records)
    weights = _init_weights(make_rng(seed), data, topology)
    return SomMap(topology=topology, dim=data.shape[1], weights=weights)


def find_winner(som: SomMap, s) -> int:
    """Index of the node whose weight is L2-closest to s (lowest index wins ties)."""
    v = _as_feature_vector(s, "sample")
    if v.size != som.dim:
        raise DimensionMismatch(f"sample has dimension {v.size}, map has {som.dim}")
    return int(kernels.sq_l2(som.weights, v).argmin())


def update_step(som: SomMap, s, alpha: float, sigma: float, kernel: str = "gaussian") -> SomMap:
    """One competitive-learning step; returns the updated map.

    When alpha*h equals 1 the winner's weight is set to the sample exactly,
    not via the incremental form, so repeat presentations are idempotent.
    """
    if not (0.0 < alpha <= 1.0):
        raise ValueError("alpha must lie in (0, 1]")
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    v = _as_feature_vector(s, "sample")
    if v.size != som.dim:
        raise DimensionMismatch(f"sample has dimension {v.size}, map has {som.dim}")
    winner = find_winner(som, v)
    grid_row = grid_distance_matrix(som.topology)[winner]
    h = np.array([neighborhood(kernel, float(d), sigma) for d in grid_row])
    weights = som.weights.copy()
    active = np.abs(h) >= kernels.H_SKIP
    g = alpha * h[active]
    rows = weights[active]
    rows += g[:, None] * (v - rows)
    weights[active] = rows
    exact = np.flatnonzero(active)[g == 1.0]
    if exact.size:
        weights[exact] = v
    return SomMap(topology=som.topology, dim=som.dim, weights=weights)


def train_som(
    records: Union[RecordsLike, np.ndarray], topology: SomTopology, params: SomParams
) -> SomMap:
    """Train a map: epochs * n presentation steps with linearly decaying
    alpha and sigma, records shuffled afresh each epoch."""
    data = _as_matrix(records)
    n = data.shape[0]
    rng = make_rng(params.seed)
    weights = _init_weights(rng, data, topology)
    order = np.concatenate([rng.permutation(n) for _ in range(params.epochs)]).astype(np.int64)
    grid = grid_distance_matrix(topology)
    kernels.som_train(
        weights,
        data,
        order,
        params.alpha0,
        params.resolved_sigma0(topology),
        params.sigma_min,
        grid,
        KERNEL_CODES[params.kernel],
    )
    return SomMap(topology=topology, dim=data.shape[1], weights=weights)


def assign(som: SomMap, records: RecordsLike) -> dict[int, list[int]]:
    """Partition records by winning node: node index -> list of record ids."""
    store = as_store(records)
    if store.dim != som.dim:
        raise DimensionMismatch(f"records have dimension {store.dim}, map has {som.dim}")
    winners = kernels.assign_winners(som.weights, store.features)
    partition: dict[int, list[int]] = {j: [] for j in range(som.topology.node_count)}
    for rid, j in zip(store.ids, winners):
        partition[int(j)].append(int(rid))
    return partition


def project(som: SomMap, s) -> np.ndarray:
    """Grid coordinates of the winning node (length = rank)."""
    winner = find_winner(som, s)
    shape = (som.topology.side,) * som.topology.rank
    return np.array(np.unravel_index(winner, shape), dtype=np.int64)


def quantization_error(som: SomMap, records: Union[RecordsLike, np.ndarray]) -> float:
    """Mean L2 distance from each record to its winning node's weight."""
    data = _as_matrix(records)
    winners = kernels.assign_winners(som.weights, data)
    diffs = data - som.weights[winners]
    return float(np.sqrt((diffs * diffs).sum(axis=1)).mean())
