"""Hierarchical SOM search tree: build, generalize, audit, insert.

Each internal node was split by training a SOM on its members; its children
are the non-empty SOM cells, each carrying the cell's trained weight vector
as centroid. Leaves hold record ids. The tree is a hard partition: every
record id lives in exactly one leaf.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import kernels
from .core import (
    L2,
    Metric,
    Record,
    RecordsLike,
    RecordStore,
    as_store,
    dists_to_many,
    similarity,
)
from .errors import (
    DimensionMismatch,
    DuplicateId,
    InvalidIndex,
)
from .som import (
    GENERATOR_ID,
    SomParams,
    SomTopology,
    derive_seed,
    train_som,
)


@dataclass(frozen=True)
class BuildConfig:
    branching: SomTopology = SomTopology(rank=1, side=10)
    max_depth: int = 5
    min_leaf_size: int = 1
    metric: Metric = L2
    som_params: SomParams = SomParams()
    response_tol: float = 0.0

    def __post_init__(self):
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.min_leaf_size < 1:
            raise ValueError("min_leaf_size must be >= 1")
        if self.response_tol < 0:
            raise ValueError("response_tol must be >= 0")


@dataclass
class TreeNode:
    node_id: int
    depth: int
    centroid: np.ndarray
    children: list[int] = field(default_factory=list)
    members: list[int] = field(default_factory=list)
    member_count: int = 0
    # cached store row positions of members; kept in sync with `members`
    member_rows: np.ndarray = field(default_factory=lambda: np.empty(0, dtype=np.int64))

    @property
    def is_leaf(self) -> bool:
        return not self.children


@dataclass(frozen=True)
class InsertOutcome:
    kind: str  # "appended" or "new_leaf"
    leaf_id: int

    @property
    def appended(self) -> bool:
        return self.kind == "appended"


@dataclass(frozen=True)
class LeafStats:
    leaf_id: int
    size: int
    label_purity: float
    response_stddev: Optional[float]
    intra_leaf_mean_distance: float


@dataclass(frozen=True)
class LeafReport:
    entries: tuple[LeafStats, ...]

    def mean_purity(self) -> float:
        return float(np.mean([e.label_purity for e in self.entries]))


class SomTreeIndex:
    """The searchable artifact: node arena + record store + build config."""

    def __init__(
        self,
        config: BuildConfig,
        store: RecordStore,
        nodes: list[TreeNode],
        root: int = 0,
        generator_id: str = GENERATOR_ID,
    ):
        self.config = config
        self.store = store
        self.nodes = nodes
        self.root = root
        self.generator_id = generator_id
        self._centroids = np.ascontiguousarray(
            np.stack([n.centroid for n in nodes]), dtype=np.float64
        )

    @property
    def dim(self) -> int:
        return self.store.dim

    @property
    def record_count(self) -> int:
        return self.store.n

    def node(self, node_id: int) -> TreeNode:
        return self.nodes[node_id]

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.nodes if n.is_leaf]

    def child_centroids(self, child_ids: list[int]) -> np.ndarray:
        return self._centroids[np.asarray(child_ids, dtype=np.int64)]

    def _append_node(self, node: TreeNode) -> None:
        self.nodes.append(node)
        self._centroids = np.ascontiguousarray(np.vstack([self._centroids, node.centroid]))

    def refresh_member_rows(self) -> None:
        """Recompute cached row positions after the store was rebuilt."""
        for node in self.nodes:
            if node.is_leaf:
                node.member_rows = np.array(
                    [self.store.row_of(rid) for rid in node.members], dtype=np.int64
                )

    def recompute_member_counts(self) -> None:
        for node in reversed(self.nodes):  # children have higher ids than parents
            if node.is_leaf:
                node.member_count = len(node.members)
            else:
                node.member_count = sum(self.nodes[c].member_count for c in node.children)

    def validate(self) -> None:
        """Raise InvalidIndex if any structural invariant is broken."""
        seen: Counter[int] = Counter()
        stack = [self.root]
        reached = set()
        while stack:
            nid = stack.pop()
            if nid in reached:
                raise InvalidIndex(f"node {nid} reached twice (cycle or shared child)")
            reached.add(nid)
            node = self.nodes[nid]
            if node.children and node.members:
                raise InvalidIndex(f"node {nid} has both children and members")
            if node.is_leaf:
                if not node.members:
                    raise InvalidIndex(f"leaf {nid} is empty")
                if node.member_count != len(node.members):
                    raise InvalidIndex(f"leaf {nid} member_count mismatch")
                seen.update(node.members)
            else:
                total = 0
                for cid in node.children:
                    child = self.nodes[cid]
                    if child.depth != node.depth + 1:
                        raise InvalidIndex(f"child {cid} depth is not parent depth + 1")
                    total += child.member_count
                if total != node.member_count:
                    raise InvalidIndex(f"node {nid} member_count != sum of children")
                stack.extend(node.children)
        if len(reached) != len(self.nodes):
            raise InvalidIndex("unreachable nodes present")
        if sum(seen.values()) != self.store.n or len(seen) != self.store.n:
            raise InvalidIndex("leaf members do not partition the record set")
        for rid in self.store.ids:
            if seen[int(rid)] != 1:
                raise InvalidIndex(f"record {rid} not in exactly one leaf")


def build_tree(records: RecordsLike, config: BuildConfig = BuildConfig()) -> SomTreeIndex:
    """Recursively split records with SOMs until depth/size limits are hit."""
    store = as_store(records)
    nodes: list[TreeNode] = []
    node_count = config.branching.node_count

    def build(rows: np.ndarray, depth: int, seed: int, centroid: np.ndarray) -> int:
        nid = len(nodes)
        node = TreeNode(node_id=nid, depth=depth, centroid=centroid, member_count=rows.size)
        nodes.append(node)
        if rows.size > config.min_leaf_size and depth < config.max_depth:
            som = train_som(
                store.features[rows],
                config.branching,
                replace(config.som_params, seed=seed),
            )
            winners = kernels.assign_winners(som.weights, store.features[rows])
            cells = [rows[winners == j] for j in range(node_count)]
            non_empty = [(j, cell) for j, cell in enumerate(cells) if cell.size]
            if len(non_empty) >= 2:
                for ordinal, (j, cell) in enumerate(non_empty):
                    child_id = build(
                        cell, depth + 1, derive_seed(seed, ordinal), som.weights[j].copy()
                    )
                    node.children.append(child_id)
                return nid
        node.members = [int(store.ids[r]) for r in rows]
        node.member_rows = rows.astype(np.int64)
        return nid

    all_rows = np.arange(store.n, dtype=np.int64)
    root_centroid = store.features.mean(axis=0)
    build(all_rows, 0, config.som_params.seed, root_centroid)
    return SomTreeIndex(config=config, store=store, nodes=nodes)


def _mergeable(store: RecordStore, ra: int, rb: int, response_tol: float) -> bool:
    if store.labels[ra] != store.labels[rb]:
        return False
    resp_a, resp_b = store.responses[ra], store.responses[rb]
    a_has, b_has = np.isfinite(resp_a), np.isfinite(resp_b)
    if a_has != b_has:
        return False
    if a_has and abs(resp_a - resp_b) > response_tol:
        return False
    return True


def generalize_leaves(index: SomTreeIndex, epsilon: float = 0.0) -> int:
    """Collapse groups of near-identical, same-label leaf members into
    weighted prototype records. Returns how many records were eliminated.

    Grouping is single-linkage: records join a group when they sit within
    epsilon of any current group member (and agree on label/response), so
    the result matches a union-find over the same threshold.
    """
    if epsilon < 0:
        raise InvalidIndex("epsilon must be >= 0")
    store = index.store
    metric = index.config.metric
    keep = np.ones(store.n, dtype=bool)
    prototypes: list[Record] = []
    leaf_extra: dict[int, list[int]] = {}
    eliminated = 0

    for leaf in index.leaves():
        rows = leaf.member_rows
        if rows.size < 2:
            continue
        rows = rows[np.argsort(store.ids[rows], kind="stable")]
        m = rows.size
        parent = list(range(m))

        def find(x: int) -> int:
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        feats = store.features[rows]
        for a in range(m - 1):
            dists = dists_to_many(feats[a + 1 :], feats[a], metric)
            for off in np.flatnonzero(dists <= epsilon):
                b = a + 1 + int(off)
                if _mergeable(store, rows[a], rows[b], index.config.response_tol):
                    ra, rb = find(a), find(b)
                    if ra != rb:
                        parent[rb] = ra

        groups: dict[int, list[int]] = {}
        for i in range(m):
            groups.setdefault(find(i), []).append(i)
        new_member_ids: list[int] = []
        for group in groups.values():
            grows = rows[group]
            if len(group) < 2:
                new_member_ids.append(int(store.ids[grows[0]]))
                continue
            gids = store.ids[grows]
            lowest = grows[int(np.argmin(gids))]
            responses = store.responses[grows]
            has_resp = np.isfinite(responses).all()
            proto = Record(
                id=int(store.ids[lowest]),
                features=store.features[grows].mean(axis=0),
                label=store.labels[lowest],
                response=float(responses.mean()) if has_resp else None,
                payload=store.payloads[lowest],
                weight=int(store.weights[grows].sum()),
            )
            prototypes.append(proto)
            keep[grows] = False
            eliminated += len(group) - 1
            new_member_ids.append(proto.id)
        if len(new_member_ids) != m:
            leaf_extra[leaf.node_id] = sorted(new_member_ids)

    if not prototypes:
        return 0

    kept_records = [store.record(int(rid)) for rid in store.ids[keep]]
    index.store = RecordStore.from_records(kept_records + prototypes)
    for leaf_id, member_ids in leaf_extra.items():
        index.nodes[leaf_id].members = member_ids
    index.refresh_member_rows()
    index.recompute_member_counts()
    return eliminated


def leaf_consistency_report(index: SomTreeIndex) -> LeafReport:
    """Per-leaf purity/spread audit, worst (least pure, largest) leaves first."""
    store = index.store
    metric = index.config.metric
    entries = []
    for leaf in index.leaves():
        rows = leaf.member_rows
        size = rows.size
        labels = [store.labels[r] for r in rows if store.labels[r] is not None]
        if size == 1 or not labels:
            purity = 1.0
        else:
            purity = Counter(labels).most_common(1)[0][1] / size
        responses = store.responses[rows]
        responses = responses[np.isfinite(responses)]
        stddev = float(np.std(responses)) if responses.size else None
        if size > 1:
            feats = store.features[rows]
            total = 0.0
            for a in range(size - 1):
                total += float(dists_to_many(feats[a + 1 :], feats[a], metric).sum())
            mean_dist = total / (size * (size - 1) / 2)
        else:
            mean_dist = 0.0
        entries.append(
            LeafStats(
                leaf_id=leaf.node_id,
                size=int(size),
                label_purity=float(purity),
                response_stddev=stddev,
                intra_leaf_mean_distance=mean_dist,
            )
        )
    entries.sort(key=lambda e: (e.label_purity, -e.size))
    return LeafReport(entries=tuple(entries))


def _greedy_leaf_path(index: SomTreeIndex, q: np.ndarray) -> list[int]:
    """Root-to-leaf path following the nearest child centroid (L2) at each level."""
    path = [index.root]
    node = index.nodes[index.root]
    while not node.is_leaf:
        kids = node.children
        dists = kernels.sq_l2(index.child_centroids(kids), q)
        node = index.nodes[kids[int(dists.argmin())]]
        path.append(node.node_id)
    return path


def insert(index: SomTreeIndex, record: Record, tau_new: float) -> InsertOutcome:
    """Place a new record: append to the greedily-reached leaf when it is
    similar enough to an existing member, otherwise open a new sibling leaf.

    Existing centroids are never touched, so insertion is pure fine-tuning:
    no retraining, no restructuring beyond the optional new leaf.
    """
    if not (0.0 < tau_new <= 1.0):
        raise ValueError("tau_new must lie in (0, 1]")
    if record.features.size != index.dim:
        raise DimensionMismatch(
            f"record has dimension {record.features.size}, index has {index.dim}"
        )
    if index.store.has_id(record.id):
        raise DuplicateId(f"record id {record.id} already present")

    q = record.features
    path = _greedy_leaf_path(index, q)
    leaf = index.nodes[path[-1]]
    member_dists = dists_to_many(index.store.features[leaf.member_rows], q, index.config.metric)
    best = float(member_dists.min())

    if similarity(best) >= tau_new:
        row = index.store.add(record)
        leaf.members.append(record.id)
        leaf.member_rows = np.append(leaf.member_rows, np.int64(row))
        for nid in path:
            index.nodes[nid].member_count += 1
        return InsertOutcome(kind="appended", leaf_id=leaf.node_id)

    if len(path) == 1:
        # the whole tree is one leaf: give the root a child holding the old
        # members, then the new record becomes that child's sibling
        moved = TreeNode(
            node_id=len(index.nodes),
            depth=leaf.depth + 1,
            centroid=leaf.centroid.copy(),
            members=leaf.members,
            member_count=leaf.member_count,
            member_rows=leaf.member_rows,
        )
        index._append_node(moved)
        leaf.children = [moved.node_id]
        leaf.members = []
        leaf.member_rows = np.empty(0, dtype=np.int64)
        parent = leaf
    else:
        parent = index.nodes[path[-2]]

    row = index.store.add(record)
    new_leaf = TreeNode(
        node_id=len(index.nodes),
        depth=parent.depth + 1,
        centroid=record.features.copy(),
        members=[record.id],
        member_count=1,
        member_rows=np.array([row], dtype=np.int64),
    )
    index._append_node(new_leaf)
    parent.children.append(new_leaf.node_id)
    for nid in path[:-1] if len(path) > 1 else [index.root]:
        index.nodes[nid].member_count += 1
    return InsertOutcome(kind="new_leaf", leaf_id=new_leaf.node_id)
