"""Binary index file format (version 1).

Little-endian throughout::

    magic  b"SOMT"
    u16    format version (= 1)
    u8     metric tag (0=l2, 1=l1, 2=cosine, 3=minkowski)
    f64    minkowski p
    u32    dim
    u64    record count
    u64    node count
    u64    root node id
    u16+s  generator id (length-prefixed UTF-8)
    record table, per record:
        u64    id
        u16+s  label (0xFFFF length = absent)
        f64    response (NaN = absent)
        u32    weight
        u32+s  payload (0xFFFFFFFF length = absent)
        f64*dim features
    node table, per node:
        u64    node id
        u16    depth
        f64*dim centroid
        u32    child count, u64*count child ids
        u32    member count, u64*count member ids
    u32    CRC-32C of all preceding bytes

The version gate is checked before the checksum so a bumped version byte
reports FormatVersionMismatch rather than corruption. Only the query metric
survives a round trip; build-only settings (branching, schedules) reload as
defaults since a loaded index is never re-split.
"""

from __future__ import annotations

import io
import struct

import numpy as np

from .core import Metric, RecordStore
from .errors import (
    BadMagic,
    ChecksumMismatch,
    FormatVersionMismatch,
    TruncatedFile,
)
from .index import BuildConfig, SomTreeIndex, TreeNode
from .kernels import crc32c_bytes

MAGIC = b"SOMT"
FORMAT_VERSION = 1
_METRIC_TAGS = {"l2": 0, "l1": 1, "cosine": 2, "minkowski": 3}
_TAG_METRICS = {v: k for k, v in _METRIC_TAGS.items()}
_ABSENT_U16 = 0xFFFF
_ABSENT_U32 = 0xFFFFFFFF


def _pack_str16(out: io.BytesIO, text: str | None) -> None:
    if text is None:
        out.write(struct.pack("<H", _ABSENT_U16))
        return
    raw = text.encode("utf-8")
    if len(raw) >= _ABSENT_U16:
        raise ValueError("string too long for u16 length prefix")
    out.write(struct.pack("<H", len(raw)))
    out.write(raw)


def _pack_bytes32(out: io.BytesIO, blob: bytes | None) -> None:
    if blob is None:
        out.write(struct.pack("<I", _ABSENT_U32))
        return
    out.write(struct.pack("<I", len(blob)))
    out.write(blob)


def serialize_index(index: SomTreeIndex) -> bytes:
    out = io.BytesIO()
    out.write(MAGIC)
    metric = index.config.metric
    out.write(
        struct.pack(
            "<HBdIQQQ",
            FORMAT_VERSION,
            _METRIC_TAGS[metric.kind],
            metric.p,
            index.dim,
            index.store.n,
            len(index.nodes),
            index.root,
        )
    )
    _pack_str16(out, index.generator_id)

    store = index.store
    for row in range(store.n):
        out.write(struct.pack("<Q", int(store.ids[row])))
        _pack_str16(out, store.labels[row])
        out.write(struct.pack("<d", float(store.responses[row])))
        out.write(struct.pack("<I", int(store.weights[row])))
        _pack_bytes32(out, store.payloads[row])
        out.write(np.ascontiguousarray(store.features[row], dtype="<f8").tobytes())

    for node in index.nodes:
        out.write(struct.pack("<QH", node.node_id, node.depth))
        out.write(np.ascontiguousarray(node.centroid, dtype="<f8").tobytes())
        out.write(struct.pack("<I", len(node.children)))
        for cid in node.children:
            out.write(struct.pack("<Q", cid))
        out.write(struct.pack("<I", len(node.members)))
        for rid in node.members:
            out.write(struct.pack("<Q", rid))

    body = out.getvalue()
    return body + struct.pack("<I", crc32c_bytes(body))


def save_index(index: SomTreeIndex, path) -> None:
    data = serialize_index(index)
    with open(path, "wb") as fh:
        fh.write(data)


class _Cursor:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise TruncatedFile(f"needed {n} bytes at offset {self.pos}")
        chunk = self.data[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def str16(self) -> str | None:
        (length,) = self.unpack("<H")
        if length == _ABSENT_U16:
            return None
        return self.take(length).decode("utf-8")

    def bytes32(self) -> bytes | None:
        (length,) = self.unpack("<I")
        if length == _ABSENT_U32:
            return None
        return self.take(length)

    def f64_array(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def deserialize_index(data: bytes) -> SomTreeIndex:
    if len(data) < len(MAGIC) + 2 + 4:
        raise ChecksumMismatch("file shorter than the fixed header")
    if data[: len(MAGIC)] != MAGIC:
        raise BadMagic("not a somtree index file")
    (version,) = struct.unpack_from("<H", data, len(MAGIC))
    if version != FORMAT_VERSION:
        raise FormatVersionMismatch(f"unsupported format version {version}")
    (stored_crc,) = struct.unpack_from("<I", data, len(data) - 4)
    body = data[:-4]
    if crc32c_bytes(body) != stored_crc:
        raise ChecksumMismatch("CRC-32C mismatch: file is corrupt or truncated")

    cur = _Cursor(body)
    cur.take(len(MAGIC))
    _, metric_tag, p, dim, rec_count, node_count, root = cur.unpack("<HBdIQQQ")
    generator_id = cur.str16() or ""
    metric = Metric(_TAG_METRICS[metric_tag], p)

    ids, labels, responses, weights, payloads = [], [], [], [], []
    features = np.empty((rec_count, dim), dtype=np.float64)
    for row in range(rec_count):
        (rid,) = cur.unpack("<Q")
        ids.append(rid)
        labels.append(cur.str16())
        (resp,) = cur.unpack("<d")
        responses.append(resp)
        (weight,) = cur.unpack("<I")
        weights.append(weight)
        payloads.append(cur.bytes32())
        features[row] = cur.f64_array(dim)
    store = RecordStore(ids, features, labels, responses, weights, payloads)

    nodes: list[TreeNode] = []
    for _ in range(node_count):
        node_id, depth = cur.unpack("<QH")
        centroid = cur.f64_array(dim)
        (n_children,) = cur.unpack("<I")
        children = [cur.unpack("<Q")[0] for _ in range(n_children)]
        (n_members,) = cur.unpack("<I")
        members = [cur.unpack("<Q")[0] for _ in range(n_members)]
        nodes.append(
            TreeNode(
                node_id=int(node_id),
                depth=int(depth),
                centroid=centroid,
                children=[int(c) for c in children],
                members=[int(m) for m in members],
            )
        )
    if cur.pos != len(body):
        raise ChecksumMismatch(f"{len(body) - cur.pos} trailing bytes after node table")

    config = BuildConfig(metric=metric)
    idx = SomTreeIndex(
        config=config, store=store, nodes=nodes, root=int(root), generator_id=generator_id
    )
    idx.refresh_member_rows()
    idx.recompute_member_counts()
    return idx


def load_index(path) -> SomTreeIndex:
    with open(path, "rb") as fh:
        return deserialize_index(fh.read())
