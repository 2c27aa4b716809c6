"""Hot numeric kernels: distance scans, SOM training, CRC32C.

Every kernel exists twice: a pure-numpy implementation (suffix ``_numpy``)
and, when numba is importable, an ``@njit`` version. The module-level public
names (``sq_l2``, ``l1_dists``, ...) are bound once at import time. Setting
the environment variable ``SOMTREE_NO_NUMBA=1`` before import forces the
numpy path even when numba is installed; ``benchmarks/kernel_bench.py``
times the two side by side.

All kernels take C-contiguous float64 arrays. The jit scans accumulate in
natural index order; numpy reductions use pairwise summation, so the two
paths may differ by ~1e-16 relative, which downstream tolerances absorb.
Identical vectors produce an exactly-zero distance on both paths because
differences are computed directly (never via the expanded dot-product form).
"""

from __future__ import annotations

import os

import numpy as np


def _numba_disabled_by_env() -> bool:
    return os.environ.get("SOMTREE_NO_NUMBA", "").strip().lower() in {"1", "true", "yes", "on"}


NUMBA_ENABLED = False
if not _numba_disabled_by_env():
    try:
        from numba import njit

        NUMBA_ENABLED = True
    except ImportError:  # pragma: no cover - numba is a declared dependency
        NUMBA_ENABLED = False

BACKEND = "numba" if NUMBA_ENABLED else "numpy"

# Rows per chunk in the numpy scans, sized to keep temporaries ~32 MB.
_CHUNK_ELEMS = 4 << 20

GAUSSIAN = 0
MEXICAN_HAT = 1

# Updates with |h| below this are skipped during SOM training.
H_SKIP = 1e-12


def _chunk_rows(dim: int) -> int:
    return max(1, _CHUNK_ELEMS // max(dim, 1))


# ---------------------------------------------------------------------------
# numpy implementations
# ---------------------------------------------------------------------------


def sq_l2_numpy(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Squared Euclidean distance from q to every row of points."""
    n, dim = points.shape
    out = np.empty(n, dtype=np.float64)
    step = _chunk_rows(dim)
    for lo in range(0, n, step):
        d = points[lo : lo + step] - q
        out[lo : lo + step] = (d * d).sum(axis=1)
    return out


def l1_dists_numpy(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    n, dim = points.shape
    out = np.empty(n, dtype=np.float64)
    step = _chunk_rows(dim)
    for lo in range(0, n, step):
        out[lo : lo + step] = np.abs(points[lo : lo + step] - q).sum(axis=1)
    return out


def minkowski_dists_numpy(points: np.ndarray, q: np.ndarray, p: float) -> np.ndarray:
    n, dim = points.shape
    out = np.empty(n, dtype=np.float64)
    step = _chunk_rows(dim)
    for lo in range(0, n, step):
        out[lo : lo + step] = (np.abs(points[lo : lo + step] - q) ** p).sum(axis=1)
    return out ** (1.0 / p)


def cosine_dists_numpy(points: np.ndarray, q: np.ndarray) -> np.ndarray:
    """Cosine distance 1 - cos(angle); NaN marks zero-norm rows (or query)."""
    n, dim = points.shape
    qq = (q * q).sum()
    out = np.empty(n, dtype=np.float64)
    step = _chunk_rows(dim)
    for lo in range(0, n, step):
        block = points[lo : lo + step]
        dots = (block * q).sum(axis=1)
        pp = (block * block).sum(axis=1)
        denom = np.sqrt(pp * qq)
        with np.errstate(divide="ignore", invalid="ignore"):
            vals = 1.0 - dots / denom
        vals[(pp == 0.0) | (qq == 0.0)] = np.nan
        out[lo : lo + step] = vals
    return out


def assign_winners_numpy(weights: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Index of the L2-closest weight row for each point (first-min ties)."""
    n = points.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        d = weights - points[i]
        out[i] = int(((d * d).sum(axis=1)).argmin())
    return out


def _neighborhood_values(grid_row: np.ndarray, sigma: float, kernel_code: int) -> np.ndarray:
    r = (grid_row * grid_row) / (sigma * sigma)
    if kernel_code == GAUSSIAN:
        return np.exp(-0.5 * r)
    return (1.0 - r) * np.exp(-0.5 * r)


def som_train_numpy(
    weights: np.ndarray,
    data: np.ndarray,
    order: np.ndarray,
    alpha0: float,
    sigma0: float,
    sigma_min: float,
    grid_dist: np.ndarray,
    kernel_code: int,
) -> None:
    """Run the full presentation loop in place on ``weights``."""
    total = order.size
    inv_total = 1.0 / total
    for t in range(total):
        s = data[order[t]]
        d = weights - s
        best = int(((d * d).sum(axis=1)).argmin())
        frac = 1.0 - t * inv_total
        alpha = alpha0 * frac
        sigma = max(sigma_min, sigma0 * frac)
        h = _neighborhood_values(grid_dist[best], sigma, kernel_code)
        active = np.abs(h) >= H_SKIP
        g = alpha * h[active]
        rows = weights[active]
        rows += g[:, None] * (s - rows)
        weights[active] = rows
        # g == 1 must leave the row bit-equal to the sample
        exact = np.flatnonzero(active)[g == 1.0]
        if exact.size:
            weights[exact] = s


def crc32c_numpy(buf: np.ndarray) -> int:
    """Table-driven CRC-32C (Castagnoli). Slow path; fine for small files."""
    tbl = _CRC_TABLE_LIST
    crc = 0xFFFFFFFF
    for b in memoryview(buf):
        crc = tbl[(crc ^ b) & 0xFF] ^ (crc >> 8)
    return crc ^ 0xFFFFFFFF


def _make_crc32c_table() -> np.ndarray:
    tbl = np.empty(256, dtype=np.uint32)
    for n in range(256):
        c = n
        for _ in range(8):
            c = (c >> 1) ^ 0x82F63B78 if c & 1 else c >> 1
        tbl[n] = c
    return tbl


_CRC_TABLE = _make_crc32c_table()
_CRC_TABLE_LIST = _CRC_TABLE.tolist()


# ---------------------------------------------------------------------------
# numba implementations
# ---------------------------------------------------------------------------

if NUMBA_ENABLED:

    @njit(cache=True, nogil=True)
    def _sq_l2_jit(points, q):
        n, dim = points.shape
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            acc = 0.0
            for c in range(dim):
                diff = points[i, c] - q[c]
                acc += diff * diff
            out[i] = acc
        return out

    @njit(cache=True, nogil=True)
    def _l1_jit(points, q):
        n, dim = points.shape
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            acc = 0.0
            for c in range(dim):
                acc += abs(points[i, c] - q[c])
            out[i] = acc
        return out

    @njit(cache=True, nogil=True)
    def _minkowski_jit(points, q, p):
        n, dim = points.shape
        out = np.empty(n, dtype=np.float64)
        inv_p = 1.0 / p
        for i in range(n):
            acc = 0.0
            for c in range(dim):
                acc += abs(points[i, c] - q[c]) ** p
            out[i] = acc ** inv_p
        return out

    @njit(cache=True, nogil=True)
    def _cosine_jit(points, q):
        n, dim = points.shape
        qq = 0.0
        for c in range(dim):
            qq += q[c] * q[c]
        out = np.empty(n, dtype=np.float64)
        for i in range(n):
            dot = 0.0
            pp = 0.0
            for c in range(dim):
                dot += points[i, c] * q[c]
                pp += points[i, c] * points[i, c]
            if pp == 0.0 or qq == 0.0:
                out[i] = np.nan
            else:
                out[i] = 1.0 - dot / np.sqrt(pp * qq)
        return out

    @njit(cache=True, nogil=True)
    def _assign_winners_jit(weights, points):
        n, dim = points.shape
        m = weights.shape[0]
        out = np.empty(n, dtype=np.int64)
        for i in range(n):
            best = 0
            best_d = np.inf
            for j in range(m):
                acc = 0.0
                for c in range(dim):
                    diff = points[i, c] - weights[j, c]
                    acc += diff * diff
                if acc < best_d:
                    best_d = acc
                    best = j
            out[i] = best
        return out

    @njit(cache=True)
    def _som_train_jit(weights, data, order, alpha0, sigma0, sigma_min, grid_dist, kernel_code):
        total = order.size
        m, dim = weights.shape
        inv_total = 1.0 / total
        for t in range(total):
            s = data[order[t]]
            best = 0
            best_d = np.inf
            for j in range(m):
                acc = 0.0
                for c in range(dim):
                    diff = s[c] - weights[j, c]
                    acc += diff * diff
                if acc < best_d:
                    best_d = acc
                    best = j
            frac = 1.0 - t * inv_total
            alpha = alpha0 * frac
            sigma = sigma0 * frac
            if sigma < sigma_min:
                sigma = sigma_min
            for j in range(m):
                gd = grid_dist[best, j]
                r = (gd * gd) / (sigma * sigma)
                if kernel_code == GAUSSIAN:
                    h = np.exp(-0.5 * r)
                else:
                    h = (1.0 - r) * np.exp(-0.5 * r)
                if abs(h) < H_SKIP:
                    continue
                g = alpha * h
                if g == 1.0:
                    for c in range(dim):
                        weights[j, c] = s[c]
                else:
                    for c in range(dim):
                        weights[j, c] += g * (s[c] - weights[j, c])

    @njit(cache=True, nogil=True)
    def _crc32c_jit(buf, tbl):
        crc = np.uint32(0xFFFFFFFF)
        for i in range(buf.size):
            idx = (crc ^ np.uint32(buf[i])) & np.uint32(0xFF)
            crc = tbl[idx] ^ (crc >> np.uint32(8))
        return crc ^ np.uint32(0xFFFFFFFF)

    def sq_l2_numba(points, q):
        return _sq_l2_jit(points, q)

    def l1_dists_numba(points, q):
        return _l1_jit(points, q)

    def minkowski_dists_numba(points, q, p):
        return _minkowski_jit(points, q, p)

    def cosine_dists_numba(points, q):
        return _cosine_jit(points, q)

    def assign_winners_numba(weights, points):
        return _assign_winners_jit(weights, points)

    def som_train_numba(weights, data, order, alpha0, sigma0, sigma_min, grid_dist, kernel_code):
        _som_train_jit(weights, data, order, alpha0, sigma0, sigma_min, grid_dist, kernel_code)

    def crc32c_numba(buf):
        arr = np.frombuffer(buf, dtype=np.uint8) if not isinstance(buf, np.ndarray) else buf
        return int(_crc32c_jit(arr, _CRC_TABLE))

    sq_l2 = sq_l2_numba
    l1_dists = l1_dists_numba
    minkowski_dists = minkowski_dists_numba
    cosine_dists = cosine_dists_numba
    assign_winners = assign_winners_numba
    som_train = som_train_numba
    crc32c = crc32c_numba
else:
    sq_l2 = sq_l2_numpy
    l1_dists = l1_dists_numpy
    minkowski_dists = minkowski_dists_numpy
    cosine_dists = cosine_dists_numpy
    assign_winners = assign_winners_numpy
    som_train = som_train_numpy
    crc32c = crc32c_numpy


def crc32c_bytes(data: bytes) -> int:
    """CRC-32C of a bytes object using the active backend."""
    return int(crc32c(np.frombuffer(data, dtype=np.uint8)))


def warm_up() -> None:
    """Trigger jit compilation on tiny inputs so timed loops start hot."""
    pts = np.zeros((2, 3), dtype=np.float64)
    q = np.zeros(3, dtype=np.float64)
    sq_l2(pts, q)
    l1_dists(pts, q)
    minkowski_dists(pts, q, 3.0)
    cosine_dists(pts + 1.0, q + 1.0)
    assign_winners(pts, pts)
    w = np.zeros((2, 3), dtype=np.float64)
    som_train(w, pts, np.zeros(1, dtype=np.int64), 0.5, 1.0, 0.5, np.zeros((2, 2)), GAUSSIAN)
    crc32c_bytes(b"somtree")
