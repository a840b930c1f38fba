"""k-nearest-neighbour queries on a uniform grid.

Neighbours are ranked by squared Euclidean distance with ties broken by the
lowest vertex index, and every code path (grid and brute force) evaluates the
squared distance with the same floating-point expression so that the two
agree bit for bit.
"""

from __future__ import annotations

import math

import numpy as np

# Below this many points a dense brute-force ranking is cheaper than the grid.
BRUTE_FORCE_LIMIT = 512


def _sq(coords: np.ndarray, i: int, idx: np.ndarray) -> np.ndarray:
    diff = coords[idx] - coords[i]
    return diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]


def rank_neighbors(coords: np.ndarray, i: int, idx: np.ndarray) -> np.ndarray:
    """Sort candidate indices ``idx`` by distance to ``i`` (ties: lowest index)."""
    idx = np.asarray(idx, dtype=np.int64)
    sq = _sq(coords, i, idx)
    return idx[np.lexsort((idx, sq))]


class GridIndex:
    """Bucket points into square cells holding about ``per_cell`` points each."""

    def __init__(self, coords: np.ndarray, per_cell: float = 2.0):
        coords = np.asarray(coords, dtype=np.float64)
        self.coords = coords
        n = coords.shape[0]
        self.lo = coords.min(axis=0)
        extent = float((coords.max(axis=0) - self.lo).max())
        if extent == 0.0:
            extent = 1.0
        side = max(1, int(math.sqrt(n / max(per_cell, 1e-9))))
        self.side = side
        self.width = extent / side
        cx, cy = self._cell_of(coords)
        cell = cy * side + cx
        self.order = np.argsort(cell, kind="stable")
        counts = np.bincount(cell, minlength=side * side)
        self.start = np.concatenate(([0], np.cumsum(counts)))

    def _cell_of(self, pts):
        c = np.floor((pts - self.lo) / self.width).astype(np.int64)
        np.clip(c, 0, self.side - 1, out=c)
        return c[..., 0], c[..., 1]

    def _square(self, cx: int, cy: int, r: int) -> np.ndarray:
        side = self.side
        x0, x1 = max(cx - r, 0), min(cx + r, side - 1)
        y0, y1 = max(cy - r, 0), min(cy + r, side - 1)
        start = self.start
        parts = [self.order[start[y * side + x0]:start[y * side + x1 + 1]]
                 for y in range(y0, y1 + 1)]
        return np.concatenate(parts)

    def query(self, i: int, k: int, exclude_self: bool = True) -> np.ndarray:
        """Indices of the ``k`` nearest points to point ``i``, nearest first."""
        coords = self.coords
        n = coords.shape[0]
        k = min(k, n - 1 if exclude_self else n)
        if k <= 0:
            return np.empty(0, dtype=np.int64)
        px, py = coords[i]
        cx, cy = self._cell_of(coords[i])
        cx, cy = int(cx), int(cy)
        side, w = self.side, self.width
        r = 0
        while True:
            cand = self._square(cx, cy, r)
            if exclude_self:
                cand = cand[cand != i]
            covers_all = cx - r <= 0 and cy - r <= 0 and cx + r >= side - 1 and cy + r >= side - 1
            if cand.shape[0] >= k:
                ranked = rank_neighbors(coords, i, cand)[:k]
                if covers_all:
                    return ranked
                # every unseen point lies outside the searched box
                bx0, bx1 = self.lo[0] + (cx - r) * w, self.lo[0] + (cx + r + 1) * w
                by0, by1 = self.lo[1] + (cy - r) * w, self.lo[1] + (cy + r + 1) * w
                margin = min(px - bx0 if cx - r > 0 else math.inf,
                             bx1 - px if cx + r < side - 1 else math.inf,
                             py - by0 if cy - r > 0 else math.inf,
                             by1 - py if cy + r < side - 1 else math.inf)
                d = coords[ranked[-1]] - coords[i]
                if d[0] * d[0] + d[1] * d[1] < margin * margin:
                    return ranked
            elif covers_all:
                return rank_neighbors(coords, i, cand)
            r += 1


def knn_all(coords: np.ndarray, k: int) -> np.ndarray:
    """Row ``i`` holds the ``min(k, n-1)`` nearest neighbours of point ``i``."""
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    k = min(k, n - 1)
    if k <= 0:
        return np.empty((n, 0), dtype=np.int64)
    if n <= BRUTE_FORCE_LIMIT:
        diff = coords[None, :, :] - coords[:, None, :]
        sq = diff[..., 0] * diff[..., 0] + diff[..., 1] * diff[..., 1]
        np.fill_diagonal(sq, np.inf)
        # stable sort keeps equal distances in ascending index order
        return np.argsort(sq, axis=1, kind="stable")[:, :k].astype(np.int64)
    grid = GridIndex(coords, per_cell=max(2.0, k / 2))
    return np.stack([grid.query(i, k) for i in range(n)])
