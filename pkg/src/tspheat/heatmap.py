"""Sparse symmetric edge-probability maps and the providers that build them.

A heat map assigns each edge ``(i, j)`` a probability ``P_ij`` of belonging
to an optimal tour. Only edges with a positive value are stored, once, under
the canonical key ``(min(i, j), max(i, j))``.

Providers turn a small point set (coordinates already scaled into the unit
square) into a heat map over its local indices. Two deterministic providers
ship here: a rank-decay surrogate and the uniform ablation map. Heat maps
computed elsewhere (for instance by a trained network) enter through
:func:`load_heatmap`.
"""

from __future__ import annotations

import math
from pathlib import Path
from types import MappingProxyType
from typing import Iterable, Mapping, Protocol

import numpy as np
import scipy.sparse as sp

from .instance import InstanceFormatError
from .spatial import GridIndex, knn_all, rank_neighbors

__all__ = [
    "DEFAULT_EPSILON",
    "DEFAULT_KAPPA",
    "HeatMap",
    "HeatMapProvider",
    "SurrogateProvider",
    "UniformProvider",
    "complete_heatmap",
    "load_heatmap",
    "prune_unpromising",
    "surrogate_heatmap",
    "uniform_heatmap",
    "write_heatmap",
]

DEFAULT_EPSILON = 1e-4
DEFAULT_KAPPA = 10
_DUPLICATE_TOL = 1e-12


def _key(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


class HeatMap:
    """Immutable sparse symmetric map ``(i, j) -> P_ij`` over ``n`` vertices.

    Absent edges have probability 0. Lookups are symmetric:
    ``hm.get(i, j) == hm.get(j, i)``.
    """

    __slots__ = ("n", "_entries", "_adj")

    def __init__(self, n: int, entries: Mapping[tuple[int, int], float] | None = None):
        self.n = int(n)
        clean: dict[tuple[int, int], float] = {}
        for (i, j), p in (entries or {}).items():
            i, j, p = int(i), int(j), float(p)
            if i == j:
                raise ValueError(f"self-loop ({i}, {j}) in heat map")
            if not (0 <= i < self.n and 0 <= j < self.n):
                raise ValueError(f"edge ({i}, {j}) outside [0, {self.n})")
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"probability {p} of edge ({i}, {j}) outside [0, 1]")
            if p == 0.0:
                continue
            k = _key(i, j)
            prev = clean.get(k)
            clean[k] = p if prev is None else max(prev, p)
        self._entries = clean
        self._adj = None

    @classmethod
    def from_arrays(cls, n: int, rows, cols, values) -> "HeatMap":
        return cls(n, dict(zip(zip(np.asarray(rows).tolist(), np.asarray(cols).tolist()),
                               np.asarray(values, dtype=np.float64).tolist())))

    @property
    def entries(self) -> Mapping[tuple[int, int], float]:
        return MappingProxyType(self._entries)

    def get(self, i: int, j: int) -> float:
        return self._entries.get(_key(i, j), 0.0)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, edge) -> bool:
        return _key(*edge) in self._entries

    def items(self) -> list[tuple[int, int, float]]:
        """Entries as ``(i, j, p)`` with ``i < j``, sorted lexicographically."""
        return [(i, j, p) for (i, j), p in sorted(self._entries.items())]

    def _adjacency(self) -> list[dict[int, float]]:
        if self._adj is None:
            adj: list[dict[int, float]] = [{} for _ in range(self.n)]
            for (i, j), p in sorted(self._entries.items()):
                adj[i][j] = p
                adj[j][i] = p
            self._adj = adj
        return self._adj

    def neighbors(self, i: int) -> Mapping[int, float]:
        """Stored edges at ``i`` as ``{j: P_ij}``, in ascending ``j``."""
        return MappingProxyType(self._adjacency()[i])

    def adjacency(self) -> list[list[int]]:
        """Sorted neighbour lists for all vertices."""
        return [sorted(a) for a in self._adjacency()]

    def degree(self, i: int) -> int:
        return len(self._adjacency()[i])

    def to_sparse(self) -> sp.csr_matrix:
        """Symmetric ``n x n`` CSR matrix holding both triangles."""
        if not self._entries:
            return sp.csr_matrix((self.n, self.n))
        keys = np.array(list(self._entries.keys()), dtype=np.int64)
        vals = np.fromiter(self._entries.values(), dtype=np.float64, count=len(self._entries))
        rows = np.concatenate([keys[:, 0], keys[:, 1]])
        cols = np.concatenate([keys[:, 1], keys[:, 0]])
        return sp.csr_matrix((np.concatenate([vals, vals]), (rows, cols)), shape=(self.n, self.n))

    def __eq__(self, other):
        if not isinstance(other, HeatMap):
            return NotImplemented
        return self.n == other.n and self._entries == other._entries

    __hash__ = None

    def __repr__(self):
        return f"HeatMap(n={self.n}, edges={len(self._entries)})"


class HeatMapProvider(Protocol):
    """Callable mapping an ``(m, 2)`` coordinate array to a heat map over ``m`` vertices."""

    def __call__(self, coords: np.ndarray) -> HeatMap: ...


def _rank_decay(coords, kappa: int, value_of_rank) -> HeatMap:
    coords = np.asarray(coords, dtype=np.float64)
    n = coords.shape[0]
    if n < 2:
        raise ValueError("a heat map needs at least 2 vertices")
    if kappa < 1:
        raise ValueError(f"kappa must be >= 1, got {kappa}")
    nbrs = knn_all(coords, kappa)
    entries: dict[tuple[int, int], float] = {}
    for i in range(n):
        for r, j in enumerate(nbrs[i].tolist(), 1):
            k = _key(i, j)
            v = value_of_rank(r)
            if v > entries.get(k, 0.0):
                entries[k] = v
    return HeatMap(n, entries)


def surrogate_heatmap(coords, kappa: int = DEFAULT_KAPPA) -> HeatMap:
    """Rank-decay stand-in for a learned heat map.

    The ``r``-th nearest neighbour ``j`` of ``i`` (``r <= kappa``) proposes
    ``2**-r`` for edge ``(i, j)``; the stored value is the larger of the two
    endpoint proposals.
    """
    return _rank_decay(coords, kappa, lambda r: 0.5 ** r)


def uniform_heatmap(coords, kappa: int = DEFAULT_KAPPA) -> HeatMap:
    """Ablation map: every kappa-nearest-neighbour edge gets ``P = 0.5``."""
    return _rank_decay(coords, kappa, lambda r: 0.5)


def complete_heatmap(n: int, p: float = 1.0) -> HeatMap:
    """Every edge stored with the same probability ``p``."""
    return HeatMap(n, {(i, j): p for i in range(n) for j in range(i + 1, n)})


class SurrogateProvider:
    def __init__(self, kappa: int = DEFAULT_KAPPA):
        self.kappa = kappa

    def __call__(self, coords) -> HeatMap:
        return surrogate_heatmap(coords, self.kappa)

    def __repr__(self):
        return f"SurrogateProvider(kappa={self.kappa})"


class UniformProvider:
    def __init__(self, kappa: int = DEFAULT_KAPPA):
        self.kappa = kappa

    def __call__(self, coords) -> HeatMap:
        return uniform_heatmap(coords, self.kappa)

    def __repr__(self):
        return f"UniformProvider(kappa={self.kappa})"


def prune_unpromising(hm: HeatMap, coords, epsilon: float = DEFAULT_EPSILON) -> HeatMap:
    """Drop edges with ``P < epsilon``, then restore a degree-2 floor.

    A vertex left with fewer than two stored edges gets edges to its nearest
    neighbours (closest first) re-inserted at ``P = epsilon`` until it has
    two. ``coords`` supplies the geometry for that floor.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    coords = np.asarray(coords, dtype=np.float64)
    n = hm.n
    kept = {k: p for k, p in hm.entries.items() if not p < epsilon}
    degree = [0] * n
    for i, j in kept:
        degree[i] += 1
        degree[j] += 1
    low = [v for v in range(n) if degree[v] < 2]
    if low and n > 2:
        floor_p = min(max(epsilon, 0.0), 1.0)
        if floor_p == 0.0:
            floor_p = np.nextafter(0.0, 1.0)
        grid = GridIndex(coords) if n > 512 else None
        for v in low:
            k = 2
            while degree[v] < 2:
                if grid is not None:
                    cands = grid.query(v, k)
                else:
                    others = np.arange(n)
                    cands = rank_neighbors(coords, v, others[others != v])[:k]
                for u in cands.tolist():
                    if degree[v] >= 2:
                        break
                    key = _key(v, u)
                    if key not in kept:
                        kept[key] = floor_p
                        degree[v] += 1
                        degree[u] += 1
                k *= 2
    return HeatMap(n, kept)


# --- file format ------------------------------------------------------------

def write_heatmap(hm: HeatMap, path) -> None:
    """``n <count>`` then ``i j p`` per stored edge, canonical and sorted."""
    lines = [f"n {hm.n}"]
    lines += [f"{i} {j} {format(p, '.17g')}" for i, j, p in hm.items()]
    Path(path).write_text("\n".join(lines) + "\n")


def _parse_edges(lines: Iterable[str], path, n: int) -> dict[tuple[int, int], float]:
    directed: dict[tuple[int, int], float] = {}
    for lineno, raw in enumerate(lines, 2):
        line = raw.strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != 3:
            raise InstanceFormatError(f"{path}:{lineno}: expected '<i> <j> <p>', got {line!r}")
        try:
            i, j = int(parts[0]), int(parts[1])
        except ValueError:
            raise InstanceFormatError(f"{path}:{lineno}: edge indices must be integers") from None
        try:
            p = float(parts[2])
        except ValueError:
            raise InstanceFormatError(f"{path}:{lineno}: cannot parse probability {parts[2]!r}") from None
        if not (0 <= i < n and 0 <= j < n) or i == j:
            raise InstanceFormatError(f"{path}:{lineno}: index out of range, edge ({i}, {j}) with n={n}")
        if not (math.isfinite(p) and 0.0 <= p <= 1.0):
            raise InstanceFormatError(f"{path}:{lineno}: probability {p} outside [0, 1]")
        prev = directed.get((i, j))
        if prev is not None and abs(prev - p) > _DUPLICATE_TOL:
            raise InstanceFormatError(
                f"{path}:{lineno}: duplicate edge ({i}, {j}) with conflicting values {prev} and {p}")
        directed[(i, j)] = p if prev is None else max(prev, p)
    return directed


def load_heatmap(path, n: int | None = None) -> HeatMap:
    """Read a heat-map file, symmetrising ``(i, j)``/``(j, i)`` pairs by max.

    ``n``, when given, must match the header.
    """
    lines = Path(path).read_text().splitlines()
    while lines and not lines[0].strip():
        lines.pop(0)
    if not lines:
        raise InstanceFormatError(f"{path}: empty heat-map file")
    head = lines[0].split()
    if len(head) != 2 or head[0] != "n" or not head[1].isdigit():
        raise InstanceFormatError(f"{path}: malformed header {lines[0]!r}, expected 'n <count>'")
    count = int(head[1])
    if n is not None and count != n:
        raise InstanceFormatError(f"{path}: heat map is for n={count}, expected n={n}")
    return HeatMap(count, _parse_edges(lines[1:], path, count))
