"""Euclidean TSP instances, tours, reference solvers and file I/O.

Coordinates live in the unit square. Distances are computed on demand from
the coordinate array; no dense distance matrix is ever materialised, so the
same code path serves n=9 oracle checks and n=10,000 benchmark runs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._utils import check_generator

__all__ = [
    "Instance",
    "InstanceFormatError",
    "brute_force_optimum",
    "generate_instance",
    "greedy_nearest_neighbor",
    "read_instance",
    "read_tour",
    "tour_length",
    "validate_tour",
    "write_instance",
    "write_tour",
]

MAX_BRUTE_FORCE_N = 12
_TSPLIB_KEYS = {"NAME", "TYPE", "COMMENT", "DIMENSION", "EDGE_WEIGHT_TYPE", "NODE_COORD_SECTION"}
# Improvements smaller than this are treated as ties.
_TIE_TOL = 1e-12


class InstanceFormatError(ValueError):
    """Raised when an instance, tour or heat-map file cannot be parsed."""


@dataclass(frozen=True, eq=False)
class Instance:
    """A 2-D Euclidean TSP instance.

    Parameters
    ----------
    coords : array-like of shape (n, 2)
        Vertex coordinates. Generated instances lie in ``[0, 1]^2``.
    name : str
        Identifier used in reports.
    offset, scale : normalization record
        ``original = offset + scale * coords``. Identity unless the instance
        was normalized on load.
    """

    coords: np.ndarray
    name: str = ""
    offset: tuple[float, float] = (0.0, 0.0)
    scale: float = 1.0
    _xs: list = field(init=False, repr=False, compare=False)
    _ys: list = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        coords = np.array(self.coords, dtype=np.float64, copy=True)
        if coords.ndim != 2 or coords.shape[1] != 2:
            raise ValueError(f"coords must have shape (n, 2), got {coords.shape}")
        if coords.shape[0] < 3:
            raise ValueError(f"an instance needs at least 3 vertices, got {coords.shape[0]}")
        if not np.all(np.isfinite(coords)):
            raise ValueError("coordinates must be finite")
        if not self.scale > 0:
            raise ValueError("scale must be positive")
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)
        object.__setattr__(self, "_xs", coords[:, 0].tolist())
        object.__setattr__(self, "_ys", coords[:, 1].tolist())

    @property
    def n(self) -> int:
        return self.coords.shape[0]

    @property
    def xs(self) -> list:
        """x coordinates as a plain list (fast scalar access in hot loops)."""
        return self._xs

    @property
    def ys(self) -> list:
        return self._ys

    def dist(self, i: int, j: int) -> float:
        return math.hypot(self._xs[i] - self._xs[j], self._ys[i] - self._ys[j])

    def to_original_units(self, length: float) -> float:
        return length * self.scale

    @classmethod
    def normalized(cls, coords, name: str = "") -> "Instance":
        """Build an instance, rescaling into the unit square when needed.

        A single scale factor is used for both axes so that Euclidean
        geometry (and hence tour ordering) is preserved.
        """
        coords = np.asarray(coords, dtype=np.float64)
        if coords.size and coords.min() >= 0.0 and coords.max() <= 1.0:
            return cls(coords, name=name)
        lo = coords.min(axis=0)
        span = float((coords.max(axis=0) - lo).max())
        if span == 0.0:
            span = 1.0
        return cls((coords - lo) / span, name=name,
                   offset=(float(lo[0]), float(lo[1])), scale=span)

    def __eq__(self, other):
        if not isinstance(other, Instance):
            return NotImplemented
        return (np.array_equal(self.coords, other.coords)
                and self.offset == other.offset and self.scale == other.scale)

    __hash__ = None


def generate_instance(n: int, random_state=None, name: str = "") -> Instance:
    """Draw ``n`` points uniformly from the unit square."""
    if n < 3:
        raise ValueError(f"n must be at least 3, got {n}")
    rng = check_generator(random_state)
    return Instance(rng.random((n, 2)), name=name)


def validate_tour(tour: Sequence[int], n: int) -> np.ndarray:
    """Return ``tour`` as an int array, raising if it is not a permutation of range(n)."""
    order = np.asarray(tour)
    if order.ndim != 1 or order.shape[0] != n:
        raise ValueError(f"tour must list exactly {n} vertices")
    if order.size and not np.issubdtype(order.dtype, np.integer):
        if not np.all(order == np.round(order)):
            raise ValueError("tour entries must be integers")
        order = order.astype(np.int64)
    seen = np.zeros(n, dtype=bool)
    if order.size and (order.min() < 0 or order.max() >= n):
        raise ValueError("tour references a vertex outside [0, n)")
    seen[order] = True
    if not seen.all():
        raise ValueError("tour is not a permutation: repeated vertices")
    return order.astype(np.int64, copy=False)


def tour_length(inst: Instance, tour: Sequence[int]) -> float:
    """Length of the closed tour, including the edge back to the start."""
    order = validate_tour(tour, inst.n)
    pts = inst.coords[order]
    diff = pts - np.roll(pts, -1, axis=0)
    return float(np.sqrt((diff * diff).sum(axis=1)).sum())


def brute_force_optimum(inst: Instance) -> tuple[list[int], float]:
    """Exact optimum by exhaustive search with vertex 0 fixed first.

    Orders are explored lexicographically with branch-and-bound pruning, so
    among tours of equal length (within 1e-12) the lexicographically smallest
    order is returned. Each cycle is visited in both directions; the reversed
    copy is discarded by requiring ``order[1] < order[-1]``.
    """
    n = inst.n
    if n > MAX_BRUTE_FORCE_N:
        raise ValueError(f"brute force is limited to n <= {MAX_BRUTE_FORCE_N}, got {n}")
    d = [[inst.dist(i, j) for j in range(n)] for i in range(n)]
    best_len = math.inf
    best: list[int] = []
    order = [0]
    used = [False] * n
    used[0] = True

    def extend(partial: float) -> None:
        nonlocal best_len, best
        if len(order) == n:
            if order[1] > order[-1]:
                return
            total = partial + d[order[-1]][0]
            if total < best_len - _TIE_TOL:
                best_len = total
                best = order.copy()
            return
        last = order[-1]
        for v in range(1, n):
            if used[v]:
                continue
            step = partial + d[last][v]
            if step > best_len + _TIE_TOL:
                continue
            used[v] = True
            order.append(v)
            extend(step)
            order.pop()
            used[v] = False

    extend(0.0)
    return best, tour_length(inst, best)


def greedy_nearest_neighbor(inst: Instance, start: int = 0) -> list[int]:
    """Nearest-neighbour construction; ties go to the lowest index."""
    n = inst.n
    if not 0 <= start < n:
        raise ValueError(f"start vertex {start} outside [0, {n})")
    coords = inst.coords
    visited = np.zeros(n, dtype=bool)
    order = [start]
    visited[start] = True
    cur = start
    for _ in range(n - 1):
        diff = coords - coords[cur]
        sq = diff[:, 0] * diff[:, 0] + diff[:, 1] * diff[:, 1]
        sq[visited] = np.inf
        cur = int(np.argmin(sq))
        visited[cur] = True
        order.append(cur)
    return order


# --- file formats -----------------------------------------------------------

def _fmt(x: float) -> str:
    return format(x, ".17g")


def write_coords(coords, path) -> None:
    """Write ``n <count>`` followed by one ``x y`` line per point."""
    coords = np.asarray(coords, dtype=np.float64)
    lines = [f"n {coords.shape[0]}"]
    lines += [f"{_fmt(x)} {_fmt(y)}" for x, y in coords.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def write_instance(inst: Instance, path) -> None:
    write_coords(inst.coords, path)


def _parse_count(line: str, path) -> int:
    parts = line.split()
    if len(parts) != 2 or parts[0] != "n":
        raise InstanceFormatError(f"{path}: malformed header {line!r}, expected 'n <count>'")
    try:
        count = int(parts[1])
    except ValueError:
        raise InstanceFormatError(f"{path}: malformed header {line!r}, count is not an integer") from None
    if count < 0:
        raise InstanceFormatError(f"{path}: negative vertex count {count}")
    return count


def _parse_float(tok: str, path, lineno: int) -> float:
    try:
        val = float(tok)
    except ValueError:
        raise InstanceFormatError(f"{path}:{lineno}: cannot parse number {tok!r}") from None
    if not math.isfinite(val):
        raise InstanceFormatError(f"{path}:{lineno}: non-finite value {tok!r}")
    return val


def _read_tsplib(lines: list[str], path) -> Instance:
    name = Path(path).stem
    dim = None
    coords: list[tuple[float, float]] = []
    in_coords = False
    for lineno, raw in enumerate(lines, 1):
        line = raw.strip()
        if not line:
            continue
        if in_coords:
            if line == "EOF":
                break
            parts = line.split()
            if len(parts) != 3:
                raise InstanceFormatError(f"{path}:{lineno}: expected '<id> <x> <y>', got {line!r}")
            coords.append((_parse_float(parts[1], path, lineno), _parse_float(parts[2], path, lineno)))
            continue
        if line.startswith("NODE_COORD_SECTION"):
            in_coords = True
            continue
        if line == "EOF":
            break
        key, _, value = line.partition(":")
        key, value = key.strip().upper(), value.strip()
        if key == "NAME":
            name = value
        elif key == "DIMENSION":
            try:
                dim = int(value)
            except ValueError:
                raise InstanceFormatError(f"{path}:{lineno}: bad DIMENSION {value!r}") from None
        elif key == "EDGE_WEIGHT_TYPE" and value != "EUC_2D":
            raise InstanceFormatError(f"{path}: unsupported EDGE_WEIGHT_TYPE {value!r}, only EUC_2D")
        elif key == "TYPE" and value not in ("TSP",):
            raise InstanceFormatError(f"{path}: unsupported TYPE {value!r}")
    if dim is None:
        raise InstanceFormatError(f"{path}: malformed header, DIMENSION missing")
    if not in_coords:
        raise InstanceFormatError(f"{path}: malformed header, NODE_COORD_SECTION missing")
    if len(coords) != dim:
        raise InstanceFormatError(
            f"{path}: coordinate count mismatch, DIMENSION {dim} but {len(coords)} points")
    return Instance.normalized(np.array(coords, dtype=np.float64).reshape(-1, 2), name=name)


def read_instance(path) -> Instance:
    """Read the native ``n <count>`` format or a TSPLIB EUC_2D file.

    Instances whose coordinates leave the unit square are normalized; the
    normalization record is kept on the returned instance.
    """
    lines = Path(path).read_text().splitlines()
    body = [ln for ln in lines if ln.strip()]
    if not body:
        raise InstanceFormatError(f"{path}: empty file")
    first = body[0].strip()
    if first.split(":")[0].split()[0].upper() in _TSPLIB_KEYS:
        return _read_tsplib(lines, path)
    count = _parse_count(first, path)
    rows = body[1:]
    if len(rows) != count:
        raise InstanceFormatError(
            f"{path}: coordinate count mismatch, header says {count} but {len(rows)} points follow")
    coords = np.empty((count, 2))
    for k, row in enumerate(rows):
        parts = row.split()
        if len(parts) != 2:
            raise InstanceFormatError(f"{path}:{k + 2}: expected '<x> <y>', got {row!r}")
        coords[k, 0] = _parse_float(parts[0], path, k + 2)
        coords[k, 1] = _parse_float(parts[1], path, k + 2)
    return Instance.normalized(coords, name=Path(path).stem)


def write_tour(tour: Sequence[int], length: float, path) -> None:
    order = [int(v) for v in tour]
    Path(path).write_text(
        f"n {len(order)}\n{' '.join(map(str, order))}\nlength {_fmt(length)}\n")


def read_tour(path) -> tuple[list[int], float]:
    """Return ``(order, length)`` from a tour file."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln.strip()]
    if len(lines) != 3:
        raise InstanceFormatError(f"{path}: tour file must have exactly 3 lines")
    count = _parse_count(lines[0], path)
    try:
        order = [int(tok) for tok in lines[1].split()]
    except ValueError:
        raise InstanceFormatError(f"{path}:2: tour indices must be integers") from None
    if len(order) != count:
        raise InstanceFormatError(
            f"{path}: tour count mismatch, header says {count} but {len(order)} indices follow")
    parts = lines[2].split()
    if len(parts) != 2 or parts[0] != "length":
        raise InstanceFormatError(f"{path}:3: expected 'length <value>'")
    return order, _parse_float(parts[1], path, 3)
