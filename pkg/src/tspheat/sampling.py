"""Heat maps for arbitrarily large instances from a fixed-size provider.

The instance is covered by overlapping k-nearest-neighbour sub-graphs of
exactly ``m`` vertices. Each sub-graph is rescaled into the unit square, the
provider predicts a sub heat map for it, and the predictions are averaged
edge by edge over the sub-graphs that contain the edge. Sampling stops once
every vertex has been covered at least ``omega`` times.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._utils import check_generator
from .heatmap import DEFAULT_EPSILON, HeatMap, HeatMapProvider, load_heatmap, prune_unpromising, write_heatmap
from .instance import Instance, InstanceFormatError, write_coords
from .spatial import GridIndex, rank_neighbors

__all__ = [
    "AccumulatedMap",
    "CoverageCounters",
    "DegenerateSampleError",
    "SampleRecord",
    "SubGraphSample",
    "build_global_heatmap",
    "convert_subgraph",
    "default_m",
    "extract_subgraph",
    "merge_from_dir",
    "merge_submaps",
]

MAX_REDRAWS = 100


class DegenerateSampleError(ValueError):
    """All members of a sub-graph coincide, so it cannot be rescaled."""


def default_m(n: int) -> int:
    """Sub-graph size: 20 for small instances (n <= 100), 50 otherwise, capped at n."""
    return min(n, 20 if n <= 100 else 50)


def _pair_keys(members: np.ndarray, n: int) -> np.ndarray:
    s = np.sort(members)
    iu, ju = np.triu_indices(s.shape[0], k=1)
    return s[iu] * n + s[ju]


class CoverageCounters:
    """How often each vertex (``vertex``) and each edge has been sampled.

    Edge counts are kept implicitly as the list of sampled member sets and
    consolidated on demand.
    """

    def __init__(self, n: int):
        self.n = n
        self.vertex = np.zeros(n, dtype=np.int64)
        self._keys: list[np.ndarray] = []
        self._weights: list[int] = []
        self._cache = None

    def record(self, members: np.ndarray, weight: int = 1) -> None:
        self.vertex[members] += weight
        self._keys.append(_pair_keys(members, self.n))
        self._weights.append(weight)
        self._cache = None

    def edge_counts(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted canonical keys ``i * n + j`` (``i < j``) and their counts."""
        if self._cache is None:
            if not self._keys:
                self._cache = (np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64))
            else:
                keys = np.concatenate(self._keys)
                w = np.repeat(np.array(self._weights, dtype=np.int64),
                              [k.shape[0] for k in self._keys])
                uniq, inv = np.unique(keys, return_inverse=True)
                self._cache = (uniq, np.bincount(inv, weights=w, minlength=uniq.shape[0]).astype(np.int64))
        return self._cache

    def edge_count(self, i: int, j: int) -> int:
        if i == j:
            return 0
        i, j = min(i, j), max(i, j)
        keys, counts = self.edge_counts()
        pos = np.searchsorted(keys, i * self.n + j)
        if pos < keys.shape[0] and keys[pos] == i * self.n + j:
            return int(counts[pos])
        return 0

    @property
    def n_samples(self) -> int:
        return len(self._keys)


@dataclass(frozen=True)
class SubGraphSample:
    """``m`` original vertex indices around ``center`` plus the rescaling record.

    Converted coordinates are ``scale * (x - x_min), scale * (y - y_min)``
    where ``scale = 1 / extent`` and ``extent`` is the larger side of the
    members' bounding box.
    """

    center: int
    members: np.ndarray
    x_min: float
    y_min: float
    extent: float

    @property
    def m(self) -> int:
        return self.members.shape[0]

    @property
    def scale(self) -> float:
        return 1.0 / self.extent if self.extent > 0 else math.inf

    @property
    def degenerate(self) -> bool:
        return not self.extent > 0


class AccumulatedMap:
    """Running per-edge sums of sub heat-map probabilities in original indices."""

    def __init__(self, n: int):
        self.n = n
        self._keys: list[np.ndarray] = []
        self._vals: list[np.ndarray] = []

    def add(self, members: np.ndarray, submap: HeatMap, weight: int = 1) -> None:
        if submap.n != members.shape[0]:
            raise ValueError(f"sub heat map has n={submap.n}, sample has {members.shape[0]} members")
        items = submap.items()
        if not items:
            return
        arr = np.array([(i, j) for i, j, _ in items], dtype=np.int64)
        vals = np.array([p for _, _, p in items], dtype=np.float64)
        gi, gj = members[arr[:, 0]], members[arr[:, 1]]
        lo, hi = np.minimum(gi, gj), np.maximum(gi, gj)
        self._keys.append(lo * self.n + hi)
        self._vals.append(vals * weight if weight != 1 else vals)

    def sums(self) -> tuple[np.ndarray, np.ndarray]:
        """Sorted canonical keys and the summed probabilities (sample order)."""
        if not self._keys:
            return np.empty(0, dtype=np.int64), np.empty(0)
        keys = np.concatenate(self._keys)
        vals = np.concatenate(self._vals)
        uniq, inv = np.unique(keys, return_inverse=True)
        return uniq, np.bincount(inv, weights=vals, minlength=uniq.shape[0])


@dataclass
class SampleRecord:
    """One provider call as logged by :func:`build_global_heatmap`."""

    sample: SubGraphSample
    converted: np.ndarray
    submap: HeatMap
    weight: int = 1


def _members_around(inst: Instance, center: int, m: int, grid: GridIndex | None) -> np.ndarray:
    n = inst.n
    if m == n:
        return np.arange(n, dtype=np.int64)
    if grid is not None:
        near = grid.query(center, m - 1)
    else:
        others = np.arange(n, dtype=np.int64)
        near = rank_neighbors(inst.coords, center, others[others != center])[: m - 1]
    return np.concatenate(([center], near)).astype(np.int64)


def _make_sample(inst: Instance, center: int, members: np.ndarray) -> SubGraphSample:
    pts = inst.coords[members]
    lo = pts.min(axis=0)
    extent = float((pts.max(axis=0) - lo).max())
    return SubGraphSample(center, members, float(lo[0]), float(lo[1]), extent)


def _grid_for(inst: Instance, m: int) -> GridIndex | None:
    # cells of width ~sqrt(m/n) hold about m points each
    return GridIndex(inst.coords, per_cell=m) if inst.n > 512 else None


def _pick_center(counters: CoverageCounters, rng: np.random.Generator, exclude=()) -> int:
    o = counters.vertex
    minimizers = np.flatnonzero(o == o.min())
    if exclude:
        minimizers = minimizers[~np.isin(minimizers, list(exclude))]
        if minimizers.size == 0:
            raise DegenerateSampleError("every least-covered vertex yields a degenerate sub-graph")
    return int(minimizers[rng.integers(minimizers.shape[0])])


def extract_subgraph(inst: Instance, counters: CoverageCounters, m: int, rng,
                     grid: GridIndex | None = None) -> SubGraphSample:
    """Sample ``m`` vertices around a least-covered centre and update the counters.

    The centre is drawn uniformly among vertices with minimal coverage; the
    members are the centre and its ``m - 1`` nearest vertices. Raises
    :class:`DegenerateSampleError` (leaving the counters untouched) if all
    members coincide.
    """
    if not 2 <= m <= inst.n:
        raise ValueError(f"sub-graph size m={m} must satisfy 2 <= m <= n={inst.n}")
    center = _pick_center(counters, check_generator(rng))
    sample = _make_sample(inst, center, _members_around(inst, center, m, grid))
    if sample.degenerate:
        raise DegenerateSampleError(f"sub-graph around vertex {center} has zero extent")
    counters.record(sample.members)
    return sample


def convert_subgraph(inst: Instance, sample: SubGraphSample) -> np.ndarray:
    """Translate and uniformly scale the members' coordinates into ``[0, 1]^2``."""
    if sample.degenerate:
        raise DegenerateSampleError(f"sub-graph around vertex {sample.center} has zero extent")
    pts = inst.coords[sample.members]
    out = np.empty_like(pts)
    # dividing by the extent (rather than multiplying by its reciprocal) maps
    # the extreme members to exactly 0 and 1
    out[:, 0] = (pts[:, 0] - sample.x_min) / sample.extent
    out[:, 1] = (pts[:, 1] - sample.y_min) / sample.extent
    return out


def merge_submaps(accumulated: AccumulatedMap, counters: CoverageCounters, coords,
                  epsilon: float = DEFAULT_EPSILON) -> HeatMap:
    """Average the summed probabilities over edge appearances, then prune.

    ``P_ij = sum_l P''_ij(l) / O_ij``; edges never sampled stay absent.
    """
    n = accumulated.n
    keys, sums = accumulated.sums()
    ekeys, ecounts = counters.edge_counts()
    pos = np.searchsorted(ekeys, keys)
    if keys.size and (np.any(pos >= ekeys.shape[0]) or np.any(ekeys[np.minimum(pos, ekeys.shape[0] - 1)] != keys)):
        raise ValueError("accumulated edge was never counted as sampled")
    probs = sums / ecounts[pos] if keys.size else sums
    probs = np.minimum(probs, 1.0)
    merged = HeatMap.from_arrays(n, keys // n, keys % n, probs)
    return prune_unpromising(merged, coords, epsilon)


def build_global_heatmap(inst: Instance, provider: HeatMapProvider, m: int | None = None,
                         omega: int = 5, random_state=None, epsilon: float = DEFAULT_EPSILON,
                         trace: list | None = None, counters: CoverageCounters | None = None,
                         max_iterations: int | None = None) -> HeatMap:
    """Cover ``inst`` with sub-graphs until every vertex is sampled ``omega`` times.

    Parameters
    ----------
    provider : callable
        Maps an ``(m, 2)`` array in the unit square to a :class:`HeatMap`.
    m : int, optional
        Sub-graph size, defaults to :func:`default_m`.
    trace : list, optional
        Receives one :class:`SampleRecord` per provider call.
    counters : CoverageCounters, optional
        Filled in place; pass one to inspect coverage afterwards.

    When ``m == n`` the whole instance is the only possible sample, so the
    provider is called once and the result is weighted ``omega`` times.
    """
    n = inst.n
    m = default_m(n) if m is None else int(m)
    if not 2 <= m <= n:
        raise ValueError(f"sub-graph size m={m} must satisfy 2 <= m <= n={n}")
    if omega < 1:
        raise ValueError(f"omega must be >= 1, got {omega}")
    rng = check_generator(random_state)
    counters = CoverageCounters(n) if counters is None else counters
    acc = AccumulatedMap(n)

    if m == n:
        sample = _make_sample(inst, _pick_center(counters, rng), np.arange(n, dtype=np.int64))
        converted = convert_subgraph(inst, sample)
        submap = provider(converted)
        counters.record(sample.members, weight=omega)
        acc.add(sample.members, submap, weight=omega)
        if trace is not None:
            trace.append(SampleRecord(sample, converted, submap, omega))
        return merge_submaps(acc, counters, inst.coords, epsilon)

    grid = _grid_for(inst, m)
    iterations = 0
    while counters.vertex.min() < omega:
        rejected: set[int] = set()
        while True:
            center = _pick_center(counters, rng, rejected)
            sample = _make_sample(inst, center, _members_around(inst, center, m, grid))
            if not sample.degenerate:
                break
            rejected.add(center)
            if len(rejected) >= MAX_REDRAWS:
                raise DegenerateSampleError(
                    f"{MAX_REDRAWS} consecutive sub-graphs had zero extent")
        converted = convert_subgraph(inst, sample)
        submap = provider(converted)
        counters.record(sample.members)
        acc.add(sample.members, submap)
        if trace is not None:
            trace.append(SampleRecord(sample, converted, submap))
        iterations += 1
        if max_iterations is not None and iterations >= max_iterations:
            break
    return merge_submaps(acc, counters, inst.coords, epsilon)


# --- out-of-process providers -----------------------------------------------

def dump_trace(trace: list[SampleRecord], inst: Instance, out_dir, m: int, omega: int) -> Path:
    """Write every converted sub-instance and its sub heat map plus a manifest.

    An external predictor may overwrite the ``sub_*.heat`` files; the
    directory can then be merged back with :func:`merge_from_dir`.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"n": inst.n, "m": m, "omega": omega, "samples": []}
    for idx, rec in enumerate(trace):
        stem = f"sub_{idx:05d}"
        write_coords(rec.converted, out / f"{stem}.txt")
        write_heatmap(rec.submap, out / f"{stem}.heat")
        s = rec.sample
        manifest["samples"].append({
            "id": stem, "center": s.center, "members": s.members.tolist(),
            "scale": s.scale, "extent": s.extent, "x_min": s.x_min, "y_min": s.y_min, "weight": rec.weight,
        })
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1))
    return out


def merge_from_dir(inst: Instance, in_dir, epsilon: float = DEFAULT_EPSILON) -> HeatMap:
    """Merge sub heat maps previously written by :func:`dump_trace`."""
    src = Path(in_dir)
    try:
        manifest = json.loads((src / "manifest.json").read_text())
    except FileNotFoundError:
        raise InstanceFormatError(f"{src}: manifest.json not found") from None
    if manifest.get("n") != inst.n:
        raise InstanceFormatError(f"{src}: sub-maps were built for n={manifest.get('n')}, instance has n={inst.n}")
    counters = CoverageCounters(inst.n)
    acc = AccumulatedMap(inst.n)
    for entry in manifest["samples"]:
        members = np.asarray(entry["members"], dtype=np.int64)
        if members.size and (members.min() < 0 or members.max() >= inst.n):
            raise InstanceFormatError(f"{src}: sample {entry['id']} references a vertex outside the instance")
        weight = int(entry.get("weight", 1))
        submap = load_heatmap(src / f"{entry['id']}.heat", members.shape[0])
        counters.record(members, weight)
        acc.add(members, submap, weight)
    return merge_submaps(acc, counters, inst.coords, epsilon)
