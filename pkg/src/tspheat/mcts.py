"""Monte Carlo tree search over complete tours with compact k-opt actions.

States are complete tours. An action ``(a1, b1, a2, b2, ..., ak, bk, a1)``
deletes the edges ``(a_i, b_i)`` and adds ``(b_i, a_{i+1})``; only the
``a_i`` are free choices because each ``b_i`` follows from the tour and the
earlier choices (see :class:`KoptPath`).

The search alternates

* a random restart built from the heat map (:func:`init_state`),
* first-improvement 2-opt over promising edges (:func:`enumerate_2opt`),
* rounds of sampled k-opt actions guided by an edge weight matrix ``W``
  and a visit-count matrix ``Q`` (:func:`mcts_round`),

until the budget runs out. ``W``, ``Q`` and the examined-action counter
``M`` are created once per solve and survive restarts.
"""

from __future__ import annotations

import enum
import math
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from ._utils import check_generator, derive_seed
from .heatmap import DEFAULT_EPSILON, HeatMap
from .instance import Instance, tour_length

__all__ = [
    "Action",
    "KoptPath",
    "Params",
    "RoundOutcome",
    "SearchState",
    "SolveResult",
    "TourArray",
    "action_delta",
    "apply_action",
    "backprop_weights",
    "determine_b",
    "edge_potential",
    "enumerate_2opt",
    "init_state",
    "mcts_round",
    "sample_action",
    "solve",
]

# Moves must gain more than this to count as improving; keeps float noise
# from cycling the local search.
IMPROVEMENT_TOL = 1e-10
RESYNC_EVERY = 10_000


@dataclass(frozen=True)
class Params:
    """Search parameters.

    ``max_rounds`` switches from the wall-clock budget ``t_factor * n`` ms
    (or ``time_limit`` seconds) to a deterministic budget counted in MCTS
    rounds.
    """

    alpha: float = 1.0
    beta: float = 10.0
    h_factor: float = 10.0
    t_factor: float = 10.0
    k_max: int = 10
    epsilon: float = DEFAULT_EPSILON
    w_candidate_min: float = 1.0
    max_rounds: int | None = None
    time_limit: float | None = None

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be >= 0")
        if self.beta < 0:
            raise ValueError("beta must be >= 0")
        if self.h_factor < 1:
            raise ValueError("h_factor must be >= 1")
        if self.k_max < 2:
            raise ValueError("k_max must be >= 2")
        if self.t_factor <= 0:
            raise ValueError("t_factor must be > 0")
        if self.max_rounds is not None and self.max_rounds < 1:
            raise ValueError("max_rounds must be >= 1")
        if self.time_limit is not None and self.time_limit <= 0:
            raise ValueError("time_limit must be > 0")

    def pool_size(self, n: int) -> int:
        return max(1, int(round(self.h_factor * n)))

    def seconds(self, n: int) -> float:
        return self.time_limit if self.time_limit is not None else self.t_factor * n / 1000.0


def _edge(i: int, j: int) -> tuple[int, int]:
    return (i, j) if i < j else (j, i)


class TourArray:
    """Cyclic tour as an order list plus a position index.

    ``succ``/``pred`` are O(1); reversing a stretch costs its length, and the
    shorter of the two equivalent stretches is always the one reversed.
    """

    __slots__ = ("n", "order", "pos")

    def __init__(self, order: Sequence[int]):
        self.order = [int(v) for v in order]
        self.n = len(self.order)
        pos = [0] * self.n
        for i, v in enumerate(self.order):
            pos[v] = i
        self.pos = pos

    def succ(self, v: int) -> int:
        p = self.pos[v] + 1
        return self.order[p if p < self.n else 0]

    def pred(self, v: int) -> int:
        return self.order[self.pos[v] - 1]

    def reverse(self, u: int, v: int) -> None:
        """Reverse the stretch running forward from ``u`` to ``v``."""
        n, order, pos = self.n, self.order, self.pos
        i, j = pos[u], pos[v]
        length = (j - i) % n + 1
        if 2 * length > n:
            i, j = (j + 1) % n, (i - 1) % n
            length = n - length
        if i <= j:
            order[i:j + 1] = order[i:j + 1][::-1]
            for k in range(i, j + 1):
                pos[order[k]] = k
            return
        for _ in range(length // 2):
            a, b = order[i], order[j]
            order[i], order[j] = b, a
            pos[b], pos[a] = i, j
            i += 1
            if i == n:
                i = 0
            j -= 1
            if j < 0:
                j = n - 1

    def to_list(self) -> list[int]:
        return list(self.order)

    def is_valid(self) -> bool:
        n = self.n
        return sorted(self.order) == list(range(n)) and all(
            self.order[self.pos[v]] == v for v in range(n))


class KoptPath:
    """Hamiltonian path left while an action is being built.

    Deleting ``(a1, b1)`` from the tour leaves a path from ``b1`` (the free
    end, or head) to ``a1``. Adding ``(head, a)`` and deleting ``(a, b)``,
    with ``b`` the neighbour of ``a`` on the head side, reverses the prefix
    of the path up to ``a`` and makes ``b`` the new head; ``a1`` stays at the
    tail throughout. The path is stored as runs of tour positions (relative
    to ``b1``), so each step costs O(k) instead of O(n).
    """

    __slots__ = ("tour", "a1", "b1", "base", "step", "segs")

    def __init__(self, tour: TourArray, a1: int, b1: int):
        n = tour.n
        if tour.succ(a1) == b1:
            step = 1
        elif tour.pred(a1) == b1:
            step = -1
        else:
            raise ValueError(f"({a1}, {b1}) is not a tour edge")
        self.tour = tour
        self.a1, self.b1 = a1, b1
        self.base = tour.pos[b1]
        self.step = step
        self.segs = [(0, n - 1)]

    @classmethod
    def from_pairs(cls, tour: TourArray, partial: Sequence[int]) -> "KoptPath":
        """Replay ``(a1, b1, ..., a_i, b_i)``, checking every ``b`` on the way."""
        if len(partial) < 2 or len(partial) % 2:
            raise ValueError("partial action must hold (a, b) pairs")
        path = cls(tour, partial[0], partial[1])
        for idx in range(2, len(partial), 2):
            a, b = partial[idx], partial[idx + 1]
            if path.determine_b(a) != b:
                raise ValueError(f"b={b} is not determined by a={a} at this step")
            path.flip(a)
        return path

    def _rel(self, v: int) -> int:
        return ((self.tour.pos[v] - self.base) * self.step) % self.tour.n

    def _vertex(self, r: int) -> int:
        t = self.tour
        return t.order[(self.base + self.step * r) % t.n]

    def locate(self, v: int) -> tuple[int, int, int]:
        """``(segment index, offset inside it, index along the path)``."""
        r = self._rel(v)
        t = 0
        for idx, (s, e) in enumerate(self.segs):
            if s <= e:
                if s <= r <= e:
                    return idx, r - s, t + r - s
                t += e - s + 1
            else:
                if e <= r <= s:
                    return idx, s - r, t + s - r
                t += s - e + 1
        raise AssertionError("vertex missing from path")

    @property
    def head(self) -> int:
        return self._vertex(self.segs[0][0])

    @property
    def head_neighbor(self) -> int:
        s, e = self.segs[0]
        if s != e:
            return self._vertex(s + 1 if s < e else s - 1)
        return self._vertex(self.segs[1][0])

    def determine_b(self, a: int) -> int:
        """Neighbour of ``a`` on the stretch between ``a`` and the head."""
        idx, off, t = self.locate(a)
        if t == 0 or t == self.tour.n - 1:
            raise ValueError(f"vertex {a} is a path endpoint")
        if off > 0:
            s, e = self.segs[idx]
            r = self._rel(a)
            return self._vertex(r - 1 if s <= e else r + 1)
        return self._vertex(self.segs[idx - 1][1])

    def flip(self, a: int) -> None:
        """Add ``(head, a)``, drop ``(a, determine_b(a))``."""
        idx, off, _ = self.locate(a)
        segs = self.segs
        if off == 0:
            prefix, rest = segs[:idx], segs[idx:]
        else:
            s, e = segs[idx]
            r = self._rel(a)
            left = (s, r - 1) if s <= e else (s, r + 1)
            prefix = segs[:idx] + [left]
            rest = [(r, e)] + segs[idx + 1:]
        self.segs = [(e, s) for s, e in reversed(prefix)] + rest

    def to_order(self) -> list[int]:
        t = self.tour
        n, order, base = t.n, t.order, self.base
        if self.step == 1:
            rot = order[base:] + order[:base]
        else:
            rev = order[::-1]
            cut = n - 1 - base
            rot = rev[cut:] + rev[:cut]
        out: list[int] = []
        for s, e in self.segs:
            if s <= e:
                out.extend(rot[s:e + 1])
            else:
                out.extend(reversed(rot[e:s + 1]))
        return out


def determine_b(tour: TourArray, partial: Sequence[int], a: int) -> int:
    """``b`` for sub-decision ``a`` given the earlier pairs ``(a1, b1, ...)``.

    With no earlier pairs ``b`` is the successor of ``a`` in the tour.
    """
    if not partial:
        return tour.succ(a)
    return KoptPath.from_pairs(tour, partial).determine_b(a)


@dataclass(frozen=True)
class Action:
    """Compact k-opt move ``(a1, b1, ..., ak, bk, a1)`` with its length change."""

    pairs: tuple[int, ...]
    delta: float
    promising: bool = True

    @property
    def k(self) -> int:
        return (len(self.pairs) - 1) // 2

    def removed_edges(self) -> list[tuple[int, int]]:
        p = self.pairs
        return [(p[2 * i], p[2 * i + 1]) for i in range(self.k)]

    def added_edges(self) -> list[tuple[int, int]]:
        p = self.pairs
        return [(p[2 * i + 1], p[2 * i + 2]) for i in range(self.k)]


def action_delta(inst: Instance, action: Action | Sequence[int]) -> float:
    """Length change: sum of added edge lengths minus sum of removed ones."""
    pairs = action.pairs if isinstance(action, Action) else tuple(action)
    d = inst.dist
    k = (len(pairs) - 1) // 2
    added = sum(d(pairs[2 * i + 1], pairs[2 * i + 2]) for i in range(k))
    removed = sum(d(pairs[2 * i], pairs[2 * i + 1]) for i in range(k))
    return added - removed


def apply_action(tour: TourArray, action: Action | Sequence[int]) -> TourArray:
    """Tour obtained by applying ``action``; raises if it does not fit ``tour``."""
    pairs = action.pairs if isinstance(action, Action) else tuple(action)
    if len(pairs) < 5 or len(pairs) % 2 == 0 or pairs[-1] != pairs[0]:
        raise ValueError("action must be (a1, b1, ..., ak, bk, a1) with k >= 2")
    path = KoptPath.from_pairs(tour, pairs[:-1])
    return TourArray(path.to_order())


def nearest_first(inst: Instance, hm: HeatMap) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Promising neighbours of every vertex, nearest first (ties: lowest index).

    Returned CSR-style as ``(indptr, neighbours, distances)``.
    """
    mat = hm.to_sparse().tocsr()
    mat.sort_indices()
    rows = np.repeat(np.arange(inst.n), np.diff(mat.indptr))
    cols = mat.indices.astype(np.int64)
    diff = inst.coords[rows] - inst.coords[cols]
    dist = np.hypot(diff[:, 0], diff[:, 1])
    perm = np.lexsort((cols, dist, rows))
    return mat.indptr.astype(np.int64), cols[perm], dist[perm]


class SearchState:
    """Everything one solve owns: current and best tours, W, Q and M."""

    def __init__(self, inst: Instance, hm: HeatMap, params: Params | None = None):
        if hm.n != inst.n:
            raise ValueError(f"heat map has n={hm.n}, instance has n={inst.n}")
        self.inst = inst
        self.params = params or Params()
        n = inst.n
        # W exists exactly for the promising (stored) edges
        self.w: list[dict[int, float]] = [
            {j: 100.0 * p for j, p in hm.neighbors(i).items()} for i in range(n)]
        self.q: list[dict[int, int]] = [{} for _ in range(n)]
        self.M = 0
        indptr, near, near_d = nearest_first(inst, hm)
        # (neighbour, distance) pairs, nearest first, for the 2-opt scan
        self.nbrs: list[list[tuple[int, float]]] = [
            list(zip(near[indptr[i]:indptr[i + 1]].tolist(), near_d[indptr[i]:indptr[i + 1]].tolist()))
            for i in range(n)]
        self.tour: TourArray | None = None
        self.length = math.inf
        self.best_tour: list[int] | None = None
        self.best_length = math.inf
        self.applied = 0

    def set_tour(self, order: Sequence[int]) -> None:
        self.tour = TourArray(order)
        self.length = tour_length(self.inst, self.tour.order)

    def _after_apply(self, delta: float) -> None:
        self.length += delta
        self.applied += 1
        if self.applied % RESYNC_EVERY == 0:
            self.length = tour_length(self.inst, self.tour.order)

    def q_total(self) -> int:
        """Sum of ``Q`` over undirected edges."""
        return sum(sum(qi.values()) for qi in self.q) // 2


def init_state(inst: Instance, hm: HeatMap, rng: random.Random) -> list[int]:
    """Random constructive tour guided by the heat map.

    The first vertex is uniform; each next vertex ``j`` is drawn from the
    unvisited ones with probability proportional to ``exp(P_cur,j)``.
    Unvisited vertices without a stored edge all share weight ``exp(0) = 1``,
    so they are drawn uniformly by rejection from the unvisited pool.
    """
    n = inst.n
    pool = list(range(n))
    where = list(range(n))
    visited = [False] * n

    def take(v: int) -> None:
        i = where[v]
        last = pool.pop()
        if last != v:
            pool[i] = last
            where[last] = i
        visited[v] = True

    cur = rng.randrange(n)
    take(cur)
    order = [cur]
    for _ in range(n - 1):
        cand = [(j, math.exp(p)) for j, p in hm.neighbors(cur).items() if not visited[j]]
        s_stored = sum(w for _, w in cand)
        total = s_stored + (len(pool) - len(cand))
        u = rng.random() * total
        if u < s_stored or len(pool) == len(cand):
            nxt = cand[-1][0]
            acc = 0.0
            for j, w in cand:
                acc += w
                if u < acc:
                    nxt = j
                    break
        else:
            stored = {j for j, _ in cand}
            while True:
                nxt = pool[rng.randrange(len(pool))]
                if nxt not in stored:
                    break
        take(nxt)
        order.append(nxt)
        cur = nxt
    return order


def enumerate_2opt(state: SearchState, should_stop: Callable[[], bool] | None = None) -> int:
    """Apply first-improvement promising 2-opt moves until none is left.

    Vertices are scanned as ``a1`` in ascending order, cyclically, with both
    tour orientations (successor first); ``a2`` ranges over the promising
    neighbours of ``b1``, nearest first, and the closing edge ``(b2, a1)``
    must be promising too. After a move the scan resumes at the same ``a1``
    and ends once ``n`` consecutive vertices yield nothing. Returns the
    number of applied moves.

    The neighbour scan stops at the first ``a2`` with
    ``d(b1, a2) >= d(a1, b1)``: an improving move shortens at least one of
    its two sides, so any move skipped here is found from its other end.
    """
    tour = state.tour
    n = tour.n
    order, pos = tour.order, tour.pos
    xs, ys = state.inst.xs, state.inst.ys
    nbrs, w = state.nbrs, state.w
    hypot = math.hypot
    moves = 0
    idle = 0
    a1 = 0
    checks = 0
    while idle < n:
        checks += 1
        if should_stop is not None and checks % 64 == 0 and should_stop():
            break
        found = False
        xa, ya = xs[a1], ys[a1]
        w_a1 = w[a1]
        for direction in (1, -1):
            b1 = order[(pos[a1] + direction) % n]
            xb, yb = xs[b1], ys[b1]
            d_ab = hypot(xa - xb, ya - yb)
            for a2, d_new in nbrs[b1]:
                if d_new >= d_ab:
                    break
                if a2 == a1:
                    continue
                b2 = order[(pos[a2] - direction) % n]
                if b2 == b1 or b2 not in w_a1:
                    continue
                delta = (d_new + hypot(xs[b2] - xa, ys[b2] - ya)
                         - d_ab - hypot(xs[a2] - xs[b2], ys[a2] - ys[b2]))
                if delta < -IMPROVEMENT_TOL:
                    if direction == 1:
                        tour.reverse(b1, b2)
                    else:
                        tour.reverse(b2, b1)
                    state._after_apply(delta)
                    moves += 1
                    found = True
                    break
            if found:
                break
        if found:
            idle = 0
        else:
            idle += 1
            a1 = a1 + 1 if a1 + 1 < n else 0
    return moves


def edge_potential(state: SearchState, b: int, j: int, alpha: float) -> float:
    """``W_bj / avg_l W_bl + alpha * sqrt(ln(M + 1) / (Q_bj + 1))``.

    The average runs over the stored (promising) edges at ``b``.
    """
    wb = state.w[b]
    if not wb:
        raise ValueError(f"vertex {b} has no promising edges")
    mean = sum(wb.values()) / len(wb)
    return wb[j] / mean + alpha * math.sqrt(math.log(state.M + 1) / (state.q[b].get(j, 0) + 1))


def _choose(weights: Sequence[float], rng: random.Random) -> int:
    """Index drawn with probability proportional to ``weights``."""
    total = sum(weights)
    u = rng.random() * total
    acc = 0.0
    for idx, z in enumerate(weights):
        acc += z
        if u < acc:
            return idx
    return len(weights) - 1


def sample_action(state: SearchState, rng: random.Random, params: Params | None = None,
                  a1: int | None = None) -> Action | None:
    """Simulate one action from the current tour.

    Returns ``None`` when ``a1`` admits no candidate at all (no action can
    start there). A forced closure over an edge outside the heat map yields
    an action flagged ``promising=False``; it is examined but never applied.
    """
    params = params or state.params
    tour = state.tour
    n = tour.n
    xs, ys = state.inst.xs, state.inst.ys
    hypot = math.hypot
    w, q = state.w, state.q
    alpha, wmin, k_max = params.alpha, params.w_candidate_min, params.k_max
    log_m = math.log(state.M + 1)

    if a1 is None:
        a1 = rng.randrange(n)
    b1 = tour.succ(a1)
    path = KoptPath(tour, a1, b1)
    pairs = [a1, b1]
    removed = {_edge(a1, b1)}
    added: set[tuple[int, int]] = set()
    gain = -hypot(xs[a1] - xs[b1], ys[a1] - ys[b1])
    b = b1
    i = 1
    xa, ya = xs[a1], ys[a1]
    while True:
        if i >= 2:
            close = gain + hypot(xs[b] - xa, ys[b] - ya)
            if close < -IMPROVEMENT_TOL and a1 in w[b]:
                break
            if i >= k_max:
                break
        wb = w[b]
        skip = path.head_neighbor
        cands: list[int] = []
        heads: list[int] = []
        for j, wbj in wb.items():
            if wbj < wmin or j == a1 or j == skip or _edge(b, j) in removed:
                continue
            bj = path.determine_b(j)
            if bj == b1 or _edge(j, bj) in added:
                continue
            cands.append(j)
            heads.append(bj)
        if not cands:
            if i == 1:
                return None
            break
        mean = sum(wb.values()) / len(wb)
        qb = q[b]
        if alpha:
            z = [wb[j] / mean + alpha * math.sqrt(log_m / (qb.get(j, 0) + 1)) for j in cands]
        else:
            z = [wb[j] / mean for j in cands]
        pick = _choose(z, rng)
        a, nb = cands[pick], heads[pick]
        gain += hypot(xs[b] - xs[a], ys[b] - ys[a]) - hypot(xs[a] - xs[nb], ys[a] - ys[nb])
        added.add(_edge(b, a))
        removed.add(_edge(a, nb))
        path.flip(a)
        pairs += [a, nb]
        b = nb
        i += 1
    pairs.append(a1)
    delta = gain + hypot(xs[b] - xa, ys[b] - ya)
    return Action(tuple(pairs), delta, promising=a1 in w[b])


def backprop_weights(state: SearchState, action: Action, old_length: float, new_length: float,
                     beta: float) -> float:
    """Raise ``W`` on every added edge after an improvement; returns the increment."""
    if not new_length < old_length:
        raise ValueError("weights are only updated when the tour got shorter")
    inc = beta * (math.exp((old_length - new_length) / old_length) - 1.0)
    w = state.w
    for u, v in action.added_edges():
        w[u][v] += inc
        w[v][u] = w[u][v]
    return inc


def _count_examined(state: SearchState, action: Action) -> None:
    state.M += 1
    q = state.q
    for u, v in action.added_edges():
        qu, qv = q[u], q[v]
        qu[v] = qu.get(v, 0) + 1
        qv[u] = qu[v]


class RoundOutcome(enum.Enum):
    IMPROVED = "improved"
    EXHAUSTED = "pool-exhausted"
    TIMEOUT = "timeout"


def mcts_round(state: SearchState, rng: random.Random, params: Params | None = None,
               should_stop: Callable[[], bool] | None = None,
               log: list | None = None) -> RoundOutcome:
    """Sample actions until one improves the tour or the pool bound is hit.

    Every examined action increments ``M`` and the ``Q`` entries of its
    added edges; the first improving action is applied and reinforces ``W``.
    ``log``, if given, receives every examined action.
    """
    params = params or state.params
    limit = params.pool_size(state.tour.n)
    examined = 0
    misses = 0
    while examined < limit:
        if should_stop is not None and (examined + misses) % 64 == 63 and should_stop():
            return RoundOutcome.TIMEOUT
        action = sample_action(state, rng, params)
        if action is None:
            misses += 1
            if misses >= limit:
                break
            continue
        examined += 1
        _count_examined(state, action)
        if log is not None:
            log.append(action)
        if action.promising and action.delta < -IMPROVEMENT_TOL:
            old = state.length
            state.tour = apply_action(state.tour, action)
            state._after_apply(action.delta)
            backprop_weights(state, action, old, state.length, params.beta)
            return RoundOutcome.IMPROVED
    return RoundOutcome.EXHAUSTED


@dataclass
class SolveResult:
    tour: list[int]
    length: float
    stats: dict = field(default_factory=dict)
    state: SearchState | None = field(default=None, repr=False)


ENGINES = ("compiled", "python")


class _PythonEngine:
    """Drives the reference implementation above."""

    def __init__(self, inst: Instance, hm: HeatMap, params: Params, seed: int):
        self.inst, self.hm, self.params = inst, hm, params
        self.rng = random.Random(seed)
        self.state = SearchState(inst, hm, params)

    @property
    def length(self) -> float:
        return self.state.length

    def restart(self) -> None:
        self.state.set_tour(init_state(self.inst, self.hm, self.rng))

    def local_search(self, should_stop) -> int:
        return enumerate_2opt(self.state, should_stop)

    def round(self, should_stop, log) -> RoundOutcome:
        return mcts_round(self.state, self.rng, self.params, should_stop, log)

    def snapshot(self) -> list[int]:
        return self.state.tour.to_list()

    def export(self) -> SearchState:
        return self.state


def _csr_arrays(hm: HeatMap):
    """CSR adjacency of ``hm`` plus the slot of each entry's mirror."""
    mat = hm.to_sparse().tocsr()
    mat.sort_indices()
    indptr = mat.indptr.astype(np.int64)
    indices = mat.indices.astype(np.int64)
    pvals = mat.data.astype(np.float64)
    slots = mat.copy()
    slots.data = np.arange(mat.nnz, dtype=np.float64)
    back = slots.T.tocsr()
    back.sort_indices()
    mirror = back.data.astype(np.int64)
    return indptr, indices, pvals, mirror


class _CompiledEngine:
    """Same search on flat arrays through the numba kernels."""

    CHUNK = 2048
    VISITS = 4096

    def __init__(self, inst: Instance, hm: HeatMap, params: Params, seed: int):
        from . import _engine

        self.E = _engine
        self.inst, self.hm, self.params = inst, hm, params
        n = inst.n
        self.indptr, self.indices, self.pvals, self.mirror = _csr_arrays(hm)
        _, self.near, self.near_d = nearest_first(inst, hm)
        self.w = 100.0 * self.pvals
        self.q = np.zeros_like(self.indices)
        self.xs = np.ascontiguousarray(inst.coords[:, 0], dtype=np.float64)
        self.ys = np.ascontiguousarray(inst.coords[:, 1], dtype=np.float64)
        self.order = np.empty(n, dtype=np.int64)
        self.pos = np.empty(n, dtype=np.int64)
        self.counters = np.zeros(5, dtype=np.int64)
        self.scan = np.zeros(2, dtype=np.int64)
        width = 2 * params.k_max + 1
        self.extra = np.empty((self.CHUNK, 2), dtype=np.int64)
        self.log_pairs = np.empty((self.CHUNK, width), dtype=np.int64)
        self.log_meta = np.empty((self.CHUNK, 2), dtype=np.int64)
        self.log_delta = np.empty(self.CHUNK, dtype=np.float64)
        self.extra_q: dict[tuple[int, int], int] = {}
        self.length = math.inf
        self.applied = 0
        # numba's generator takes a 32-bit seed
        _engine.seed(seed % 2**32)

    def _moved(self, count: int, delta: float) -> None:
        before = self.applied // RESYNC_EVERY
        self.applied += count
        self.length += delta
        if self.applied // RESYNC_EVERY != before:
            self.length = tour_length(self.inst, self.order)

    def restart(self) -> None:
        self.E.init_tour(self.indptr, self.indices, self.pvals, self.order)
        self.pos[self.order] = np.arange(self.inst.n)
        self.length = tour_length(self.inst, self.order)

    def local_search(self, should_stop) -> int:
        self.scan[:] = 0
        total = 0
        while True:
            moves, delta, done = self.E.two_opt(self.order, self.pos, self.xs, self.ys, self.indptr,
                                                self.near, self.near_d, self.indices, self.scan, self.VISITS)
            self._moved(moves, delta)
            total += moves
            if done or should_stop():
                return total

    def round(self, should_stop, log) -> RoundOutcome:
        p = self.params
        c = self.counters
        c[1] = c[2] = 0
        limit = p.pool_size(self.inst.n)
        while True:
            c[3] = c[4] = 0
            outcome, delta = self.E.mcts_chunk(
                self.order, self.pos, self.xs, self.ys, self.indptr, self.indices, self.mirror,
                self.w, self.q, c, self.length, float(p.alpha), float(p.beta),
                float(p.w_candidate_min), int(p.k_max), limit, self.CHUNK, self.log_pairs,
                self.log_meta, log is not None, self.extra, self.log_delta)
            for u, v in self.extra[:c[4]].tolist():
                key = _edge(u, v)
                self.extra_q[key] = self.extra_q.get(key, 0) + 1
            if log is not None:
                for row in range(c[3]):
                    k = int(self.log_meta[row, 0])
                    log.append(Action(tuple(self.log_pairs[row, :2 * k + 1].tolist()),
                                      float(self.log_delta[row]), bool(self.log_meta[row, 1])))
            if outcome == self.E.IMPROVED:
                self._moved(1, delta)
                return RoundOutcome.IMPROVED
            if outcome == self.E.EXHAUSTED:
                return RoundOutcome.EXHAUSTED
            if should_stop():
                return RoundOutcome.TIMEOUT

    def snapshot(self) -> list[int]:
        return self.order.tolist()

    def export(self) -> SearchState:
        state = SearchState(self.inst, self.hm, self.params)
        indptr, indices = self.indptr, self.indices
        for i in range(self.inst.n):
            lo, hi = indptr[i], indptr[i + 1]
            cols = indices[lo:hi].tolist()
            state.w[i] = dict(zip(cols, self.w[lo:hi].tolist()))
            state.q[i] = {j: qv for j, qv in zip(cols, self.q[lo:hi].tolist()) if qv}
        for (u, v), cnt in self.extra_q.items():
            state.q[u][v] = state.q[u].get(v, 0) + cnt
            state.q[v][u] = state.q[u][v]
        state.M = int(self.counters[0])
        state.tour = TourArray(self.order.tolist())
        state.length = self.length
        state.applied = self.applied
        return state


def solve(inst: Instance, hm: HeatMap, params: Params | None = None, random_state=None,
          log: list | None = None, keep_state: bool = False, engine: str = "compiled") -> SolveResult:
    """Search for a short tour until the budget is spent.

    Each restart builds a tour with :func:`init_state`, runs
    :func:`enumerate_2opt`, then repeats :func:`mcts_round` (re-running the
    2-opt after every improvement) until a pool is exhausted.

    ``engine="python"`` runs the reference implementation in this module,
    ``"compiled"`` the equivalent numba kernels. Both are deterministic for
    a fixed seed under a round budget, but they draw different random
    streams, so their tours differ.
    """
    params = params or Params()
    if engine not in ENGINES:
        raise ValueError(f"engine must be one of {ENGINES}, got {engine!r}")
    n = inst.n
    if hm.n != n:
        raise ValueError(f"heat map has n={hm.n}, instance has n={n}")
    seed = derive_seed(check_generator(random_state))
    start = time.perf_counter()
    eng = (_PythonEngine if engine == "python" else _CompiledEngine)(inst, hm, params, seed)
    deterministic = params.max_rounds is not None
    deadline = start + params.seconds(n)

    def out_of_time() -> bool:
        return not deterministic and time.perf_counter() >= deadline

    def spent() -> bool:
        return params.max_rounds is not None and rounds >= params.max_rounds or out_of_time()

    rounds = restarts = improvements = two_opt_moves = 0
    best_tour: list[int] | None = None
    best_length = math.inf
    history: list[float] = []
    time_to_best = 0.0
    initial_length = None

    def note_best() -> None:
        nonlocal best_tour, best_length, time_to_best
        if eng.length < best_length:
            best_length = eng.length
            best_tour = eng.snapshot()
            history.append(best_length)
            time_to_best = time.perf_counter() - start

    while True:
        eng.restart()
        if initial_length is None:
            initial_length = eng.length
        restarts += 1
        two_opt_moves += eng.local_search(out_of_time)
        note_best()
        while not spent():
            outcome = eng.round(out_of_time, log)
            rounds += 1
            if outcome is RoundOutcome.IMPROVED:
                improvements += 1
                two_opt_moves += eng.local_search(out_of_time)
            note_best()
            if outcome is not RoundOutcome.IMPROVED:
                break
        if spent():
            break

    state = eng.export() if keep_state else None
    if state is not None:
        state.best_tour, state.best_length = list(best_tour), best_length
    stats = {
        "best_length": best_length,
        "initial_length": initial_length,
        "restarts": restarts,
        "rounds": rounds,
        "actions": eng.state.M if engine == "python" else int(eng.counters[0]),
        "improvements": improvements,
        "two_opt_moves": two_opt_moves,
        "time_to_best": time_to_best,
        "elapsed": time.perf_counter() - start,
        "best_history": history,
    }
    return SolveResult(best_tour, tour_length(inst, best_tour), stats, state)
