"""Compiled counterparts of the search loops in :mod:`tspheat.mcts`.

Each kernel follows the reference implementation step for step (same scan
order, same reversal side, same candidate filters, same arithmetic order);
only the random stream differs, since kernels draw from numba's generator.
Heat-map data arrive as a CSR adjacency with ascending neighbour indices;
``mirror[s]`` is the slot of the reverse entry of slot ``s``.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit

TOL = 1e-10

# outcome codes of mcts_chunk
CONTINUE = 0
IMPROVED = 1
EXHAUSTED = 2


@njit(cache=True)
def seed(s):
    np.random.seed(s)


@njit(cache=True)
def _slot(indptr, indices, i, j):
    for s in range(indptr[i], indptr[i + 1]):
        if indices[s] == j:
            return s
    return -1


@njit(cache=True)
def init_tour(indptr, indices, pvals, out):
    n = out.shape[0]
    visited = np.zeros(n, np.bool_)
    pool = np.arange(n)
    where = np.arange(n)
    size = n
    cur = np.random.randint(0, n)
    for step in range(n):
        if step > 0:
            s_stored = 0.0
            cnt = 0
            for s in range(indptr[cur], indptr[cur + 1]):
                if not visited[indices[s]]:
                    s_stored += math.exp(pvals[s])
                    cnt += 1
            total = s_stored + (size - cnt)
            u = np.random.random() * total
            if u < s_stored or size == cnt:
                nxt = -1
                acc = 0.0
                for s in range(indptr[cur], indptr[cur + 1]):
                    j = indices[s]
                    if not visited[j]:
                        acc += math.exp(pvals[s])
                        nxt = j
                        if u < acc:
                            break
            else:
                while True:
                    nxt = pool[np.random.randint(0, size)]
                    if _slot(indptr, indices, cur, nxt) < 0:
                        break
            cur = nxt
        i = where[cur]
        last = pool[size - 1]
        pool[i] = last
        where[last] = i
        size -= 1
        visited[cur] = True
        out[step] = cur


@njit(cache=True)
def reverse(order, pos, u, v):
    n = order.shape[0]
    i = pos[u]
    j = pos[v]
    length = (j - i + n) % n + 1
    if 2 * length > n:
        i, j = (j + 1) % n, (i - 1 + n) % n
        length = n - length
    for _ in range(length // 2):
        a = order[i]
        b = order[j]
        order[i] = b
        order[j] = a
        pos[b] = i
        pos[a] = j
        i += 1
        if i == n:
            i = 0
        j -= 1
        if j < 0:
            j = n - 1


@njit(cache=True)
def two_opt(order, pos, xs, ys, indptr, near, near_d, indices, scan, max_visits):
    """Resumable promising 2-opt; ``scan`` holds (a1, idle) between calls.

    ``near``/``near_d`` list each row's neighbours and their distances
    nearest first, ``indices`` in ascending order (for the closing-edge lookup). Returns (moves, summed
    delta, finished).
    """
    n = order.shape[0]
    a1 = scan[0]
    idle = scan[1]
    moves = 0
    dsum = 0.0
    visits = 0
    # stamp[j] == a1 + 1 marks the promising neighbours of the current a1
    stamp = np.zeros(n, np.int64)
    while idle < n:
        if visits >= max_visits:
            scan[0] = a1
            scan[1] = idle
            return moves, dsum, False
        visits += 1
        found = False
        xa = xs[a1]
        ya = ys[a1]
        for s in range(indptr[a1], indptr[a1 + 1]):
            stamp[indices[s]] = a1 + 1
        for d in range(2):
            p = pos[a1]
            if d == 0:
                b1 = order[p + 1] if p + 1 < n else order[0]
            else:
                b1 = order[p - 1] if p > 0 else order[n - 1]
            xb = xs[b1]
            yb = ys[b1]
            d_ab = math.hypot(xa - xb, ya - yb)
            for s in range(indptr[b1], indptr[b1 + 1]):
                d_new = near_d[s]
                if d_new >= d_ab:
                    break
                a2 = near[s]
                if a2 == a1:
                    continue
                p2 = pos[a2]
                if d == 0:
                    b2 = order[p2 - 1] if p2 > 0 else order[n - 1]
                else:
                    b2 = order[p2 + 1] if p2 + 1 < n else order[0]
                if b2 == b1 or stamp[b2] != a1 + 1:
                    continue
                delta = (d_new + math.hypot(xs[b2] - xa, ys[b2] - ya)
                         - d_ab - math.hypot(xs[a2] - xs[b2], ys[a2] - ys[b2]))
                if delta < -TOL:
                    if d == 0:
                        reverse(order, pos, b1, b2)
                    else:
                        reverse(order, pos, b2, b1)
                    dsum += delta
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
    scan[0] = a1
    scan[1] = idle
    return moves, dsum, True


# --- working path (always oriented b1 -> ... -> a1 along successors) ------------

@njit(cache=True)
def _locate(r, ss, ee, nseg):
    t = 0
    for idx in range(nseg):
        s = ss[idx]
        e = ee[idx]
        if s <= e:
            if s <= r <= e:
                return idx, r - s, t + r - s
            t += e - s + 1
        else:
            if e <= r <= s:
                return idx, s - r, t + s - r
            t += s - e + 1
    return -1, -1, -1


@njit(cache=True)
def _path_b(v, order, pos, base, ss, ee, nseg):
    n = order.shape[0]
    r = (pos[v] - base + n) % n
    idx, off, t = _locate(r, ss, ee, nseg)
    if t == 0 or t == n - 1:
        return -1
    if off > 0:
        r2 = r - 1 if ss[idx] <= ee[idx] else r + 1
        return order[(base + r2) % n]
    return order[(base + ee[idx - 1]) % n]


@njit(cache=True)
def _flip(v, order, pos, base, ss, ee, nseg, ts, te):
    n = order.shape[0]
    r = (pos[v] - base + n) % n
    idx, off, _ = _locate(r, ss, ee, nseg)
    m = 0
    if off > 0:
        s = ss[idx]
        ts[0] = r - 1 if s <= ee[idx] else r + 1
        te[0] = s
        m = 1
    for p in range(idx - 1, -1, -1):
        ts[m] = ee[p]
        te[m] = ss[p]
        m += 1
    if off > 0:
        ts[m] = r
        te[m] = ee[idx]
        m += 1
        start = idx + 1
    else:
        start = idx
    for p in range(start, nseg):
        ts[m] = ss[p]
        te[m] = ee[p]
        m += 1
    for p in range(m):
        ss[p] = ts[p]
        ee[p] = te[p]
    return m


@njit(cache=True)
def _has_edge(us, vs, cnt, a, b):
    lo = min(a, b)
    hi = max(a, b)
    for t in range(cnt):
        if us[t] == lo and vs[t] == hi:
            return True
    return False


@njit(cache=True)
def sample(order, pos, xs, ys, indptr, indices, w, q, logm, alpha, wmin, k_max, a1,
           pairs, ss, ee, ts, te, cands, heads, zs, add_u, add_v, rem_u, rem_v):
    """One simulated action from ``a1``; returns (k, delta, promising, nseg, base).

    ``k == 0`` means ``a1`` admits no candidate. ``pairs`` receives
    ``a1, b1, ..., ak, bk, a1`` and ``ss/ee`` the final path.
    """
    n = order.shape[0]
    b1 = order[(pos[a1] + 1) % n]
    base = pos[b1]
    ss[0] = 0
    ee[0] = n - 1
    nseg = 1
    pairs[0] = a1
    pairs[1] = b1
    npairs = 2
    rem_u[0] = min(a1, b1)
    rem_v[0] = max(a1, b1)
    nrem = 1
    nadd = 0
    xa = xs[a1]
    ya = ys[a1]
    gain = -math.hypot(xa - xs[b1], ya - ys[b1])
    b = b1
    i = 1
    while True:
        if i >= 2:
            close = gain + math.hypot(xs[b] - xa, ys[b] - ya)
            if close < -TOL and _slot(indptr, indices, b, a1) >= 0:
                break
            if i >= k_max:
                break
        s0 = ss[0]
        e0 = ee[0]
        if s0 != e0:
            skip = order[(base + (s0 + 1 if s0 < e0 else s0 - 1)) % n]
        else:
            skip = order[(base + ss[1]) % n]
        nc = 0
        for s in range(indptr[b], indptr[b + 1]):
            j = indices[s]
            if w[s] < wmin or j == a1 or j == skip:
                continue
            if _has_edge(rem_u, rem_v, nrem, b, j):
                continue
            bj = _path_b(j, order, pos, base, ss, ee, nseg)
            if bj == b1 or bj < 0:
                continue
            if _has_edge(add_u, add_v, nadd, j, bj):
                continue
            cands[nc] = s
            heads[nc] = bj
            nc += 1
        if nc == 0:
            if i == 1:
                return 0, 0.0, False, nseg, base
            break
        wsum = 0.0
        for s in range(indptr[b], indptr[b + 1]):
            wsum += w[s]
        mean = wsum / (indptr[b + 1] - indptr[b])
        total = 0.0
        for c in range(nc):
            s = cands[c]
            if alpha != 0.0:
                z = w[s] / mean + alpha * math.sqrt(logm / (q[s] + 1))
            else:
                z = w[s] / mean
            zs[c] = z
            total += z
        u = np.random.random() * total
        pick = nc - 1
        acc = 0.0
        for c in range(nc):
            acc += zs[c]
            if u < acc:
                pick = c
                break
        a = indices[cands[pick]]
        nb = heads[pick]
        gain += math.hypot(xs[b] - xs[a], ys[b] - ys[a]) - math.hypot(xs[a] - xs[nb], ys[a] - ys[nb])
        add_u[nadd] = min(b, a)
        add_v[nadd] = max(b, a)
        nadd += 1
        rem_u[nrem] = min(a, nb)
        rem_v[nrem] = max(a, nb)
        nrem += 1
        nseg = _flip(a, order, pos, base, ss, ee, nseg, ts, te)
        pairs[npairs] = a
        pairs[npairs + 1] = nb
        npairs += 2
        b = nb
        i += 1
    pairs[npairs] = a1
    delta = gain + math.hypot(xs[b] - xa, ys[b] - ya)
    return i, delta, _slot(indptr, indices, b, a1) >= 0, nseg, base


@njit(cache=True)
def _apply_path(order, pos, base, ss, ee, nseg, tmp):
    n = order.shape[0]
    m = 0
    for p in range(nseg):
        s = ss[p]
        e = ee[p]
        if s <= e:
            for r in range(s, e + 1):
                tmp[m] = order[(base + r) % n]
                m += 1
        else:
            for r in range(s, e - 1, -1):
                tmp[m] = order[(base + r) % n]
                m += 1
    for t in range(n):
        order[t] = tmp[t]
        pos[tmp[t]] = t


@njit(cache=True)
def mcts_chunk(order, pos, xs, ys, indptr, indices, mirror, w, q, counters, length,
               alpha, beta, wmin, k_max, limit, max_steps, log_pairs, log_meta, log_on,
               extra, log_delta):
    """Continue one MCTS round for at most ``max_steps`` samples.

    ``counters`` = [M, examined in round, misses in round, logged, extra Q].
    Returns (outcome, applied delta). Non-promising added edges have no CSR
    slot; their Q increments are written to ``extra`` as (u, v) rows.
    """
    n = order.shape[0]
    cap = 2 * k_max + 4
    pairs = np.empty(2 * k_max + 1, np.int64)
    ss = np.empty(cap, np.int64)
    ee = np.empty(cap, np.int64)
    ts = np.empty(cap, np.int64)
    te = np.empty(cap, np.int64)
    maxdeg = 0
    for v in range(n):
        d = indptr[v + 1] - indptr[v]
        if d > maxdeg:
            maxdeg = d
    cands = np.empty(maxdeg, np.int64)
    heads = np.empty(maxdeg, np.int64)
    zs = np.empty(maxdeg, np.float64)
    add_u = np.empty(k_max + 1, np.int64)
    add_v = np.empty(k_max + 1, np.int64)
    rem_u = np.empty(k_max + 1, np.int64)
    rem_v = np.empty(k_max + 1, np.int64)
    steps = 0
    while counters[1] < limit:
        if steps >= max_steps:
            return CONTINUE, 0.0
        steps += 1
        a1 = np.random.randint(0, n)
        logm = math.log(counters[0] + 1)
        k, delta, promising, nseg, base = sample(
            order, pos, xs, ys, indptr, indices, w, q, logm, alpha, wmin, k_max, a1,
            pairs, ss, ee, ts, te, cands, heads, zs, add_u, add_v, rem_u, rem_v)
        if k == 0:
            counters[2] += 1
            if counters[2] >= limit:
                break
            continue
        counters[1] += 1
        counters[0] += 1
        for t in range(k):
            u = pairs[2 * t + 1]
            v = pairs[2 * t + 2]
            s = _slot(indptr, indices, u, v)
            if s >= 0:
                q[s] += 1
                q[mirror[s]] = q[s]
            else:
                e = counters[4]
                extra[e, 0] = u
                extra[e, 1] = v
                counters[4] = e + 1
        if log_on:
            row = counters[3]
            for t in range(2 * k + 1):
                log_pairs[row, t] = pairs[t]
            log_meta[row, 0] = k
            log_meta[row, 1] = 1 if promising else 0
            log_delta[row] = delta
            counters[3] = row + 1
        if promising and delta < -TOL:
            _apply_path(order, pos, base, ss, ee, nseg, np.empty(n, np.int64))
            new_length = length + delta
            inc = beta * (math.exp((length - new_length) / length) - 1.0)
            for t in range(k):
                s = _slot(indptr, indices, pairs[2 * t + 1], pairs[2 * t + 2])
                w[s] += inc
                w[mirror[s]] = w[s]
            return IMPROVED, delta
    return EXHAUSTED, 0.0
