"""Compiled inner loops.

Everything here works on plain numpy arrays so it can be jitted by numba.
The readable reference versions of classification and probing live in
:mod:`rosanna.cones`; tests check that both agree.
"""

import numpy as np
from numba import njit, prange

# Sentinel id for "no candidate found".
NO_ID = -1


def binomial_table(k, g):
    """Table ``t[a, b] = C(a, b)`` for ``0 <= a <= k``, ``0 <= b <= g`` as int64.

    Raises OverflowError if an entry needed by :func:`cone_code` does not fit.
    """
    from math import comb

    table = np.zeros((k + 1, g + 1), dtype=np.int64)
    limit = 2**63 - 1
    for a in range(k + 1):
        for b in range(min(a, g) + 1):
            value = comb(a, b)
            if value > limit:
                raise OverflowError(f"C({a},{b}) does not fit in 64 bits")
            table[a, b] = value
    return table


@njit(cache=True)
def magnitude_order(v):
    """Indices of ``v`` by decreasing magnitude; ties go to the lower index."""
    return np.argsort(-np.abs(v), kind="mergesort")


@njit(cache=True)
def _code_from_members(v, order, members, flips, g, binom, idx_buf, bit_buf):
    # members: ranks into `order`; flips: 1 where the sign bit is inverted.
    for j in range(g):
        idx_buf[j] = order[members[j]]
        bit_buf[j] = 1 if v[idx_buf[j]] >= 0 else 0
        if flips[j]:
            bit_buf[j] = 1 - bit_buf[j]
    # insertion sort by component index, carrying the bits along
    for a in range(1, g):
        ia = idx_buf[a]
        ba = bit_buf[a]
        b = a - 1
        while b >= 0 and idx_buf[b] > ia:
            idx_buf[b + 1] = idx_buf[b]
            bit_buf[b + 1] = bit_buf[b]
            b -= 1
        idx_buf[b + 1] = ia
        bit_buf[b + 1] = ba
    rank = 0
    signs = 0
    for j in range(g):
        rank += binom[idx_buf[j], j + 1]
        signs = signs * 2 + bit_buf[j]
    return rank * (np.int64(1) << g) + signs


@njit(cache=True)
def cone_code(v, g, binom):
    """Integer cone code of ``v``: combinadic rank of the profile, then sign bits."""
    order = magnitude_order(v)
    members = np.arange(g)
    flips = np.zeros(g, dtype=np.int64)
    idx_buf = np.empty(g, dtype=np.int64)
    bit_buf = np.empty(g, dtype=np.int64)
    return _code_from_members(v, order, members, flips, g, binom, idx_buf, bit_buf)


@njit(cache=True)
def classify_codes(points, g, binom):
    n = points.shape[0]
    out = np.empty(n, dtype=np.int64)
    members = np.arange(g)
    flips = np.zeros(g, dtype=np.int64)
    idx_buf = np.empty(g, dtype=np.int64)
    bit_buf = np.empty(g, dtype=np.int64)
    for i in range(n):
        v = points[i]
        order = magnitude_order(v)
        out[i] = _code_from_members(v, order, members, flips, g, binom, idx_buf, bit_buf)
    return out


@njit(cache=True)
def _next_combination(comb, n):
    # Advance `comb` (ascending picks from range(n)) to the next one in
    # lexicographic order. Returns False when exhausted.
    d = comb.shape[0]
    i = d - 1
    while i >= 0 and comb[i] == n - d + i:
        i -= 1
    if i < 0:
        return False
    comb[i] += 1
    for j in range(i + 1, d):
        comb[j] = comb[j - 1] + 1
    return True


@njit(cache=True)
def probe_codes(v, g, c, binom, out_codes, out_dist):
    """Write the first ``c`` probe cone codes for projected query ``v``.

    Order: sign-flip count, then profile distance, then lexicographic choice
    of the replacement ranks, then lexicographic choice of the flipped
    positions (smallest magnitude first). Returns the number written.
    """
    k = v.shape[0]
    order = magnitude_order(v)
    members = np.empty(g, dtype=np.int64)
    flips = np.zeros(g, dtype=np.int64)
    idx_buf = np.empty(g, dtype=np.int64)
    bit_buf = np.empty(g, dtype=np.int64)
    written = 0
    for t in range(g + 1):
        fcomb = np.arange(t)
        for d in range(g + 1):
            keep = g - d
            pool_lo = keep + 1
            pool_n = k - pool_lo
            if d > pool_n:
                continue
            comb = np.arange(d)
            while True:
                for j in range(keep):
                    members[j] = j
                for j in range(d):
                    members[keep + j] = pool_lo + comb[j]
                for j in range(t):
                    fcomb[j] = j
                while True:
                    for j in range(g):
                        flips[j] = 0
                    # position p in ascending-magnitude order is member g-1-p
                    for j in range(t):
                        flips[g - 1 - fcomb[j]] = 1
                    out_codes[written] = _code_from_members(
                        v, order, members, flips, g, binom, idx_buf, bit_buf
                    )
                    out_dist[written] = t * (g + 1) + d
                    written += 1
                    if written == c:
                        return written
                    if not _next_combination(fcomb, g):
                        break
                if not _next_combination(comb, pool_n):
                    break
    return written


@njit(cache=True)
def _lookup(keys, lo, hi, code):
    pos = lo + np.searchsorted(keys[lo:hi], code)
    if pos < hi and keys[pos] == code:
        return pos
    return -1


@njit(cache=True)
def search_into(qd, qc, bases, g, c, binom, keys, key_off, bucket_off, ids,
                data, visited, epoch, best_d, best_i, counters, use_pde):
    """One query of the interleaved multi-basis search.

    ``best_d``/``best_i`` hold the running k-best list sorted by
    (distance, id) and are updated in place, so several calls can share
    them. ``counters`` accumulates [distances started, bucket entries
    touched, distances pruned].
    """
    r_count = bases.shape[0]
    kc = qc.shape[0]
    kd = qd.shape[0]
    kk = best_d.shape[0]
    codes = np.empty((r_count, c), dtype=np.int64)
    dist_buf = np.empty(c, dtype=np.int64)
    ncodes = np.empty(r_count, dtype=np.int64)
    y = np.empty(kc, dtype=np.float64)
    for r in range(r_count):
        m = bases[r]
        for a in range(kc):
            s = 0.0
            for b in range(kc):
                s += m[b, a] * qc[b]
            y[a] = s
        ncodes[r] = probe_codes(y, g, c, binom, codes[r], dist_buf)
    for lvl in range(c):
        for r in range(r_count):
            if lvl >= ncodes[r]:
                continue
            pos = _lookup(keys, key_off[r], key_off[r + 1], codes[r, lvl])
            if pos < 0:
                continue
            for e in range(bucket_off[pos], bucket_off[pos + 1]):
                i = ids[e]
                counters[1] += 1
                if visited[i] == epoch:
                    continue
                visited[i] = epoch
                counters[0] += 1
                bound = best_d[kk - 1] if use_pde else np.inf
                s = 0.0
                pruned = False
                for j in range(kd):
                    diff = np.float64(data[i, j]) - qd[j]
                    s += diff * diff
                    if s > bound:
                        pruned = True
                        break
                if pruned:
                    counters[2] += 1
                    continue
                last = kk - 1
                if s < best_d[last] or (s == best_d[last] and i < best_i[last]):
                    p = last
                    while p > 0 and (s < best_d[p - 1] or (s == best_d[p - 1] and i < best_i[p - 1])):
                        best_d[p] = best_d[p - 1]
                        best_i[p] = best_i[p - 1]
                        p -= 1
                    best_d[p] = s
                    best_i[p] = i


def _search_batch(qd_all, qc_all, bases, g, c, binom, keys, key_off, bucket_off,
                  ids, data, k_nn, n_chunks, use_pde):
    nq = qd_all.shape[0]
    n = data.shape[0]
    out_d = np.full((nq, k_nn), np.inf)
    out_i = np.full((nq, k_nn), NO_ID, dtype=np.int64)
    counters = np.zeros((nq, 3), dtype=np.int64)
    chunk = (nq + n_chunks - 1) // n_chunks
    for t in prange(n_chunks):
        visited = np.zeros(n, dtype=np.int32)
        start = t * chunk
        stop = min(nq, start + chunk)
        for q in range(start, stop):
            search_into(qd_all[q], qc_all[q], bases, g, c, binom, keys, key_off,
                        bucket_off, ids, data, visited, q - start + 1,
                        out_d[q], out_i[q], counters[q], use_pde)
    return out_d, out_i, counters


search_batch_serial = njit(cache=True)(_search_batch)
search_batch_parallel = njit(cache=True, parallel=True)(_search_batch)


@njit(cache=True)
def sq_dist(x, y):
    s = 0.0
    for j in range(x.shape[0]):
        diff = np.float64(x[j]) - np.float64(y[j])
        s += diff * diff
    return s


@njit(cache=True)
def scan_one(data, q):
    """Exact NN by full scan; strict comparison keeps the lowest id on ties."""
    best = np.inf
    best_i = NO_ID
    for i in range(data.shape[0]):
        s = sq_dist(data[i], q)
        if s < best:
            best = s
            best_i = i
    return best_i, best


def _scan_batch(data, queries):
    nq = queries.shape[0]
    out_i = np.empty(nq, dtype=np.int64)
    out_d = np.empty(nq, dtype=np.float64)
    for q in prange(nq):
        i, d = scan_one(data, queries[q])
        out_i[q] = i
        out_d[q] = d
    return out_i, out_d


scan_batch_serial = njit(cache=True)(_scan_batch)
scan_batch_parallel = njit(cache=True, parallel=True)(_scan_batch)
