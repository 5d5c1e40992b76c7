"""Pure-Python map-equation partition search.

Fallback twin of the compiled kernel in ``_map_core.pyx``; the two
implement the identical algorithm with the identical seeded shuffle
(splitmix64 + Fisher-Yates), so given the same inputs they walk through
the same move sequence. Keep any behavioural change mirrored in the .pyx.

The search minimises the variable part of the two-level map equation

    F = plogp(q) - 2 sum_m plogp(q_m) + sum_m plogp(q_m + p_m)

(the constant -sum_a plogp(p_a) is added by the caller) via seeded
local moves, module aggregation, and node-level refinement cycles,
restarted ``num_restarts`` times.
"""

from math import log2

import numpy as np

KERNEL_NAME = "python"

_MASK = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MAX_PASSES = 256
_MAX_CYCLES = 64


def _plogp(x):
    return x * log2(x) if x > 0.0 else 0.0


def _next_u64(state):
    state = (state + _GOLDEN) & _MASK
    z = state
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _MASK
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _MASK
    return state, z ^ (z >> 31)


def _shuffle(order, state):
    for i in range(len(order) - 1, 0, -1):
        state, z = _next_u64(state)
        j = z % (i + 1)
        order[i], order[j] = order[j], order[i]
    return state


def _objective(n, indptr, indices, flow, node_flow, self_flow, mod):
    p_mod = [0.0] * n
    selfs = [0.0] * n
    internal = [0.0] * n
    cnt = [0] * n
    for i in range(n):
        m = mod[i]
        p_mod[m] += node_flow[i]
        selfs[m] += self_flow[i]
        cnt[m] += 1
        for e in range(indptr[i], indptr[i + 1]):
            if mod[indices[e]] == m:
                internal[m] += flow[e]
    q_total = 0.0
    sum_q = 0.0
    sum_qp = 0.0
    for m in range(n):
        if cnt[m] == 0:
            continue
        q = p_mod[m] - selfs[m] - internal[m]
        if q < 0.0:
            q = 0.0
        q_total += q
        sum_q += _plogp(q)
        sum_qp += _plogp(q + p_mod[m])
    return _plogp(q_total) - 2.0 * sum_q + sum_qp


def _local_moves(n, indptr, indices, flow, node_flow, self_flow, mod, state, tol):
    p_mod = [0.0] * n
    selfs = [0.0] * n
    internal = [0.0] * n
    cnt = [0] * n
    for i in range(n):
        m = mod[i]
        p_mod[m] += node_flow[i]
        selfs[m] += self_flow[i]
        cnt[m] += 1
        for e in range(indptr[i], indptr[i + 1]):
            if mod[indices[e]] == m:
                internal[m] += flow[e]
    q_mod = [0.0] * n
    q_total = 0.0
    for m in range(n):
        if cnt[m]:
            q = p_mod[m] - selfs[m] - internal[m]
            if q < 0.0:
                q = 0.0
            q_mod[m] = q
            q_total += q
    free = [m for m in range(n - 1, -1, -1) if cnt[m] == 0]

    conn = [0.0] * n
    mark = [False] * n
    touched = [0] * n
    order = list(range(n))
    moved_any = False
    for _ in range(_MAX_PASSES):
        state = _shuffle(order, state)
        moved = 0
        for pos in range(n):
            i = order[pos]
            a = mod[i]
            deg_lo = indptr[i]
            deg_hi = indptr[i + 1]
            if cnt[a] == 1 and deg_lo == deg_hi:
                continue
            t = 0
            for e in range(deg_lo, deg_hi):
                m = mod[indices[e]]
                if not mark[m]:
                    mark[m] = True
                    touched[t] = m
                    t += 1
                conn[m] += flow[e]
            o_i = node_flow[i] - self_flow[i]
            p_i = node_flow[i]
            qa = q_mod[a]
            pa = p_mod[a]
            qa_new = qa - o_i + 2.0 * conn[a]
            if qa_new < 0.0:
                qa_new = 0.0
            pa_new = pa - p_i
            removal = (
                -2.0 * (_plogp(qa_new) - _plogp(qa))
                + _plogp(qa_new + pa_new)
                - _plogp(qa + pa)
            )
            best_delta = 0.0
            best_mod = a
            for u in range(t):
                b = touched[u]
                if b == a:
                    continue
                qb = q_mod[b]
                pb = p_mod[b]
                qb_new = qb + o_i - 2.0 * conn[b]
                if qb_new < 0.0:
                    qb_new = 0.0
                q_new = q_total - qa - qb + qa_new + qb_new
                delta = (
                    _plogp(q_new)
                    - _plogp(q_total)
                    + removal
                    - 2.0 * (_plogp(qb_new) - _plogp(qb))
                    + _plogp(qb_new + p_i + pb)
                    - _plogp(qb + pb)
                )
                if delta < best_delta:
                    best_delta = delta
                    best_mod = b
            if cnt[a] > 1 and free:
                b = free[-1]
                qb_new = o_i
                q_new = q_total - qa + qa_new + qb_new
                delta = (
                    _plogp(q_new)
                    - _plogp(q_total)
                    + removal
                    - 2.0 * _plogp(qb_new)
                    + _plogp(qb_new + p_i)
                )
                if delta < best_delta:
                    best_delta = delta
                    best_mod = b
            if best_mod != a and best_delta < -tol:
                b = best_mod
                if cnt[b] == 0:
                    free.pop()
                    qb = 0.0
                    pb = 0.0
                    conn_b = 0.0
                else:
                    qb = q_mod[b]
                    pb = p_mod[b]
                    conn_b = conn[b]
                qb_new = qb + o_i - 2.0 * conn_b
                if qb_new < 0.0:
                    qb_new = 0.0
                q_total += qa_new + qb_new - qa - qb
                q_mod[a] = qa_new
                q_mod[b] = qb_new
                p_mod[a] = pa_new
                p_mod[b] = pb + p_i
                cnt[a] -= 1
                cnt[b] += 1
                mod[i] = b
                if cnt[a] == 0:
                    free.append(a)
                moved += 1
            for u in range(t):
                conn[touched[u]] = 0.0
                mark[touched[u]] = False
        if moved == 0:
            break
        moved_any = True
    return moved_any, state


def _relabel(mod):
    lut = {}
    nxt = 0
    for i in range(len(mod)):
        m = mod[i]
        got = lut.get(m)
        if got is None:
            lut[m] = nxt
            mod[i] = nxt
            nxt += 1
        else:
            mod[i] = got
    return nxt


def _aggregate(n, indptr, indices, flow, node_flow, self_flow, mod, num_modules):
    members = [[] for _ in range(num_modules)]
    for i in range(n):
        members[mod[i]].append(i)
    node_flow2 = [0.0] * num_modules
    self_flow2 = [0.0] * num_modules
    indptr2 = [0] * (num_modules + 1)
    indices2 = []
    flow2 = []
    conn = [0.0] * num_modules
    mark = [False] * num_modules
    for m in range(num_modules):
        internal = 0.0
        touched = []
        for i in members[m]:
            node_flow2[m] += node_flow[i]
            self_flow2[m] += self_flow[i]
            for e in range(indptr[i], indptr[i + 1]):
                tm = mod[indices[e]]
                if tm == m:
                    internal += flow[e]
                else:
                    if not mark[tm]:
                        mark[tm] = True
                        touched.append(tm)
                    conn[tm] += flow[e]
        self_flow2[m] += internal
        touched.sort()
        for tm in touched:
            indices2.append(tm)
            flow2.append(conn[tm])
            conn[tm] = 0.0
            mark[tm] = False
        indptr2[m + 1] = len(indices2)
    return indptr2, indices2, flow2, node_flow2, self_flow2


def _search_once(n, indptr, indices, flow, node_flow, self_flow, state, tol):
    mod = list(range(n))
    best = _objective(n, indptr, indices, flow, node_flow, self_flow, mod)
    for _ in range(_MAX_CYCLES):
        # node-level moves on the original graph (first cycle: from
        # singletons; later cycles: refinement of the found partition)
        _, state = _local_moves(
            n, indptr, indices, flow, node_flow, self_flow, mod, state, tol
        )
        num_modules = _relabel(mod)
        # aggregation climb
        proj = mod
        cur = _aggregate(n, indptr, indices, flow, node_flow, self_flow, mod, num_modules)
        cur_n = num_modules
        while cur_n > 1:
            supmod = list(range(cur_n))
            moved, state = _local_moves(
                cur_n, cur[0], cur[1], cur[2], cur[3], cur[4], supmod, state, tol
            )
            if not moved:
                break
            new_n = _relabel(supmod)
            proj = [supmod[proj[i]] for i in range(n)]
            if new_n == cur_n:
                break
            cur = _aggregate(cur_n, cur[0], cur[1], cur[2], cur[3], cur[4], supmod, new_n)
            cur_n = new_n
        mod = proj
        value = _objective(n, indptr, indices, flow, node_flow, self_flow, mod)
        if value < best - tol:
            best = value
        else:
            break
    return mod, best


def partition_search(indptr, indices, flow, node_flow, self_flow, seed,
                     num_restarts=8, tol=1e-12):
    """Minimise F over partitions; returns (assignment, F_bits).

    Deterministic given inputs and seed; ties between restarts keep the
    first-found partition.
    """
    n = len(node_flow)
    indptr = np.asarray(indptr, dtype=np.int64).tolist()
    indices = np.asarray(indices, dtype=np.int64).tolist()
    flow = np.asarray(flow, dtype=np.float64).tolist()
    node_flow = np.asarray(node_flow, dtype=np.float64).tolist()
    self_flow = np.asarray(self_flow, dtype=np.float64).tolist()
    best_mod = list(range(n))
    best = float("inf")
    for r in range(num_restarts):
        state = (int(seed) + (r + 1) * _GOLDEN) & _MASK
        mod, value = _search_once(
            n, indptr, indices, flow, node_flow, self_flow, state, tol
        )
        if value < best - tol:
            best = value
            best_mod = mod
    return np.asarray(best_mod, dtype=np.int64), best
