# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled map-equation partition search.

Exact twin of ``_map_core_py.py``: same seeded shuffle (splitmix64 +
Fisher-Yates), same move deltas, same aggregation order, so both kernels
return identical partitions for identical inputs. Keep them in sync.
"""

from libc.math cimport log2, INFINITY

import numpy as np

cimport numpy as cnp

cnp.import_array()

KERNEL_NAME = "cython"

ctypedef cnp.int64_t i64
ctypedef unsigned long long u64

cdef u64 _GOLDEN = <u64>0x9E3779B97F4A7C15
cdef int _MAX_PASSES = 256
cdef int _MAX_CYCLES = 64


cdef inline double _plogp(double x):
    return x * log2(x) if x > 0.0 else 0.0


cdef inline u64 _next_u64(u64* state):
    cdef u64 z
    state[0] = state[0] + _GOLDEN
    z = state[0]
    z = (z ^ (z >> 30)) * <u64>0xBF58476D1CE4E5B9
    z = (z ^ (z >> 27)) * <u64>0x94D049BB133111EB
    return z ^ (z >> 31)


cdef void _shuffle(i64* order, Py_ssize_t n, u64* state):
    cdef Py_ssize_t i, j
    cdef i64 tmp
    for i in range(n - 1, 0, -1):
        j = <Py_ssize_t>(_next_u64(state) % <u64>(i + 1))
        tmp = order[i]
        order[i] = order[j]
        order[j] = tmp


cdef struct Work:
    double* p_mod
    double* q_mod
    double* selfs
    double* internal
    double* conn
    unsigned char* mark
    i64* cnt
    i64* touched
    i64* order
    i64* free_stack
    i64* lut
    i64* starts
    i64* member
    i64* supmod
    i64* proj


cdef double _objective(Py_ssize_t n, i64* indptr, i64* indices, double* flow,
                       double* node_flow, double* self_flow, i64* mod, Work* w):
    cdef Py_ssize_t i, e
    cdef i64 m
    cdef double q, q_total, sum_q, sum_qp
    for i in range(n):
        w.p_mod[i] = 0.0
        w.selfs[i] = 0.0
        w.internal[i] = 0.0
        w.cnt[i] = 0
    for i in range(n):
        m = mod[i]
        w.p_mod[m] += node_flow[i]
        w.selfs[m] += self_flow[i]
        w.cnt[m] += 1
        for e in range(indptr[i], indptr[i + 1]):
            if mod[indices[e]] == m:
                w.internal[m] += flow[e]
    q_total = 0.0
    sum_q = 0.0
    sum_qp = 0.0
    for i in range(n):
        if w.cnt[i] == 0:
            continue
        q = w.p_mod[i] - w.selfs[i] - w.internal[i]
        if q < 0.0:
            q = 0.0
        q_total += q
        sum_q += _plogp(q)
        sum_qp += _plogp(q + w.p_mod[i])
    return _plogp(q_total) - 2.0 * sum_q + sum_qp


cdef bint _local_moves(Py_ssize_t n, i64* indptr, i64* indices, double* flow,
                       double* node_flow, double* self_flow, i64* mod,
                       u64* state, double tol, Work* w):
    cdef Py_ssize_t i, e, pos, t, u, free_top, pass_no
    cdef i64 m, a, b, best_mod, deg_lo, deg_hi
    cdef Py_ssize_t moved
    cdef bint moved_any = False
    cdef double q, q_total, o_i, p_i, qa, pa, qa_new, pa_new, removal
    cdef double qb, pb, qb_new, q_new, delta, best_delta, conn_b

    for i in range(n):
        w.p_mod[i] = 0.0
        w.selfs[i] = 0.0
        w.internal[i] = 0.0
        w.cnt[i] = 0
        w.conn[i] = 0.0
        w.mark[i] = 0
    for i in range(n):
        m = mod[i]
        w.p_mod[m] += node_flow[i]
        w.selfs[m] += self_flow[i]
        w.cnt[m] += 1
        for e in range(indptr[i], indptr[i + 1]):
            if mod[indices[e]] == m:
                w.internal[m] += flow[e]
    q_total = 0.0
    for i in range(n):
        w.q_mod[i] = 0.0
        if w.cnt[i]:
            q = w.p_mod[i] - w.selfs[i] - w.internal[i]
            if q < 0.0:
                q = 0.0
            w.q_mod[i] = q
            q_total += q
    free_top = 0
    for i in range(n - 1, -1, -1):
        if w.cnt[i] == 0:
            w.free_stack[free_top] = i
            free_top += 1
    for i in range(n):
        w.order[i] = i

    for pass_no in range(_MAX_PASSES):
        _shuffle(w.order, n, state)
        moved = 0
        for pos in range(n):
            i = w.order[pos]
            a = mod[i]
            deg_lo = indptr[i]
            deg_hi = indptr[i + 1]
            if w.cnt[a] == 1 and deg_lo == deg_hi:
                continue
            t = 0
            for e in range(deg_lo, deg_hi):
                m = mod[indices[e]]
                if not w.mark[m]:
                    w.mark[m] = 1
                    w.touched[t] = m
                    t += 1
                w.conn[m] += flow[e]
            o_i = node_flow[i] - self_flow[i]
            p_i = node_flow[i]
            qa = w.q_mod[a]
            pa = w.p_mod[a]
            qa_new = qa - o_i + 2.0 * w.conn[a]
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
                b = w.touched[u]
                if b == a:
                    continue
                qb = w.q_mod[b]
                pb = w.p_mod[b]
                qb_new = qb + o_i - 2.0 * w.conn[b]
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
            if w.cnt[a] > 1 and free_top > 0:
                b = w.free_stack[free_top - 1]
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
                if w.cnt[b] == 0:
                    free_top -= 1
                    qb = 0.0
                    pb = 0.0
                    conn_b = 0.0
                else:
                    qb = w.q_mod[b]
                    pb = w.p_mod[b]
                    conn_b = w.conn[b]
                qb_new = qb + o_i - 2.0 * conn_b
                if qb_new < 0.0:
                    qb_new = 0.0
                q_total += qa_new + qb_new - qa - qb
                w.q_mod[a] = qa_new
                w.q_mod[b] = qb_new
                w.p_mod[a] = pa_new
                w.p_mod[b] = pb + p_i
                w.cnt[a] -= 1
                w.cnt[b] += 1
                mod[i] = b
                if w.cnt[a] == 0:
                    w.free_stack[free_top] = a
                    free_top += 1
                moved += 1
            for u in range(t):
                w.conn[w.touched[u]] = 0.0
                w.mark[w.touched[u]] = 0
        if moved == 0:
            break
        moved_any = True
    return moved_any


cdef Py_ssize_t _relabel(Py_ssize_t length, i64* mod, i64* lut):
    cdef Py_ssize_t i
    cdef i64 m
    cdef i64 nxt = 0
    for i in range(length):
        lut[i] = -1
    for i in range(length):
        m = mod[i]
        if lut[m] < 0:
            lut[m] = nxt
            nxt += 1
        mod[i] = lut[m]
    return <Py_ssize_t>nxt


cdef void _aggregate(Py_ssize_t n, i64* indptr, i64* indices, double* flow,
                     double* node_flow, double* self_flow, i64* mod,
                     Py_ssize_t num_modules,
                     i64* indptr2, i64* indices2, double* flow2,
                     double* node_flow2, double* self_flow2, Work* w):
    cdef Py_ssize_t i, e, k, s, lo, hi, t, u, nnz2
    cdef i64 m, tm, key
    # counting sort: members of module m = member[starts[m]:starts[m+1]],
    # ascending node order within each module
    for i in range(num_modules + 1):
        w.starts[i] = 0
    for i in range(n):
        w.starts[mod[i] + 1] += 1
    for i in range(num_modules):
        w.starts[i + 1] += w.starts[i]
    for i in range(num_modules):
        w.cnt[i] = w.starts[i]
    for i in range(n):
        w.member[w.cnt[mod[i]]] = i
        w.cnt[mod[i]] += 1
    cdef double internal
    nnz2 = 0
    indptr2[0] = 0
    for m in range(num_modules):
        node_flow2[m] = 0.0
        self_flow2[m] = 0.0
        internal = 0.0
        t = 0
        lo = w.starts[m]
        hi = w.starts[m + 1]
        for s in range(lo, hi):
            i = w.member[s]
            node_flow2[m] += node_flow[i]
            self_flow2[m] += self_flow[i]
            for e in range(indptr[i], indptr[i + 1]):
                tm = mod[indices[e]]
                if tm == m:
                    internal += flow[e]
                else:
                    if not w.mark[tm]:
                        w.mark[tm] = 1
                        w.touched[t] = tm
                        t += 1
                    w.conn[tm] += flow[e]
        self_flow2[m] += internal
        # insertion sort of the touched module ids (t is small)
        for u in range(1, t):
            key = w.touched[u]
            k = u - 1
            while k >= 0 and w.touched[k] > key:
                w.touched[k + 1] = w.touched[k]
                k -= 1
            w.touched[k + 1] = key
        for u in range(t):
            tm = w.touched[u]
            indices2[nnz2] = tm
            flow2[nnz2] = w.conn[tm]
            nnz2 += 1
            w.conn[tm] = 0.0
            w.mark[tm] = 0
        indptr2[m + 1] = nnz2


cdef double _search_once(Py_ssize_t n, i64* indptr, i64* indices, double* flow,
                         double* node_flow, double* self_flow, u64 state,
                         double tol, Work* w, i64* mod,
                         i64* ag_indptr0, i64* ag_indices0, double* ag_flow0,
                         double* ag_nf0, double* ag_sf0,
                         i64* ag_indptr1, i64* ag_indices1, double* ag_flow1,
                         double* ag_nf1, double* ag_sf1):
    cdef Py_ssize_t i, cycle, num_modules, cur_n, new_n
    cdef double best, value
    cdef bint moved
    cdef i64* cur_ip
    cdef i64* cur_ix
    cdef double* cur_fl
    cdef double* cur_nf
    cdef double* cur_sf
    cdef i64* alt_ip
    cdef i64* alt_ix
    cdef double* alt_fl
    cdef double* alt_nf
    cdef double* alt_sf
    cdef i64* tmp_ip
    cdef i64* tmp_ix
    cdef double* tmp_fl
    cdef double* tmp_nf
    cdef double* tmp_sf

    for i in range(n):
        mod[i] = i
    best = _objective(n, indptr, indices, flow, node_flow, self_flow, mod, w)
    for cycle in range(_MAX_CYCLES):
        # node-level moves on the original graph (first cycle: from
        # singletons; later cycles: refinement of the found partition)
        _local_moves(n, indptr, indices, flow, node_flow, self_flow, mod,
                     &state, tol, w)
        num_modules = _relabel(n, mod, w.lut)
        for i in range(n):
            w.proj[i] = mod[i]
        # aggregation climb
        _aggregate(n, indptr, indices, flow, node_flow, self_flow, mod,
                   num_modules, ag_indptr0, ag_indices0, ag_flow0,
                   ag_nf0, ag_sf0, w)
        cur_ip = ag_indptr0; cur_ix = ag_indices0; cur_fl = ag_flow0
        cur_nf = ag_nf0; cur_sf = ag_sf0
        alt_ip = ag_indptr1; alt_ix = ag_indices1; alt_fl = ag_flow1
        alt_nf = ag_nf1; alt_sf = ag_sf1
        cur_n = num_modules
        while cur_n > 1:
            for i in range(cur_n):
                w.supmod[i] = i
            moved = _local_moves(cur_n, cur_ip, cur_ix, cur_fl, cur_nf,
                                 cur_sf, w.supmod, &state, tol, w)
            if not moved:
                break
            new_n = _relabel(cur_n, w.supmod, w.lut)
            for i in range(n):
                w.proj[i] = w.supmod[w.proj[i]]
            if new_n == cur_n:
                break
            _aggregate(cur_n, cur_ip, cur_ix, cur_fl, cur_nf, cur_sf,
                       w.supmod, new_n, alt_ip, alt_ix, alt_fl,
                       alt_nf, alt_sf, w)
            tmp_ip = cur_ip; tmp_ix = cur_ix; tmp_fl = cur_fl
            tmp_nf = cur_nf; tmp_sf = cur_sf
            cur_ip = alt_ip; cur_ix = alt_ix; cur_fl = alt_fl
            cur_nf = alt_nf; cur_sf = alt_sf
            alt_ip = tmp_ip; alt_ix = tmp_ix; alt_fl = tmp_fl
            alt_nf = tmp_nf; alt_sf = tmp_sf
            cur_n = new_n
        for i in range(n):
            mod[i] = w.proj[i]
        value = _objective(n, indptr, indices, flow, node_flow, self_flow,
                           mod, w)
        if value < best - tol:
            best = value
        else:
            break
    return best


def partition_search(indptr, indices, flow, node_flow, self_flow, seed,
                     num_restarts=8, tol=1e-12):
    """Minimise F over partitions; returns (assignment, F_bits).

    Deterministic given inputs and seed; ties between restarts keep the
    first-found partition.
    """
    cdef cnp.ndarray[i64, ndim=1] indptr_a = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef cnp.ndarray[i64, ndim=1] indices_a = np.ascontiguousarray(indices, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] flow_a = np.ascontiguousarray(flow, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] nf_a = np.ascontiguousarray(node_flow, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] sf_a = np.ascontiguousarray(self_flow, dtype=np.float64)
    cdef Py_ssize_t n = nf_a.shape[0]
    cdef Py_ssize_t nnz = indices_a.shape[0]
    if n == 0:
        return np.zeros(0, dtype=np.int64), 0.0
    if nnz == 0:
        # keep pointers valid; indptr rows are all empty so never read
        indices_a = np.zeros(1, dtype=np.int64)
        flow_a = np.zeros(1, dtype=np.float64)

    cdef cnp.ndarray[i64, ndim=1] mod_a = np.zeros(n, dtype=np.int64)
    cdef cnp.ndarray[i64, ndim=1] best_a = np.arange(n, dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] scratch_f = np.zeros(6 * n, dtype=np.float64)
    cdef cnp.ndarray[cnp.uint8_t, ndim=1] mark_a = np.zeros(n, dtype=np.uint8)
    cdef cnp.ndarray[i64, ndim=1] scratch_i = np.zeros(8 * n + 1, dtype=np.int64)
    cdef cnp.ndarray[i64, ndim=1] ag_ip0 = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.ndarray[i64, ndim=1] ag_ip1 = np.zeros(n + 1, dtype=np.int64)
    cdef cnp.ndarray[i64, ndim=1] ag_ix0 = np.zeros(max(nnz, 1), dtype=np.int64)
    cdef cnp.ndarray[i64, ndim=1] ag_ix1 = np.zeros(max(nnz, 1), dtype=np.int64)
    cdef cnp.ndarray[double, ndim=1] ag_fl0 = np.zeros(max(nnz, 1), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] ag_fl1 = np.zeros(max(nnz, 1), dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] ag_nf0 = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] ag_nf1 = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] ag_sf0 = np.zeros(n, dtype=np.float64)
    cdef cnp.ndarray[double, ndim=1] ag_sf1 = np.zeros(n, dtype=np.float64)

    cdef Work w
    w.p_mod = &scratch_f[0]
    w.q_mod = &scratch_f[n]
    w.selfs = &scratch_f[2 * n]
    w.internal = &scratch_f[3 * n]
    w.conn = &scratch_f[4 * n]
    # scratch_f[5n:6n] reserved
    w.mark = &mark_a[0]
    w.cnt = &scratch_i[0]
    w.touched = &scratch_i[n]
    w.order = &scratch_i[2 * n]
    w.free_stack = &scratch_i[3 * n]
    w.lut = &scratch_i[4 * n]
    w.member = &scratch_i[5 * n]
    w.supmod = &scratch_i[6 * n]
    w.proj = &scratch_i[7 * n]
    cdef cnp.ndarray[i64, ndim=1] starts_a = np.zeros(n + 1, dtype=np.int64)
    w.starts = &starts_a[0]

    cdef double best = INFINITY
    cdef double value
    cdef double ctol = float(tol)
    cdef u64 sd = <u64>(int(seed) & 0xFFFFFFFFFFFFFFFF)
    cdef u64 state
    cdef Py_ssize_t r, i
    cdef int restarts = int(num_restarts)
    for r in range(restarts):
        state = sd + <u64>(r + 1) * _GOLDEN
        value = _search_once(n, &indptr_a[0], &indices_a[0], &flow_a[0],
                             &nf_a[0], &sf_a[0], state, ctol, &w, &mod_a[0],
                             &ag_ip0[0], &ag_ix0[0], &ag_fl0[0],
                             &ag_nf0[0], &ag_sf0[0],
                             &ag_ip1[0], &ag_ix1[0], &ag_fl1[0],
                             &ag_nf1[0], &ag_sf1[0])
        if value < best - ctol:
            best = value
            for i in range(n):
                best_a[i] = mod_a[i]
    return best_a, best
