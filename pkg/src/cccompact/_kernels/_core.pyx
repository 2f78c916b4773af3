# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
# distutils: language = c++
"""Compiled kernels: polynomial field evaluation, RK4 flows, lattice edge
construction and Dijkstra.  Signatures mirror ``_pure``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, fabs, INFINITY, isfinite, round as cround
from libcpp.queue cimport priority_queue
from libcpp.pair cimport pair
from libcpp.vector cimport vector

cnp.import_array()

BACKEND = "compiled"

DEF MAXM = 16

ctypedef pair[double, cnp.int64_t] HeapItem


cdef inline double _ipow(double x, int e) noexcept nogil:
    cdef double r = 1.0
    while e > 0:
        if e & 1:
            r *= x
        x *= x
        e >>= 1
    return r


cdef void _coeffs(const int[::1] field, const int[::1] comp, const double[::1] coef,
                  const int[:, ::1] exp, int m, int n, const double* x,
                  double* out) noexcept nogil:
    cdef Py_ssize_t r, ax
    cdef double term
    for r in range(m * n):
        out[r] = 0.0
    for r in range(coef.shape[0]):
        term = coef[r]
        for ax in range(n):
            if exp[r, ax]:
                term *= _ipow(x[ax], exp[r, ax])
        out[field[r] * n + comp[r]] += term


def eval_coeffs(field, comp, coef, exp, int m, int n, x):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    out = np.zeros((m, n))
    cdef double[:, ::1] ov = out
    _coeffs(field, comp, coef, exp, m, n, &xv[0], &ov[0, 0])
    return out


def eval_coeffs_many(field, comp, coef, exp, int m, int n, X):
    cdef double[:, ::1] Xv = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t P = Xv.shape[0], p
    out = np.zeros((P, m, n))
    cdef double[:, :, ::1] ov = out
    cdef const int[::1] f = field
    cdef const int[::1] c = comp
    cdef const double[::1] cf = coef
    cdef const int[:, ::1] e = exp
    with nogil:
        for p in range(P):
            _coeffs(f, c, cf, e, m, n, &Xv[p, 0], &ov[p, 0, 0])
    return out


cdef void _rhs(const int[::1] field, const int[::1] comp, const double[::1] coef,
               const int[:, ::1] exp, int m, int n, const double* x, const double* h,
               double* A, double* out) noexcept nogil:
    cdef int i, k
    _coeffs(field, comp, coef, exp, m, n, x, A)
    for k in range(n):
        out[k] = 0.0
    for i in range(m):
        for k in range(n):
            out[k] += h[i] * A[i * n + k]


def rk4_path(field, comp, coef, exp, int m, int n, x0, controls, double seg_dt,
             int steps, double escape_radius):
    cdef const int[::1] f = field
    cdef const int[::1] c = comp
    cdef const double[::1] cf = coef
    cdef const int[:, ::1] e = exp
    cdef double[:, ::1] H = np.ascontiguousarray(controls, dtype=np.float64)
    cdef Py_ssize_t N = H.shape[0]
    cdef Py_ssize_t S = N * steps
    states = np.full((S + 1, n), np.nan)
    cdef double[:, ::1] st = states
    cdef double[::1] x = np.array(x0, dtype=np.float64)
    cdef double[::1] tmp = np.zeros(n)
    cdef double[::1] k1 = np.zeros(n)
    cdef double[::1] k2 = np.zeros(n)
    cdef double[::1] k3 = np.zeros(n)
    cdef double[::1] k4 = np.zeros(n)
    cdef double[::1] A = np.zeros(m * n)
    cdef double dt = seg_dt / steps
    cdef double r2 = escape_radius * escape_radius
    cdef double nrm
    cdef Py_ssize_t seg, sub, ax, s = 0
    cdef int bad = -1
    for ax in range(n):
        st[0, ax] = x[ax]
    nrm = 0.0
    for ax in range(n):
        nrm += x[ax] * x[ax]
    if not isfinite(nrm) or nrm > r2:
        return states, 0
    with nogil:
        for seg in range(N):
            for sub in range(steps):
                _rhs(f, c, cf, e, m, n, &x[0], &H[seg, 0], &A[0], &k1[0])
                for ax in range(n):
                    tmp[ax] = x[ax] + 0.5 * dt * k1[ax]
                _rhs(f, c, cf, e, m, n, &tmp[0], &H[seg, 0], &A[0], &k2[0])
                for ax in range(n):
                    tmp[ax] = x[ax] + 0.5 * dt * k2[ax]
                _rhs(f, c, cf, e, m, n, &tmp[0], &H[seg, 0], &A[0], &k3[0])
                for ax in range(n):
                    tmp[ax] = x[ax] + dt * k3[ax]
                _rhs(f, c, cf, e, m, n, &tmp[0], &H[seg, 0], &A[0], &k4[0])
                nrm = 0.0
                for ax in range(n):
                    x[ax] = x[ax] + (dt / 6.0) * (k1[ax] + 2.0 * k2[ax] + 2.0 * k3[ax] + k4[ax])
                    nrm += x[ax] * x[ax]
                s += 1
                for ax in range(n):
                    st[s, ax] = x[ax]
                if not isfinite(nrm) or nrm > r2:
                    bad = <int>s
                    break
            if bad >= 0:
                break
    return states, bad


cdef int _solve(double* M, double* b, int k) noexcept nogil:
    """Gaussian elimination with partial pivoting on a k x k row-major system.
    Overwrites ``b`` with the solution; returns 0 if singular."""
    cdef int i, j, r, piv
    cdef double best, t, fac
    for i in range(k):
        piv = i
        best = fabs(M[i * k + i])
        for r in range(i + 1, k):
            if fabs(M[r * k + i]) > best:
                best = fabs(M[r * k + i])
                piv = r
        if best <= 1e-300:
            return 0
        if piv != i:
            for j in range(k):
                t = M[i * k + j]
                M[i * k + j] = M[piv * k + j]
                M[piv * k + j] = t
            t = b[i]
            b[i] = b[piv]
            b[piv] = t
        for r in range(i + 1, k):
            fac = M[r * k + i] / M[i * k + i]
            if fac != 0.0:
                for j in range(i, k):
                    M[r * k + j] -= fac * M[i * k + j]
                b[r] -= fac * b[i]
    for i in range(k - 1, -1, -1):
        t = b[i]
        for j in range(i + 1, k):
            t -= M[i * k + j] * b[j]
        b[i] = t / M[i * k + i]
    return 1


cdef int _det_ok(double* M, int k, double thresh) noexcept nogil:
    """Return 1 if |det M| > thresh (M is destroyed)."""
    cdef int i, j, r, piv
    cdef double best, t, fac, det = 1.0
    for i in range(k):
        piv = i
        best = fabs(M[i * k + i])
        for r in range(i + 1, k):
            if fabs(M[r * k + i]) > best:
                best = fabs(M[r * k + i])
                piv = r
        if best == 0.0:
            return 0
        if piv != i:
            for j in range(k):
                t = M[i * k + j]
                M[i * k + j] = M[piv * k + j]
                M[piv * k + j] = t
        det *= M[i * k + i]
        for r in range(i + 1, k):
            fac = M[r * k + i] / M[i * k + i]
            for j in range(i, k):
                M[r * k + j] -= fac * M[i * k + j]
    return 1 if fabs(det) > thresh else 0


def lattice_edges(field, comp, coef, exp, int m, int n, origin, spacing, counts,
                  free_axes, dep_axes, offsets, double tol):
    if m > MAXM or n > MAXM:
        raise ValueError("lattice_edges supports at most 16 fields/axes")
    cdef const int[::1] f = field
    cdef const int[::1] c = comp
    cdef const double[::1] cf = coef
    cdef const int[:, ::1] e = exp
    cdef double[::1] org = np.ascontiguousarray(origin, dtype=np.float64)
    cdef double[::1] sp = np.ascontiguousarray(spacing, dtype=np.float64)
    cdef cnp.int64_t[::1] cnt = np.ascontiguousarray(counts, dtype=np.int64)
    cdef cnp.int64_t[::1] fa = np.ascontiguousarray(free_axes, dtype=np.int64)
    cdef cnp.int64_t[::1] da = np.ascontiguousarray(dep_axes, dtype=np.int64)
    cdef cnp.int64_t[:, ::1] offs = np.ascontiguousarray(offsets, dtype=np.int64).reshape(-1, fa.shape[0])
    cdef int nf = fa.shape[0], nd = da.shape[0]
    cdef Py_ssize_t K = offs.shape[0]
    cdef cnp.int64_t[::1] strides = np.ones(n, dtype=np.int64)
    cdef Py_ssize_t ax
    for ax in range(n - 2, -1, -1):
        strides[ax] = strides[ax + 1] * cnt[ax + 1]
    cdef cnp.int64_t total = strides[0] * cnt[0]
    cdef vector[cnp.int64_t] vs, vd
    cdef vector[double] vw
    cdef cnp.int64_t node, rem, qnode
    cdef cnp.int64_t pidx[MAXM]
    cdef cnp.int64_t qidx[MAXM]
    cdef double p[MAXM]
    cdef double mid[MAXM]
    cdef double v[MAXM]
    cdef double vdep[MAXM]
    cdef double A[MAXM * MAXM]
    cdef double M[MAXM * MAXM]
    cdef double h[MAXM]
    cdef double b[MAXM]
    cdef Py_ssize_t kk, i, j, l, it
    cdef int ok
    cdef double acc, vn, rn, wt
    with nogil:
        for node in range(total):
            rem = node
            for ax in range(n):
                pidx[ax] = rem // strides[ax]
                rem = rem - pidx[ax] * strides[ax]
                p[ax] = org[ax] + pidx[ax] * sp[ax]
            for kk in range(K):
                ok = 1
                for ax in range(n):
                    qidx[ax] = pidx[ax]
                    v[ax] = 0.0
                for i in range(nf):
                    ax = fa[i]
                    qidx[ax] = pidx[ax] + offs[kk, i]
                    if qidx[ax] < 0 or qidx[ax] >= cnt[ax]:
                        ok = 0
                        break
                    v[ax] = offs[kk, i] * sp[ax]
                if not ok:
                    continue
                for i in range(nd):
                    vdep[i] = 0.0
                for it in range(2):
                    for ax in range(n):
                        mid[ax] = p[ax] + 0.5 * v[ax]
                    for i in range(nd):
                        mid[da[i]] = p[da[i]] + 0.5 * vdep[i]
                    _coeffs(f, c, cf, e, m, n, mid, A)
                    # solve A_f^T h = v_f
                    for i in range(m):
                        for j in range(nf):
                            M[j * m + i] = A[i * n + fa[j]]
                    for j in range(nf):
                        h[j] = v[fa[j]]
                    if not _solve(M, h, m):
                        ok = 0
                        break
                    if nd == 0:
                        break
                    for l in range(nd):
                        acc = 0.0
                        for i in range(m):
                            acc += h[i] * A[i * n + da[l]]
                        vdep[l] = acc
                if not ok:
                    continue
                for l in range(nd):
                    ax = da[l]
                    rem = <cnp.int64_t>cround(vdep[l] / sp[ax])
                    qidx[ax] = pidx[ax] + rem
                    if qidx[ax] < 0 or qidx[ax] >= cnt[ax]:
                        ok = 0
                        break
                    v[ax] = rem * sp[ax]
                if not ok:
                    continue
                for ax in range(n):
                    mid[ax] = p[ax] + 0.5 * v[ax]
                _coeffs(f, c, cf, e, m, n, mid, A)
                for i in range(m):
                    acc = 0.0
                    for ax in range(n):
                        acc += A[i * n + ax] * v[ax]
                    b[i] = acc
                    for j in range(m):
                        acc = 0.0
                        for ax in range(n):
                            acc += A[i * n + ax] * A[j * n + ax]
                        M[i * m + j] = acc
                if not _solve(M, b, m):
                    continue
                vn = 0.0
                rn = 0.0
                for ax in range(n):
                    acc = v[ax]
                    for i in range(m):
                        acc -= b[i] * A[i * n + ax]
                    rn += acc * acc
                    vn += v[ax] * v[ax]
                if sqrt(rn) > tol * sqrt(vn):
                    continue
                wt = 0.0
                for i in range(m):
                    wt += b[i] * b[i]
                qnode = 0
                for ax in range(n):
                    qnode += qidx[ax] * strides[ax]
                vs.push_back(node)
                vd.push_back(qnode)
                vw.push_back(sqrt(wt))
    cdef Py_ssize_t E = vs.size()
    src = np.empty(E, dtype=np.int64)
    dst = np.empty(E, dtype=np.int64)
    w = np.empty(E, dtype=np.float64)
    cdef cnp.int64_t[::1] sv = src
    cdef cnp.int64_t[::1] dv = dst
    cdef double[::1] wv = w
    for i in range(E):
        sv[i] = vs[i]
        dv[i] = vd[i]
        wv[i] = vw[i]
    return src, dst, w


def dijkstra(indptr, indices, weights, cnp.int64_t source, cnp.int64_t target, double cutoff):
    cdef const cnp.int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const cnp.int64_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef const double[::1] wt = np.ascontiguousarray(weights, dtype=np.float64)
    cdef Py_ssize_t N = ip.shape[0] - 1
    dist = np.full(N, np.inf)
    pred = np.full(N, -1, dtype=np.int64)
    done = np.zeros(N, dtype=np.uint8)
    cdef double[::1] dv = dist
    cdef cnp.int64_t[::1] pv = pred
    cdef unsigned char[::1] fin = done
    cdef priority_queue[HeapItem] heap
    cdef HeapItem top
    cdef cnp.int64_t u, v, eidx
    cdef double d, nd
    dv[source] = 0.0
    with nogil:
        heap.push(HeapItem(-0.0, source))
        while not heap.empty():
            top = heap.top()
            heap.pop()
            d = -top.first
            u = top.second
            if fin[u]:
                continue
            fin[u] = 1
            if u == target:
                break
            for eidx in range(ip[u], ip[u + 1]):
                v = ix[eidx]
                nd = d + wt[eidx]
                if nd <= cutoff and nd < dv[v]:
                    dv[v] = nd
                    pv[v] = u
                    heap.push(HeapItem(-nd, v))
    return dist, pred


def bounded_balls(indptr, indices, weights, sources, cutoffs):
    cdef const cnp.int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef const cnp.int64_t[::1] ix = np.ascontiguousarray(indices, dtype=np.int64)
    cdef const double[::1] wt = np.ascontiguousarray(weights, dtype=np.float64)
    cdef const cnp.int64_t[::1] src = np.ascontiguousarray(sources, dtype=np.int64)
    cdef const double[::1] cut = np.ascontiguousarray(cutoffs, dtype=np.float64)
    cdef Py_ssize_t N = ip.shape[0] - 1, S = src.shape[0], s, t
    cdef double[::1] best = np.full(N, np.inf)
    cdef unsigned char[::1] fin = np.zeros(N, dtype=np.uint8)
    cdef vector[cnp.int64_t] touched
    cdef vector[cnp.int64_t] settled
    cdef vector[cnp.int64_t] out_nodes
    cdef vector[double] out_d
    cdef vector[cnp.int64_t] out_ptr
    cdef priority_queue[HeapItem] heap
    cdef HeapItem top
    cdef cnp.int64_t u, v, eidx
    cdef double d, nd, cmax
    out_ptr.push_back(0)
    with nogil:
        for s in range(S):
            cmax = cut[s]
            touched.clear()
            settled.clear()
            best[src[s]] = 0.0
            touched.push_back(src[s])
            heap.push(HeapItem(-0.0, src[s]))
            while not heap.empty():
                top = heap.top()
                heap.pop()
                d = -top.first
                u = top.second
                if fin[u]:
                    continue
                fin[u] = 1
                settled.push_back(u)
                for eidx in range(ip[u], ip[u + 1]):
                    v = ix[eidx]
                    nd = d + wt[eidx]
                    if nd <= cmax and nd < best[v]:
                        if best[v] == INFINITY:
                            touched.push_back(v)
                        best[v] = nd
                        heap.push(HeapItem(-nd, v))
            _sort_int64(settled)
            for t in range(<Py_ssize_t>settled.size()):
                out_nodes.push_back(settled[t])
                out_d.push_back(best[settled[t]])
            out_ptr.push_back(out_nodes.size())
            for t in range(<Py_ssize_t>touched.size()):
                best[touched[t]] = INFINITY
                fin[touched[t]] = 0
    ptr = np.empty(out_ptr.size(), dtype=np.int64)
    nodes = np.empty(out_nodes.size(), dtype=np.int64)
    dists = np.empty(out_d.size(), dtype=np.float64)
    cdef cnp.int64_t[::1] pv = ptr
    cdef cnp.int64_t[::1] nv = nodes
    cdef double[::1] ddv = dists
    for t in range(<Py_ssize_t>out_ptr.size()):
        pv[t] = out_ptr[t]
    for t in range(<Py_ssize_t>out_nodes.size()):
        nv[t] = out_nodes[t]
        ddv[t] = out_d[t]
    return ptr, nodes, dists


cdef extern from "<algorithm>" namespace "std" nogil:
    void sort[Iter](Iter first, Iter last)


cdef inline void _sort_int64(vector[cnp.int64_t]& vec) noexcept nogil:
    sort(vec.begin(), vec.end())
