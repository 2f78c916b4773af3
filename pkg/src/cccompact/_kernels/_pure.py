"""Pure-Python/numpy implementations of the hot kernels.

Every function here has a twin with the same signature in the compiled
``_core`` extension.  Results agree to rounding; tie-breaking in Dijkstra
predecessors may differ.
"""
from __future__ import annotations

import heapq
import math

import numpy as np

BACKEND = "pure"


def eval_coeffs(field, comp, coef, exp, m, n, x):
    x = np.asarray(x, dtype=np.float64)
    out = np.zeros((m, n))
    if len(coef) == 0:
        return out
    vals = coef * np.prod(x[None, :] ** exp, axis=1)
    np.add.at(out, (field, comp), vals)
    return out


def eval_coeffs_many(field, comp, coef, exp, m, n, X):
    X = np.asarray(X, dtype=np.float64)
    P = X.shape[0]
    out = np.zeros((P, m, n))
    for r in range(len(coef)):
        term = np.full(P, coef[r])
        for ax in range(n):
            e = exp[r, ax]
            if e:
                term = term * X[:, ax] ** e
        out[:, field[r], comp[r]] += term
    return out


def rk4_path(field, comp, coef, exp, m, n, x0, controls, seg_dt, steps, escape_radius):
    """Classical RK4 with ``steps`` fixed sub-steps per constant-control segment.

    Returns ``(states, bad)`` with ``bad`` the first state index outside the
    Euclidean ball of ``escape_radius`` (or non-finite), else -1.  States after
    ``bad`` are left as NaN.
    """
    def coeffs(x):
        return eval_coeffs(field, comp, coef, exp, m, n, x)

    return rk4_generic(coeffs, n, x0, controls, seg_dt, steps, escape_radius)


def rk4_generic(coeffs, n, x0, controls, seg_dt, steps, escape_radius):
    """``rk4_path`` for an arbitrary coefficient evaluator ``coeffs(x) -> (m, n)``."""
    controls = np.asarray(controls, dtype=np.float64)
    N = controls.shape[0]
    S = N * steps
    states = np.full((S + 1, n), np.nan)
    x = np.array(x0, dtype=np.float64)
    states[0] = x
    dt = seg_dt / steps
    r2 = escape_radius * escape_radius
    if not np.all(np.isfinite(x)) or x @ x > r2:
        return states, 0
    s = 0
    for k in range(N):
        h = controls[k]
        for _ in range(steps):
            k1 = coeffs(x).T @ h
            k2 = coeffs(x + 0.5 * dt * k1).T @ h
            k3 = coeffs(x + 0.5 * dt * k2).T @ h
            k4 = coeffs(x + dt * k3).T @ h
            x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            s += 1
            states[s] = x
            if not np.all(np.isfinite(x)) or x @ x > r2:
                return states, s
    return states, -1


def lattice_edges(field, comp, coef, exp, m, n, origin, spacing, counts,
                  free_axes, dep_axes, offsets, tol):
    """Frozen-coefficient edges of a lattice graph for the given free-axis offsets.

    For every node and offset the dependent-axis displacement is solved from
    the midpoint coefficients, rounded to the lattice, and the edge is kept
    when the angle between the lattice displacement and the horizontal span at
    the midpoint has sine at most ``tol``.  Returns COO arrays ``(src, dst, w)``.
    """
    def coeffs_many(X):
        return eval_coeffs_many(field, comp, coef, exp, m, n, X)

    return lattice_edges_generic(coeffs_many, m, n, origin, spacing, counts,
                                 free_axes, dep_axes, offsets, tol)


def lattice_edges_generic(coeffs_many, m, n, origin, spacing, counts,
                          free_axes, dep_axes, offsets, tol):
    """``lattice_edges`` for an evaluator ``coeffs_many(X) -> (P, m, n)``."""
    origin = np.asarray(origin, dtype=np.float64)
    spacing = np.asarray(spacing, dtype=np.float64)
    counts = np.asarray(counts, dtype=np.int64)
    free_axes = np.asarray(free_axes, dtype=np.int64)
    dep_axes = np.asarray(dep_axes, dtype=np.int64)
    strides = np.ones(n, dtype=np.int64)
    for ax in range(n - 2, -1, -1):
        strides[ax] = strides[ax + 1] * counts[ax + 1]
    idx = np.indices(tuple(counts)).reshape(n, -1).T
    pts = origin + idx * spacing
    srcs, dsts, ws = [], [], []
    for off in np.asarray(offsets, dtype=np.int64):
        qidx = idx.copy()
        qidx[:, free_axes] += off
        ok = np.all((qidx[:, free_axes] >= 0) & (qidx[:, free_axes] < counts[free_axes]), axis=1)
        sel = np.nonzero(ok)[0]
        if sel.size == 0:
            continue
        p = pts[sel]
        vf = off * spacing[free_axes]
        mid = p.copy()
        mid[:, free_axes] += 0.5 * vf
        vd = np.zeros((sel.size, len(dep_axes)))
        good = np.ones(sel.size, dtype=bool)
        for _ in range(2):
            if len(dep_axes):
                mid[:, dep_axes] = p[:, dep_axes] + 0.5 * vd
            A = coeffs_many(mid)
            Af = A[:, :, free_axes]
            det = np.linalg.det(Af)
            good = np.abs(det) > 1e-14
            Af[~good] = np.eye(m)
            h = np.linalg.solve(np.transpose(Af, (0, 2, 1)), np.broadcast_to(vf, (sel.size, m))[..., None])[..., 0]
            if len(dep_axes) == 0:
                break
            vd = np.einsum("pi,pid->pd", h, A[:, :, dep_axes])
        kd = np.rint(vd / spacing[dep_axes]).astype(np.int64) if len(dep_axes) else np.zeros((sel.size, 0), np.int64)
        qidx_sel = qidx[sel]
        if len(dep_axes):
            qidx_sel[:, dep_axes] += kd
            good &= np.all((qidx_sel[:, dep_axes] >= 0) & (qidx_sel[:, dep_axes] < counts[dep_axes]), axis=1)
        v = np.zeros((sel.size, n))
        v[:, free_axes] = vf
        if len(dep_axes):
            v[:, dep_axes] = kd * spacing[dep_axes]
        A = coeffs_many(p + 0.5 * v)
        G = A @ np.transpose(A, (0, 2, 1))
        b = np.einsum("pin,pn->pi", A, v)
        detG = np.linalg.det(G)
        good &= np.abs(detG) > 1e-300
        G[~good] = np.eye(m)
        hs = np.linalg.solve(G, b[..., None])[..., 0]
        res = v - np.einsum("pi,pin->pn", hs, A)
        vn = np.sqrt(np.sum(v * v, axis=1))
        good &= np.sqrt(np.sum(res * res, axis=1)) <= tol * vn
        keep = np.nonzero(good)[0]
        srcs.append((idx[sel[keep]] * strides).sum(axis=1))
        dsts.append((qidx_sel[keep] * strides).sum(axis=1))
        ws.append(np.sqrt(np.sum(hs[keep] ** 2, axis=1)))
    if not srcs:
        z = np.zeros(0, dtype=np.int64)
        return z, z.copy(), np.zeros(0)
    return np.concatenate(srcs), np.concatenate(dsts), np.concatenate(ws)


def dijkstra(indptr, indices, weights, source, target, cutoff):
    """Single-source label-setting shortest paths.

    Stops early once ``target`` (if >= 0) is settled or labels exceed
    ``cutoff``.  Returns ``(dist, pred)``; unreached nodes keep ``inf``/-1.
    """
    N = len(indptr) - 1
    dist = np.full(N, np.inf)
    pred = np.full(N, -1, dtype=np.int64)
    done = np.zeros(N, dtype=bool)
    dist[source] = 0.0
    heap = [(0.0, int(source))]
    while heap:
        d, u = heapq.heappop(heap)
        if done[u]:
            continue
        done[u] = True
        if u == target:
            break
        for e in range(indptr[u], indptr[u + 1]):
            v = indices[e]
            nd = d + weights[e]
            if nd <= cutoff and nd < dist[v]:
                dist[v] = nd
                pred[v] = u
                heapq.heappush(heap, (nd, int(v)))
    return dist, pred


def bounded_balls(indptr, indices, weights, sources, cutoffs):
    """Closed graph balls for many sources at once.

    Returns CSR ``(ptr, nodes, dists)``; the nodes of ball ``s`` are
    ``nodes[ptr[s]:ptr[s+1]]`` sorted by node index.
    """
    ptr = [0]
    all_nodes, all_d = [], []
    for s, cut in zip(sources, cutoffs):
        best = {int(s): 0.0}
        heap = [(0.0, int(s))]
        settled = {}
        while heap:
            d, u = heapq.heappop(heap)
            if u in settled:
                continue
            settled[u] = d
            for e in range(indptr[u], indptr[u + 1]):
                v = int(indices[e])
                nd = d + weights[e]
                if nd <= cut and nd < best.get(v, math.inf):
                    best[v] = nd
                    heapq.heappush(heap, (nd, v))
        keys = sorted(settled)
        all_nodes.extend(keys)
        all_d.extend(settled[k] for k in keys)
        ptr.append(len(all_nodes))
    return (np.array(ptr, dtype=np.int64), np.array(all_nodes, dtype=np.int64),
            np.array(all_d, dtype=np.float64))
