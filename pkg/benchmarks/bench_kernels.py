"""Compiled vs pure-Python kernel timings.

    python3 benchmarks/bench_kernels.py [--repeat 3] [--quick]

Each kernel runs on identical inputs under both backends; the table lists
the best wall time of ``--repeat`` runs, the speed-up and the largest
absolute difference between the two results.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from cccompact._kernels import available_backends
from cccompact.lattice import build_graph, default_tolerance, primitive_offsets, snap_box
from cccompact.vector_fields import heisenberg


def _best(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def cases(quick: bool):
    fam = heisenberg()
    t = fam.table
    tab = (t.field, t.comp, t.coef, t.exp, t.m, t.n)
    rng = np.random.default_rng(0)

    X = rng.uniform(-1, 1, size=(20_000 if quick else 200_000, 3))
    yield "eval_coeffs_many", lambda k: k.eval_coeffs_many(*tab, X), lambda r: r

    ctrl = rng.uniform(-0.7, 0.7, size=(64, 2))
    yield ("rk4_path", lambda k: k.rk4_path(*tab, np.zeros(3), ctrl, 1 / 64, 8, 1e6),
           lambda r: r[0])

    h = 1 / 16 if quick else 1 / 32
    box = np.array([[-0.5, 0.5], [-0.5, 0.5], [-0.05, 0.05]])
    sp = fam.lattice_spacing(h)
    origin, counts = snap_box(box, sp)
    offs = primitive_offsets(2, 2)
    tol = default_tolerance(fam, sp)
    fa = np.array(fam.free_axes, dtype=np.int64)
    da = np.array(fam.dep_axes, dtype=np.int64)

    def sort_edges(r):
        src, dst, w = r
        o = np.lexsort((dst, src))
        return np.concatenate([src[o], dst[o]]).astype(float), w[o]

    yield ("lattice_edges", lambda k: k.lattice_edges(*tab, origin, sp, counts, fa, da, offs, tol),
           sort_edges)

    g = build_graph(fam, box, h, 2)
    src = int(g.nearest_node([0, 0, 0]))
    yield ("dijkstra", lambda k: k.dijkstra(g.indptr, g.indices, g.weights, src, -1, np.inf),
           lambda r: r[0])
    centers = rng.choice(g.num_nodes, size=20 if quick else 100, replace=False).astype(np.int64)
    cut = np.full(centers.size, 0.15)
    yield ("bounded_balls", lambda k: k.bounded_balls(g.indptr, g.indices, g.weights, centers, cut),
           lambda r: r[2])


def _maxdiff(a, b) -> float:
    if isinstance(a, tuple):
        return max(_maxdiff(x, y) for x, y in zip(a, b))
    a, b = np.asarray(a, float), np.asarray(b, float)
    if a.shape != b.shape:
        return np.inf
    both = np.isfinite(a) & np.isfinite(b)
    if np.any(np.isfinite(a) != np.isfinite(b)):
        return np.inf
    return float(np.max(np.abs(a[both] - b[both]), initial=0.0))


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--quick", action="store_true", help="small inputs (smoke run)")
    args = ap.parse_args(argv)
    backends = available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; only the pure backend is available")
    print(f"{'kernel':<18}{'pure [s]':>12}{'compiled [s]':>14}{'speed-up':>10}{'max |diff|':>12}")
    for name, call, key in cases(args.quick):
        tp, rp = _best(lambda: call(backends["pure"]), args.repeat)
        if "compiled" in backends:
            tc, rc = _best(lambda: call(backends["compiled"]), args.repeat)
            diff = _maxdiff(key(rp), key(rc))
            print(f"{name:<18}{tp:>12.4f}{tc:>14.4f}{tp / tc:>10.1f}{diff:>12.2e}")
        else:
            print(f"{name:<18}{tp:>12.4f}{'-':>14}{'-':>10}{'-':>12}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
