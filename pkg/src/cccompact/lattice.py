"""Lattice graphs whose shortest paths discretize the subunit-time infimum.

Nodes sit at integer multiples of the per-axis spacing inside a box.  For each
node and each primitive free-axis offset the dependent coordinates of the
neighbour are solved from the frozen midpoint coefficients and rounded to the
lattice; the edge is kept when the rounded displacement is (nearly)
horizontal at the midpoint, and weighted by the Euclidean norm of the
least-squares control.  Both directions of every edge get the same weight,
so graph distances form an exact metric on the nodes.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np

from ._kernels import _pure
from ._kernels import backend as _kern
from .vector_fields import VectorFieldFamily


class DisconnectedError(RuntimeError):
    """Two lattice nodes are not joined by any graph path."""


def primitive_offsets(m: int, radius: int) -> np.ndarray:
    """Lexicographically positive integer vectors in ``[-radius, radius]^m``
    with coprime entries.  Non-primitive offsets repeat a shorter edge."""
    if radius < 1:
        raise ValueError("neighbour radius must be >= 1")
    rng = np.arange(-radius, radius + 1)
    grids = np.meshgrid(*([rng] * m), indexing="ij")
    offs = np.stack([g.reshape(-1) for g in grids], axis=1)
    keep = []
    for o in offs:
        nz = o[o != 0]
        if nz.size == 0 or nz[0] < 0:
            continue
        if np.gcd.reduce(np.abs(nz)) != 1:
            continue
        keep.append(o)
    return np.array(keep, dtype=np.int64).reshape(-1, m)


def snap_box(box, spacing) -> Tuple[np.ndarray, np.ndarray]:
    """Lattice origin and counts covering ``box`` with nodes at multiples of spacing."""
    box = np.asarray(box, dtype=np.float64).reshape(-1, 2)
    spacing = np.asarray(spacing, dtype=np.float64)
    lo = np.floor(box[:, 0] / spacing + 1e-9)
    hi = np.ceil(box[:, 1] / spacing - 1e-9)
    return lo * spacing, (hi - lo + 1).astype(np.int64)


@dataclass
class LatticeGraph:
    family: VectorFieldFamily
    origin: np.ndarray
    spacing: np.ndarray
    counts: np.ndarray
    neighbor_radius: int
    tol: float
    indptr: np.ndarray
    indices: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        n = len(self.counts)
        self.strides = np.ones(n, dtype=np.int64)
        for ax in range(n - 2, -1, -1):
            self.strides[ax] = self.strides[ax + 1] * self.counts[ax + 1]

    # -- node bookkeeping -------------------------------------------------
    @property
    def num_nodes(self) -> int:
        return int(np.prod(self.counts))

    @property
    def num_edges(self) -> int:
        return int(self.indices.shape[0])

    @property
    def box(self) -> np.ndarray:
        return np.stack([self.origin, self.origin + (self.counts - 1) * self.spacing], axis=1)

    def multi_index(self, nodes) -> np.ndarray:
        nodes = np.asarray(nodes, dtype=np.int64)
        return (nodes[..., None] // self.strides) % self.counts

    def coords(self, nodes) -> np.ndarray:
        return self.origin + self.multi_index(nodes) * self.spacing

    def all_coords(self) -> np.ndarray:
        return self.coords(np.arange(self.num_nodes))

    def node_of(self, idx) -> np.ndarray:
        idx = np.asarray(idx, dtype=np.int64)
        return (idx * self.strides).sum(axis=-1)

    def nearest_node(self, x) -> int:
        """Node nearest to ``x`` in each coordinate (clamped to the box)."""
        x = np.asarray(x, dtype=np.float64)
        idx = np.rint((x - self.origin) / self.spacing).astype(np.int64)
        idx = np.clip(idx, 0, self.counts - 1)
        return int(self.node_of(idx))

    def nodes_in_box(self, box) -> np.ndarray:
        box = np.asarray(box, dtype=np.float64).reshape(-1, 2)
        lo = np.ceil((box[:, 0] - self.origin) / self.spacing - 1e-9).astype(np.int64)
        hi = np.floor((box[:, 1] - self.origin) / self.spacing + 1e-9).astype(np.int64)
        lo = np.maximum(lo, 0)
        hi = np.minimum(hi, self.counts - 1)
        if np.any(hi < lo):
            return np.zeros(0, dtype=np.int64)
        axes = [np.arange(a, b + 1) for a, b in zip(lo, hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        idx = np.stack([g.reshape(-1) for g in grids], axis=1)
        return np.sort(self.node_of(idx))

    # -- queries ----------------------------------------------------------
    def distances_from(self, source: int, cutoff: float = math.inf) -> np.ndarray:
        dist, _ = _kern.dijkstra(self.indptr, self.indices, self.weights, int(source), -1, float(cutoff))
        return dist

    def shortest(self, s: int, t: int) -> Tuple[float, List[int]]:
        dist, pred = _kern.dijkstra(self.indptr, self.indices, self.weights, int(s), int(t), math.inf)
        d = float(dist[t])
        if not math.isfinite(d):
            raise DisconnectedError(f"nodes {s} and {t} are not connected; refine the lattice "
                                    "or increase the neighbour radius")
        path = [int(t)]
        while path[-1] != s:
            path.append(int(pred[path[-1]]))
        return d, path[::-1]

    def balls(self, sources, radii):
        """Closed graph balls; CSR ``(ptr, nodes, dists)`` with nodes sorted."""
        sources = np.asarray(sources, dtype=np.int64).reshape(-1)
        radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), sources.shape)
        return _kern.bounded_balls(self.indptr, self.indices, self.weights, sources,
                                   np.ascontiguousarray(radii))

    # -- persistence ------------------------------------------------------
    def cache_key(self) -> str:
        return graph_cache_key(self.family, self.box, self.spacing, self.neighbor_radius)

    def save(self, path) -> None:
        meta = {"family": self.family.spec(), "neighbor_radius": self.neighbor_radius,
                "tol": self.tol, "key": self.cache_key()}
        np.savez(path, origin=self.origin, spacing=self.spacing, counts=self.counts,
                 indptr=self.indptr, indices=self.indices, weights=self.weights,
                 meta=np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8))

    @classmethod
    def load(cls, path, family: VectorFieldFamily) -> "LatticeGraph":
        z = np.load(path)
        meta = json.loads(bytes(z["meta"]).decode())
        g = cls(family, z["origin"], z["spacing"], z["counts"], int(meta["neighbor_radius"]),
                float(meta["tol"]), z["indptr"], z["indices"], z["weights"])
        if meta["key"] != g.cache_key():
            raise ValueError("cached graph was built for a different family or lattice")
        return g


def graph_cache_key(family: VectorFieldFamily, box, spacing, radius: int) -> str:
    blob = json.dumps({"family": family.fingerprint(),
                       "box": np.round(np.asarray(box, dtype=float), 12).tolist(),
                       "spacing": np.round(np.asarray(spacing, dtype=float), 15).tolist(),
                       "radius": int(radius)}, sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:20]


def default_tolerance(family: VectorFieldFamily, spacing: np.ndarray) -> float:
    """Sine tolerance covering the rounding of dependent coordinates."""
    if not family.dep_axes:
        return 1e-9
    dep = max(spacing[a] for a in family.dep_axes)
    free = min(spacing[a] for a in family.free_axes)
    return 0.5 * dep / free * 1.01 + 1e-12


def to_csr(src, dst, w, N: int):
    order = np.lexsort((dst, src))
    src, dst, w = src[order], dst[order], w[order]
    indptr = np.zeros(N + 1, dtype=np.int64)
    np.cumsum(np.bincount(src, minlength=N), out=indptr[1:])
    return indptr, np.ascontiguousarray(dst, dtype=np.int64), np.ascontiguousarray(w, dtype=np.float64)


def build_graph(family: VectorFieldFamily, box, spacing, neighbor_radius: int = 3,
                tol: Optional[float] = None) -> LatticeGraph:
    """Lattice graph of ``family`` on ``box``.

    ``spacing`` is either a per-axis array or a scalar ``h`` expanded by
    ``family.lattice_spacing(h)``.
    """
    box = np.asarray(box, dtype=np.float64).reshape(-1, 2)
    if box.shape[0] != family.n:
        raise ValueError(f"box has {box.shape[0]} axes, family lives in R^{family.n}")
    if np.any(box[:, 1] < box[:, 0]):
        raise ValueError("empty box")
    sp = np.asarray(spacing, dtype=np.float64)
    sp = family.lattice_spacing(float(sp)) if sp.ndim == 0 else sp.reshape(family.n)
    if not np.all(np.isfinite(sp)) or np.any(sp <= 0):
        raise ValueError("spacing must be positive and finite")
    origin, counts = snap_box(box, sp)
    if np.prod(counts.astype(float)) > 5e7:
        raise ValueError(f"lattice with {int(np.prod(counts))} nodes is too large")
    tol = default_tolerance(family, sp) if tol is None else float(tol)
    offs = primitive_offsets(family.m, int(neighbor_radius))
    fa = np.array(family.free_axes, dtype=np.int64)
    da = np.array(family.dep_axes, dtype=np.int64)
    if family.polynomial:
        t = family.table
        src, dst, w = _kern.lattice_edges(t.field, t.comp, t.coef, t.exp, t.m, t.n, origin, sp,
                                          counts, fa, da, offs, tol)
    else:
        src, dst, w = _pure.lattice_edges_generic(family.coefficients_many, family.m, family.n,
                                                  origin, sp, counts, fa, da, offs, tol)
    N = int(np.prod(counts))
    keep = w > 0
    src, dst, w = src[keep], dst[keep], w[keep]
    indptr, indices, weights = to_csr(np.concatenate([src, dst]), np.concatenate([dst, src]),
                                      np.concatenate([w, w]), N)
    return LatticeGraph(family, origin, sp, counts, int(neighbor_radius), tol, indptr, indices, weights)


def graph_path_coords(graph: LatticeGraph, path: Sequence[int]) -> np.ndarray:
    return graph.coords(np.asarray(path, dtype=np.int64))
