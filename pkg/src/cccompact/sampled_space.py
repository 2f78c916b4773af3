"""Finite weighted samples of a metric measure space.

A :class:`SampledCompact` pairs points and positive weights with a metric
accessor that can answer ball queries.  Balls are closed throughout.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
from scipy.spatial import cKDTree

from .lattice import LatticeGraph, build_graph


class Metric:
    """Distance accessor on sample indices ``0..M-1``."""

    def balls(self, centers: np.ndarray, radii: np.ndarray) -> List[Tuple[np.ndarray, np.ndarray]]:
        """For each center: sorted sample indices within the radius and their distances."""
        raise NotImplementedError

    def dist(self, a: int, b: int) -> float:
        return float(self.distances(a, np.array([b]))[0])

    def distances(self, source: int, targets) -> np.ndarray:
        """Distances from ``source`` to each target (``inf`` if unreachable)."""
        idx, d = self.balls(np.array([source]), np.array([math.inf]))[0]
        targets = np.asarray(targets, dtype=np.int64)
        k = np.minimum(np.searchsorted(idx, targets), max(idx.size - 1, 0))
        hit = (idx.size > 0) & (idx[k] == targets)
        return np.where(hit, d[k], math.inf)

    def balls_csr(self, centers, radii):
        """All balls at once as CSR ``(ptr, idx, dists)``, indices sorted per ball."""
        out = self.balls(np.asarray(centers, dtype=np.int64), radii)
        ptr = np.zeros(len(out) + 1, dtype=np.int64)
        np.cumsum([o[0].size for o in out], out=ptr[1:])
        if not out:
            return ptr, np.zeros(0, dtype=np.int64), np.zeros(0)
        return ptr, np.concatenate([o[0] for o in out]), np.concatenate([o[1] for o in out])


class EuclideanMetric(Metric):
    def __init__(self, points: np.ndarray):
        self.points = np.asarray(points, dtype=np.float64)
        self.tree = cKDTree(self.points)

    def balls(self, centers, radii):
        out = []
        for c, r in zip(np.asarray(centers).reshape(-1), np.broadcast_to(radii, np.shape(centers))):
            if math.isinf(r):
                idx = np.arange(len(self.points))
            else:
                # tiny relative slack, then exact filtering, keeps the ball closed
                idx = np.array(sorted(self.tree.query_ball_point(self.points[c], r * (1 + 1e-12) + 1e-15)),
                               dtype=np.int64)
            d = np.linalg.norm(self.points[idx] - self.points[c], axis=1)
            keep = d <= r
            out.append((idx[keep], d[keep]))
        return out

    def dist(self, a, b):
        return float(np.linalg.norm(self.points[a] - self.points[b]))

    def distances(self, source, targets):
        return np.linalg.norm(self.points[np.asarray(targets)] - self.points[source], axis=1)


class GraphMetric(Metric):
    """Graph distance restricted to a subset of lattice nodes.

    Paths may leave the subset; only ball membership is restricted.
    """

    def __init__(self, graph: LatticeGraph, nodes: np.ndarray):
        self.graph = graph
        self.nodes = np.asarray(nodes, dtype=np.int64)
        self.lookup = np.full(graph.num_nodes, -1, dtype=np.int64)
        self.lookup[self.nodes] = np.arange(self.nodes.size)

    def balls(self, centers, radii):
        centers = np.asarray(centers, dtype=np.int64).reshape(-1)
        radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), centers.shape)
        ptr, nodes, dists = self.graph.balls(self.nodes[centers], radii)
        out = []
        for s in range(centers.size):
            nd = nodes[ptr[s]:ptr[s + 1]]
            dd = dists[ptr[s]:ptr[s + 1]]
            loc = self.lookup[nd]
            keep = loc >= 0
            loc, dd = loc[keep], dd[keep]
            order = np.argsort(loc, kind="stable")
            out.append((loc[order], dd[order]))
        return out

    def balls_csr(self, centers, radii):
        centers = np.asarray(centers, dtype=np.int64).reshape(-1)
        radii = np.broadcast_to(np.asarray(radii, dtype=np.float64), centers.shape)
        ptr, nodes, dists = self.graph.balls(self.nodes[centers], radii)
        loc = self.lookup[nodes]
        keep = loc >= 0
        owner = np.repeat(np.arange(centers.size), np.diff(ptr))[keep]
        loc, dists = loc[keep], dists[keep]
        # graph balls come sorted by node id and the lookup is monotone on sorted nodes
        if not np.all(np.diff(self.nodes) > 0):
            order = np.lexsort((loc, owner))
            owner, loc, dists = owner[order], loc[order], dists[order]
        out = np.zeros(centers.size + 1, dtype=np.int64)
        np.cumsum(np.bincount(owner, minlength=centers.size), out=out[1:])
        return out, loc, dists

    def distances(self, source, targets):
        d = self.graph.distances_from(int(self.nodes[source]))
        return d[self.nodes[np.asarray(targets, dtype=np.int64)]]


class CallableMetric(Metric):
    """Metric from a pairwise callable ``d(a, b)``; O(M) per ball."""

    def __init__(self, fn: Callable[[int, int], float], M: int):
        self.fn = fn
        self.M = M

    def balls(self, centers, radii):
        out = []
        for c, r in zip(np.asarray(centers).reshape(-1), np.broadcast_to(radii, np.shape(centers))):
            d = np.array([self.fn(int(c), b) for b in range(self.M)])
            idx = np.nonzero(d <= r)[0]
            out.append((idx, d[idx]))
        return out

    def dist(self, a, b):
        return float(self.fn(int(a), int(b)))

    def distances(self, source, targets):
        return np.array([self.fn(int(source), int(b)) for b in np.asarray(targets)], dtype=np.float64)


@dataclass
class SampledCompact:
    points: np.ndarray
    weights: np.ndarray
    metric: Metric
    name: str = "K"
    #: flat grid-cell index of each sample point, when built from a grid
    cell_index: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        self.weights = np.asarray(self.weights, dtype=np.float64).reshape(-1)
        if self.points.shape[0] != self.weights.shape[0]:
            raise ValueError("points and weights differ in length")
        if not np.all(self.weights > 0) or not np.all(np.isfinite(self.weights)):
            raise ValueError("weights must be positive and finite")

    @property
    def size(self) -> int:
        return self.weights.shape[0]

    @property
    def total_mass(self) -> float:
        return float(self.weights.sum())

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        n = self.points.shape[1]
        w.writerow([f"x{k + 1}" for k in range(n)] + ["weight"])
        for p, wt in zip(self.points, self.weights):
            w.writerow([repr(float(v)) for v in p] + [repr(float(wt))])
        return buf.getvalue()

    @staticmethod
    def read_csv(text: str):
        rows = list(csv.reader(io.StringIO(text)))
        data = np.array([[float(v) for v in r] for r in rows[1:]])
        return data[:, :-1], data[:, -1]


def euclidean_space(points, weights=None, name: str = "K") -> SampledCompact:
    points = np.asarray(points, dtype=np.float64)
    if points.ndim == 1:
        points = points[:, None]
    w = np.ones(len(points)) if weights is None else weights
    return SampledCompact(points, w, EuclideanMetric(points), name)


def grid_space(graph: LatticeGraph, box, name: str = "K") -> SampledCompact:
    """Lattice nodes of ``graph`` inside ``box`` with cell-volume weights."""
    nodes = graph.nodes_in_box(box)
    vol = float(np.prod(graph.spacing))
    return SampledCompact(graph.coords(nodes), np.full(nodes.size, vol),
                          GraphMetric(graph, nodes), name, cell_index=nodes)


def lattice_space(graph: LatticeGraph, name: str = "K") -> SampledCompact:
    """Every node of ``graph``; sample index equals the row-major node id."""
    return grid_space(graph, graph.box, name)


class SpaceSequence:
    """The limit sample ``(K, d, lambda)`` together with ``(K, d_j, lambda)`` for
    ``j = 1..J``; all members share points and weights."""

    def __init__(self, limit: SampledCompact, member: Callable[[int], SampledCompact], J: int):
        self.limit = limit
        self._member = member
        self.J = int(J)
        self._cache: dict = {}

    def member(self, j: int) -> SampledCompact:
        if not 1 <= j <= self.J:
            raise IndexError(f"member {j} outside 1..{self.J}")
        if j not in self._cache:
            sp = self._member(j)
            if sp.size != self.limit.size:
                raise ValueError("members must share the sample of the limit space")
            self._cache[j] = sp
        return self._cache[j]

    @classmethod
    def constant(cls, space: SampledCompact, J: int) -> "SpaceSequence":
        return cls(space, lambda j: space, J)

    @classmethod
    def from_lattices(cls, seq, box, h, neighbor_radius: int = 3, J: Optional[int] = None) -> "SpaceSequence":
        """Lattice graph spaces of ``seq.limit`` and of each member on one box.

        ``seq`` is a :class:`~cccompact.vector_fields.FamilySequence`; member
        graphs are built lazily and cached.
        """
        limit = lattice_space(build_graph(seq.limit, box, h, neighbor_radius))
        J = seq.j_max if J is None else J
        return cls(limit, lambda j: lattice_space(build_graph(seq.member(j), box, h, neighbor_radius)), J)

    @property
    def graph(self) -> Optional[LatticeGraph]:
        m = self.limit.metric
        return m.graph if isinstance(m, GraphMetric) else None


# -- operations ------------------------------------------------------------------------

def ball(space: SampledCompact, center: int, r: float) -> Tuple[np.ndarray, float]:
    if not r > 0:
        raise ValueError("radius must be > 0")
    idx, _ = space.metric.balls(np.array([center]), np.array([r]))[0]
    return idx, float(space.weights[idx].sum())


def ball_mean(space: SampledCompact, u, center: int, r: float) -> float:
    idx, mass = ball(space, center, r)
    if mass <= 0:
        raise ValueError("empty ball")
    u = np.asarray(u, dtype=np.float64)
    w = space.weights[idx]
    return float(np.dot(w, u[idx]) / w.sum())


@dataclass
class CoveringResult:
    centers: np.ndarray
    radii: np.ndarray
    disjoint: bool
    covered: bool
    #: min over center pairs of d(x_a, x_b) / (r_a + r_b)  (> 1 when disjoint)
    separation: float
    #: max over points of min_l d(p, x_l) / r_l  (<= 5 when covered)
    cover_ratio: float
    meta: dict = field(default_factory=dict)

    def to_json(self) -> str:
        return json.dumps({
            "centers": self.centers.tolist(), "radii": self.radii.tolist(),
            "certificates": {"disjoint": self.disjoint, "covered": self.covered,
                             "separation": self.separation, "cover_ratio": self.cover_ratio},
        })


def greedy_order(weights: np.ndarray) -> np.ndarray:
    """Largest weight first, ties broken by lowest index."""
    return np.lexsort((np.arange(weights.size), -weights))


def five_r_covering(space: SampledCompact, r_max: float,
                    radius_rule: Optional[Callable[[int], float]] = None,
                    candidates: Optional[np.ndarray] = None,
                    targets: Optional[np.ndarray] = None) -> CoveringResult:
    """Greedy disjoint balls whose 5-fold enlargements cover the sample.

    Points are visited by decreasing weight (lowest index on ties); a point
    becomes a center unless its ball would meet an accepted ball.  Both
    certificates are then verified on the sample.  ``candidates`` restricts
    the admissible centers (visited in the greedy order); the coverage
    certificate is checked on ``targets``, which defaults to the candidates.
    """
    if not r_max > 0:
        raise ValueError("r_max must be > 0")
    rule = radius_rule or (lambda i: 0.5 * r_max)
    if candidates is None:
        order = greedy_order(space.weights)
    else:
        cand = np.asarray(candidates, dtype=np.int64)
        order = cand[greedy_order(space.weights[cand])]
        if targets is None:
            targets = cand
    centers: List[int] = []
    radii: List[float] = []
    constant = radius_rule is None
    if constant:
        r = 0.5 * r_max
        blocked = np.zeros(space.size, dtype=bool)
        for c in order:
            if blocked[c]:
                continue
            centers.append(int(c))
            radii.append(r)
            idx, d = space.metric.balls(np.array([c]), np.array([2 * r]))[0]
            # strict disjointness: block only points with d <= 2r
            blocked[idx] = True
    else:
        for c in order:
            rc = float(rule(int(c)))
            if not (0 < rc < r_max):
                raise ValueError("radius rule must return radii in (0, r_max)")
            if centers:
                reach = rc + max(radii)
                idx, d = space.metric.balls(np.array([c]), np.array([reach]))[0]
                hit = False
                pos = {ci: k for k, ci in enumerate(centers)}
                for i, di in zip(idx, d):
                    k = pos.get(int(i))
                    if k is not None and di <= rc + radii[k]:
                        hit = True
                        break
                if hit:
                    continue
            centers.append(int(c))
            radii.append(rc)
    C = np.array(centers, dtype=np.int64)
    Rr = np.array(radii, dtype=np.float64)
    sep, cov = verify_covering(space, C, Rr, targets)
    return CoveringResult(C, Rr, sep > 1.0, cov <= 5.0, sep, cov)


def verify_covering(space: SampledCompact, centers: np.ndarray, radii: np.ndarray,
                    targets: Optional[np.ndarray] = None) -> Tuple[float, float]:
    """Exact separation and coverage ratios on the sample (or on ``targets``)."""
    if centers.size == 0:
        return math.inf, math.inf
    pos = np.full(space.size, -1, dtype=np.int64)
    pos[centers] = np.arange(centers.size)
    ptr, idx, d = space.metric.balls_csr(centers, radii + float(radii.max()))
    owner = np.repeat(np.arange(centers.size), np.diff(ptr))
    other = pos[idx]
    hit = (other >= 0) & (other != owner)
    sep = float(np.min(d[hit] / (radii[owner[hit]] + radii[other[hit]]))) if hit.any() else math.inf
    best = np.full(space.size, math.inf)
    ptr, idx, d = space.metric.balls_csr(centers, 5.0 * radii)
    owner = np.repeat(np.arange(centers.size), np.diff(ptr))
    np.minimum.at(best, idx, d / radii[owner])
    if targets is not None:
        best = best[np.asarray(targets, dtype=np.int64)]
    return sep, float(best.max()) if best.size else 0.0


def doubling_estimate(space: SampledCompact, centers: Sequence[int], radii: Sequence[float]):
    """``max lambda(B(x, 2r)) / lambda(B(x, r))`` over the requested pairs.

    Returns ``(max_ratio, table)`` with rows ``(center, r, inner, outer, ratio)``.
    """
    centers = np.asarray(centers, dtype=np.int64)
    table = []
    for r in radii:
        inner = space.metric.balls(centers, np.full(centers.size, r))
        outer = space.metric.balls(centers, np.full(centers.size, 2 * r))
        for c, (i1, _), (i2, _) in zip(centers, inner, outer):
            m1 = float(space.weights[i1].sum())
            m2 = float(space.weights[i2].sum())
            if m1 <= 0:
                raise ValueError(f"empty inner ball at center {c}")
            table.append((int(c), float(r), m1, m2, m2 / m1))
    return max(t[4] for t in table), table
