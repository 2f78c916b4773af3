"""Grid calculus for functions of bounded X-variation.

Grid functions live on the nodes of a rectangular lattice (one value per
cell, the node being the cell center); every integral is a cell-volume
weighted sum.  Derivatives are central differences, one-sided at a clamped
boundary, so affine data are differentiated exactly.
"""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np

from .sampled_space import SampledCompact, ball
from .vector_fields import FamilySequence, VectorFieldFamily


@dataclass
class GridFunction:
    origin: np.ndarray
    spacing: np.ndarray
    values: np.ndarray
    boundary: str = "clamp"

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(-1)
        self.spacing = np.asarray(self.spacing, dtype=np.float64).reshape(-1)
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != self.origin.size or self.spacing.size != self.origin.size:
            raise ValueError("origin, spacing and values disagree on the dimension")
        if np.any(self.spacing <= 0):
            raise ValueError("grid spacing must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("grid values must be finite")
        if self.boundary not in ("clamp", "periodic"):
            raise ValueError(f"unknown boundary policy {self.boundary!r}")

    @property
    def counts(self):
        return self.values.shape

    @property
    def ndim(self) -> int:
        return self.values.ndim

    @property
    def cell_volume(self) -> float:
        return float(np.prod(self.spacing))

    def axes(self) -> List[np.ndarray]:
        return [o + h * np.arange(c) for o, h, c in zip(self.origin, self.spacing, self.counts)]

    def coords(self) -> np.ndarray:
        """All node coordinates, row-major (last axis fastest)."""
        grids = np.meshgrid(*self.axes(), indexing="ij")
        return np.stack([g.reshape(-1) for g in grids], axis=1)

    def like(self, values) -> "GridFunction":
        return GridFunction(self.origin, self.spacing, values, self.boundary)

    def same_grid(self, other: "GridFunction") -> bool:
        return (self.counts == other.counts and np.allclose(self.origin, other.origin)
                and np.allclose(self.spacing, other.spacing))

    @classmethod
    def from_function(cls, f, origin, spacing, counts, boundary: str = "clamp") -> "GridFunction":
        g = cls(origin, spacing, np.zeros(tuple(int(c) for c in counts)), boundary)
        vals = np.asarray(f(g.coords()), dtype=np.float64).reshape(g.counts)
        return g.like(vals)

    # -- file formats -----------------------------------------------------
    def header(self) -> dict:
        return {"origin": self.origin.tolist(), "spacing": self.spacing.tolist(),
                "counts": list(self.counts), "boundary": self.boundary,
                "dtype": "float64", "byte_order": "little", "layout": "row-major"}

    def save(self, path) -> None:
        """``path.json`` header plus ``path.f64`` little-endian payload."""
        p = Path(path)
        stem = p.with_suffix("") if p.suffix in (".json", ".f64") else p
        stem.with_suffix(".json").write_text(json.dumps(self.header(), indent=1))
        self.values.astype("<f8").tofile(stem.with_suffix(".f64"))

    @classmethod
    def load(cls, path) -> "GridFunction":
        p = Path(path)
        stem = p.with_suffix("") if p.suffix in (".json", ".f64") else p
        h = json.loads(stem.with_suffix(".json").read_text())
        vals = np.fromfile(stem.with_suffix(".f64"), dtype="<f8")
        counts = tuple(int(c) for c in h["counts"])
        if vals.size != int(np.prod(counts)):
            raise ValueError("payload size does not match the header counts")
        return cls(h["origin"], h["spacing"], vals.reshape(counts), h.get("boundary", "clamp"))

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([f"x{k + 1}" for k in range(self.ndim)] + ["u"])
        for p, v in zip(self.coords(), self.values.reshape(-1)):
            w.writerow([repr(float(c)) for c in p] + [repr(float(v))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, boundary: str = "clamp") -> "GridFunction":
        rows = list(csv.reader(io.StringIO(text)))[1:]
        data = np.array([[float(v) for v in r] for r in rows])
        pts, vals = data[:, :-1], data[:, -1]
        axes = [np.unique(pts[:, k]) for k in range(pts.shape[1])]
        counts = tuple(a.size for a in axes)
        if int(np.prod(counts)) != len(rows):
            raise ValueError("CSV rows do not form a full rectangular grid")
        spacing = [a[1] - a[0] if a.size > 1 else 1.0 for a in axes]
        order = np.lexsort(pts.T[::-1])
        return cls([a[0] for a in axes], spacing, vals[order].reshape(counts), boundary)


@dataclass
class TVMeasure:
    mass: np.ndarray
    region: Optional[np.ndarray] = None

    @property
    def total(self) -> float:
        m = self.mass if self.region is None else self.mass[self.region]
        return float(m.sum())

    def of(self, mask) -> float:
        return float(self.mass[np.asarray(mask, dtype=bool)].sum())


def partial(u: GridFunction, axis: int, values: Optional[np.ndarray] = None) -> np.ndarray:
    """Central difference along ``axis`` (one-sided at clamped edges)."""
    v = u.values if values is None else values
    h = u.spacing[axis]
    if v.shape[axis] < 2:
        return np.zeros_like(v)
    if u.boundary == "periodic":
        return (np.roll(v, -1, axis) - np.roll(v, 1, axis)) / (2 * h)
    return np.gradient(v, h, axis=axis, edge_order=1)


def mollified_step(s: np.ndarray) -> np.ndarray:
    """Heaviside step convolved with the bump ``30 s^2 (1-s)^2`` on ``[-1/2, 1/2]``:
    0 for ``s <= -1/2``, 1 for ``s >= 1/2`` and 1/2 at 0."""
    t = np.clip(np.asarray(s, dtype=np.float64) + 0.5, 0.0, 1.0)
    return t * t * t * (t * (6.0 * t - 15.0) + 10.0)


def step_function(width: float, axis: int = 0, offset: float = 0.0):
    """``x -> S((x_axis - offset) / width)``; ``width = 0`` gives the sharp step
    with value 1/2 on the interface."""
    def f(X):
        z = X[:, axis] - offset
        if width == 0:
            return np.where(z > 0, 1.0, np.where(z < 0, 0.0, 0.5))
        return mollified_step(z / width)
    return f


def x_gradient(family: VectorFieldFamily, u: GridFunction) -> List[GridFunction]:
    """``(X_i u)(node) = sum_k a_{i,k}(node) d_k u``."""
    if family.n != u.ndim:
        raise ValueError("grid dimension does not match the family")
    D = np.stack([partial(u, k).reshape(-1) for k in range(u.ndim)], axis=1)
    A = family.coefficients_many(u.coords())
    G = np.einsum("pik,pk->ip", A, D)
    return [u.like(G[i].reshape(u.counts)) for i in range(family.m)]


def total_variation(family: VectorFieldFamily, u: GridFunction, region=None) -> TVMeasure:
    """Per-cell ``|(X_1 u, ..., X_m u)|_2`` times the cell volume."""
    grads = x_gradient(family, u)
    mag = np.sqrt(sum(g.values * g.values for g in grads))
    region = None if region is None else np.asarray(region, dtype=bool).reshape(u.counts)
    return TVMeasure(mag * u.cell_volume, region)


def sample_values(values: np.ndarray, space: SampledCompact) -> np.ndarray:
    """Cell values seen by the sample points of ``space``."""
    flat = np.asarray(values).reshape(-1)
    if space.cell_index is not None:
        return flat[space.cell_index]
    if flat.size != space.size:
        raise ValueError("sample and grid sizes differ and no cell index is attached")
    return flat


def oscillation(space: SampledCompact, u_vals: np.ndarray, center: int, r: float,
                q: float = 1.0) -> float:
    """``||u - u_B||_{L^q(B)}`` for the closed sample ball ``B(center, r)``."""
    idx, mass = ball(space, center, r)
    if mass <= 0:
        raise ValueError("empty ball")
    w = space.weights[idx]
    ub = float(np.dot(w, u_vals[idx]) / w.sum())
    return float(np.dot(w, np.abs(u_vals[idx] - ub) ** q)) ** (1.0 / q)


def quotient_from_values(space: SampledCompact, u_vals: np.ndarray, mu_vals: np.ndarray,
                         center: int, r: float, alpha: float = 2.0, q: float = 1.0,
                         scale: Optional[float] = None) -> float:
    """``||u - u_B||_{L^q(B)} / (scale * mu(alpha B))`` with per-sample ``u`` and
    per-sample masses ``mu``; ``scale`` defaults to ``r``.  0/0 is reported as 0,
    a positive numerator over a zero denominator as ``inf``."""
    num = oscillation(space, u_vals, center, r, q)
    idx2, _ = ball(space, center, alpha * r)
    den = (r if scale is None else scale) * float(mu_vals[idx2].sum())
    if den == 0.0:
        return 0.0 if num <= 1e-14 else math.inf
    return num / den


def poincare_quotient(family: VectorFieldFamily, u: GridFunction, space: SampledCompact,
                      center: int, r: float, alpha: float = 2.0, q: float = 1.0,
                      delta: float = 1.0, mu: Optional[TVMeasure] = None) -> float:
    """``||u - u_B||_{L^q(B)} / (r^delta |D_X u|(alpha B))`` on sample balls.

    ``space`` supplies the balls (its metric should be the CC distance of
    ``family``) and the measure; the variation is computed on the grid of
    ``u`` unless ``mu`` is given.  The Poincare inequality reads
    ``quotient <= C_P``.

    Raises
    ------
    ZeroDivisionError
        If ``u`` oscillates on ``B`` while the variation of ``alpha B`` vanishes.
    """
    if not (r > 0 and alpha >= 1 and q >= 1 and delta > 0):
        raise ValueError("need r > 0, alpha >= 1, q >= 1, delta > 0")
    mu = total_variation(family, u) if mu is None else mu
    val = quotient_from_values(space, sample_values(u.values, space), sample_values(mu.mass, space),
                               center, r, alpha, q, r ** delta)
    if math.isinf(val):
        raise ZeroDivisionError("positive oscillation with zero variation in the dilated ball")
    return val


def adjoint_pairing(family: VectorFieldFamily, u: GridFunction, phi: GridFunction, i: int,
                    margin: int = 2) -> float:
    """``sum_cells u * sum_k d_k(a_{i,k} phi) * vol``; equals ``-sum (X_i u) phi vol``
    for smooth ``u`` up to O(h^2)."""
    if not u.same_grid(phi):
        raise ValueError("u and phi live on different grids")
    if not 1 <= i <= family.m:
        raise IndexError(f"field index {i} outside 1..{family.m}")
    vals = phi.values
    for ax in range(vals.ndim):
        lo = np.take(vals, np.arange(min(margin, vals.shape[ax])), axis=ax)
        hi = np.take(vals, np.arange(max(0, vals.shape[ax] - margin), vals.shape[ax]), axis=ax)
        if np.any(lo != 0) or np.any(hi != 0):
            raise ValueError("test function must vanish within the boundary margin")
    A = family.coefficients_many(u.coords())[:, i - 1, :]
    div = np.zeros(u.counts)
    for k in range(u.ndim):
        div += partial(u, k, A[:, k].reshape(u.counts) * vals)
    return float(np.sum(u.values * div) * u.cell_volume)


def semicontinuity_check(seq: FamilySequence, u_list: Sequence[GridFunction], u: GridFunction,
                         region=None, tail: Optional[int] = None) -> float:
    """``min_{j in tail} TV_{X^j}(u_j) - TV_X(u)`` with ``u_list[j-1] = u_j``."""
    for v in u_list:
        if not v.same_grid(u):
            raise ValueError("grid mismatch between sequence members and the limit")
    J = len(u_list)
    tail = max(1, math.ceil(J / 2)) if tail is None else int(tail)
    tvs = [total_variation(seq.member(j), u_list[j - 1], region).total
           for j in range(J - tail + 1, J + 1)]
    return min(tvs) - total_variation(seq.limit, u, region).total
