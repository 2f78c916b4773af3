"""Sparse multivariate polynomials and polynomial vector fields.

A polynomial is a ``dict`` mapping exponent tuples to float coefficients.
A polynomial vector field on R^n is a list of ``n`` polynomials (one per
Euclidean component).  Lie brackets of polynomial fields are again
polynomial, which is what lets commutators of the built-in families be
evaluated exactly.
"""
from __future__ import annotations

from typing import Dict, List, NamedTuple, Sequence, Tuple

import numpy as np

Exponent = Tuple[int, ...]
Poly = Dict[Exponent, float]
PolyField = List[Poly]


def zero_exp(n: int) -> Exponent:
    return (0,) * n


def const(c: float, n: int) -> Poly:
    return {zero_exp(n): float(c)} if c != 0 else {}


def monomial(c: float, exp: Sequence[int]) -> Poly:
    return {tuple(int(e) for e in exp): float(c)} if c != 0 else {}


def _clean(p: Poly) -> Poly:
    return {e: c for e, c in p.items() if c != 0.0}


def add(p: Poly, q: Poly, scale: float = 1.0) -> Poly:
    """Return ``p + scale * q``."""
    out = dict(p)
    for e, c in q.items():
        out[e] = out.get(e, 0.0) + scale * c
    return _clean(out)


def mul(p: Poly, q: Poly) -> Poly:
    out: Poly = {}
    for e1, c1 in p.items():
        for e2, c2 in q.items():
            e = tuple(a + b for a, b in zip(e1, e2))
            out[e] = out.get(e, 0.0) + c1 * c2
    return _clean(out)


def diff(p: Poly, axis: int) -> Poly:
    out: Poly = {}
    for e, c in p.items():
        k = e[axis]
        if k == 0:
            continue
        e2 = e[:axis] + (k - 1,) + e[axis + 1:]
        out[e2] = out.get(e2, 0.0) + c * k
    return _clean(out)


def evaluate(p: Poly, x: Sequence[float]) -> float:
    total = 0.0
    for e, c in p.items():
        term = c
        for xi, k in zip(x, e):
            if k:
                term *= xi ** k
        total += term
    return total


def degree(p: Poly) -> int:
    return max((sum(e) for e in p), default=0)


def field_add(v: PolyField, w: PolyField, scale: float = 1.0) -> PolyField:
    return [add(a, b, scale) for a, b in zip(v, w)]


def field_scale(v: PolyField, s: float) -> PolyField:
    return [_clean({e: s * c for e, c in comp.items()}) for comp in v]


def apply_field(v: PolyField, f: Poly) -> Poly:
    """Directional derivative ``V f = sum_k v_k d_k f``."""
    out: Poly = {}
    for k, vk in enumerate(v):
        if vk:
            out = add(out, mul(vk, diff(f, k)))
    return out


def bracket(v: PolyField, w: PolyField) -> PolyField:
    """Lie bracket ``[V, W] = V(W) - W(V)`` componentwise."""
    return [add(apply_field(v, wk), apply_field(w, vk), -1.0) for vk, wk in zip(v, w)]


def sup_bound(p: Poly, radius: float) -> float:
    """Upper bound of ``|p|`` on the Euclidean ball of the given radius."""
    return float(sum(abs(c) * radius ** sum(e) for e, c in p.items()))


class PolyTable(NamedTuple):
    """Flat array encoding of an m-tuple of polynomial fields.

    Row ``r`` contributes ``coef[r] * prod(x ** exp[r])`` to entry
    ``(field[r], comp[r])`` of the m x n coefficient matrix.
    """

    field: np.ndarray
    comp: np.ndarray
    coef: np.ndarray
    exp: np.ndarray
    m: int
    n: int


def to_table(fields: Sequence[PolyField], n: int) -> PolyTable:
    rows = []
    for i, v in enumerate(fields):
        for k, comp in enumerate(v):
            for e, c in sorted(comp.items()):
                rows.append((i, k, c, e))
    T = len(rows)
    field = np.array([r[0] for r in rows], dtype=np.int32)
    comp = np.array([r[1] for r in rows], dtype=np.int32)
    coef = np.array([r[2] for r in rows], dtype=np.float64)
    exp = np.array([r[3] for r in rows], dtype=np.int32).reshape(T, n)
    return PolyTable(field, comp, coef, exp, len(fields), n)


def jacobian_table(fields: Sequence[PolyField], n: int) -> Tuple[PolyTable, np.ndarray]:
    """Table for the Jacobians: returns ``(table, axis)`` where row ``r`` feeds
    entry ``(field, comp, axis[r])`` of the m x n x n Jacobian tensor."""
    rows = []
    for i, v in enumerate(fields):
        for k, comp in enumerate(v):
            for ax in range(n):
                for e, c in sorted(diff(comp, ax).items()):
                    rows.append((i, k, c, e, ax))
    T = len(rows)
    table = PolyTable(
        np.array([r[0] for r in rows], dtype=np.int32),
        np.array([r[1] for r in rows], dtype=np.int32),
        np.array([r[2] for r in rows], dtype=np.float64),
        np.array([r[3] for r in rows], dtype=np.int32).reshape(T, n),
        len(fields),
        n,
    )
    return table, np.array([r[4] for r in rows], dtype=np.int32)


def encode_poly(p: Poly) -> Dict[str, float]:
    """JSON encoding: ``"e1,e2,...,en" -> coefficient``."""
    return {",".join(str(k) for k in e): c for e, c in sorted(p.items())}


def decode_poly(d: Dict[str, float], n: int) -> Poly:
    out: Poly = {}
    for key, c in d.items():
        e = tuple(int(s) for s in key.split(",")) if key else ()
        if len(e) != n:
            raise ValueError(f"exponent {key!r} does not have {n} entries")
        if any(k < 0 for k in e):
            raise ValueError(f"negative exponent in {key!r}")
        out[e] = out.get(e, 0.0) + float(c)
    return _clean(out)
