"""Vector-field families on R^n, their commutators, Hormander rank and
convergent sequences of families.

Field indices in the public functions are 1-based (``i = 1..m``) so that
bracket words read the same way as ``[X_1, [X_1, X_2]]``.  Internally the
coefficient matrix of a family at ``x`` is an ``(m, n)`` array whose row
``i`` holds the Euclidean components of ``X_{i+1}(x)``.
"""
from __future__ import annotations

import hashlib
import json
import math
from typing import Callable, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from . import polynomial as P
from ._kernels import backend as _kern

Word = Union[int, Tuple]

#: default number of lattice points per axis for box suprema
DEFAULT_DENSITY = 33
#: relative finite-difference step for brackets and Jacobians
DEFAULT_RHO = 1e-4


class FamilyError(ValueError):
    pass


def _as_point(x, n: int) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != n:
        raise FamilyError(f"point has {x.shape[0]} coordinates, expected {n}")
    if not np.all(np.isfinite(x)):
        raise FamilyError("point has non-finite coordinates")
    return x


def default_probes(n: int, count: int = 64, seed: int = 0, scale: float = 2.0) -> np.ndarray:
    rng = np.random.default_rng(seed)
    pts = rng.uniform(-scale, scale, size=(count, n))
    # axis-aligned points catch families that degenerate on coordinate planes
    axis_pts = np.zeros((2 * n + 1, n))
    for k in range(n):
        axis_pts[2 * k, k] = 1.0
        axis_pts[2 * k + 1, k] = -1.0
    return np.vstack([axis_pts, pts])


class VectorFieldFamily:
    """An m-tuple of smooth vector fields on R^n.

    Subclasses provide ``coefficients``; everything else has a generic
    implementation.  ``free_axes`` lists the ``m`` coordinates along which
    lattice graphs are stepped (the rest are solved for).
    """

    exact_jacobian = False
    polynomial = False

    def __init__(self, n: int, m: int, name: str = "", step: int = 1,
                 free_axes: Optional[Sequence[int]] = None):
        if not (1 <= m <= n):
            raise FamilyError(f"need 1 <= m <= n, got m={m}, n={n}")
        if step < 1:
            raise FamilyError("declared step must be >= 1")
        self.n = int(n)
        self.m = int(m)
        self.name = name
        self.step = int(step)
        fa = tuple(range(m)) if free_axes is None else tuple(int(a) for a in free_axes)
        if len(fa) != m or len(set(fa)) != m or not all(0 <= a < n for a in fa):
            raise FamilyError(f"free_axes must be {m} distinct axes in [0, {n})")
        self.free_axes = fa
        self.dep_axes = tuple(a for a in range(n) if a not in fa)

    # -- evaluation -------------------------------------------------------
    def coefficients(self, x) -> np.ndarray:
        raise NotImplementedError

    def coefficients_many(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        return np.stack([self.coefficients(x) for x in X]) if len(X) else np.zeros((0, self.m, self.n))

    def jacobian(self, x, rho: Optional[float] = None) -> np.ndarray:
        """``J[i, k, l] = d a_{i,k} / d x_l`` by central differences."""
        x = np.asarray(x, dtype=np.float64)
        step = _fd_step(x, rho)
        J = np.empty((self.m, self.n, self.n))
        for l in range(self.n):
            e = np.zeros(self.n)
            e[l] = step
            J[:, :, l] = (self.coefficients(x + e) - self.coefficients(x - e)) / (2 * step)
        return J

    # -- geometry hooks ---------------------------------------------------
    def lattice_spacing(self, h: float) -> np.ndarray:
        """Per-axis lattice spacing for nominal step ``h``."""
        return np.full(self.n, float(h))

    def certified_lower(self, x, y) -> Optional[float]:
        """Family-specific certified lower bound for the distance, if known."""
        return None

    def snap_cost(self, x, p) -> Tuple[float, bool]:
        """Upper bound for the distance between nearby points ``x`` and ``p``.

        Returns ``(cost, certified)``.  The generic rule solves the frozen
        least-squares control at the midpoint and pays ``4 sqrt|c|`` for each
        coefficient ``c`` of the residual in the step-2 bracket directions.
        """
        x = np.asarray(x, dtype=np.float64)
        p = np.asarray(p, dtype=np.float64)
        v = p - x
        if not np.any(v):
            return 0.0, True
        mid = 0.5 * (x + p)
        A = self.coefficients(mid)
        h, *_ = np.linalg.lstsq(A.T, v, rcond=None)
        res = v - A.T @ h
        cost = float(np.linalg.norm(h))
        if np.linalg.norm(res) <= 1e-12 * max(1.0, np.linalg.norm(v)):
            return cost, self.is_constant()
        brackets = [commutator(self, (a + 1, b + 1), mid)
                    for a in range(self.m) for b in range(a + 1, self.m)]
        if not brackets:
            return math.inf, False
        B = np.vstack([A] + brackets)
        c, *_ = np.linalg.lstsq(B.T, res, rcond=None)
        if np.linalg.norm(res - B.T @ c) > 1e-9 * max(1.0, np.linalg.norm(v)):
            return math.inf, False
        cost += float(np.linalg.norm(c[: self.m]))
        cost += float(sum(4.0 * math.sqrt(abs(ci)) for ci in c[self.m:]))
        return cost, False

    def is_constant(self) -> bool:
        return False

    # -- identity ---------------------------------------------------------
    def spec(self) -> dict:
        return {"name": self.name, "n": self.n, "m": self.m, "kind": "callable", "params": {}}

    def fingerprint(self) -> str:
        blob = json.dumps(self.spec(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def __repr__(self):
        return f"{type(self).__name__}(name={self.name!r}, n={self.n}, m={self.m})"


def _fd_step(x: np.ndarray, rho: Optional[float]) -> float:
    base = DEFAULT_RHO if rho is None else float(rho)
    step = base * (1.0 + float(np.linalg.norm(x)))
    if not step > 0 or np.any(x + step == x):
        raise FloatingPointError("finite-difference step underflow")
    return step


class CallableFamily(VectorFieldFamily):
    """Family given by a coefficient callable ``a(x) -> (m, n)``."""

    def __init__(self, n: int, m: int, coeffs: Callable[[np.ndarray], np.ndarray],
                 jacobian: Optional[Callable[[np.ndarray], np.ndarray]] = None,
                 name: str = "callable", step: int = 1,
                 free_axes: Optional[Sequence[int]] = None):
        super().__init__(n, m, name, step, free_axes)
        self._coeffs = coeffs
        self._jac = jacobian
        self.exact_jacobian = jacobian is not None

    def coefficients(self, x) -> np.ndarray:
        return np.asarray(self._coeffs(np.asarray(x, dtype=np.float64)), dtype=np.float64).reshape(self.m, self.n)

    def jacobian(self, x, rho: Optional[float] = None) -> np.ndarray:
        if self._jac is not None:
            return np.asarray(self._jac(np.asarray(x, dtype=np.float64)), dtype=np.float64).reshape(self.m, self.n, self.n)
        return super().jacobian(x, rho)


class PolynomialFamily(VectorFieldFamily):
    """Family with polynomial coefficients; Jacobians and brackets are exact."""

    exact_jacobian = True
    polynomial = True

    def __init__(self, fields: Sequence[P.PolyField], n: int, name: str = "polynomial",
                 step: int = 1, free_axes: Optional[Sequence[int]] = None,
                 spacing_rule: Optional[str] = None, spec_override: Optional[dict] = None):
        super().__init__(n, len(fields), name, step, free_axes)
        if any(len(f) != n for f in fields):
            raise FamilyError(f"every field needs {n} components")
        self.fields: List[P.PolyField] = [[dict(c) for c in f] for f in fields]
        self.table = P.to_table(self.fields, n)
        self._jac_polys = [[[P.diff(c, ax) for ax in range(n)] for c in f] for f in self.fields]
        self.spacing_rule = spacing_rule
        self._spec_override = spec_override

    def coefficients(self, x) -> np.ndarray:
        t = self.table
        return _kern.eval_coeffs(t.field, t.comp, t.coef, t.exp, t.m, t.n,
                                 np.asarray(x, dtype=np.float64))

    def coefficients_many(self, X) -> np.ndarray:
        t = self.table
        X = np.ascontiguousarray(X, dtype=np.float64).reshape(-1, self.n)
        return _kern.eval_coeffs_many(t.field, t.comp, t.coef, t.exp, t.m, t.n, X)

    def jacobian(self, x, rho: Optional[float] = None) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        J = np.zeros((self.m, self.n, self.n))
        for i, f in enumerate(self._jac_polys):
            for k, row in enumerate(f):
                for ax, p in enumerate(row):
                    if p:
                        J[i, k, ax] = P.evaluate(p, x)
        return J

    def bracket_field(self, word) -> P.PolyField:
        return _poly_word(self, _normalize_word(word, self.m))

    def is_constant(self) -> bool:
        return all(P.degree(c) == 0 for f in self.fields for c in f)

    def certified_lower(self, x, y) -> Optional[float]:
        # constant full-rank fields: straight lines are optimal, d is a norm
        if self.m == self.n and self.is_constant():
            A = self.coefficients(np.zeros(self.n))
            v = np.asarray(y, dtype=np.float64) - np.asarray(x, dtype=np.float64)
            return float(np.linalg.norm(np.linalg.solve(A.T, v)))
        return None

    def lattice_spacing(self, h: float) -> np.ndarray:
        h = float(h)
        sp = np.full(self.n, h)
        if self.spacing_rule == "step2":
            # t-spacing h1*h2/2 keeps every frozen horizontal edge on the lattice
            sp[self.n - 1] = h * h / 2.0
        return sp

    def field_sup(self, R: float) -> np.ndarray:
        """Certified upper bounds for ``sup_{|x| <= R} |X_i(x)|``."""
        return np.array([math.sqrt(sum(P.sup_bound(c, R) ** 2 for c in f)) for f in self.fields])

    def jacobian_sup(self, R: float) -> np.ndarray:
        """Certified upper bounds for the Jacobian Frobenius norm on ``|x| <= R``."""
        return np.array([math.sqrt(sum(P.sup_bound(p, R) ** 2 for row in f for p in row))
                         for f in self._jac_polys])

    def spec(self) -> dict:
        if self._spec_override is not None:
            return self._spec_override
        return {
            "name": self.name, "n": self.n, "m": self.m, "kind": "polynomial",
            "params": {"fields": [[P.encode_poly(c) for c in f] for f in self.fields],
                       "step": self.step, "free_axes": list(self.free_axes),
                       "spacing_rule": self.spacing_rule},
        }


class HeisenbergFamily(PolynomialFamily):
    """X_1 = d_x - (y/2) d_t,  X_2 = d_y + (x/2) d_t on R^3."""

    def __init__(self):
        X1 = [P.const(1.0, 3), {}, P.monomial(-0.5, (0, 1, 0))]
        X2 = [{}, P.const(1.0, 3), P.monomial(0.5, (1, 0, 0))]
        super().__init__([X1, X2], 3, name="heisenberg", step=2, spacing_rule="step2",
                         spec_override={"name": "heisenberg", "n": 3, "m": 2,
                                        "kind": "builtin", "params": {}})

    @staticmethod
    def _translate(x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        dx, dy = y[0] - x[0], y[1] - x[1]
        dt = y[2] - x[2] - 0.5 * (x[0] * y[1] - x[1] * y[0])
        return math.hypot(dx, dy), dt

    def certified_lower(self, x, y) -> float:
        # closing a horizontal curve with its xy chord encloses signed area dt;
        # the isoperimetric inequality bounds the length from below
        c, dt = self._translate(x, y)
        return max(c, 2.0 * math.sqrt(math.pi * abs(dt)) - c)

    def snap_cost(self, x, p) -> Tuple[float, bool]:
        # straight segment (adds no area after translation) followed by a circle
        c, dt = self._translate(x, p)
        return c + 2.0 * math.sqrt(math.pi * abs(dt)), True


# -- built-in families ---------------------------------------------------------

def euclidean(n: int) -> PolynomialFamily:
    fields = []
    for i in range(n):
        f = [{} for _ in range(n)]
        f[i] = P.const(1.0, n)
        fields.append(f)
    return PolynomialFamily(fields, n, name=f"euclidean{n}", step=1,
                            spec_override={"name": "euclidean", "n": n, "m": n,
                                           "kind": "builtin", "params": {"n": n}})


def heisenberg() -> HeisenbergFamily:
    return HeisenbergFamily()


def step2(n: int) -> PolynomialFamily:
    """X_i = d_i (i != 2), X_2 = d_2 + x_1 d_n on R^n with m = n - 1 fields."""
    if n < 3:
        raise FamilyError("step2 needs n >= 3")
    fields = []
    for i in range(n - 1):
        f = [{} for _ in range(n)]
        f[i] = P.const(1.0, n)
        if i == 1:
            e = [0] * n
            e[0] = 1
            f[n - 1] = P.monomial(1.0, e)
        fields.append(f)
    return PolynomialFamily(fields, n, name=f"step2_{n}", step=2, spacing_rule="step2",
                            spec_override={"name": "step2", "n": n, "m": n - 1,
                                           "kind": "builtin", "params": {"n": n}})


BUILTIN_FAMILIES = {"euclidean": euclidean, "heisenberg": heisenberg, "step2": step2}


def family_from_spec(spec: dict) -> VectorFieldFamily:
    kind = spec.get("kind", "builtin")
    params = spec.get("params", {}) or {}
    if kind == "builtin":
        name = spec["name"]
        if name not in BUILTIN_FAMILIES:
            raise FamilyError(f"unknown built-in family {name!r}")
        if name == "heisenberg":
            return heisenberg()
        n = int(params.get("n", spec.get("n", 2)))
        return BUILTIN_FAMILIES[name](n)
    if kind == "polynomial":
        n = int(spec["n"])
        fields = [[P.decode_poly(c, n) for c in f] for f in params["fields"]]
        return PolynomialFamily(fields, n, name=spec.get("name", "polynomial"),
                                step=int(params.get("step", 1)),
                                free_axes=params.get("free_axes"),
                                spacing_rule=params.get("spacing_rule"))
    if kind == "perturbed":
        base = family_from_spec(params["base"])
        n = base.n
        V = [[P.decode_poly(c, n) for c in f] for f in params["perturbation"]]
        return perturb(base, V, float(params.get("scale", 1.0)), name=spec.get("name"))
    raise FamilyError(f"unknown family kind {kind!r}")


def perturb(base: PolynomialFamily, V: Sequence[P.PolyField], eps: float,
            name: Optional[str] = None) -> PolynomialFamily:
    """Polynomial family ``X + eps * V``; certified hooks of ``base`` are dropped."""
    if len(V) != base.m:
        raise FamilyError(f"perturbation needs {base.m} fields")
    fields = [P.field_add(f, v, eps) for f, v in zip(base.fields, V)]
    return PolynomialFamily(fields, base.n, name=name or f"{base.name}+{eps:g}V",
                            step=base.step, free_axes=base.free_axes,
                            spacing_rule=base.spacing_rule)


# -- operations -----------------------------------------------------------------

def eval_field(family: VectorFieldFamily, i: int, x) -> np.ndarray:
    if not (1 <= i <= family.m):
        raise IndexError(f"field index {i} outside 1..{family.m}")
    return family.coefficients(_as_point(x, family.n))[i - 1].copy()


def _normalize_word(word, m: int):
    """Nested-tuple form of a bracket word; flat tuples are right-nested."""
    if isinstance(word, (int, np.integer)):
        if not (1 <= word <= m):
            raise IndexError(f"field index {word} outside 1..{m}")
        return int(word)
    word = tuple(word)
    if len(word) < 2:
        raise FamilyError("bracket words need length >= 2")
    if len(word) == 2:
        return (_normalize_word(word[0], m), _normalize_word(word[1], m))
    return (_normalize_word(word[0], m), _normalize_word(word[1:], m))


def word_length(word) -> int:
    if isinstance(word, int):
        return 1
    return sum(word_length(w) for w in word)


def _poly_word(family: PolynomialFamily, w) -> P.PolyField:
    if isinstance(w, int):
        return family.fields[w - 1]
    return P.bracket(_poly_word(family, w[0]), _poly_word(family, w[1]))


def _fd_word(family: VectorFieldFamily, w, rho: Optional[float]) -> Callable[[np.ndarray], np.ndarray]:
    if isinstance(w, int):
        return lambda x: family.coefficients(x)[w - 1]
    Va = _fd_word(family, w[0], rho)
    Vb = _fd_word(family, w[1], rho)

    def jac(V, x):
        step = _fd_step(x, rho)
        n = x.shape[0]
        J = np.empty((n, n))
        for l in range(n):
            e = np.zeros(n)
            e[l] = step
            J[:, l] = (V(x + e) - V(x - e)) / (2 * step)
        return J

    def bracket(x):
        # always numerical, so that "fd" stays independent of the exact route
        Ja, Jb = jac(Va, x), jac(Vb, x)
        return Jb @ Va(x) - Ja @ Vb(x)

    return bracket


def commutator(family: VectorFieldFamily, word, x, method: str = "auto",
               rho: Optional[float] = None) -> np.ndarray:
    """Iterated bracket ``[X_{w1}, [X_{w2}, ...]]`` at ``x``.

    ``method``: ``"exact"`` (polynomial families only), ``"fd"`` (central
    differences with step ``rho * (1 + |x|)``) or ``"auto"``.
    """
    x = _as_point(x, family.n)
    if isinstance(word, (int, np.integer)) or len(tuple(word)) < 2:
        raise FamilyError("bracket words need length >= 2")
    w = _normalize_word(word, family.m)
    if method == "auto":
        method = "exact" if family.polynomial else "fd"
    if method == "exact":
        if not family.polynomial:
            raise FamilyError("exact brackets need a polynomial family")
        return np.array([P.evaluate(c, x) for c in _poly_word(family, w)])
    if method != "fd":
        raise FamilyError(f"unknown bracket method {method!r}")
    return np.asarray(_fd_word(family, w, rho)(x), dtype=np.float64)


def right_nested_words(m: int, length: int) -> List[Tuple[int, ...]]:
    out: List[Tuple[int, ...]] = [()]
    for _ in range(length):
        out = [w + (i,) for w in out for i in range(1, m + 1)]
    return out


def span_vectors(family: VectorFieldFamily, x, s: int, method: str = "auto") -> np.ndarray:
    x = _as_point(x, family.n)
    vecs = [family.coefficients(x)]
    for L in range(2, s + 1):
        rows = [commutator(family, w, x, method) for w in right_nested_words(family.m, L)
                if w[-1] != w[-2]]
        if rows:
            vecs.append(np.vstack(rows))
    return np.vstack(vecs)


def hormander_rank(family: VectorFieldFamily, x, s: int, tol: float = 1e-8,
                   method: str = "auto") -> int:
    """Rank of the span of the fields and right-nested brackets of length <= s."""
    if s < 1:
        raise FamilyError("s must be >= 1")
    V = span_vectors(family, x, s, method)
    sv = np.linalg.svd(V, compute_uv=False)
    return int(np.sum(sv > tol * max(1.0, sv[0])))


def check_independence(family: VectorFieldFamily, probes=None, tol: float = 1e-10):
    """Smallest singular value of the coefficient matrix over a probe set.

    Returns ``(ok, min_sigma, worst_point)``.
    """
    probes = default_probes(family.n) if probes is None else np.asarray(probes, dtype=np.float64)
    A = family.coefficients_many(probes)
    sig = np.linalg.svd(A, compute_uv=False)[:, -1]
    k = int(np.argmin(sig))
    return bool(sig[k] > tol), float(sig[k]), probes[k]


def require_independent(family: VectorFieldFamily, probes=None) -> None:
    ok, s, p = check_independence(family, probes)
    if not ok:
        raise FamilyError(f"fields of {family.name!r} are linearly dependent at probe {p.tolist()} "
                          f"(smallest singular value {s:.3g})")


def box_lattice(box, density: int = DEFAULT_DENSITY) -> np.ndarray:
    box = np.asarray(box, dtype=np.float64).reshape(-1, 2)
    if np.any(box[:, 1] < box[:, 0]):
        raise FamilyError("empty box")
    axes = [np.linspace(lo, hi, density) if hi > lo else np.array([lo]) for lo, hi in box]
    grids = np.meshgrid(*axes, indexing="ij")
    return np.stack([g.reshape(-1) for g in grids], axis=1)


def ball_lattice(R: float, n: int, density: int = DEFAULT_DENSITY) -> np.ndarray:
    pts = box_lattice([[-R, R]] * n, density)
    return pts[np.einsum("ij,ij->i", pts, pts) <= R * R * (1 + 1e-12)]


# -- sequences ------------------------------------------------------------------

class FamilySequence:
    """Limit family ``X`` plus members ``X^j`` for ``j = 1..j_max``."""

    def __init__(self, limit: VectorFieldFamily, j_max: int, name: str = ""):
        if j_max < 1:
            raise FamilyError("j_max must be >= 1")
        self.limit = limit
        self.j_max = int(j_max)
        self.name = name
        self._cache: Dict[int, VectorFieldFamily] = {}

    def _make(self, j: int) -> VectorFieldFamily:
        raise NotImplementedError

    def member(self, j: int) -> VectorFieldFamily:
        if not (1 <= j <= self.j_max):
            raise IndexError(f"j={j} outside generated range 1..{self.j_max}")
        if j not in self._cache:
            fam = self._make(j)
            if fam.n != self.limit.n or fam.m != self.limit.m:
                raise FamilyError("sequence members must share n and m")
            self._cache[j] = fam
        return self._cache[j]

    @property
    def n(self):
        return self.limit.n

    @property
    def m(self):
        return self.limit.m

    def difference_sup(self, j: int, R: float, density: int = DEFAULT_DENSITY) -> np.ndarray:
        """Per-field ``sup_{|x|<=R} |X^j_i - X_i|``; certified for polynomial pairs."""
        Xj = self.member(j)
        X = self.limit
        if X.polynomial and Xj.polynomial:
            out = []
            for fj, f in zip(Xj.fields, X.fields):
                D = P.field_add(fj, f, -1.0)
                out.append(math.sqrt(sum(P.sup_bound(c, R) ** 2 for c in D)))
            return np.array(out)
        pts = ball_lattice(R, self.n, density)
        d = Xj.coefficients_many(pts) - X.coefficients_many(pts)
        return np.sqrt(np.sum(d * d, axis=2)).max(axis=0)

    def spec(self) -> dict:
        return {"kind": "callable", "name": self.name, "j_max": self.j_max}


class ConstantSequence(FamilySequence):
    def __init__(self, limit: VectorFieldFamily, j_max: int):
        super().__init__(limit, j_max, name=f"identity-{limit.name}")

    def _make(self, j):
        return self.limit

    def spec(self):
        return {"kind": "identity", "family": self.limit.spec(), "j_max": self.j_max}


class PerturbedSequence(FamilySequence):
    """``X^j = X + (scale / j**power) V`` for polynomial ``X`` and ``V``."""

    def __init__(self, limit: PolynomialFamily, V: Sequence[P.PolyField], j_max: int,
                 scale: float = 1.0, power: float = 1.0, name: str = "perturbed"):
        super().__init__(limit, j_max, name)
        if len(V) != limit.m:
            raise FamilyError(f"perturbation needs {limit.m} fields")
        self.V = [[dict(c) for c in f] for f in V]
        self.scale = float(scale)
        self.power = float(power)

    def eps(self, j: int) -> float:
        return self.scale / j ** self.power

    def _make(self, j):
        return perturb(self.limit, self.V, self.eps(j), name=f"{self.name}[j={j}]")

    def spec(self):
        return {"kind": "perturbed", "name": self.name, "base": self.limit.spec(),
                "perturbation": [[P.encode_poly(c) for c in f] for f in self.V],
                "scale": self.scale, "power": self.power, "j_max": self.j_max}


class ScaledSequence(FamilySequence):
    """``X^j = (1 + scale/j) X``."""

    def __init__(self, limit: PolynomialFamily, j_max: int, scale: float = 1.0):
        super().__init__(limit, j_max, name=f"scaled-{limit.name}")
        self.scale = float(scale)

    def _make(self, j):
        f = 1.0 + self.scale / j
        fields = [P.field_scale(v, f) for v in self.limit.fields]
        return PolynomialFamily(fields, self.limit.n, name=f"{self.name}[j={j}]",
                                step=self.limit.step, free_axes=self.limit.free_axes,
                                spacing_rule=self.limit.spacing_rule)

    def spec(self):
        return {"kind": "scaled", "family": self.limit.spec(), "scale": self.scale,
                "j_max": self.j_max}


def _unit(n, axis):
    f = [{} for _ in range(n)]
    f[axis] = P.const(1.0, n)
    return f


def _zero(n):
    return [{} for _ in range(n)]


def builtin_sequence(name: str, j_max: int = 20, scale: float = 1.0) -> FamilySequence:
    """Named convergent sequences used by the scenarios and tests.

    ``euclidean-shift``     X_i + (s/j) e_i on R^2
    ``euclidean-tilt``      X_1 + (s/j) e_2 on R^2
    ``euclidean-scaled``    (1 + s/j) X on R^2
    ``heisenberg-shear``    X_1 + (s/j) x_1 e_2
    ``heisenberg-shift``    X_2 + (s/j) e_1
    ``heisenberg-shift-all`` X_1 + (s/j) e_2, X_2 + (s/j) e_1
    ``heisenberg-mix``      X_2 + (s/j) X_1
    ``heisenberg-blowup``   X_2 + (s/j) x_1^2 d_t
    ``identity-<family>``   X^j = X
    """
    if name.startswith("identity-"):
        return ConstantSequence(family_from_spec({"name": name[9:], "kind": "builtin",
                                                  "params": {"n": 2}}), j_max)
    if name.startswith("euclidean"):
        X = euclidean(2)
        if name == "euclidean-shift":
            return PerturbedSequence(X, [_unit(2, 0), _unit(2, 1)], j_max, scale, name=name)
        if name == "euclidean-tilt":
            return PerturbedSequence(X, [_unit(2, 1), _zero(2)], j_max, scale, name=name)
        if name == "euclidean-scaled":
            return ScaledSequence(X, j_max, scale)
    H = heisenberg()
    if name == "heisenberg-shear":
        V1 = [{}, P.monomial(1.0, (1, 0, 0)), {}]
        return PerturbedSequence(H, [V1, _zero(3)], j_max, scale, name=name)
    if name == "heisenberg-shift":
        return PerturbedSequence(H, [_zero(3), _unit(3, 0)], j_max, scale, name=name)
    if name == "heisenberg-shift-all":
        return PerturbedSequence(H, [_unit(3, 1), _unit(3, 0)], j_max, scale, name=name)
    if name == "heisenberg-mix":
        return PerturbedSequence(H, [_zero(3), H.fields[0]], j_max, scale, name=name)
    if name == "heisenberg-blowup":
        V2 = [{}, {}, P.monomial(1.0, (2, 0, 0))]
        return PerturbedSequence(H, [_zero(3), V2], j_max, scale, name=name)
    raise FamilyError(f"unknown built-in sequence {name!r}")


BUILTIN_SEQUENCES = ("euclidean-shift", "euclidean-tilt", "euclidean-scaled",
                     "heisenberg-shear", "heisenberg-shift", "heisenberg-shift-all",
                     "heisenberg-mix", "heisenberg-blowup")


def sequence_from_spec(spec: dict) -> FamilySequence:
    kind = spec.get("kind", "builtin")
    j_max = int(spec.get("j_max", 20))
    if kind == "builtin":
        return builtin_sequence(spec["name"], j_max, float(spec.get("scale", 1.0)))
    if kind == "identity":
        return ConstantSequence(family_from_spec(spec["family"]), j_max)
    if kind == "scaled":
        return ScaledSequence(family_from_spec(spec["family"]), j_max, float(spec.get("scale", 1.0)))
    if kind == "perturbed":
        base = family_from_spec(spec["base"])
        V = [[P.decode_poly(c, base.n) for c in f] for f in spec["perturbation"]]
        return PerturbedSequence(base, V, j_max, float(spec.get("scale", 1.0)),
                                 float(spec.get("power", 1.0)), name=spec.get("name", "perturbed"))
    raise FamilyError(f"unknown sequence kind {kind!r}")


def sup_deviation(seq: FamilySequence, j: int, box, order: int = 0,
                  density: int = DEFAULT_DENSITY) -> np.ndarray:
    """Per-field lattice maximum of ``|X^j_i - X_i|`` (order 0) or of the
    Frobenius norm of the Jacobian difference (order 1) over ``box``."""
    if order not in (0, 1):
        raise FamilyError("derivative order must be 0 or 1")
    pts = box_lattice(box, density)
    Xj = seq.member(j)
    X = seq.limit
    if order == 0:
        d = Xj.coefficients_many(pts) - X.coefficients_many(pts)
        return np.sqrt(np.sum(d * d, axis=2)).max(axis=0)
    out = np.zeros(X.m)
    for p in pts:
        D = Xj.jacobian(p) - X.jacobian(p)
        out = np.maximum(out, np.sqrt(np.sum(D * D, axis=(1, 2))))
    return out
