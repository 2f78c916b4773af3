"""Subunit curves of piecewise-constant controls and flow comparison bounds."""
from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from typing import Optional, Tuple

import numpy as np

from ._kernels import _pure
from ._kernels import backend as _kern
from .vector_fields import FamilySequence, VectorFieldFamily, ball_lattice

#: default escape radius when the caller does not set one
SAFETY_RADIUS = 1e6


class EscapeError(RuntimeError):
    """A flow left its safety region (or became non-finite)."""


@dataclass
class Control:
    """Piecewise-constant control ``h`` on ``[0, T]`` with ``N`` equal segments.

    The per-time norm is Euclidean on R^m; ``norm`` records it.
    """

    T: float
    values: np.ndarray
    norm: str = "l2"

    def __post_init__(self):
        self.values = np.atleast_2d(np.asarray(self.values, dtype=np.float64))
        if not self.T > 0:
            raise ValueError("control horizon T must be > 0")
        if self.values.shape[0] < 1:
            raise ValueError("control needs at least one segment")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("control values must be finite")

    @property
    def N(self) -> int:
        return self.values.shape[0]

    @property
    def m(self) -> int:
        return self.values.shape[1]

    @property
    def seg_dt(self) -> float:
        return self.T / self.N

    def sup_norm(self) -> float:
        """``max_k |h_k|_2``."""
        return float(np.max(np.linalg.norm(self.values, axis=1)))

    def sup_norm_inf(self) -> float:
        """``max_k |h_k|_inf``."""
        return float(np.max(np.abs(self.values)))

    def is_subunit(self, tol: float = 1e-12) -> bool:
        return self.sup_norm() <= 1.0 + tol

    def reversed(self) -> "Control":
        return Control(self.T, -self.values[::-1].copy(), self.norm)

    def rescaled(self, T: float) -> "Control":
        """Same curve traversed in time ``T`` (values scaled by ``self.T / T``)."""
        return Control(T, self.values * (self.T / T), self.norm)

    @classmethod
    def constant(cls, h, T: float = 1.0, N: int = 1) -> "Control":
        h = np.asarray(h, dtype=np.float64)
        return cls(T, np.tile(h, (N, 1)))

    @classmethod
    def from_function(cls, f, T: float, N: int) -> "Control":
        """Sample ``f(t)`` at segment midpoints."""
        ts = (np.arange(N) + 0.5) * (T / N)
        return cls(T, np.array([np.asarray(f(t), dtype=np.float64) for t in ts]))

    def to_json(self) -> str:
        return json.dumps({"T": self.T, "norm": self.norm, "values": self.values.tolist()})

    @classmethod
    def from_json(cls, text: str) -> "Control":
        d = json.loads(text)
        return cls(float(d["T"]), np.array(d["values"], dtype=np.float64), d.get("norm", "l2"))


@dataclass
class HorizontalPath:
    times: np.ndarray
    states: np.ndarray
    control: Control
    step: float
    escape_index: int = -1
    meta: dict = field(default_factory=dict)

    @property
    def endpoint(self) -> np.ndarray:
        return self.states[-1]

    @property
    def escaped(self) -> bool:
        return self.escape_index >= 0

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["t"] + [f"x{k + 1}" for k in range(self.states.shape[1])])
        for t, s in zip(self.times, self.states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in s])
        return buf.getvalue()


def integrate(family: VectorFieldFamily, x0, control: Control, steps_per_segment: int = 4,
              escape_radius: float = SAFETY_RADIUS, raise_on_escape: bool = False) -> HorizontalPath:
    """Fixed-step RK4 solution of ``gamma' = sum_i h_i X_i(gamma)``, ``gamma(0) = x0``."""
    if steps_per_segment < 1:
        raise ValueError("steps_per_segment must be >= 1")
    if control.m != family.m:
        raise ValueError(f"control has {control.m} components, family has {family.m} fields")
    x0 = np.asarray(x0, dtype=np.float64).reshape(family.n)
    if family.polynomial:
        t = family.table
        states, bad = _kern.rk4_path(t.field, t.comp, t.coef, t.exp, t.m, t.n, x0,
                                     np.ascontiguousarray(control.values), control.seg_dt,
                                     int(steps_per_segment), float(escape_radius))
    else:
        states, bad = _pure.rk4_generic(family.coefficients, family.n, x0, control.values,
                                        control.seg_dt, int(steps_per_segment), float(escape_radius))
    S = control.N * steps_per_segment
    times = np.linspace(0.0, control.T, S + 1)
    states[0] = x0
    path = HorizontalPath(times, states, control, control.seg_dt / steps_per_segment, int(bad))
    if path.escaped and raise_on_escape:
        raise EscapeError(f"flow of {family.name!r} escaped at t={times[bad]:.6g}")
    return path


def escape_check(path: HorizontalPath, R: float, norm: str = "euclidean") -> Tuple[bool, Optional[float]]:
    """Whether every state lies in the closed ball of radius ``R`` about 0.

    ``norm`` is ``"euclidean"`` or ``"box"`` (max of coordinates).  Returns
    ``(inside, first_escape_time)``.
    """
    S = path.states
    if norm == "euclidean":
        r = np.sqrt(np.sum(S * S, axis=1))
    elif norm == "box":
        r = np.max(np.abs(S), axis=1)
    else:
        raise ValueError(f"unknown norm {norm!r}")
    outside = ~(r <= R)
    if not outside.any():
        return True, None
    return False, float(path.times[int(np.argmax(outside))])


def flow_deviation(seq: FamilySequence, j: int, x0, control: Control,
                   steps_per_segment: int = 4, escape_radius: float = SAFETY_RADIUS) -> float:
    """``max_t |gamma^j(t) - gamma(t)|`` on the shared time grid."""
    a = integrate(seq.limit, x0, control, steps_per_segment, escape_radius, raise_on_escape=True)
    b = integrate(seq.member(j), x0, control, steps_per_segment, escape_radius, raise_on_escape=True)
    return float(np.max(np.linalg.norm(a.states - b.states, axis=1)))


def lipschitz_constant(family: VectorFieldFamily, R: float, density: int = 17) -> np.ndarray:
    """Per-field lattice maximum of the Jacobian operator norm on ``B_e(0, R)``."""
    if not R > 0:
        raise ValueError("R must be > 0")
    if family.polynomial and family.is_constant():
        return np.zeros(family.m)
    out = np.zeros(family.m)
    for p in ball_lattice(R, family.n, density):
        J = family.jacobian(p)
        out = np.maximum(out, np.linalg.norm(J, ord=2, axis=(1, 2)))
    return out


def gronwall_bound(seq: FamilySequence, j: int, T: float, R: float, C: float) -> float:
    """``T * (sum_i sup_{B_e(0,R)} |X^j_i - X_i|) * exp(m C T)``."""
    if not T > 0 or not R > 0:
        raise ValueError("T and R must be > 0")
    if C < 0:
        raise ValueError("Lipschitz constant must be >= 0")
    dev = float(np.sum(seq.difference_sup(j, R)))
    if dev == 0.0:
        return 0.0
    return T * dev * math.exp(seq.m * C * T)


def sequence_lipschitz(seq: FamilySequence, j: int, R: float, density: int = 17) -> float:
    """A common Lipschitz constant for ``X`` and ``X^j`` on ``B_e(0, R)``."""
    return float(max(lipschitz_constant(seq.limit, R, density).max(),
                     lipschitz_constant(seq.member(j), R, density).max()))


def observed_radius(*paths: HorizontalPath) -> float:
    """Smallest Euclidean radius about 0 containing all states of the paths."""
    return float(max(np.sqrt(np.sum(p.states * p.states, axis=1)).max() for p in paths))


def speed_bound(family: VectorFieldFamily, R: float) -> float:
    """``sqrt(m) * max_i sup_{|x|<=R} |X_i(x)|`` (certified for polynomial families)."""
    if family.polynomial:
        return math.sqrt(family.m) * float(family.field_sup(R).max())
    pts = ball_lattice(R, family.n, 9)
    return math.sqrt(family.m) * float(np.linalg.norm(family.coefficients_many(pts), axis=2).max())


def safe_radius(family: VectorFieldFamily, x0, T: float, substeps: int = 200,
                limit: float = SAFETY_RADIUS) -> float:
    """Radius of a Euclidean ball about 0 containing every subunit curve of
    duration ``T`` from ``x0``.

    ``|gamma|`` is dominated by the solution of ``rho' = S(rho)`` with ``S``
    the (increasing) speed bound; the scalar ODE is stepped implicitly so each
    step over-estimates.
    """
    rho = float(np.linalg.norm(x0))
    dt = T / substeps
    for _ in range(substeps):
        nxt = rho + dt * speed_bound(family, rho)
        for _ in range(50):
            cand = rho + dt * speed_bound(family, nxt)
            if cand <= nxt * (1 + 1e-12):
                break
            nxt = cand
        else:
            raise EscapeError("speed comparison did not settle")
        rho = nxt
        if rho > limit:
            raise EscapeError("speed comparison exceeds the safety radius")
    return rho
