"""Constructive extraction of an L^q-Cauchy subsequence from finite data.

The engine works on a common weighted sample (grid cells) carrying a limit
metric ``d`` and member metrics ``d_j``.  Each stage covers the residual set
with disjoint balls, keeps the members whose balls nest correctly around the
covering balls, clusters their ball means, and removes the shrunken balls
from the residual set.  Stages halve the oscillation budget; the nested index
lists are then diagonalized.

All mass inequalities that carry the decay argument are checked in exact
rational arithmetic on the floating weights.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from .bv_grid import GridFunction, TVMeasure, quotient_from_values
from .sampled_space import SpaceSequence, doubling_estimate, five_r_covering

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_AUDIT = 2
EXIT_EXTRACTION = 3


class ExtractionError(RuntimeError):
    """A stage could not keep at least two sequence members."""


@dataclass
class EngineConfig:
    """Constants of the hypotheses together with the engine controls.

    ``modulus`` switches the Poincare hypothesis to the form
    ``||u - u_B|| <= f(r) mu(alpha B)``; it is a table of ``(r, f(r))`` pairs
    interpolated linearly (``f`` must decrease to 0 with ``r``).
    """

    eps: float = 0.1
    q: float = 1.0
    delta: float = 1.0
    alpha: float = 2.0
    beta: int = 3
    C_D: float = 20.0
    R_D: float = 0.5
    C_P: float = 10.0
    R_P: float = 0.25
    M_K: Optional[float] = None
    modulus: Optional[List[Tuple[float, float]]] = None
    margin_max: int = 4
    max_depth: int = 12
    residual_floor: float = 0.0
    radius_safety: float = 0.9
    metric_tol: float = 0.1
    audit_sources: int = 5
    audit_targets: int = 10
    audit_balls: int = 20
    audit_radii: Optional[List[float]] = None
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if not float(self.eps) > 0:
            raise ValueError("eps must be > 0")
        if not float(self.q) >= 1:
            raise ValueError("q must be >= 1")
        if self.modulus is None and not float(self.delta) > 0:
            raise ValueError("delta must be > 0")
        if not float(self.alpha) >= 1:
            raise ValueError("alpha must be >= 1")
        if int(self.beta) != self.beta or self.beta < 0:
            raise ValueError("beta must be a non-negative integer")
        if not Fraction(2) ** int(self.beta) > 2 * Fraction(self.alpha):
            raise ValueError(f"constraint 2^beta > 2*alpha violated (beta={self.beta}, alpha={self.alpha})")
        for name in ("C_D", "R_D", "C_P", "R_P"):
            if not float(getattr(self, name)) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.C_D < 1:
            raise ValueError("C_D must be >= 1")
        if self.M_K is not None and not self.M_K > 0:
            raise ValueError("M_K must be > 0")
        if not 0 < self.radius_safety < 1:
            raise ValueError("radius_safety must lie in (0, 1)")
        if self.max_depth < 1 or self.margin_max < 0:
            raise ValueError("max_depth >= 1 and margin_max >= 0 required")
        if self.modulus is not None:
            tab = np.asarray(self.modulus, dtype=float)
            if tab.ndim != 2 or tab.shape[1] != 2 or np.any(tab <= 0):
                raise ValueError("modulus must be a table of positive (r, f) pairs")

    @property
    def decay_factor(self) -> Fraction:
        """``1 - 1 / (4 C_D^(beta+3))`` exactly."""
        return 1 - 1 / (4 * Fraction(self.C_D) ** (int(self.beta) + 3))

    def stage_eps(self, i: int) -> float:
        return self.eps * 2.0 ** (1 - i)

    def stage_radius(self, eps_i: float) -> float:
        """Covering radius strictly below ``min(eps^(1/delta), R_D/4, 2 alpha R_P)``."""
        first = eps_i ** (1.0 / self.delta) if self.modulus is None else math.inf
        return self.radius_safety * min(first, self.R_D / 4, 2 * self.alpha * self.R_P)

    def f(self, r: float) -> float:
        """Poincare modulus at ``r`` (``C_P r^delta`` unless a table is given)."""
        if self.modulus is None:
            return self.C_P * r ** self.delta
        tab = np.asarray(sorted(self.modulus), dtype=float)
        return float(np.interp(r, tab[:, 0], tab[:, 1]))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StageRecord:
    stage: int
    eps: float
    radius: float
    margin: int
    centers: np.ndarray
    L: int
    A: np.ndarray
    J: int
    dropped: List[int]
    indices: List[int]
    eta: float
    C0: float
    bound: float
    chain_bound: float
    measured: float
    residual: Fraction
    decay_bound: Fraction
    covering: dict = field(default_factory=dict)

    @property
    def decay_ok(self) -> bool:
        return self.residual <= self.decay_bound

    @property
    def sound(self) -> bool:
        return self.measured <= 2 * self.bound * (1 + 1e-12) + 1e-15

    def to_dict(self) -> dict:
        return {
            "stage": self.stage, "eps": self.eps, "radius": self.radius, "margin": self.margin,
            "num_centers": int(self.centers.size), "L": self.L, "A_size": int(self.A.size),
            "J": self.J, "dropped": self.dropped, "indices": self.indices, "eta": self.eta,
            "C0": self.C0, "bound": self.bound, "chain_bound": self.chain_bound,
            "measured": self.measured, "residual": float(self.residual),
            "residual_exact": str(self.residual), "decay_bound": float(self.decay_bound),
            "decay_ok": self.decay_ok, "sound": self.sound, "covering": self.covering,
        }


@dataclass
class LevelRecord:
    """All stages for one compact set of the exhaustion."""

    K_index: int
    K_mass: float
    stages: List[StageRecord]

    @property
    def indices(self) -> List[int]:
        return self.stages[-1].indices

    @property
    def A_masks(self) -> List[np.ndarray]:
        return [s.A for s in self.stages]


@dataclass
class AuditReport:
    metric: dict
    doubling: dict
    poincare: dict
    mass: dict

    @property
    def passed(self) -> bool:
        return all(p["pass"] for p in (self.metric, self.doubling, self.poincare, self.mass))

    def failures(self) -> List[str]:
        names = {"metric": "(i) metric convergence", "doubling": "(ii) doubling",
                 "poincare": "(iii) Poincare", "mass": "(iv) mass bound"}
        return [names[k] for k in names if not getattr(self, k)["pass"]]

    def to_dict(self) -> dict:
        return {"metric": self.metric, "doubling": self.doubling, "poincare": self.poincare,
                "mass": self.mass, "pass": self.passed}


@dataclass
class CompactnessReport:
    status: str
    audit: Optional[AuditReport]
    levels: List[LevelRecord]
    diagonal: List[int]
    cauchy: Dict[int, List[Tuple[int, float]]]
    limit: Optional[GridFunction]
    message: str = ""
    regions: List[np.ndarray] = field(default_factory=list)

    @property
    def exit_code(self) -> int:
        return {"ok": EXIT_OK, "audit_failed": EXIT_AUDIT, "extraction_failed": EXIT_EXTRACTION}[self.status]

    def nested(self) -> bool:
        lists = [s.indices for lv in self.levels for s in lv.stages]
        for a, b in zip(lists, lists[1:]):
            if not set(b) <= set(a):
                return False
        return all(all(x < y for x, y in zip(l, l[1:])) for l in lists)

    def to_dict(self) -> dict:
        return {
            "status": self.status, "exit_code": self.exit_code, "message": self.message,
            "audit": None if self.audit is None else self.audit.to_dict(),
            "levels": [{"K_index": lv.K_index, "K_mass": lv.K_mass,
                        "stages": [s.to_dict() for s in lv.stages]} for lv in self.levels],
            "diagonal": self.diagonal,
            "cauchy": {str(k): [[h, v] for h, v in tab] for k, tab in self.cauchy.items()},
            "nested": self.nested(),
        }

    def to_json(self) -> str:
        return json.dumps(_finite(self.to_dict()), indent=1, sort_keys=True)


def _finite(obj):
    """Replace non-finite floats so reports are strict JSON."""
    if isinstance(obj, float) and not math.isfinite(obj):
        return "inf" if obj > 0 else ("-inf" if obj < 0 else "nan")
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_finite(v) for v in obj]
    if isinstance(obj, np.generic):
        return _finite(obj.item())
    return obj


# -- exact mass bookkeeping ----------------------------------------------------------

def exact_mass(weights: np.ndarray, idx=None) -> Fraction:
    """Exact rational sum of the (float) weights."""
    w = weights if idx is None else weights[idx]
    vals, counts = np.unique(w, return_counts=True)
    return sum((Fraction(float(v)) * int(c) for v, c in zip(vals, counts)), Fraction(0))


def margin_set(K: np.ndarray, shape: Optional[Tuple[int, ...]], weights: np.ndarray,
               cfg: EngineConfig, within: Optional[np.ndarray] = None) -> Tuple[np.ndarray, int]:
    """Largest cell dilation ``U`` of ``K`` with ``lambda(U \\ K) <= lambda(K) / (4 C_D^(beta+3))``.

    ``K`` and ``within`` are boolean masks over the sample.  On a finite
    sample every set is open, so the zero margin ``U = K`` is always
    admissible.
    """
    if shape is None:
        return K.copy(), 0
    lamK = exact_mass(weights, K)
    cap = lamK / (4 * Fraction(cfg.C_D) ** (int(cfg.beta) + 3))
    best, best_c = K.copy(), 0
    grid = K.reshape(shape)
    struct = ndimage.generate_binary_structure(len(shape), len(shape))
    for c in range(1, cfg.margin_max + 1):
        U = ndimage.binary_dilation(grid, struct, iterations=c).reshape(-1)
        if within is not None:
            U &= within
        if exact_mass(weights, U & ~K) > cap:
            break
        best, best_c = U, c
    return best, best_c


# -- per-stage work ------------------------------------------------------------------

def _segment_sums(ptr: np.ndarray, vals: np.ndarray) -> np.ndarray:
    out = np.zeros(ptr.size - 1)
    nz = np.diff(ptr) > 0
    if vals.size:
        out[nz] = np.add.reduceat(vals, ptr[:-1][nz])
    return out


def _contained(ptr_a, idx_a, ptr_b, idx_b, M: int) -> np.ndarray:
    """Per ball ``l``: is ``A_l`` a subset of ``B_l``?"""
    nA = np.diff(ptr_a)
    keys_a = np.repeat(np.arange(nA.size), nA) * M + idx_a
    keys_b = np.repeat(np.arange(ptr_b.size - 1), np.diff(ptr_b)) * M + idx_b
    inside = np.isin(keys_a, keys_b)
    bad = np.zeros(nA.size, dtype=bool)
    np.logical_or.at(bad, np.repeat(np.arange(nA.size), nA)[~inside], True)
    return ~bad


def largest_cluster(vectors: np.ndarray, eta: float) -> np.ndarray:
    """Largest set of rows within sup-distance ``eta`` of one of its members.

    Every pair in the returned set differs by at most ``2 eta`` per
    coordinate.  Ties go to the lowest anchor row; the result is sorted.
    """
    V = np.asarray(vectors, dtype=np.float64)
    best = np.zeros(0, dtype=np.int64)
    for a in range(V.shape[0]):
        members = np.nonzero(np.max(np.abs(V - V[a]), axis=1) <= eta)[0]
        if members.size > best.size:
            best = members
    return best


def _lq_norm(diff: np.ndarray, w: np.ndarray, q: float) -> float:
    return float(np.dot(w, np.abs(diff) ** q)) ** (1.0 / q)


def stage_extract(spaces: SpaceSequence, U_vals: np.ndarray, MU_vals: np.ndarray,
                  K: np.ndarray, indices: Sequence[int], cfg: EngineConfig, stage: int = 1,
                  shape: Optional[Tuple[int, ...]] = None, U_prev: Optional[np.ndarray] = None,
                  K_total: Optional[Fraction] = None, removed_before: Fraction = Fraction(0)
                  ) -> Tuple[StageRecord, np.ndarray]:
    """One covering / selection step on the residual set ``K`` (boolean mask).

    ``U_vals[j-1]`` and ``MU_vals[j-1]`` hold ``u_j`` and the cell masses of
    ``mu_j`` at the sample points.  Returns the stage record and the margin
    set used (later stages must stay inside it).
    """
    space = spaces.limit
    w = space.weights
    M = space.size
    eps_i = cfg.stage_eps(stage)
    r = cfg.stage_radius(eps_i)
    Kidx = np.nonzero(K)[0]
    if Kidx.size == 0:
        raise ExtractionError("empty residual set")
    U, c = margin_set(K, shape, w, cfg, U_prev)

    cov = five_r_covering(space, 2 * r, candidates=Kidx)
    if not (cov.disjoint and cov.covered):
        raise ExtractionError("covering certificates failed")
    centers = cov.centers
    L = centers.size - 1
    sb = 2.0 ** -int(cfg.beta)

    ptr_s, idx_s, _ = space.metric.balls_csr(centers, np.full(centers.size, sb * r))
    ptr_b, idx_b, _ = space.metric.balls_csr(centers, np.full(centers.size, r))
    A = np.zeros(M, dtype=bool)
    A[idx_s] = True
    A &= K
    A_idx = np.nonzero(A)[0]
    owner_s = np.repeat(np.arange(centers.size), np.diff(ptr_s))

    # inclusions against every current member, then ball data for the kept ones
    ok, means, osc, mu_half = [], {}, {}, {}
    for j in indices:
        sj = spaces.member(j).metric
        ptr_a, idx_a, _ = sj.balls_csr(centers, np.full(centers.size, r / (2 * cfg.alpha)))
        ptr_h, idx_h, _ = sj.balls_csr(centers, np.full(centers.size, r / 2))
        inc = (_contained(ptr_s, idx_s, ptr_a, idx_a, M).all()
               and _contained(ptr_h, idx_h, ptr_b, idx_b, M).all())
        ok.append(bool(inc))
        u = U_vals[j - 1]
        wa = w[idx_a]
        m = _segment_sums(ptr_a, wa * u[idx_a]) / _segment_sums(ptr_a, wa)
        means[j] = m
        dev = np.abs(u[idx_s] - m[owner_s]) ** cfg.q * w[idx_s]
        osc[j] = _segment_sums(ptr_s, dev) ** (1.0 / cfg.q)
        mu_half[j] = _segment_sums(ptr_h, MU_vals[j - 1][idx_h])
    first = len(ok)
    while first > 0 and ok[first - 1]:
        first -= 1
    kept = list(indices[first:])
    dropped = list(indices[:first])
    if len(kept) < 2:
        raise ExtractionError(f"stage {stage}: fewer than two members satisfy the ball inclusions "
                              f"(J_max too small or the metrics converge too slowly)")

    eta = eps_i / (4 * (L + 1))
    V = np.array([means[j] for j in kept])
    sel = largest_cluster(V, eta)
    if sel.size < 2:
        raise ExtractionError(f"stage {stage}: no two members share ball means within eta={eta:.3g}")
    chosen = [kept[s] for s in sel]

    Mu = max(float(MU_vals[j - 1][U].sum()) for j in chosen)
    if cfg.modulus is None:
        C0 = 2 * cfg.C_P * Mu / (2 * cfg.alpha) ** cfg.delta
        bound = C0 * eps_i
    else:
        C0 = 2 * Mu
        bound = C0 * cfg.f(r / (2 * cfg.alpha))

    # measured oscillation on A and the first (triangle) line of the estimate chain
    wA = w[A_idx]
    vol_s = _segment_sums(ptr_s, w[idx_s]) ** (1.0 / cfg.q)
    measured, chain = 0.0, 0.0
    for a in range(len(chosen)):
        for b in range(a + 1, len(chosen)):
            h, k = chosen[a], chosen[b]
            measured = max(measured, _lq_norm(U_vals[h - 1][A_idx] - U_vals[k - 1][A_idx], wA, cfg.q))
            ch = float(np.sum(osc[h] + osc[k] + np.abs(means[h] - means[k]) * vol_s))
            chain = max(chain, ch)

    K_total = exact_mass(w, K) if K_total is None else K_total
    residual = K_total - removed_before - exact_mass(w, A_idx)
    rec = StageRecord(
        stage=stage, eps=eps_i, radius=r, margin=c, centers=centers, L=L, A=A_idx,
        J=kept[0], dropped=dropped, indices=chosen, eta=eta, C0=C0, bound=bound,
        chain_bound=chain, measured=measured, residual=residual,
        decay_bound=cfg.decay_factor ** stage * K_total,
        covering={"separation": cov.separation, "cover_ratio": cov.cover_ratio,
                  "disjoint": cov.disjoint, "covered": cov.covered},
    )
    return rec, U


def recursive_exhaust(spaces: SpaceSequence, U_vals: np.ndarray, MU_vals: np.ndarray,
                      K: np.ndarray, indices: Sequence[int], cfg: EngineConfig,
                      shape: Optional[Tuple[int, ...]] = None) -> List[StageRecord]:
    """Stages ``1, 2, ...`` with budgets ``eps 2^(1-i)`` until the residual mass
    drops to the floor or the depth cap is hit."""
    w = spaces.limit.weights
    K = np.asarray(K, dtype=bool).copy()
    K_total = exact_mass(w, K)
    floor = Fraction(cfg.residual_floor)
    stages: List[StageRecord] = []
    removed = Fraction(0)
    U_prev = None
    idx = list(indices)
    for i in range(1, cfg.max_depth + 1):
        rec, U_prev = stage_extract(spaces, U_vals, MU_vals, K, idx, cfg, i, shape, U_prev,
                                    K_total, removed)
        stages.append(rec)
        K[rec.A] = False
        removed += exact_mass(w, rec.A)
        idx = rec.indices
        if rec.residual <= floor or not K.any():
            break
    return stages


def diagonalize(index_lists: Sequence[Sequence[int]]) -> List[int]:
    """Diagonal of nested index lists: the h-th entry comes from the h-th list
    (first element above the previous entry), then the last list continues."""
    if not index_lists:
        raise ValueError("no index lists")
    for lst in index_lists:
        if len(lst) < 2:
            raise ExtractionError("fewer than two surviving indices at some level")
    diag: List[int] = []
    for lst in index_lists:
        nxt = [x for x in lst if not diag or x > diag[-1]]
        if not nxt:
            break
        diag.append(nxt[0])
    diag += [x for x in index_lists[-1] if x > diag[-1]]
    if len(diag) < 2:
        raise ExtractionError("diagonal has fewer than two members")
    return diag


def cauchy_modulus(U_vals: np.ndarray, indices: Sequence[int], K: np.ndarray,
                   weights: np.ndarray, q: float = 1.0) -> List[Tuple[int, float]]:
    """``H -> max_{h,k >= H} ||u_h - u_k||_{L^q(K)}`` over subsequence positions
    ``H = 1..n-1`` (``h, k`` range over positions, ``u_h = U_vals[indices[h-1]-1]``)."""
    idx = np.asarray(list(indices), dtype=np.int64)
    n = idx.size
    if n < 2:
        raise ValueError("need at least two members")
    Kidx = np.nonzero(np.asarray(K, dtype=bool))[0]
    w = weights[Kidx]
    sub = U_vals[idx - 1][:, Kidx]
    D = np.zeros((n, n))
    for a in range(n):
        for b in range(a + 1, n):
            D[a, b] = D[b, a] = _lq_norm(sub[a] - sub[b], w, q)
    return [(H, float(D[H - 1:, H - 1:].max())) for H in range(1, n)]


# -- hypotheses ----------------------------------------------------------------------

def hypothesis_audit(spaces: SpaceSequence, U_vals: np.ndarray, MU_vals: np.ndarray,
                     K: np.ndarray, cfg: EngineConfig, indices: Optional[Sequence[int]] = None
                     ) -> AuditReport:
    """Measure the four hypotheses on the sample; never raises on a violation."""
    rng = np.random.default_rng(cfg.seed)
    space = spaces.limit
    w = space.weights
    Kidx = np.nonzero(np.asarray(K, dtype=bool))[0]
    idx = list(range(1, spaces.J + 1)) if indices is None else list(indices)

    # (i) sup |d_j - d| on sampled pairs
    src = rng.choice(Kidx, size=min(cfg.audit_sources, Kidx.size), replace=False)
    tgt = rng.choice(Kidx, size=min(cfg.audit_targets, Kidx.size), replace=False)
    base = np.array([space.metric.distances(int(s), tgt) for s in src])
    dev = []
    for j in idx:
        mj = spaces.member(j).metric
        dj = np.array([mj.distances(int(s), tgt) for s in src])
        dev.append(float(np.max(np.abs(dj - base))))
    metric = {"per_j": list(zip(idx, dev)), "final": dev[-1], "tol": cfg.metric_tol,
              "pass": bool(math.isfinite(dev[-1]) and dev[-1] <= cfg.metric_tol)}

    # (ii) doubling on the limit space
    radii = cfg.audit_radii or [cfg.R_D / 2, cfg.R_D / 4]
    radii = [r for r in radii if 0 < r < cfg.R_D]
    cen = rng.choice(Kidx, size=min(cfg.audit_balls, Kidx.size), replace=False)
    worst, table = doubling_estimate(space, cen, radii)
    wrow = max(table, key=lambda t: t[4])
    doubling = {"max_ratio": worst, "C_D": cfg.C_D, "witness": {"center": wrow[0], "r": wrow[1]},
                "pass": bool(worst <= cfg.C_D)}

    # (iii) Poincare quotients for every member on random balls with r < R_P
    rs = rng.uniform(0.2, 0.95, size=cen.size) * cfg.R_P
    qmax, qwit = 0.0, None
    for j in idx:
        sp = spaces.member(j)
        for c, r in zip(cen, rs):
            scale = r ** cfg.delta if cfg.modulus is None else cfg.f(r)
            val = quotient_from_values(sp, U_vals[j - 1], MU_vals[j - 1], int(c), float(r),
                                       cfg.alpha, cfg.q, scale)
            if val > qmax or qwit is None:
                qmax, qwit = max(val, qmax), {"j": j, "center": int(c), "r": float(r)}
    # in modulus mode the quotient is already divided by f(r), so the bound is 1
    limit = cfg.C_P if cfg.modulus is None else 1.0
    poincare = {"max_quotient": qmax, "bound": limit, "mode": "power" if cfg.modulus is None else "modulus",
                "witness": qwit, "pass": bool(qmax <= limit)}

    # (iv) ||u_j||_{L^1(K)} + mu_j(K)
    masses = [float(np.dot(w[Kidx], np.abs(U_vals[j - 1][Kidx])) + MU_vals[j - 1][Kidx].sum()) for j in idx]
    jw = idx[int(np.argmax(masses))]
    bound = cfg.M_K
    mass = {"max": max(masses), "M_K": bound, "witness": jw, "per_j": list(zip(idx, masses)),
            "pass": bool(bound is None or max(masses) <= bound)}
    if bound is None:
        mass["note"] = "M_K not configured; measured maximum recorded"
    return AuditReport(metric, doubling, poincare, mass)


# -- driver --------------------------------------------------------------------------

def run_engine(spaces: SpaceSequence, u_list: Sequence[GridFunction], mu_list: Sequence[TVMeasure],
               K_masks: Sequence[np.ndarray], cfg: EngineConfig, audit: bool = True,
               indices: Optional[Sequence[int]] = None) -> CompactnessReport:
    """Audit, then exhaust every compact set of the (increasing) exhaustion.

    ``K_masks`` are boolean masks over the grid of ``u_list``; each level
    starts from the previous level's surviving indices.  The limit candidate
    is the last diagonal member, meaningful on the compact sets.
    """
    if len(u_list) != len(mu_list) or len(u_list) < spaces.J:
        raise ValueError("need one function and one variation measure per member")
    shape = tuple(u_list[0].counts)
    U_vals = np.stack([u.values.reshape(-1) for u in u_list])
    MU_vals = np.stack([m.mass.reshape(-1) for m in mu_list])
    masks = [np.asarray(k, dtype=bool).reshape(-1) for k in K_masks]
    idx = list(range(1, spaces.J + 1)) if indices is None else list(indices)
    w = spaces.limit.weights

    rep = None
    if audit:
        rep = hypothesis_audit(spaces, U_vals, MU_vals, masks[-1], cfg, idx)
        if not rep.passed:
            return CompactnessReport("audit_failed", rep, [], [], {}, None,
                                     "hypothesis audit failed: " + ", ".join(rep.failures()))
    levels: List[LevelRecord] = []
    try:
        for li, Kmask in enumerate(masks):
            stages = recursive_exhaust(spaces, U_vals, MU_vals, Kmask, idx, cfg, shape)
            levels.append(LevelRecord(li, float(w[Kmask].sum()), stages))
            idx = stages[-1].indices
        diag = diagonalize([s.indices for lv in levels for s in lv.stages])
    except ExtractionError as exc:
        return CompactnessReport("extraction_failed", rep, levels, [], {}, None, str(exc))
    cauchy = {li: cauchy_modulus(U_vals, diag, Kmask, w, cfg.q) for li, Kmask in enumerate(masks)}
    # only the values on each K_i are asserted; the rest is kept so that
    # derivatives on K see no artificial cut
    limit = u_list[0].like(U_vals[diag[-1] - 1].reshape(shape).copy())
    return CompactnessReport("ok", rep, levels, diag, cauchy, limit, regions=masks)
