"""Scenario recipes: each runner turns a validated config into a result.

Runners are deterministic given the config seed.  They return summary
numbers, CSV tables and optional artifact writers; the CLI adds the
resolved config, the tool version hash and (outside deterministic mode)
timings.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, List, Optional

import numpy as np

from .bv_grid import (GridFunction, TVMeasure, quotient_from_values,
                      semicontinuity_check, step_function, total_variation)
from .cc_metric import (CCMetricEstimate, GraphParams, OptParams, ballbox_check, combine,
                        distance_control_opt, distance_graph, metric_deviation, scaling_exponent)
from .engine import EXIT_OK, EngineConfig, cauchy_modulus, hypothesis_audit, run_engine
from .flows import Control, gronwall_bound, integrate, observed_radius, sequence_lipschitz
from .lattice import build_graph
from .sampled_space import (SpaceSequence, doubling_estimate, euclidean_space, five_r_covering,
                            lattice_space)
from .vector_fields import (BUILTIN_SEQUENCES, PolynomialFamily, builtin_sequence, family_from_spec,
                            sequence_from_spec)


@dataclass
class ScenarioResult:
    kind: str
    summary: dict
    tables: Dict[str, List[list]] = field(default_factory=dict)
    exit_code: int = EXIT_OK
    artifacts: Dict[str, Callable[[Path], None]] = field(default_factory=dict)
    timings: Dict[str, float] = field(default_factory=dict)
    extra: dict = field(default_factory=dict)


def _rng(cfg: dict) -> np.random.Generator:
    return np.random.default_rng(int(cfg.get("seed", 0)))


def _params(cfg: dict) -> dict:
    return cfg.get("params", {}) or {}


def _grid(cfg: dict):
    g = cfg["grid"]
    return np.asarray(g["box"], dtype=float), float(g["h"]), int(g.get("neighbor_radius", 3))


def _uniform_in(rng, box, count: int) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    return box[:, 0] + rng.random((count, box.shape[0])) * (box[:, 1] - box[:, 0])


def _exact_distance(family) -> Optional[Callable]:
    """Exact distance for constant full-rank families (a linear change of variables)."""
    if isinstance(family, PolynomialFamily) and family.m == family.n and family.is_constant():
        return lambda x, y: float(family.certified_lower(x, y))
    return None


# -- distance -------------------------------------------------------------------------

def run_distance(cfg: dict) -> ScenarioResult:
    rng = _rng(cfg)
    prm = _params(cfg)
    fam = family_from_spec(cfg["family"])
    box, h, nr = _grid(cfg)
    t0 = time.perf_counter()
    graph = build_graph(fam, box, h, nr)
    t_build = time.perf_counter() - t0
    pairs = [(np.asarray(a, float), np.asarray(b, float)) for a, b in prm.get("pairs", [])]
    oracle = list(prm.get("oracle", [])) + [None] * max(0, len(pairs) - len(prm.get("oracle", [])))
    nrand = int(prm.get("random_pairs", 0))
    if nrand:
        sbox = prm.get("sample_box", box.tolist())
        pts = _uniform_in(rng, sbox, 2 * nrand)
        pairs += [(pts[2 * k], pts[2 * k + 1]) for k in range(nrand)]
        oracle += [None] * nrand
    if prm.get("node_pairs", False):
        pairs = [(graph.coords(graph.nearest_node(a)), graph.coords(graph.nearest_node(b))) for a, b in pairs]
    exact = _exact_distance(fam)
    if exact is not None:
        oracle = [exact(a, b) if o is None else o for (a, b), o in zip(pairs, oracle)]
    methods = prm.get("estimators", ["graph"])
    opt = OptParams(restarts=int(prm.get("restarts", 4)), seed=int(cfg.get("seed", 0)))
    rows = [["x", "y", "graph_upper", "control_upper", "lower", "upper", "oracle", "certified"]]
    results = []
    t0 = time.perf_counter()
    for (a, b), o in zip(pairs, oracle):
        ests: List[CCMetricEstimate] = []
        g_up = c_up = math.nan
        if "graph" in methods:
            e = distance_graph(graph, a, b)
            g_up = e.upper
            ests.append(e)
        if "control" in methods:
            e = distance_control_opt(fam, a, b, int(prm.get("segments", 16)), opt)
            c_up = e.upper
            ests.append(e)
        est = combine(*ests) if len(ests) > 1 else ests[0]
        results.append((est, o, g_up, c_up))
        rows.append([" ".join(f"{v:.17g}" for v in a), " ".join(f"{v:.17g}" for v in b),
                     g_up, c_up, est.lower, est.upper, "" if o is None else o, est.certified])
    t_est = time.perf_counter() - t0
    summary = {"pairs": len(pairs), "graph_nodes": graph.num_nodes, "graph_edges": graph.num_edges,
               "estimates": [{"x": a.tolist(), "y": b.tolist(), "lower": r[0].lower, "upper": r[0].upper,
                              "graph_upper": r[2], "control_upper": r[3], "oracle": r[1]}
                             for (a, b), r in zip(pairs[:20], results[:20])]}
    if fam.name != "heisenberg" and not fam.name.startswith(("euclidean", "step2_")):
        summary["caveat"] = ("bounded metric balls are assumed; only finite-horizon escape "
                             "is checked for user-supplied fields")
    with_oracle = [(r[0], r[1]) for r in results if r[1] is not None]
    if with_oracle:
        summary["max_upper_error"] = max(abs(e.upper - o) for e, o in with_oracle)
        summary["max_relative_error"] = max(abs(e.upper - o) / o for e, o in with_oracle if o > 0)
        summary["bracketed"] = all(e.lower <= o * (1 + 1e-12) + 1e-15 and o <= e.upper * (1 + 1e-12) + 1e-15
                                   for e, o in with_oracle)
    if "graph" in methods and "control" in methods:
        summary["estimator_agreement"] = max(abs(r[2] - r[3]) / max(r[2], r[3]) for r in results)
    return ScenarioResult("distance", summary, {"estimates": rows},
                          timings={"build": t_build, "estimate": t_est})


# -- metric convergence ---------------------------------------------------------------

def _node_sample(rng, graph_spacing, sbox, count):
    pts = _uniform_in(rng, sbox, count)
    return np.round(pts / graph_spacing) * graph_spacing


def run_converge_metric(cfg: dict, default_sequence: Optional[str] = None) -> ScenarioResult:
    rng = _rng(cfg)
    prm = _params(cfg)
    seq = sequence_from_spec(cfg["sequence"]) if "sequence" in cfg else builtin_sequence(default_sequence)
    box, h, nr = _grid(cfg)
    js = [int(j) for j in prm.get("js", [1, 2, 4, 8, 16])]
    npairs = int(prm.get("random_pairs", 50))
    sbox = prm.get("sample_box", [[0.0, 1.0]] * seq.limit.n)
    sp = seq.limit.lattice_spacing(h)
    S = _node_sample(rng, sp, sbox, 2 * npairs) if prm.get("node_pairs", True) else _uniform_in(rng, sbox, 2 * npairs)
    pairs = [(2 * k, 2 * k + 1) for k in range(npairs)]
    gp = GraphParams(box.tolist(), h, nr)
    cache: dict = {}
    rows = [["j", "deviation", "worst_pair"]]
    devs = []
    for j in js:
        r = metric_deviation(seq, j, S, pairs, gp, cache)
        devs.append(r.deviation)
        rows.append([j, r.deviation, r.worst_pair])
    summary = {"sequence": seq.name, "js": js, "deviations": devs,
               "strictly_decreasing": all(b < a for a, b in zip(devs, devs[1:])),
               "slope": scaling_exponent(js, devs) if len(js) > 1 and min(devs) > 0 else None}
    return ScenarioResult("converge-metric", summary, {"deviation": rows})


def run_blowup(cfg: dict) -> ScenarioResult:
    """Metric convergence of a dilation sequence plus the ball-box scaling of its limit."""
    res = run_converge_metric(cfg, default_sequence="heisenberg-blowup")
    res.kind = "blowup-demo"
    prm = _params(cfg)
    seq = sequence_from_spec(cfg["sequence"]) if "sequence" in cfg else builtin_sequence("heisenberg-blowup")
    box, h, nr = _grid(cfg)
    ts = prm.get("ballbox_t", [0.01, 0.02, 0.04, 0.08])
    graph = build_graph(seq.limit, box, h, nr)
    n = seq.limit.n
    pairs = [(np.zeros(n), np.eye(n)[-1] * t) for t in ts]
    ests = [distance_graph(graph, a, b) for a, b in pairs]
    bb = ballbox_check(pairs, ests, s=seq.limit.step)
    res.summary["ballbox"] = {"C_K": bb.C_K, "violations": bb.violations,
                              "exponent": scaling_exponent(ts, [e.upper for e in ests])}
    res.tables["ballbox"] = [["size", "lower", "upper"]] + [list(r) for r in bb.table]
    return res


# -- flows ----------------------------------------------------------------------------

def random_subunit_control(rng, m: int, T_max: float, N: int) -> Control:
    T = float(rng.uniform(0.1, 1.0) * T_max)
    v = rng.normal(size=(N, m))
    v /= np.linalg.norm(v, axis=1, keepdims=True)
    v *= rng.random((N, 1)) ** (1.0 / m)
    return Control(T, v)


def run_flow_compare(cfg: dict) -> ScenarioResult:
    rng = _rng(cfg)
    prm = _params(cfg)
    if "sequences" in prm:
        seqs = [builtin_sequence(s, j_max=max(prm.get("js", [20]))) for s in prm["sequences"]]
    elif "sequence" in cfg:
        seqs = [sequence_from_spec(cfg["sequence"])]
    else:
        seqs = [builtin_sequence(s) for s in BUILTIN_SEQUENCES]
    js = [int(j) for j in prm.get("js", range(1, 21))]
    nctl = int(prm.get("controls", 100))
    T_max = float(prm.get("T_max", 1.0))
    N = int(prm.get("control_segments", 8))
    steps = int(prm.get("steps_per_segment", 4))
    rows = [["sequence", "j", "control", "T", "deviation", "bound", "ok"]]
    total = ok = 0
    worst = 0.0
    for seq in seqs:
        sbox = prm.get("sample_box", [[-0.5, 0.5]] * seq.limit.n)
        ctrls = [random_subunit_control(rng, seq.m, T_max, N) for _ in range(nctl)]
        x0s = _uniform_in(rng, sbox, nctl)
        for j in js:
            paths, devs = [], []
            for c, x0 in zip(ctrls, x0s):
                a = integrate(seq.limit, x0, c, steps, raise_on_escape=True)
                b = integrate(seq.member(j), x0, c, steps, raise_on_escape=True)
                paths += [a, b]
                devs.append(float(np.max(np.linalg.norm(a.states - b.states, axis=1))))
            R = observed_radius(*paths)
            C = sequence_lipschitz(seq, j, R)
            for k, (c, dv) in enumerate(zip(ctrls, devs)):
                bd = gronwall_bound(seq, j, c.T, R, C)
                good = dv <= bd * (1 + 1e-9) + 1e-13
                total += 1
                ok += good
                if bd > 0:
                    worst = max(worst, dv / bd)
                rows.append([seq.name, j, k, c.T, dv, bd, good])
    summary = {"sequences": [s.name for s in seqs], "cases": total, "sound": ok,
               "fraction_sound": ok / total if total else 1.0, "worst_ratio": worst}
    return ScenarioResult("flow-compare", summary, {"gronwall": rows})


# -- grid functions from specs ----------------------------------------------------------

def make_functions(spec: dict, origin, spacing, counts, J: int) -> List[GridFunction]:
    """``u_1..u_J`` on a grid from a function recipe."""
    kind = spec.get("kind", "mollified-step")
    axis = int(spec.get("axis", 0))
    off = float(spec.get("offset", 0.0))
    width = spec.get("width", "1/j")
    out = []
    for j in range(1, J + 1):
        if kind == "constant":
            f = lambda X, v=float(spec.get("value", 1.0)): np.full(X.shape[0], v)
        elif kind in ("mollified-step", "alternating", "bump-tail"):
            w = 1.0 / j if width == "1/j" else float(width)
            f = step_function(w, axis, off)
            if kind == "alternating" and j % 2 == 0:
                f = (lambda g: lambda X: 1.0 - g(X))(f)
            if kind == "bump-tail":
                f0 = step_function(float(width) if width != "1/j" else 0.0, axis, off)
                amp = float(spec.get("amplitude", 1.0)) / j
                f = (lambda f0, amp: lambda X: f0(X) + amp * np.exp(-np.sum(X * X, axis=1) / 0.02))(f0, amp)
        else:
            raise ValueError(f"unknown function kind {kind!r}")
        out.append(GridFunction.from_function(f, origin, spacing, counts))
    return out


def reference_function(spec: dict, origin, spacing, counts) -> Optional[GridFunction]:
    """Expected limit of a recipe (the sharp step for steps of shrinking width)."""
    kind = spec.get("kind", "mollified-step")
    if kind == "mollified-step" and spec.get("width", "1/j") == "1/j":
        return GridFunction.from_function(step_function(0.0, int(spec.get("axis", 0)),
                                                        float(spec.get("offset", 0.0))),
                                          origin, spacing, counts)
    if kind == "constant":
        return GridFunction.from_function(lambda X: np.full(X.shape[0], float(spec.get("value", 1.0))),
                                          origin, spacing, counts)
    return None


def _box_mask(coords: np.ndarray, box) -> np.ndarray:
    box = np.asarray(box, dtype=float)
    tol = 1e-9 * np.maximum(1.0, np.abs(box).max())
    return np.all((coords >= box[:, 0] - tol) & (coords <= box[:, 1] + tol), axis=1)


# -- Poincare -------------------------------------------------------------------------

def run_poincare(cfg: dict) -> ScenarioResult:
    rng = _rng(cfg)
    prm = _params(cfg)
    seq = sequence_from_spec(cfg["sequence"])
    box, h, nr = _grid(cfg)
    js = [int(j) for j in prm.get("js", range(1, 11))]
    spaces = SpaceSequence.from_lattices(seq, box, h, nr, J=max(js))
    g = spaces.graph
    uspec = dict(prm.get("u", {"kind": "mollified-step", "width": 4 * h}))
    if uspec.get("width", "1/j") == "1/j":
        uspec["width"] = 4 * h
    u = make_functions(uspec, g.origin, g.spacing, g.counts, 1)[0]
    X = g.all_coords()
    cand = np.nonzero(_box_mask(X, prm.get("center_box", box.tolist())))[0]
    nb = int(prm.get("balls", 50))
    cen = rng.choice(cand, size=min(nb, cand.size), replace=False)
    lo, hi = prm.get("r_range", [0.05, 0.2])
    rs = rng.uniform(lo, hi, size=cen.size)
    alpha = float(prm.get("alpha", 2.0))
    uv = u.values.reshape(-1)
    rows = [["j", "center", "r", "quotient"]]
    per_j = []
    for j in js:
        sp = spaces.member(j)
        mu = total_variation(seq.member(j), u).mass.reshape(-1)
        qs = [quotient_from_values(sp, uv, mu, int(c), float(r), alpha, 1.0) for c, r in zip(cen, rs)]
        per_j.append(max(qs))
        rows += [[j, int(c), float(r), q] for c, r, q in zip(cen, rs, qs)]
    summary = {"sequence": seq.name, "js": js, "max_quotient": per_j,
               "uniformity_ratio": max(per_j) / min(per_j) if min(per_j) > 0 else math.inf,
               "empirical_C_P": max(per_j), "alpha": alpha, "balls": int(cen.size)}
    return ScenarioResult("poincare", summary, {"quotients": rows})


# -- doubling and covering --------------------------------------------------------------

def run_doubling(cfg: dict) -> ScenarioResult:
    rng = _rng(cfg)
    prm = _params(cfg)
    fam = family_from_spec(cfg["family"])
    box, h, nr = _grid(cfg)
    levels = [float(v) for v in prm.get("levels", [h])]
    radii = [float(r) for r in prm.get("radii", [0.1])]
    ref = prm.get("reference")
    metric = prm.get("metric", "graph")
    cpts = None if "centers" not in prm else np.asarray(prm["centers"], dtype=float)
    if cpts is None:
        cpts = _uniform_in(rng, prm.get("center_box", box.tolist()), int(prm.get("balls", 10)))
    rows = [["h", "center", "r", "inner", "outer", "ratio"]]
    per_level = []
    for hl in levels:
        graph = build_graph(fam, box, hl, nr)
        if metric == "euclidean":
            sp = euclidean_space(graph.all_coords(), np.full(graph.num_nodes, float(np.prod(graph.spacing))))
        else:
            sp = lattice_space(graph)
        cen = np.unique([graph.nearest_node(p) for p in cpts])
        mx, tab = doubling_estimate(sp, cen, radii)
        entry = {"h": hl, "max_ratio": mx, "min_ratio": min(t[4] for t in tab)}
        if ref:
            entry["max_relative_error"] = max(abs(t[4] / ref - 1) for t in tab)
        per_level.append(entry)
        rows += [[hl, *t] for t in tab]
    summary = {"family": fam.name, "metric": metric, "radii": radii, "levels": per_level,
               "max_ratio": max(e["max_ratio"] for e in per_level)}
    if ref:
        errs = [e["max_relative_error"] for e in per_level]
        summary["reference"] = ref
        summary["errors_decreasing"] = all(b < a for a, b in zip(errs, errs[1:]))
    return ScenarioResult("doubling", summary, {"doubling": rows})


def run_covering(cfg: dict) -> ScenarioResult:
    rng = _rng(cfg)
    prm = _params(cfg)
    clouds = int(prm.get("clouds", 20))
    npts = int(prm.get("points", 300))
    dim = int(prm.get("dim", 2))
    r_max = float(prm.get("r_max", 0.2))
    rows = [["cloud", "rule", "centers", "separation", "cover_ratio", "disjoint", "covered"]]
    ok = True
    for c in range(clouds):
        pts = rng.random((npts, dim))
        sp = euclidean_space(pts, rng.uniform(0.5, 1.5, npts))
        fr = rng.uniform(0.2, 0.95, npts) * r_max
        for rule, res in (("constant", five_r_covering(sp, r_max)),
                          ("variable", five_r_covering(sp, r_max, radius_rule=lambda i: fr[i]))):
            ok &= res.disjoint and res.covered
            rows.append([c, rule, int(res.centers.size), res.separation, res.cover_ratio,
                         res.disjoint, res.covered])
    return ScenarioResult("covering", {"clouds": clouds, "points": npts, "all_certified": bool(ok)},
                          {"covering": rows})


# -- compactness ----------------------------------------------------------------------

def engine_config(cfg: dict) -> EngineConfig:
    eng = dict(cfg.get("engine", {}) or {})
    eng.setdefault("seed", int(cfg.get("seed", 0)) % (2 ** 32))
    if eng.get("modulus") is not None:
        eng["modulus"] = [tuple(p) for p in eng["modulus"]]
    return EngineConfig(**eng)


def run_compactness(cfg: dict) -> ScenarioResult:
    prm = _params(cfg)
    seq = sequence_from_spec(cfg["sequence"])
    J = seq.j_max
    box, h, nr = _grid(cfg)
    ecfg = engine_config(cfg)
    t0 = time.perf_counter()
    spaces = SpaceSequence.from_lattices(seq, box, h, nr, J=J)
    g = spaces.graph
    uspec = prm.get("u", {"kind": "mollified-step"})
    us = make_functions(uspec, g.origin, g.spacing, g.counts, J)
    mus = [total_variation(seq.member(j), us[j - 1]) for j in range(1, J + 1)]
    X = g.all_coords()
    masks = [_box_mask(X, K) for K in prm.get("K", [box.tolist()])]
    if prm.get("inject") == "mass":
        # variation measures with mu_j(K) = j, spread uniformly over K
        K = masks[-1]
        for j, mu in enumerate(mus, start=1):
            mass = np.zeros(mu.mass.size)
            mass[K] = j / K.sum()
            mus[j - 1] = TVMeasure(mass.reshape(mu.mass.shape))
    t_setup = time.perf_counter() - t0
    w = spaces.limit.weights
    summary: dict = {"sequence": seq.name, "J": J, "cells": int(g.num_nodes),
                     "K_mass": [float(w[m].sum()) for m in masks]}
    tables: Dict[str, List[list]] = {}
    artifacts: Dict[str, Callable[[Path], None]] = {}
    U_vals = np.stack([u.values.reshape(-1) for u in us])
    raw = cauchy_modulus(U_vals, list(range(1, J + 1)), masks[-1], w, ecfg.q)
    summary["cauchy_without_extraction"] = raw[-1][1]
    summary["cauchy_without_extraction_min"] = min(v for _, v in raw)
    tables["cauchy_raw"] = [["H", "modulus"]] + [list(r) for r in raw]
    t0 = time.perf_counter()
    if not prm.get("extract", True):
        MU_vals = np.stack([m.mass.reshape(-1) for m in mus])
        audit = hypothesis_audit(spaces, U_vals, MU_vals, masks[-1], ecfg)
        summary["audit"] = audit.to_dict()
        code = EXIT_OK if audit.passed else 2
        return ScenarioResult("compactness", summary, tables, code,
                              timings={"setup": t_setup, "engine": time.perf_counter() - t0})
    rep = run_engine(spaces, us, mus, masks, ecfg)
    t_engine = time.perf_counter() - t0
    summary["engine"] = rep.to_dict()
    summary["status"] = rep.status
    summary["message"] = rep.message
    summary["caveat"] = ("set measures (lambda(A_i), lambda(U_1 \\ K)) are sample sums over cells; "
                         "the gap to the continuum measure is not bounded")
    stages = [["K", "stage", "eps", "radius", "margin", "centers", "A_cells", "J", "kept",
               "measured", "bound", "chain_bound", "residual", "decay_bound", "decay_ok"]]
    for lv in rep.levels:
        for s in lv.stages:
            stages.append([lv.K_index, s.stage, s.eps, s.radius, s.margin, int(s.centers.size), int(s.A.size),
                           s.J, len(s.indices), s.measured, s.bound, s.chain_bound, float(s.residual),
                           float(s.decay_bound), s.decay_ok])
    tables["stages"] = stages
    if rep.status == "ok":
        tables["cauchy"] = [["K", "H", "modulus"]] + [[k, H, v] for k, tab in rep.cauchy.items() for H, v in tab]
        summary["cauchy_final"] = rep.cauchy[len(masks) - 1][-1][1]
        summary["decay_ok"] = all(s.decay_ok for lv in rep.levels for s in lv.stages)
        summary["sound"] = all(s.sound for lv in rep.levels for s in lv.stages)
        summary["nested"] = rep.nested()
        Kl = masks[-1]
        ref = reference_function(uspec, g.origin, g.spacing, g.counts)
        if ref is not None:
            diff = np.abs(rep.limit.values.reshape(-1) - ref.values.reshape(-1))
            summary["limit_L1_to_reference"] = float(np.dot(w[Kl], diff[Kl]))
        summary["semicontinuity_slack"] = semicontinuity_check(
            seq, us, rep.limit, region=Kl.reshape(g.counts))
        limit = rep.limit
        artifacts["limit"] = lambda out: limit.save(out / "limit")
    return ScenarioResult("compactness", summary, tables, rep.exit_code,
                          artifacts=artifacts, timings={"setup": t_setup, "engine": t_engine},
                          extra={"report": rep})


RUNNERS: Dict[str, Callable[[dict], ScenarioResult]] = {
    "distance": run_distance,
    "converge-metric": run_converge_metric,
    "flow-compare": run_flow_compare,
    "poincare": run_poincare,
    "doubling": run_doubling,
    "covering": run_covering,
    "compactness": run_compactness,
    "blowup-demo": run_blowup,
}


def run_scenario(cfg: dict) -> ScenarioResult:
    return RUNNERS[cfg["scenario"]](cfg)
