import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cccompact.cc_metric import (GraphParams, OptParams, ballbox_check, combine, distance_control_opt,
                                 distance_graph, graph_distances, lower_bound_certified,
                                 metric_deviation, scaling_exponent)
from cccompact.lattice import LatticeGraph, build_graph, primitive_offsets
from cccompact.vector_fields import builtin_sequence, euclidean, heisenberg

DIDO = 2 * math.sqrt(0.1 * math.pi)


@pytest.fixture(scope="module")
def g_euc():
    return build_graph(euclidean(2), [[0, 1], [0, 1]], 1 / 64, 3)


@pytest.fixture(scope="module")
def g_heis():
    return build_graph(heisenberg(), [[-0.3, 1.1], [-0.3, 0.3], [-0.05, 0.05]], 1 / 32, 2)


def _edge(g, a, b):
    s, t = g.nearest_node(a), g.nearest_node(b)
    row = slice(g.indptr[s], g.indptr[s + 1])
    hit = np.nonzero(g.indices[row] == t)[0]
    return None if hit.size == 0 else float(g.weights[row][hit[0]])


def test_edge_examples():
    g = build_graph(euclidean(2), [[0, 1], [0, 1]], 0.25, 1)
    assert _edge(g, (0, 0), (0.25, 0)) == pytest.approx(0.25)
    H = build_graph(heisenberg(), [[-0.5, 0.5], [-0.5, 0.5], [-0.3, 0.3]], 0.25, 1)
    assert _edge(H, (0, 0, 0), (0.25, 0, 0)) == pytest.approx(0.25)
    # no vertical edge: the t direction is not horizontal
    ht = H.spacing[2]
    assert _edge(H, (0, 0, 0), (0, 0, ht)) is None


def test_primitive_offsets_are_primitive():
    for off in primitive_offsets(2, 3):
        assert math.gcd(*map(int, np.abs(off))) == 1


def test_graph_euclidean_examples(g_euc):
    e = distance_graph(g_euc, (0, 0), (1, 0))
    assert e.upper == pytest.approx(1.0, rel=0.01) and e.lower <= 1.0 <= e.upper


def test_graph_heisenberg_examples(g_heis):
    e = distance_graph(g_heis, (0, 0, 0), (1, 0, 0))
    assert abs(e.upper - 1) <= 0.05 and e.lower <= 1 + 1e-12


def test_control_opt_examples():
    e = distance_control_opt(euclidean(2), (0, 0), (0.3, 0.4), 8)
    assert e.upper == pytest.approx(0.5, abs=1e-3)
    e = distance_control_opt(heisenberg(), (0, 0, 0), (1, 0, 0), 16)
    assert e.upper <= 1.02
    e = distance_control_opt(heisenberg(), (0, 0, 0), (0, 0, 0.1), 32)
    assert abs(e.upper - DIDO) <= 0.05 * DIDO
    assert e.lower <= DIDO <= e.upper * (1 + 1e-9)


@pytest.mark.parametrize("seed", [0, 1, 2, 3])
def test_control_opt_seed_independent(seed):
    e = distance_control_opt(heisenberg(), (0, 0, 0), (0, 0, 0.1), 32, OptParams(seed=seed))
    assert math.isfinite(e.upper) and abs(e.upper - DIDO) <= 0.01 * DIDO


def test_lower_bounds():
    assert lower_bound_certified(heisenberg(), (1, 2, 3), (1, 2, 3)) == 0.0
    rng = np.random.default_rng(3)
    for x, y in rng.uniform(-1, 1, size=(6, 2, 3)):
        lo = lower_bound_certified(heisenberg(), x, y)
        ub = distance_control_opt(heisenberg(), x, y, 8).upper
        assert lo <= ub * (1 + 1e-9)


@given(st.integers(0, 2 ** 31), st.integers(0, 2 ** 31))
def test_graph_metric_axioms(g_heis, a, b):
    n = g_heis.num_nodes
    s, t = a % n, b % n
    d_st = g_heis.distances_from(s)
    d_ts = g_heis.distances_from(t)
    assert d_st[s] == 0
    assert d_st[t] == pytest.approx(d_ts[s], rel=1e-12)
    k = (a + b) % n
    assert d_st[k] <= d_st[t] + g_heis.distances_from(t)[k] + 1e-12


def test_combine_keeps_best():
    a = distance_graph(build_graph(heisenberg(), [[-0.3, 1.1], [-0.3, 0.3], [-0.05, 0.05]], 1 / 16, 2),
                       (0, 0, 0), (1, 0, 0))
    b = distance_control_opt(heisenberg(), (0, 0, 0), (1, 0, 0), 8)
    c = combine(a, b)
    assert c.upper == min(a.upper, b.upper) and c.lower >= max(a.lower, b.lower) - 1e-15


def test_ballbox_examples():
    ts = [0.004, 0.01, 0.025, 0.06, 0.1]
    pairs = [((0, 0, 0), (0, 0, t)) for t in ts]
    ests = [distance_control_opt(heisenberg(), x, y, 24) for x, y in pairs]
    slope = scaling_exponent(ts, [e.upper for e in ests])
    assert 0.45 <= slope <= 0.55
    assert ballbox_check(pairs, ests, s=2).C_K < 10
    assert ballbox_check(pairs, ests, s=1, C_max=3.0).violations > 0
    rng = np.random.default_rng(0)
    ep = [(x, y) for x, y in rng.uniform(0, 1, size=(10, 2, 2))]
    ee = [distance_control_opt(euclidean(2), x, y, 4) for x, y in ep]
    assert ballbox_check(ep, ee, s=1).C_K == pytest.approx(1.0, abs=1e-3)


def test_metric_deviation_examples():
    rng = np.random.default_rng(0)
    box = [[0, 1], [0, 1]]
    gp = GraphParams(box, 1 / 16, 2)
    sample = np.round(rng.uniform(0, 1, size=(12, 2)) * 16) / 16
    pairs = [(i, i + 1) for i in range(0, 12, 2)]
    ident = builtin_sequence("identity-euclidean", 4)
    assert metric_deviation(ident, 3, sample, pairs, gp).deviation == 0.0
    sc = builtin_sequence("euclidean-scaled", 8)
    cache = {}
    devs = [metric_deviation(sc, j, sample, pairs, gp, cache) for j in (1, 2, 4, 8)]
    for j, r in zip((1, 2, 4, 8), devs):
        assert np.allclose(r.d_member, r.d_limit / (1 + 1 / j), rtol=1e-12)
    vals = [r.deviation for r in devs]
    assert all(a > b for a, b in zip(vals, vals[1:]))


def test_graph_save_load(tmp_path, g_heis):
    p = tmp_path / "g.npz"
    g_heis.save(p)
    h = LatticeGraph.load(p, heisenberg())
    assert h.cache_key() == g_heis.cache_key()
    assert np.array_equal(h.indptr, g_heis.indptr) and np.array_equal(h.weights, g_heis.weights)


def test_graph_distances_pairs(g_euc):
    s = g_euc.nearest_node((0, 0))
    t = g_euc.nearest_node((1, 1))
    d = graph_distances(g_euc, [(s, t), (t, s)])
    assert d[0] == pytest.approx(d[1]) and d[0] >= math.sqrt(2) - 1e-12
