import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cccompact.lattice import build_graph
from cccompact.sampled_space import (CallableMetric, SampledCompact, SpaceSequence, ball, ball_mean,
                                     doubling_estimate, euclidean_space, five_r_covering,
                                     lattice_space, verify_covering)
from cccompact.vector_fields import heisenberg


def grid1d(n, lo=-1.0, hi=1.0):
    x = np.linspace(lo, hi, n)
    return euclidean_space(x, np.full(n, (hi - lo) / (n - 1)))


def test_ball_examples():
    sp = euclidean_space([[0.3, 0.3]], [2.0])
    idx, mass = ball(sp, 0, 5.0)
    assert idx.tolist() == [0] and mass == 2.0
    g = grid1d(41)
    h = 2 / 40
    idx, _ = ball(g, 20, 2.5 * h)
    assert idx.tolist() == [18, 19, 20, 21, 22]
    assert ball(g, 20, 0.4 * h)[0].tolist() == [20]


def test_ball_mean_examples():
    g = grid1d(41)
    assert ball_mean(g, np.full(41, 3.5), 20, 0.3) == pytest.approx(3.5)
    x = g.points[:, 0]
    assert abs(ball_mean(g, x, 20, 0.5)) < 1e-12
    half = (x > 0).astype(float)
    half[20] = 0.5
    assert ball_mean(g, half, 20, 0.5) == pytest.approx(0.5)


def test_covering_examples():
    one = euclidean_space([[0, 0]])
    c = five_r_covering(one, 1.0)
    assert c.centers.size == 1 and c.disjoint and c.covered
    two = euclidean_space([[0, 0], [10, 0]])
    c = five_r_covering(two, 1.0)
    assert c.centers.size == 2 and c.disjoint and c.covered
    xs = np.linspace(0, 1, 33)
    P = np.array([(a, b) for a in xs for b in xs])
    sq = euclidean_space(P)
    # constant rule: radius r_max / 2 = 0.1
    c = five_r_covering(sq, 0.2)
    D = np.linalg.norm(P[c.centers][:, None] - P[c.centers][None], axis=2)
    np.fill_diagonal(D, np.inf)
    assert D.min() > 0.2
    near = np.linalg.norm(P[:, None] - P[c.centers][None], axis=2).min(axis=1)
    assert near.max() <= 0.5 and c.disjoint and c.covered


@given(st.integers(0, 2 ** 32 - 1), st.integers(5, 80), st.floats(0.02, 0.3))
def test_covering_certificates_hold(seed, npts, r):
    rng = np.random.default_rng(seed)
    P = rng.uniform(0, 1, size=(npts, 2))
    sp = euclidean_space(P, rng.uniform(0.5, 2, size=npts))
    rule = lambda c: r * (0.45 + 0.45 * ((c * 7919) % 13) / 12)  # noqa: E731
    for cov in (five_r_covering(sp, r), five_r_covering(sp, r, radius_rule=rule)):
        assert cov.disjoint and cov.covered
        D = np.linalg.norm(P[cov.centers][:, None] - P[cov.centers][None], axis=2)
        S = cov.radii[:, None] + cov.radii[None]
        off = ~np.eye(cov.centers.size, dtype=bool)
        assert np.all(D[off] > S[off])
        reach = (np.linalg.norm(P[:, None] - P[cov.centers][None], axis=2) / cov.radii[None]).min(axis=1)
        assert reach.max() <= 5.0
        assert verify_covering(sp, cov.centers, cov.radii) == (cov.separation, cov.cover_ratio)


@given(st.integers(0, 2 ** 32 - 1), st.floats(0.01, 0.4), st.floats(1.0, 3.0))
def test_ball_monotone(seed, r, f):
    rng = np.random.default_rng(seed)
    sp = euclidean_space(rng.uniform(0, 1, size=(60, 3)))
    c = int(rng.integers(60))
    small, m1 = ball(sp, c, r)
    big, m2 = ball(sp, c, f * r)
    assert set(small) <= set(big) and m1 <= m2


def test_doubling_examples():
    xs = np.linspace(0, 1, 129)
    P = np.array([(a, b) for a in xs for b in xs])
    sq = euclidean_space(P, np.full(len(P), (1 / 128) ** 2))
    centers = [int(np.argmin(np.linalg.norm(P - (0.5, 0.5), axis=1)))]
    ratio, _ = doubling_estimate(sq, centers, [0.1])
    assert abs(ratio - 4) <= 0.15 * 4
    g = grid1d(2001)
    ratio, _ = doubling_estimate(g, [1000], [0.05, 0.1])
    assert abs(ratio - 2) <= 0.2


def test_heisenberg_doubling_below_homogeneous_bound():
    h = 1 / 64
    g = build_graph(heisenberg(), [[-0.25, 0.25], [-0.25, 0.25], [-0.012, 0.012]], h, 2)
    sp = lattice_space(g)
    c = [g.nearest_node((0, 0, 0))]
    # radii of at least 4 lattice steps (smaller ones hit lattice artefacts)
    ratio, _ = doubling_estimate(sp, c, [0.0625, 0.075])
    assert ratio <= 16 * 1.25


def test_space_sequence_and_metrics():
    sp = grid1d(11)
    seq = SpaceSequence.constant(sp, 4)
    assert seq.member(3) is sp
    with pytest.raises(IndexError):
        seq.member(5)
    cm = CallableMetric(lambda a, b: float(np.abs(sp.points[a] - sp.points[b]).sum()), sp.size)
    alt = SampledCompact(sp.points, sp.weights, cm)
    assert np.allclose(alt.metric.distances(0, [1, 2]), sp.metric.distances(0, [1, 2]))
    ptr, idx, d = sp.metric.balls_csr(np.array([0, 5]), np.array([0.25, 0.25]))
    assert ptr.tolist() == [0, 2, 5] and idx[2:].tolist() == [4, 5, 6]
    with pytest.raises(ValueError):
        SampledCompact(sp.points, -sp.weights, sp.metric)


def test_csv_roundtrip():
    sp = euclidean_space(np.random.default_rng(0).normal(size=(5, 2)))
    P, w = SampledCompact.read_csv(sp.to_csv())
    assert np.array_equal(P, sp.points) and np.array_equal(w, sp.weights)
