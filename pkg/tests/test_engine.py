from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cccompact.bv_grid import GridFunction, TVMeasure, step_function, total_variation
from cccompact.engine import (EngineConfig, ExtractionError, cauchy_modulus, diagonalize,
                              hypothesis_audit, largest_cluster, recursive_exhaust, run_engine)
from cccompact.sampled_space import SpaceSequence, euclidean_space
from cccompact.vector_fields import euclidean

N = 33
H = 1 / 32
E = euclidean(2)


def grid(f):
    return GridFunction.from_function(f, [0, 0], [H, H], [N, N])


@pytest.fixture(scope="module")
def spaces():
    u = grid(lambda X: X[:, 0])
    return SpaceSequence.constant(euclidean_space(u.coords(), np.full(N * N, H * H)), 20)


FULL = np.ones(N * N, dtype=bool)
CFG = dict(eps=0.1, C_D=8, R_D=0.5, C_P=10, R_P=0.25, M_K=3)


def tv(us):
    return [total_variation(E, u) for u in us]


def steps(J=20):
    return [grid(step_function(1 / j, 0, 0.5)) for j in range(1, J + 1)]


def test_config_constraint():
    with pytest.raises(ValueError, match=r"2\^beta > 2\*alpha"):
        EngineConfig(alpha=4, beta=3)
    EngineConfig(alpha=3.5, beta=3)
    assert EngineConfig(C_D=4, beta=3).decay_factor == 1 - Fraction(1, 4 * 4 ** 6)


def test_constant_sequence(spaces):
    us = [grid(lambda X: np.full(len(X), 0.7))] * 20
    rep = run_engine(spaces, us, tv(us), [FULL], EngineConfig(**CFG))
    assert rep.status == "ok"
    st_ = rep.levels[0].stages
    assert all(s.bound == 0 and s.measured == 0 for s in st_)
    assert float(st_[-1].residual) <= 0
    assert np.all(rep.limit.values == 0.7)
    assert rep.diagonal == list(range(rep.diagonal[0], 21))
    assert all(v == 0 for _, v in rep.cauchy[0])
    # the first stage removes at least the guaranteed fraction of K
    lamK = Fraction(N * N) * Fraction(H * H)
    first = lamK - st_[0].residual
    assert first >= lamK / (4 * Fraction(8) ** 6)


def test_mollified_steps_sound_nested_decaying(spaces):
    us = steps()
    rep = run_engine(spaces, us, tv(us), [FULL], EngineConfig(**CFG))
    assert rep.status == "ok" and rep.nested()
    for s in rep.levels[0].stages:
        assert s.sound and s.decay_ok and s.covering["disjoint"] and s.covering["covered"]
        assert s.measured <= 2 * s.C0 * s.eps + 1e-15


def test_decay_trace_exact_for_cd4(spaces):
    us = steps()
    cfg = EngineConfig(**dict(CFG, C_D=4))
    stages = recursive_exhaust(spaces, np.stack([u.values.ravel() for u in us]),
                               np.stack([m.mass.ravel() for m in tv(us)]), FULL, range(1, 21), cfg, (N, N))
    lamK = sum(Fraction(float(w)) for w in spaces.limit.weights)
    f = 1 - Fraction(1, 4 * 4 ** 6)
    for s in stages:
        assert s.decay_bound == f ** s.stage * lamK
        assert s.residual <= s.decay_bound


def alternating(J=12):
    a = grid(step_function(0.1, 0, 0.5))
    b = grid(step_function(0.1, 1, 0.5))
    return [a if j % 2 else b for j in range(1, J + 1)]


def test_alternating_two_clusters(spaces):
    us = alternating()
    sp = SpaceSequence(spaces.limit, spaces.member, 12)
    rep = run_engine(sp, us, tv(us), [FULL], EngineConfig(**CFG))
    assert rep.status == "ok"
    for s in rep.levels[0].stages:
        assert len({j % 2 for j in s.indices}) == 1
    U = np.stack([u.values.ravel() for u in us])
    raw = cauchy_modulus(U, range(1, 13), FULL, spaces.limit.weights)
    gap = float(np.sum(spaces.limit.weights * np.abs(U[0] - U[1])))
    assert all(v >= gap - 1e-12 for _, v in raw[:-1])
    assert all(v < 1e-15 for _, v in rep.cauchy[0])


def test_cauchy_modulus_explicit():
    w = np.full(4, 0.25)
    U = np.stack([np.full(4, 1 / h) for h in range(1, 9)])
    tab = cauchy_modulus(U, range(1, 9), np.ones(4, bool), w)
    for H_, v in tab:
        assert v == pytest.approx(1 / H_ - 1 / 8, abs=1e-15)
    assert all(v == 0 for _, v in cauchy_modulus(np.ones((3, 4)), [1, 2, 3], np.ones(4, bool), w))
    with pytest.raises(ValueError):
        cauchy_modulus(U, [1], np.ones(4, bool), w)


def test_bump_tail_limit(spaces):
    base = grid(step_function(0.2, 0, 0.5))
    bump = grid(lambda X: np.exp(-40 * np.sum((X - 0.5) ** 2, axis=1)))
    J = 40
    us = [base.like(base.values + 0.1 * bump.values / j) for j in range(1, J + 1)]
    sp = SpaceSequence.constant(spaces.limit, J)
    # members differ at every j, so the shrinking cluster radius is only met
    # by a long enough tail; two stages keep J small
    rep = run_engine(sp, us, tv(us), [FULL], EngineConfig(**CFG, max_depth=2))
    assert rep.status == "ok"
    w = spaces.limit.weights
    err = float(np.sum(w * np.abs(rep.limit.values - base.values).ravel()))
    last = rep.diagonal[-1]
    assert err == pytest.approx(0.1 * float(np.sum(w * bump.values.ravel())) / last, rel=1e-9)
    assert err <= 2 / last


def test_idempotent(spaces):
    us = steps()
    mus = tv(us)
    first = run_engine(spaces, us, mus, [FULL], EngineConfig(**CFG))
    again = run_engine(spaces, us, mus, [FULL], EngineConfig(**CFG), indices=first.diagonal)
    assert again.status == "ok"
    for a, b in zip(first.levels[0].stages, again.levels[0].stages):
        assert np.array_equal(a.A, b.A)
        assert b.bound <= a.bound + 1e-15
    assert set(again.diagonal) <= set(first.diagonal)


def test_exhaustion_levels(spaces):
    us = steps()
    X = spaces.limit.points
    K1 = (np.abs(X[:, 0] - 0.5) <= 0.25) & (np.abs(X[:, 1] - 0.5) <= 0.25)
    rep = run_engine(spaces, us, tv(us), [K1, FULL], EngineConfig(**CFG))
    assert rep.status == "ok" and len(rep.levels) == 2 and rep.nested()
    assert set(rep.cauchy) == {0, 1}


def test_audit_examples(spaces):
    us = steps()
    U = np.stack([u.values.ravel() for u in us])
    MU = np.stack([m.mass.ravel() for m in tv(us)])
    rep = hypothesis_audit(spaces, U, MU, FULL, EngineConfig(**CFG))
    assert rep.passed
    inj = MU.copy()
    for j in range(1, 21):
        inj[j - 1] = inj[j - 1] + j / FULL.sum()
    bad = hypothesis_audit(spaces, U, inj, FULL, EngineConfig(**CFG))
    assert not bad.passed and bad.failures() == ["(iv) mass bound"] and bad.mass["witness"] == 20
    rs = np.linspace(0.01, 0.5, 50)
    mod = EngineConfig(**dict(CFG, modulus=[(r, r * np.log(1 / r)) for r in rs]))
    rep = hypothesis_audit(spaces, U, MU, FULL, mod)
    assert rep.poincare["mode"] == "modulus" and rep.poincare["pass"]


def test_audit_failure_exit_code(spaces):
    us = steps()
    mus = [TVMeasure(m.mass + j / m.mass.size) for j, m in enumerate(tv(us), 1)]
    rep = run_engine(spaces, us, mus, [FULL], EngineConfig(**CFG))
    assert rep.status == "audit_failed" and rep.exit_code == 2


def test_extraction_failure_exit_code(spaces):
    rng = np.random.default_rng(0)
    us = [grid(lambda X: rng.uniform(-50, 50, len(X))) for _ in range(20)]
    rep = run_engine(spaces, us, tv(us), [FULL], EngineConfig(**CFG), audit=False)
    assert rep.status == "extraction_failed" and rep.exit_code == 3


def test_diagonalize_and_cluster():
    assert diagonalize([[1, 2, 3, 4, 5], [2, 3, 5], [3, 5]]) == [1, 2, 3, 5]
    with pytest.raises(ExtractionError):
        diagonalize([[1, 2], [3]])
    V = np.array([[0.0], [1.0], [0.05], [1.04], [2.0]])
    assert largest_cluster(V, 0.06).tolist() == [0, 2]


@settings(max_examples=8)
@given(st.integers(0, 2 ** 32 - 1))
def test_invariants_random_sequences(spaces, seed):
    rng = np.random.default_rng(seed)
    J = 12
    centers = rng.uniform(0.3, 0.7, size=J)
    us = [grid(step_function(float(rng.uniform(0.05, 0.3)), int(rng.integers(2)), float(c)))
          for c in centers]
    sp = SpaceSequence.constant(spaces.limit, J)
    rep = run_engine(sp, us, tv(us), [FULL], EngineConfig(**CFG), audit=False)
    if rep.status == "ok":
        assert rep.nested()
        for s in rep.levels[0].stages:
            assert s.decay_ok and s.sound
            assert s.covering["disjoint"] and s.covering["covered"]
    else:
        assert rep.status == "extraction_failed"
