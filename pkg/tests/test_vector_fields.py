import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from cccompact import polynomial as P
from cccompact.vector_fields import (FamilyError, PerturbedSequence, builtin_sequence, commutator,
                                     euclidean, eval_field, family_from_spec, heisenberg,
                                     hormander_rank, sup_deviation)

coord = st.floats(-3, 3, allow_nan=False)
point3 = st.tuples(coord, coord, coord)


def test_eval_field_examples():
    assert np.array_equal(eval_field(euclidean(2), 1, (3, 7)), [1, 0])
    assert np.allclose(eval_field(heisenberg(), 1, (0, 2, 0)), [1, 0, -1])
    assert np.allclose(eval_field(heisenberg(), 2, (4, 0, 0)), [0, 1, 2])
    with pytest.raises(IndexError):
        eval_field(heisenberg(), 3, (0, 0, 0))


@given(point3)
def test_heisenberg_brackets_exact_and_fd(x):
    H = heisenberg()
    assert np.allclose(commutator(H, (1, 2), x, "exact"), [0, 0, 1])
    assert np.allclose(commutator(H, (1, 2), x, "fd"), [0, 0, 1], atol=1e-6)
    assert np.allclose(commutator(H, (1, (1, 2)), x), 0)
    assert np.allclose(commutator(euclidean(2), (1, 2), x[:2]), 0)


@given(point3)
def test_bracket_antisymmetry(x):
    fam = builtin_sequence("heisenberg-blowup", 3).member(1)
    a = commutator(fam, (1, 2), x)
    b = commutator(fam, (2, 1), x)
    assert np.allclose(a, -b)


def test_hormander_rank_examples():
    rng = np.random.default_rng(0)
    for x in rng.uniform(-2, 2, size=(10, 3)):
        assert hormander_rank(heisenberg(), x, 1) == 2
        assert hormander_rank(heisenberg(), x, 2) == 3
    assert hormander_rank(euclidean(4), np.zeros(4), 1) == 4


def test_sup_deviation_examples():
    seq = builtin_sequence("euclidean-shift", 10)
    for j in (1, 3, 10):
        assert np.allclose(sup_deviation(seq, j, [[0, 1], [0, 1]]), 1 / j)
    ident = builtin_sequence("identity-euclidean", 5)
    assert np.allclose(sup_deviation(ident, 2, [[0, 1], [0, 1]]), 0)
    shear = builtin_sequence("heisenberg-shear", 8)
    box = [[0, 2]] * 3
    for j in (1, 2, 8):
        d = sup_deviation(shear, j, box)
        assert d[0] == pytest.approx(2 / j) and d[1] == 0


def test_sup_deviation_nonincreasing():
    seq = builtin_sequence("heisenberg-mix", 12)
    d = [sup_deviation(seq, j, [[-1, 1]] * 3).max() for j in range(1, 13)]
    assert all(a >= b for a, b in zip(d, d[1:]))
    assert d[-1] < d[0]


def test_difference_sup_certified_bound_dominates_lattice():
    seq = builtin_sequence("heisenberg-blowup", 4)
    for j in (1, 4):
        cert = seq.difference_sup(j, 1.5)
        assert np.all(cert + 1e-12 >= sup_deviation(seq, j, [[-1, 1]] * 3))


def test_family_spec_roundtrip():
    fam = builtin_sequence("heisenberg-mix", 3).member(2)
    again = family_from_spec(fam.spec())
    rng = np.random.default_rng(1)
    X = rng.normal(size=(20, 3))
    assert np.allclose(fam.coefficients_many(X), again.coefficients_many(X))
    assert fam.fingerprint() == again.fingerprint()


def test_bad_families():
    with pytest.raises(FamilyError):
        builtin_sequence("nope")
    with pytest.raises(FamilyError):
        PerturbedSequence(heisenberg(), [[{}, {}, {}]], 3)
    with pytest.raises(FamilyError):
        commutator(heisenberg(), (1,), (0, 0, 0))


def test_polynomial_bracket_matches_hand_computation():
    # [d_x, x^2 d_t] = 2x d_t
    n = 3
    A = [P.const(1.0, n), {}, {}]
    B = [{}, {}, P.monomial(1.0, (2, 0, 0))]
    C = P.bracket(A, B)
    assert P.evaluate(C[2], (1.5, 0, 0)) == pytest.approx(3.0)
