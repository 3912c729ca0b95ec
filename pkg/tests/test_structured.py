import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from _inputs import random_structured
from qbdsolve.structured import (
    FallbackToDense,
    StructuredB,
    invert_B_structured,
    structure_of,
    tridiagonal_inverse,
)


@given(n=st.integers(2, 60), seed=st.integers(0, 2**32 - 1), data=st.data())
@settings(max_examples=60, deadline=None)
def test_structured_inverse_matches_dense(n, seed, data):
    entrance = data.draw(st.integers(0, n - 1))
    rng = np.random.default_rng(seed)
    B = random_structured(rng, n, entrance)
    C = invert_B_structured(B)
    dense = np.linalg.inv(B.to_dense())
    assert np.max(np.abs(C - dense)) <= 1e-9 * np.max(np.abs(dense))


@given(n=st.integers(5, 80), seed=st.integers(0, 2**32 - 1))
@settings(max_examples=30, deadline=None)
def test_inverse_of_subgenerator_is_nonpositive(n, seed):
    # B is a subgenerator (nonnegative off-diagonal, nonpositive row sums),
    # so -B^-1 is entrywise nonnegative
    rng = np.random.default_rng(seed)
    B = random_structured(rng, n, 0)
    C = invert_B_structured(B)
    assert np.all(C <= 1e-12 * np.abs(C).max())


def test_constant_coefficient_pivots_agree_with_general_path():
    rng = np.random.default_rng(3)
    B = random_structured(rng, 300, 0, homogeneous=True)
    assert B.element_homogeneous
    general = StructuredB(B.b_up, B.b_down, B.b_z, B.b_diag, B.entrance, False)
    np.testing.assert_allclose(invert_B_structured(B), invert_B_structured(general), rtol=1e-10, atol=1e-14)


def test_element_homogeneity_ignores_boundary_rows():
    n = 10
    B = StructuredB.from_rates(np.full(n, 1.0), np.full(n, 2.0), np.full(n, 0.5), entrance=0, leak=np.full(n, 0.1))
    assert B.element_homogeneous
    up = np.full(n, 1.0)
    up[5] = 1.5
    assert not StructuredB.from_rates(up, np.full(n, 2.0), np.full(n, 0.5), 0).element_homogeneous


def test_structure_of_roundtrip_and_rejection():
    rng = np.random.default_rng(0)
    B = random_structured(rng, 12, 4)
    sb = structure_of(B.to_dense(), 4)
    np.testing.assert_array_equal(sb.to_dense(), B.to_dense())
    dense = B.to_dense()
    dense[0, 7] = 0.3
    assert structure_of(dense, 4) is None


def test_structure_of_with_extra_column_equals_assembled():
    rng = np.random.default_rng(5)
    n, c = 9, 3
    W = StructuredB.from_rates(rng.uniform(0.1, 1, n), rng.uniform(0.1, 1, n), np.zeros(n), c).to_dense()
    extra = rng.uniform(0, 1, n)
    assembled = W.copy()
    assembled[:, c] += extra
    np.testing.assert_allclose(structure_of(W, c, extra).to_dense(), assembled)


def test_tridiagonal_inverse_small():
    T = np.array([[-3.0, 1.0, 0.0], [2.0, -4.0, 1.0], [0.0, 1.0, -2.0]])
    C = tridiagonal_inverse(np.diag(T), np.r_[0, np.diag(T, -1)], np.r_[np.diag(T, 1), 0])
    np.testing.assert_allclose(C, np.linalg.inv(T), rtol=1e-13)


def test_singular_matrix_falls_back():
    # rows sum to zero: B is a generator and singular
    B = StructuredB.from_rates(np.full(6, 1.0), np.full(6, 1.0), np.zeros(6), 0)
    with pytest.raises(FallbackToDense):
        invert_B_structured(B)
