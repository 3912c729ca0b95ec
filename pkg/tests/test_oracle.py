import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

import _oracles as o
from qbdsolve.errors import DivergenceError, SingularMatrixError
from qbdsolve.oracle import compare_distributions, direct_steady_state, fixed_point_R


def test_two_state_chain():
    Q = sp.csr_matrix(np.array([[-1.0, 1.0], [1.0, -1.0]]))
    np.testing.assert_allclose(direct_steady_state(Q).to_array(), [0.5, 0.5], atol=1e-15)


def test_mm1_truncated_is_geometric():
    lam, mu, cap = 1.0, 2.0, 30
    Q = sp.diags([np.full(cap - 1, lam), np.full(cap - 1, mu)], [1, -1]).tolil()
    Q.setdiag(-np.asarray(Q.sum(axis=1)).ravel())
    pi = direct_steady_state(Q.tocsr()).to_array()
    geo = 0.5 ** np.arange(cap)
    np.testing.assert_allclose(pi, geo / geo.sum(), rtol=0, atol=1e-15)


def test_level_sizes_split_the_vector():
    Q = sp.csr_matrix(np.array([[-1.0, 1.0, 0.0], [1.0, -2.0, 1.0], [0.0, 1.0, -1.0]]))
    state = direct_steady_state(Q, (1, 2))
    assert state.level_sizes == (1, 2)


def test_reducible_generator_rejected():
    Q = sp.csr_matrix(np.zeros((3, 3)))
    with pytest.raises(SingularMatrixError):
        direct_steady_state(Q)


@given(lam=st.floats(0.05, 0.95))
@settings(max_examples=30, deadline=None)
def test_scalar_fixed_point_is_rho(lam):
    # M/M/1 as a QBD with 1x1 blocks: R = lambda / mu
    R = fixed_point_R(np.array([[lam]]), np.array([[-(lam + 1.0)]]), np.array([[1.0]]))
    assert abs(R[0, 0] - lam) < 1e-12


def test_zero_up_block_gives_zero_R():
    A1 = np.array([[-2.0, 1.0], [0.5, -1.5]])
    R = fixed_point_R(np.zeros((2, 2)), A1, np.eye(2))
    assert np.all(R == 0)


def test_fixed_point_agrees_with_test_oracle():
    A0, A1, A2 = o.lpc_blocks({(0, 1): 0.15, (0, -1): 0.35, (1, 0): 0.2, (1, 1): 0.1, (1, -1): 0.2}, 10)
    np.testing.assert_allclose(fixed_point_R(A0, A1, A2), o.fixed_point(A0, A1, A2), atol=1e-13)


def test_fixed_point_reports_non_convergence():
    with pytest.raises(DivergenceError, match="residual"):
        fixed_point_R(np.array([[0.99]]), np.array([[-1.99]]), np.array([[1.0]]), max_iter=5)


def test_compare_identical_and_permuted():
    a = np.array([0.1, 0.2, 0.3, 0.4])
    report = compare_distributions(a, a.copy(), tol=0.0)
    assert report.linf_error == 0.0 and report.passed
    perm = np.array([3, 2, 1, 0])
    assert compare_distributions(a, a[::-1], perm).linf_error == 0.0


def test_compare_size_mismatch():
    with pytest.raises(ValueError):
        compare_distributions(np.ones(3) / 3, np.ones(4) / 4)


def test_compare_report_fields():
    r = compare_distributions(np.array([0.5, 0.5]), np.array([0.4, 0.6]), tol=1e-7)
    assert not r.passed
    assert r.linf_error == pytest.approx(0.1)
    assert r.l1_error == pytest.approx(0.2)
    assert set(r.to_dict()) >= {"linf_error", "l1_error", "tolerance", "passed"}
