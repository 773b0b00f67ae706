import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsecare.errors import DimensionMismatch, NotSymmetric, SingularMatrix, SizeCapExceeded
from sparsecare.linalg import as_sparse, gen_eig_dense, lu_factor, qr_thin, sym_eig


def test_lu_identity():
    x = lu_factor(sp.identity(3)).solve(np.array([1.0, 2.0, 3.0]))
    np.testing.assert_array_equal(x, [1, 2, 3])


def test_lu_diagonal():
    x = lu_factor(sp.diags([2.0, 4.0])).solve(np.ones(2))
    np.testing.assert_allclose(x, [0.5, 0.25])


def test_lu_needs_pivoting():
    x = lu_factor([[0.0, 1.0], [4.0, 2.0]]).solve(np.array([1.0, 0.0]))
    np.testing.assert_allclose(x, [-0.5, 1.0], atol=1e-15)


def test_lu_transposed_solve():
    A = np.array([[0.0, 1.0], [4.0, 2.0]])
    x = lu_factor(A).solve(np.array([1.0, 0.0]), trans=True)
    np.testing.assert_allclose(A.T @ x, [1, 0], atol=1e-15)


def test_lu_complex_rhs_on_real_matrix():
    A = np.array([[3.0, 1.0], [1.0, 2.0]])
    b = np.array([1 + 2j, -1j])
    np.testing.assert_allclose(A @ lu_factor(A).solve(b), b, atol=1e-14)


@pytest.mark.parametrize('A', [np.zeros((3, 3)), [[1.0, 2.0], [2.0, 4.0]],
                               [[1.0, 0.0], [0.0, 1e-17]]])
def test_lu_singular(A):
    with pytest.raises(SingularMatrix):
        lu_factor(A)


def test_lu_rejects_rectangular():
    with pytest.raises(DimensionMismatch):
        lu_factor(np.ones((2, 3)))


def test_duplicates_are_summed():
    A = sp.coo_matrix(([1.0, 2.0], ([0, 0], [0, 0])), shape=(1, 1))
    assert as_sparse(A)[0, 0] == 3.0
    assert as_sparse(A).nnz == 1


def test_lu_random_residual(rng):
    for n in (10, 80, 200):
        A = sp.random(n, n, density=0.05, random_state=rng) + n * sp.identity(n)
        b = rng.standard_normal(n)
        x = lu_factor(A).solve(b)
        assert np.linalg.norm(A @ x - b) <= 1e-10 * np.linalg.norm(b)


def test_qr_identity():
    Q, R = qr_thin(np.eye(2))
    np.testing.assert_allclose(Q, np.eye(2))
    np.testing.assert_allclose(R, np.eye(2))


def test_qr_single_column():
    Q, R = qr_thin(np.array([[3.0], [4.0]]))
    np.testing.assert_allclose(Q.ravel(), [0.6, 0.8])
    np.testing.assert_allclose(R, [[5.0]])


def test_qr_zero_column_flagged():
    _, R = qr_thin(np.zeros((3, 1)))
    assert abs(R[0, 0]) == 0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 30), st.integers(1, 8), st.integers(0, 2 ** 31))
def test_qr_properties(n, k, seed):
    k = min(k, n)
    M = np.random.default_rng(seed).standard_normal((n, k))
    Q, R = qr_thin(M)
    assert np.linalg.norm(Q.T @ Q - np.eye(k)) <= 1e-12
    assert np.linalg.norm(Q @ R - M) <= 1e-12 * np.linalg.norm(M)
    assert np.allclose(R, np.triu(R))
    assert np.all(np.diag(R) >= 0)


def test_sym_eig_diagonal():
    T, lam = sym_eig(np.diag([1.0, 3.0]))
    np.testing.assert_allclose(lam, [3, 1])
    np.testing.assert_allclose(np.abs(T), [[0, 1], [1, 0]])


def test_sym_eig_swap():
    _, lam = sym_eig([[0.0, 1.0], [1.0, 0.0]])
    np.testing.assert_allclose(lam, [1, -1])


def test_sym_eig_zero():
    _, lam = sym_eig(np.zeros((3, 3)))
    np.testing.assert_array_equal(lam, 0)


def test_sym_eig_not_symmetric():
    with pytest.raises(NotSymmetric):
        sym_eig([[0.0, 1.0], [0.0, 0.0]])


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 25), st.integers(0, 2 ** 31))
def test_sym_eig_reconstruction(n, seed):
    M = np.random.default_rng(seed).standard_normal((n, n))
    S = M + M.T
    T, lam = sym_eig(S)
    assert np.linalg.norm(T @ np.diag(lam) @ T.T - S) <= 1e-10 * np.linalg.norm(S)
    assert np.all(np.diff(lam) <= 0)


def test_gen_eig_scalar():
    lam, ninf = gen_eig_dense([[-2.0]], [[1.0]])
    np.testing.assert_allclose(lam, [-2])
    assert ninf == 0


def test_gen_eig_companion():
    lam, _ = gen_eig_dense([[0.0, 1.0], [-2.0, -3.0]], np.eye(2))
    np.testing.assert_allclose(lam, [-1, -2])


def test_gen_eig_all_infinite():
    lam, ninf = gen_eig_dense(np.eye(3), np.zeros((3, 3)))
    assert lam.size == 0 and ninf == 3


def test_gen_eig_mixed_pencil():
    lam, ninf = gen_eig_dense(np.diag([1.0, -5.0]), np.diag([1.0, 0.0]))
    np.testing.assert_allclose(lam, [1])
    assert ninf == 1


def test_gen_eig_shape_checks():
    with pytest.raises(DimensionMismatch):
        gen_eig_dense(np.eye(2), np.eye(3))
    with pytest.raises(SizeCapExceeded):
        gen_eig_dense(np.eye(5), np.eye(5), size_cap=4)
