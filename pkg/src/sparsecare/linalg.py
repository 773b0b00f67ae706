"""Numeric substrate: sparse LU, thin QR, symmetric and generalized eigenproblems.

Everything here is a thin, contract-checking layer over SuperLU and LAPACK.
"""

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sp
import scipy.sparse.linalg as spsla

from sparsecare.errors import DimensionMismatch, NotSymmetric, SingularMatrix, SizeCapExceeded

SINGULAR_RTOL = 1e-14
EIG_SIZE_CAP = 4000


def as_sparse(A):
    """Return `A` as a CSC matrix with duplicate entries summed."""
    if sp.issparse(A):
        A = A.tocsc(copy=True)
    else:
        A = sp.csc_matrix(np.atleast_2d(np.asarray(A)))
    A.sum_duplicates()
    return A


def fro(M):
    return float(np.linalg.norm(M)) if np.size(M) else 0.0


class SparseLU:
    """LU factorization of a square sparse matrix, reusable for many solves.

    Parameters
    ----------
    A
        Square sparse (or dense) matrix, real or complex.

    Raises
    ------
    SingularMatrix
        If SuperLU meets an exact zero pivot or a pivot below
        ``1e-14 * max|A_ij|``.
    """

    def __init__(self, A):
        A = as_sparse(A)
        if A.shape[0] != A.shape[1]:
            raise DimensionMismatch(f'matrix must be square, got {A.shape}')
        self.shape = A.shape
        self.dtype = A.dtype
        self.n = A.shape[0]
        if self.n == 0:
            self._lu = None
            return
        scale = abs(A).max() if A.nnz else 0.0
        if scale == 0.0:
            raise SingularMatrix('matrix is identically zero')
        try:
            self._lu = spsla.splu(A)
        except RuntimeError as exc:
            raise SingularMatrix(str(exc)) from exc
        pivots = np.abs(self._lu.U.diagonal())
        if pivots.min() <= SINGULAR_RTOL * scale:
            raise SingularMatrix(
                f'pivot {pivots.min():.3e} below threshold {SINGULAR_RTOL * scale:.3e}')

    def solve(self, b, trans=False):
        """Solve ``A x = b`` (or ``A^T x = b`` when `trans`; no conjugation)."""
        b = np.asarray(b)
        if b.shape[0] != self.n:
            raise DimensionMismatch(f'rhs has {b.shape[0]} rows, expected {self.n}')
        if self._lu is None or b.size == 0:
            return np.zeros(b.shape, dtype=np.result_type(self.dtype, b.dtype))
        if np.iscomplexobj(b) and not np.iscomplexobj(np.empty(0, self.dtype)):
            return (self._lu.solve(np.ascontiguousarray(b.real), trans='T' if trans else 'N')
                    + 1j * self._lu.solve(np.ascontiguousarray(b.imag), trans='T' if trans else 'N'))
        rhs = np.ascontiguousarray(b, dtype=np.result_type(self.dtype, b.dtype))
        return self._lu.solve(rhs, trans='T' if trans else 'N')


def lu_factor(A):
    return SparseLU(A)


def qr_thin(M):
    """Economy QR with the diagonal of `R` made nonnegative.

    Rank-deficient input is not an error; inspect ``abs(diag(R))``.
    """
    M = np.atleast_2d(np.asarray(M, dtype=float))
    n, k = M.shape
    if k == 0:
        return np.zeros((n, 0)), np.zeros((0, 0))
    Q, R = spla.qr(M, mode='economic')
    signs = np.where(np.diag(R) < 0, -1.0, 1.0)
    return Q * signs, R * signs[:, None]


def sym_eig(S, rtol=1e-10):
    """Eigendecomposition ``S = T diag(lam) T^T`` with `lam` sorted descending."""
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if S.shape[0] != S.shape[1]:
        raise DimensionMismatch(f'matrix must be square, got {S.shape}')
    nrm = fro(S)
    if fro(S - S.T) > rtol * nrm:
        raise NotSymmetric(f'asymmetry {fro(S - S.T):.3e} exceeds {rtol:g}*||S||')
    lam, T = np.linalg.eigh(0.5 * (S + S.T))
    order = np.argsort(lam)[::-1]
    return T[:, order], lam[order]


def gen_eig_dense(A, E, size_cap=EIG_SIZE_CAP):
    """Finite eigenvalues of the pencil ``(A, E)``.

    Returns
    -------
    finite
        Complex array of finite eigenvalues, sorted by real part descending.
    n_infinite
        Number of infinite eigenvalues (directions where `E` is singular).
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    E = np.atleast_2d(np.asarray(E, dtype=float))
    if A.shape != E.shape or A.shape[0] != A.shape[1]:
        raise DimensionMismatch(f'pencil shapes differ: {A.shape} vs {E.shape}')
    if A.shape[0] > size_cap:
        raise SizeCapExceeded(f'dense eigenproblem of size {A.shape[0]} exceeds cap {size_cap}')
    if A.shape[0] == 0:
        return np.zeros(0, dtype=complex), 0
    ab = spla.eigvals(A, E, homogeneous_eigvals=True)
    alpha, beta = ab[0], ab[1]
    inf_mask = np.abs(beta) <= 1e-13 * np.abs(alpha)
    finite = alpha[~inf_mask] / beta[~inf_mask]
    finite = finite[np.lexsort((-finite.imag, -finite.real))]
    return finite, int(inf_mask.sum())
