"""Desk-scale dense solvers for Riccati, Lyapunov and Bernoulli equations.

All equations are in the generalized (``E``) form used throughout the package:

    CARE       A^T X E + E^T X A - E^T X B B^T X E + C^T C = 0
    Lyapunov   A^T X E + E^T X A = -W W^T
    Bernoulli  A^T X E + E^T X A = E^T X B B^T X E

They solve the small projected equations inside the Krylov solver and serve
as reference solutions in the tests.
"""

import numpy as np
import scipy.linalg as spla

from sparsecare.errors import (DimensionMismatch, ImaginaryAxisEigenvalue, NoStabilizingSolution,
                               NotStabilizable, UnstablePencil)
from sparsecare.linalg import fro, gen_eig_dense

# Relative distance from the imaginary axis below which an eigenvalue counts as on it.
AXIS_RTOL = 1e-12


def _as2d(M, rows=None):
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if rows is not None and M.shape[0] != rows and M.size == rows:
        M = M.reshape(rows, -1)
    return M


def care_residual(E, A, B, C, X):
    """Explicit residual matrix of the generalized CARE at `X`."""
    XE = X @ E
    return A.T @ XE + XE.T @ A - XE.T @ B @ (B.T @ XE) + C.T @ C


def lyap_residual(E, A, W, X):
    XE = X @ E
    return A.T @ XE + XE.T @ A + W @ W.T


def solve_care_dense(E, A, B, C, refine=2):
    """Stabilizing solution of the generalized CARE.

    Uses the ordered generalized Schur form of the Hamiltonian pencil

        [ A    -B B^T ]       [ E  0  ]
        [ -C^T C  -A^T ]  - s [ 0  E^T ]

    whose stable deflating subspace is spanned by ``[I; X E]``.  Up to
    `refine` Newton (Kleinman) steps polish the result; a step is kept only
    if it lowers the residual.

    Raises
    ------
    ImaginaryAxisEigenvalue
        If the Hamiltonian pencil has eigenvalues on the imaginary axis.
    NoStabilizingSolution
        If the computed `X` does not stabilize ``(A - B B^T X E, E)``.
    """
    A = _as2d(A)
    n = A.shape[0]
    E = np.eye(n) if E is None else _as2d(E)
    B = _as2d(B, n)
    C = _as2d(C)
    if E.shape != (n, n) or B.shape[0] != n or C.shape[1] != n:
        raise DimensionMismatch('inconsistent CARE data')
    if n == 0:
        return np.zeros((0, 0))
    if not np.any(C):
        # Zero constant term: X = 0 is stabilizing exactly when (A, E) is stable.
        lam, _ = gen_eig_dense(A, E)
        if np.all(lam.real < 0):
            return np.zeros((n, n))
    H = np.block([[A, -B @ B.T], [-C.T @ C, -A.T]])
    L = np.block([[E, np.zeros((n, n))], [np.zeros((n, n)), E.T]])
    scale = max(fro(H), 1.0)

    def stable(alpha, beta):
        return np.real(alpha * np.conj(beta)) < -AXIS_RTOL * np.abs(alpha * np.conj(beta))

    _, _, alpha, beta, _, Zq = spla.ordqz(H / scale, L, sort=stable, output='real')
    lam = alpha / np.where(beta == 0, np.finfo(float).tiny, beta)
    n_stable = int(np.sum(stable(alpha, beta)))
    if n_stable != n:
        raise ImaginaryAxisEigenvalue(
            f'Hamiltonian pencil has {n_stable} stable eigenvalues, need {n}; '
            f'min |Re| = {np.min(np.abs(lam.real)):.3e}')
    U1, U2 = Zq[:n, :n], Zq[n:, :n]
    try:
        X = np.linalg.solve((E @ U1).T, U2.T).T
    except np.linalg.LinAlgError as exc:
        raise NoStabilizingSolution('stable subspace is not a graph subspace') from exc
    X = 0.5 * (X + X.T)
    res = fro(care_residual(E, A, B, C, X))
    floor = 1e-14 * max(fro(C.T @ C), 1e-300)
    for _ in range(refine):
        if res <= floor:
            break
        K = B.T @ X @ E
        try:
            X_new = solve_lyap_dense(E, A - B @ K, np.hstack([C.T, K.T]))
        except UnstablePencil:
            break
        res_new = fro(care_residual(E, A, B, C, X_new))
        if not res_new < res:
            break
        X, res = X_new, res_new
    closed, _ = gen_eig_dense(A - B @ (B.T @ X @ E), E)
    if closed.size and np.max(closed.real) >= 0:
        raise NoStabilizingSolution(f'closed loop not stable, max Re = {np.max(closed.real):.3e}')
    return X


def solve_lyap_dense(E, A, W):
    """Solve ``A^T X E + E^T X A = -W W^T`` for a stable pencil ``(A, E)``.

    The equation is transformed with ``Y = E^T X E`` to a standard Lyapunov
    equation for ``E^{-1} A`` and solved by Bartels-Stewart.
    """
    A = _as2d(A)
    n = A.shape[0]
    E = np.eye(n) if E is None else _as2d(E)
    W = _as2d(W, n)
    if E.shape != (n, n) or W.shape[0] != n:
        raise DimensionMismatch('inconsistent Lyapunov data')
    if n == 0:
        return np.zeros((0, 0))
    lam, _ = gen_eig_dense(A, E)
    if lam.size and np.max(lam.real) >= 0:
        raise UnstablePencil(f'pencil not stable, max Re = {np.max(lam.real):.3e}')
    if not np.any(W):
        return np.zeros((n, n))
    F = np.linalg.solve(E, A)
    Y = spla.solve_continuous_lyapunov(F.T, -W @ W.T)
    Einv_T = np.linalg.inv(E).T
    X = Einv_T @ Y @ Einv_T.T
    return 0.5 * (X + X.T)


def solve_bernoulli_dense(E, A, B):
    """Feedback ``K0 = B^T X E`` from the stabilizing Bernoulli solution.

    The pencil ``(A^T, E^T)`` is brought to ordered real generalized Schur
    form with the antistable eigenvalues leading.  On that deflating
    subspace the Bernoulli equation reduces to a small Lyapunov equation
    ``N^T P + P N = Bt Bt^T`` with antistable ``N = S11 T11^{-1}`` and
    ``Bt = T11^{-T} Z1^T B``; its solution gives
    ``X = Z1 T11^{-1} P^{-1} T11^{-T} Z1^T``.  Stable eigenvalues are left in
    place and antistable ones are mirrored across the imaginary axis.
    """
    A = _as2d(A)
    n = A.shape[0]
    E = np.eye(n) if E is None else _as2d(E)
    B = _as2d(B, n)
    p = B.shape[1]
    if n == 0:
        return np.zeros((p, 0))
    lam, _ = gen_eig_dense(A, E)
    scale = max(np.max(np.abs(lam)) if lam.size else 1.0, 1e-300)
    if lam.size and np.min(np.abs(lam.real)) <= AXIS_RTOL * scale:
        raise ImaginaryAxisEigenvalue('pencil has eigenvalues on the imaginary axis')
    n_unstable = int(np.sum(lam.real > 0))
    if n_unstable == 0:
        return np.zeros((p, n))

    def antistable(alpha, beta):
        return np.real(alpha * np.conj(beta)) > 0

    S, T, _, _, _, Zq = spla.ordqz(A.T, E.T, sort=antistable, output='real')
    r = n_unstable
    S11, T11, Z1 = S[:r, :r], T[:r, :r], Zq[:, :r]
    N = np.linalg.solve(T11.T, S11.T).T
    Bt = np.linalg.solve(T11.T, Z1.T @ B)
    P = spla.solve_continuous_lyapunov(N.T, Bt @ Bt.T)
    P = 0.5 * (P + P.T)
    if np.min(np.linalg.eigvalsh(P)) <= 1e-14 * max(np.max(np.abs(P)), 1e-300):
        raise NotStabilizable('antistable part is not controllable through B')
    M = np.linalg.solve(T11, np.linalg.solve(P, np.linalg.inv(T11).T))
    X = Z1 @ M @ Z1.T
    X = 0.5 * (X + X.T)
    return B.T @ X @ E
