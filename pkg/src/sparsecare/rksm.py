"""Sparsity-preserving rational Krylov subspace method for the descriptor CARE.

The basis is built from shifted solves with the pre-stabilized operator
``A_f = A - B K0`` on the sparse (n1+n2) block form,

    V_0 = orth(E^{-T} C^T),   v_{j+1} = (A_f^T - mu_j E^T)^{-1} E^T v_j,

which is the usual rational Krylov space of ``E^{-1} A`` mapped back to the
range of `X` (for ``E = I`` it is the plain one).  The projected CARE is
the Galerkin projection of the *original* reduced CARE

    A^T X E + E^T X A - E^T X B B^T X E + C^T C = 0,

so the returned factor approximates its stabilizing solution and the
returned feedback is ``K = B^T Z Z^T E1``.  None of this forms the dense
reduced matrix ``A``.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla

from sparsecare.dense import solve_care_dense
from sparsecare.descriptor import ShiftedSolver, apply_reduced
from sparsecare.errors import DivergenceDetected, SingularShiftedSystem
from sparsecare.linalg import fro, qr_thin
from sparsecare.lowrank import (LowRankFactor, bootstrap_feedback, feedback_from_factor,
                                require_no_feedthrough, truncate_factor)
from sparsecare.shifts import RksmShiftEngine, ritz_values, rksm_region_seeds

logger = logging.getLogger(__name__)

BREAKDOWN_RTOL = 1e-12


@dataclass
class KrylovBasis:
    """Orthonormal rational Krylov basis together with ``A^T V`` and ``E^T V``.

    ``blocks`` lists the column slices added by each expansion and
    ``coeffs`` the Gram-Schmidt coefficients of each expansion against the
    columns present before it (the Hessenberg bookkeeping).
    """

    V: np.ndarray
    AtV: np.ndarray
    EtV: np.ndarray
    beta0: np.ndarray
    blocks: list = field(default_factory=list)
    coeffs: list = field(default_factory=list)

    @property
    def width(self):
        return self.V.shape[1]

    def last_block(self):
        # Continuation vectors: the trailing columns, as many as in the first block.
        # A complex shift adds twice that many, which must not compound.
        width = self.blocks[0].stop
        return self.V[:, -width:]


@dataclass
class ProjectedSolution:
    X_hat: np.ndarray
    E_hat: np.ndarray
    A_hat: np.ndarray
    B_hat: np.ndarray
    C_hat: np.ndarray


@dataclass
class RksmReport:
    iterations: int = 0
    residual_history: list = field(default_factory=list)
    abs_residual_history: list = field(default_factory=list)
    feedback_history: list = field(default_factory=list)
    rank: int = 0
    basis_width: int = 0
    shifts: list = field(default_factory=list)
    converged: bool = False
    wall_time: float = 0.0
    tolerance: float = 0.0


def solve_shifted_block(model, K0, mu, rhs, solver=None):
    """Solve ``((A - B K0)^T - mu E^T) v = rhs`` through the sparse block form.

    On a singular shifted system the shift is perturbed by ``1e-8 |mu|`` and
    the solve retried once.
    """
    solver = solver or ShiftedSolver(model)
    try:
        return solver.solve(-mu, rhs, K=K0, trans=True)
    except SingularShiftedSystem:
        mu_p = mu + 1e-8 * abs(mu)
        logger.warning('shift %s hits the spectrum, retrying with %s', mu, mu_p)
        return solver.solve(-mu_p, rhs, K=K0, trans=True)


def _orthogonalize(V, W, rtol=BREAKDOWN_RTOL):
    """Two-pass Gram-Schmidt of the columns of `W` against `V` and each other.

    Returns the accepted orthonormal columns and the coefficient block.
    """
    n = W.shape[0]
    Q = np.zeros((n, 0)) if V is None else V
    k0 = Q.shape[1]
    new = []
    for j in range(W.shape[1]):
        w = W[:, j].copy()
        nrm0 = np.linalg.norm(w)
        if nrm0 == 0:
            continue
        basis = np.column_stack([Q] + new) if new else Q
        for _ in range(2):
            w -= basis @ (basis.T @ w)
        nrm = np.linalg.norm(w)
        if nrm <= rtol * nrm0:
            continue
        new.append(w / nrm)
    added = np.column_stack(new) if new else np.zeros((n, 0))
    full = np.hstack([Q, added])
    coeff = full.T @ W
    return added, coeff[:k0 + added.shape[1]]


def expand_basis(basis, v_new, model):
    """Append the part of `v_new` orthogonal to the basis.

    Numerically dependent columns (relative remainder below 1e-12) are
    dropped, so the width grows by the number of surviving columns.
    """
    v_new = np.atleast_2d(np.asarray(v_new, dtype=float))
    if v_new.shape[0] != model.n1:
        v_new = v_new.T
    added, coeff = _orthogonalize(basis.V, v_new)
    k = basis.width
    basis.coeffs.append(coeff)
    if added.shape[1]:
        basis.V = np.hstack([basis.V, added])
        basis.AtV = np.hstack([basis.AtV, apply_reduced(model, 'At', added)])
        basis.EtV = np.hstack([basis.EtV, apply_reduced(model, 'Et', added)])
        basis.blocks.append(slice(k, k + added.shape[1]))
    return added.shape[1]


def initial_basis(model):
    """Orthonormal basis of ``E^{-T} C^T``.

    ``beta0`` is the triangular factor of the thin QR of ``C^T`` itself, so
    that ``||beta0^T beta0||_F = ||C^T C||_F`` normalizes the residual.
    """
    Ct = model.Ct_red
    n1 = model.n1
    basis = KrylovBasis(V=np.zeros((n1, 0)), AtV=np.zeros((n1, 0)), EtV=np.zeros((n1, 0)),
                        beta0=qr_thin(Ct)[1])
    expand_basis(basis, model.E1_lu.solve(Ct, trans=True), model)
    basis.coeffs.clear()
    return basis


def project_system(model, V):
    """Projected matrices from sparse products and `J4` solves only.

    ``E_hat = V^T E1 V``, ``A_hat = V^T J1 V - (V^T J2) J4^{-1} (J3 V)``,
    ``B_hat = V^T B1 - (V^T J2) J4^{-1} B2``, ``C_hat = C1 V - C2 J4^{-1} (J3 V)``.
    """
    J3V = model.J3 @ V
    VtJ2 = (model.J2.T @ V).T
    J4_J3V = model.J4_lu.solve(J3V)
    E_hat = V.T @ (model.E1 @ V)
    A_hat = V.T @ (model.J1 @ V) - VtJ2 @ J4_J3V
    B_hat = V.T @ model.B1.toarray() - VtJ2 @ model.J4_lu.solve(model.B2.toarray())
    C_hat = model.C1 @ V - model.C2 @ J4_J3V
    return E_hat, A_hat, np.asarray(B_hat), np.asarray(C_hat)


def _project_from_basis(model, basis):
    V = basis.V
    A_hat = basis.AtV.T @ V
    E_hat = basis.EtV.T @ V
    B_hat = V.T @ model.B_red
    C_hat = (V.T @ model.Ct_red).T
    return E_hat, A_hat, B_hat, C_hat


def residual_factor(basis, X_hat, B_hat, C_hat, Ct):
    """Low-rank factorization ``R = U J U^T`` of the CARE residual at ``V X_hat V^T``.

    With ``F = (I - V V^T) A^T V``, ``G = (I - V V^T) E^T V`` and
    ``H = (I - V V^T) C^T`` the residual lives in the span of
    ``U = [V, F, G, H]``.  Returns the factor ``S`` with ``U = [V, Q] S``
    (`Q` orthonormal, from a pivoted QR of ``[F, G, H]``) and the middle
    matrix `J` in the coordinates of `U`.
    """
    V = basis.V
    k = V.shape[1]
    q = Ct.shape[1]

    def perp(M):
        M = M - V @ (V.T @ M)
        return M - V @ (V.T @ M)

    A_hat_t = V.T @ basis.AtV
    E_hat_t = V.T @ basis.EtV
    Y = np.hstack([perp(basis.AtV), perp(basis.EtV), perp(Ct)])
    _, R, piv = spla.qr(Y, mode='economic', pivoting=True)
    diag = np.abs(np.diag(R))
    r = int(np.sum(diag > 1e-15 * max(diag.max(initial=0.0), 1e-300)))
    R = R[:r][:, np.argsort(piv)]
    S = np.zeros((k + r, 3 * k + q))
    S[:k, :k] = np.eye(k)
    S[k:, k:] = R
    f = np.vstack([A_hat_t, np.eye(k), np.zeros((k + q, k))])
    g = np.vstack([E_hat_t, np.zeros((k, k)), np.eye(k), np.zeros((q, k))])
    c = np.vstack([C_hat.T, np.zeros((2 * k, q)), np.eye(q)])
    XB = X_hat @ B_hat
    J = f @ X_hat @ g.T
    J = J + J.T - g @ XB @ XB.T @ g.T + c @ c.T
    return S, J


def rksm_residual(basis, X_hat, B_hat, C_hat, Ct):
    """Absolute and relative (to ``||beta0^T beta0||_F``) CARE residual norms."""
    S, J = residual_factor(basis, X_hat, B_hat, C_hat, Ct)
    abs_res = fro(S @ J @ S.T)
    ref = fro(basis.beta0.T @ basis.beta0)
    return abs_res, abs_res / ref if ref else 0.0


def rksm_solve(model, tol=1e-10, max_iter=300, tol_trunc=1e-12, K0=None, seed=0,
               solver_method='smw', bootstrap=True, allow_feedthrough=False, callback=None):
    """Low-rank stabilizing solution of the reduced CARE by adaptive RKSM.

    Parameters
    ----------
    model
        The :class:`~sparsecare.descriptor.Index1Descriptor`.
    tol
        Relative residual ``||R||_F / ||C C^T||_F`` at which to stop.
    max_iter
        Maximum number of shifted solves.
    tol_trunc
        Eigenvalue truncation tolerance for the final factor.
    K0
        Initial stabilizing feedback (p x n1).  If ``None`` and `bootstrap`
        is set, it is computed by :func:`bootstrap_feedback`.
    allow_feedthrough
        Solve the output-weighted CARE even if the reduced ``D`` is nonzero
        (the equation only involves ``C``).
    callback
        Optional ``callback(basis, X_hat, abs_res, rel_res)`` after every
        projected solve.

    Returns
    -------
    factor, K, report
        :class:`LowRankFactor`, optimal feedback (p x n1), :class:`RksmReport`.
    """
    t0 = time.perf_counter()
    report = RksmReport(tolerance=tol)
    if not allow_feedthrough:
        require_no_feedthrough(model)
    if not np.any(model.Ct_red):
        report.converged = True
        report.wall_time = time.perf_counter() - t0
        return (LowRankFactor(np.zeros((model.n1, 0)), tol_trunc),
                np.zeros((model.p, model.n1)), report)
    if K0 is None and bootstrap:
        K0 = bootstrap_feedback(model)
    if K0 is not None:
        K0 = np.atleast_2d(np.asarray(K0, dtype=float))
        if not np.any(K0):
            K0 = None

    solver = ShiftedSolver(model, method=solver_method)
    bounds, first = rksm_region_seeds(model, K0, seed=seed, solver=solver)
    engine = RksmShiftEngine(bounds, initial=first)
    basis = initial_basis(model)

    ritz = ()
    best = np.inf
    strikes = 0
    X_hat = None
    for it in range(1, max_iter + 1):
        mu = engine.next(ritz)
        rhs = apply_reduced(model, 'Et', basis.last_block())
        w = solve_shifted_block(model, K0, mu, rhs, solver)
        if mu.imag != 0:
            engine.next(ritz)  # conjugate is spanned by the real/imag split
            w = np.hstack([w.real, w.imag])
        else:
            w = w.real
        grew = expand_basis(basis, w, model)

        E_hat, A_hat, B_hat, C_hat = _project_from_basis(model, basis)
        X_hat = solve_care_dense(E_hat, A_hat, B_hat, C_hat)
        abs_res, rel_res = rksm_residual(basis, X_hat, B_hat, C_hat, model.Ct_red)
        K_iter = (B_hat.T @ X_hat) @ basis.EtV.T
        report.abs_residual_history.append(abs_res)
        report.residual_history.append(rel_res)
        report.feedback_history.append(fro(K_iter))
        report.iterations = it
        if callback is not None:
            callback(basis, X_hat, abs_res, rel_res)
        logger.debug('rksm it=%d width=%d mu=%s rel=%.3e', it, basis.width, mu, rel_res)
        if rel_res <= tol:
            report.converged = True
            break

        best = min(best, rel_res)
        strikes = strikes + 1 if rel_res > 10 * best else 0
        if strikes >= 10:
            raise DivergenceDetected(f'residual {rel_res:.3e} stayed 10x above its minimum '
                                     f'{best:.3e} for 10 iterations')
        if not grew:
            # Invariant under the shifted operator but not converged: continue
            # with the directions through which the residual leaves the space.
            fallback = np.hstack([basis.AtV[:, basis.blocks[-1]], basis.EtV[:, basis.blocks[-1]]])
            if not expand_basis(basis, fallback, model):
                logger.warning('rational Krylov space stagnated at width %d', basis.width)
                break
            E_hat, A_hat, B_hat, _ = _project_from_basis(model, basis)
        A_f = A_hat if K0 is None else A_hat - B_hat @ (K0 @ basis.V)
        ritz = ritz_values(A_f, E_hat)

    factor = truncate_factor(basis.V, X_hat, tol_trunc)
    K = feedback_from_factor(model, factor.Z)
    report.rank = factor.rank
    report.basis_width = basis.width
    report.shifts = list(engine.used)
    report.wall_time = time.perf_counter() - t0
    return factor, K, report

