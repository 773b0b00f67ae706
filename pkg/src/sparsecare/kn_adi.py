"""Kleinman-Newton iteration with real low-rank ADI inner solves.

Each Newton step solves the closed-loop Lyapunov equation

    (A - B K)^T X E + E^T X (A - B K) = -W0 W0^T,   W0 = [C^T, K^T],

with the feedback ``K`` of the previous step, and takes ``K <- B^T X E`` as
the next feedback.  The inner solver is the residual-factor form of the
low-rank ADI: every step updates a real factor `W` with ``WW^T`` equal to the
Lyapunov residual of the current iterate, so the stopping test costs only
a q x q Gram matrix.  Complex shift pairs are folded into two real blocks.
"""

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from sparsecare.descriptor import ShiftedSolver, apply_reduced
from sparsecare.errors import NonConvergence, UnstableClosedLoop, ZeroImaginaryShift
from sparsecare.linalg import fro, qr_thin
from sparsecare.lowrank import (LowRankFactor, bootstrap_feedback, compress_factor,
                                require_no_feedthrough)
from sparsecare.shifts import ShiftSequence, adi_shift_cycle

logger = logging.getLogger(__name__)


@dataclass
class AdiStep:
    mu: complex
    gamma: float
    delta: float = 0.0


@dataclass
class AdiResult:
    Z: np.ndarray
    W: np.ndarray
    steps: int
    K: np.ndarray
    residual_history: list = field(default_factory=list)
    shifts: list = field(default_factory=list)


@dataclass
class KnReport:
    outer_iterations: int = 0
    inner_iterations: list = field(default_factory=list)
    residual_history: list = field(default_factory=list)
    feedback_iterates: list = field(default_factory=list)
    rank: int = 0
    converged: bool = False
    wall_time: float = 0.0
    tolerance: float = 0.0


def fold_complex_pair(V, mu):
    """Two real factor blocks replacing the ADI steps with ``mu`` and ``conj(mu)``.

    With ``gamma = sqrt(-2 Re mu)`` and ``delta = Re mu / Im mu`` the blocks are
    ``sqrt(2) gamma (Re V + delta Im V)`` and ``sqrt(2) gamma sqrt(delta^2 + 1) Im V``;
    their Gramian equals ``gamma^2 (V V^H + V' V'^H)`` for the conjugate-step
    iterate ``V' = conj(V) + 2 delta Im V``, which is returned as well.

    Returns
    -------
    blocks : (ndarray, ndarray)
    V_next : ndarray
    """
    mu = complex(mu)
    if mu.imag == 0:
        raise ZeroImaginaryShift(f'shift {mu} is real; no pair to fold')
    V = np.asarray(V, dtype=complex)
    gamma = np.sqrt(-4.0 * mu.real)  # sqrt(2) * sqrt(-2 Re mu)
    delta = mu.real / mu.imag
    re, im = V.real, V.imag
    first = gamma * (re + delta * im)
    second = gamma * np.sqrt(delta ** 2 + 1.0) * im
    return (first, second), V.conj() + 2.0 * delta * im


def adi_solve(model, K, W0, shifts, tol=1e-10, max_inner=300, solver=None, callback=None):
    """Low-rank ADI for ``(A - B K)^T X E + E^T X (A - B K) = -W0 W0^T``.

    Shifts (left half-plane, conjugate-closed) are recycled round-robin.
    Iterates until ``||W^T W||_F <= tol ||W0^T W0||_F``.

    Parameters
    ----------
    callback
        Optional ``callback(Z, W)`` after every step.

    Returns
    -------
    AdiResult
        `Z` with ``X = Z Z^T``, final residual factor `W`, number of inner
        steps (a complex pair counts two) and ``K_acc = B^T Z Z^T E``.

    Raises
    ------
    UnstableClosedLoop
        If the residual grows tenfold above its running minimum.
    """
    solver = solver or ShiftedSolver(model)
    W = np.array(W0, dtype=float, copy=True)
    n1, p = model.n1, model.p
    K = None if K is None or not np.any(K) else np.asarray(K, dtype=float)
    blocks = []
    K_acc = np.zeros((p, n1))
    ref = fro(W.T @ W)
    out = AdiResult(np.zeros((n1, 0)), W, 0, K_acc)
    if ref == 0:
        return out
    shifts = list(ShiftSequence(shifts, origin='adi'))
    if not shifts:
        raise ValueError('empty shift cycle')
    res = 1.0
    best = 1.0
    i = 0
    steps = 0
    while res > tol and steps < max_inner:
        mu = shifts[i % len(shifts)]
        V = solver.solve(mu, W, K, trans=True)
        if mu.imag == 0:
            V = V.real
            new = [np.sqrt(-2.0 * mu.real) * V]
            W = W - 2.0 * mu.real * apply_reduced(model, 'Et', V)
            i += 1
            steps += 1
        else:
            (Z1, Z2), _ = fold_complex_pair(V, mu)
            delta = mu.real / mu.imag
            new = [Z1, Z2]
            W = W - 4.0 * mu.real * apply_reduced(model, 'Et', V.real + delta * V.imag)
            i += 2  # the conjugate that follows is covered by the fold
            steps += 2
        for Zb in new:
            blocks.append(Zb)
            K_acc += (model.B_red.T @ Zb) @ apply_reduced(model, 'Et', Zb).T
        res = fro(W.T @ W) / ref
        out.residual_history.append(res)
        out.shifts.append(mu)
        if callback is not None:
            callback(np.hstack(blocks), W)
        best = min(best, res)
        if res > 10 * best:
            raise UnstableClosedLoop(
                f'ADI residual grew to {res:.3e} from {best:.3e}; closed loop not stable')
    out.Z = np.hstack(blocks) if blocks else np.zeros((n1, 0))
    out.W = W
    out.steps = steps
    out.K = K_acc
    return out


def lowrank_care_residual(W, dK):
    """``||W W^T - dK^T dK||_F`` from a QR of ``[W, dK^T]``."""
    F = np.hstack([W, dK.T])
    if F.shape[1] == 0:
        return 0.0
    _, R = qr_thin(F)
    q = W.shape[1]
    sig = np.concatenate([np.ones(q), -np.ones(F.shape[1] - q)])
    return fro((R * sig) @ R.T)


def kn_solve(model, tol_outer=1e-10, tol_inner=None, max_outer=20, max_inner=400, K0=None,
             cycle=25, tol_trunc=1e-12, seed=0, solver_method='smw', bootstrap=True,
             allow_feedthrough=False):
    """Stabilizing CARE solution by Kleinman-Newton with LRCF-ADI inner solves.

    Parameters
    ----------
    tol_outer
        Relative CARE residual ``||R||_F / ||C^T C||_F`` to reach.
    tol_inner
        Upper bound on the relative ADI tolerance.  The tolerance actually
        used is tightened so that the ADI residual stays below a tenth of
        the outer target.
    K0
        Stabilizing initial feedback.  Computed from the Bernoulli equation
        when absent and the (desk-scale) model is unstable.
    cycle
        Number of ADI shifts generated per outer step.
    allow_feedthrough
        As in :func:`~sparsecare.rksm.rksm_solve`.

    Returns
    -------
    factor, K, report

    Raises
    ------
    UnstableClosedLoop
        If a closed-loop operator is not strictly stable (e.g. a semi-stable
        open loop without `K0`).
    NonConvergence
        After `max_outer` steps; ``exc.result`` holds the last iterate.
    """
    t0 = time.perf_counter()
    report = KnReport(tolerance=tol_outer)
    if not allow_feedthrough:
        require_no_feedthrough(model)
    n1, p = model.n1, model.p
    if K0 is None and bootstrap:
        K0 = bootstrap_feedback(model)
    K_prev = np.zeros((p, n1)) if K0 is None else np.atleast_2d(np.asarray(K0, dtype=float))
    Ct = model.Ct_red
    nC = fro(Ct.T @ Ct)
    report.feedback_iterates.append(K_prev.copy())
    if nC == 0 and not np.any(K_prev):
        report.converged = True
        return LowRankFactor(np.zeros((n1, 0)), tol_trunc), K_prev, report

    solver = ShiftedSolver(model, method=solver_method)
    Z = np.zeros((n1, 0))
    for it in range(1, max_outer + 1):
        K = K_prev if np.any(K_prev) else None
        W0 = Ct if K is None else np.hstack([Ct, K_prev.T])
        shifts = adi_shift_cycle(model, K, count=cycle, seed=seed, solver=solver)
        tol_i = 0.1 * tol_outer * max(nC, 1e-300) / fro(W0.T @ W0)
        if tol_inner is not None:
            tol_i = min(tol_i, tol_inner)
        adi = adi_solve(model, K, W0, shifts, tol=tol_i, max_inner=max_inner, solver=solver)
        Z = adi.Z
        res = lowrank_care_residual(adi.W, adi.K - K_prev) / (nC if nC else 1.0)
        report.outer_iterations = it
        report.inner_iterations.append(adi.steps)
        report.residual_history.append(res)
        report.feedback_iterates.append(adi.K.copy())
        logger.debug('kn it=%d inner=%d res=%.3e', it, adi.steps, res)
        K_prev = adi.K
        if res <= tol_outer:
            report.converged = True
            break

    factor = compress_factor(Z, tol_trunc)
    report.rank = factor.rank
    report.wall_time = time.perf_counter() - t0
    if not report.converged:
        raise NonConvergence(
            f'Kleinman-Newton stopped after {max_outer} steps at residual '
            f'{report.residual_history[-1]:.3e}', result=(factor, K_prev, report))
    return factor, K_prev, report
