"""Low-rank solution factors shared by the Krylov and ADI solvers."""

import logging
from dataclasses import dataclass

import numpy as np

from sparsecare.dense import solve_bernoulli_dense
from sparsecare.descriptor import apply_reduced, reduce_dense
from sparsecare.errors import FeedthroughNotSupported, IndefiniteProjectedSolution
from sparsecare.linalg import gen_eig_dense, qr_thin, sym_eig

logger = logging.getLogger(__name__)


@dataclass
class LowRankFactor:
    Z: np.ndarray
    tol_trunc: float = 0.0

    @property
    def rank(self):
        return self.Z.shape[1]


def truncate_factor(V, X_hat, tol_trunc=1e-12):
    """Factor ``V X_hat V^T = Z Z^T`` dropping the smallest eigenvalues.

    Eigenvalues are discarded from the bottom while their sum stays below
    ``tol_trunc * trace``.  Negative eigenvalues down to ``-1e-12 lam_max``
    are treated as roundoff and clipped.
    """
    if X_hat.size == 0:
        return LowRankFactor(np.zeros((V.shape[0], 0)), tol_trunc)
    T, lam = sym_eig(X_hat)
    lam_max = max(lam[0], 0.0)
    if lam[-1] < -1e-12 * lam_max or (lam_max == 0 and lam[-1] < 0):
        raise IndefiniteProjectedSolution(
            f'projected solution has eigenvalue {lam[-1]:.3e} (max {lam_max:.3e})')
    lam = np.clip(lam, 0.0, None)
    total = lam.sum()
    if total == 0:
        return LowRankFactor(np.zeros((V.shape[0], 0)), tol_trunc)
    tail = np.cumsum(lam[::-1])[::-1]
    # tail[i] is the mass discarded when keeping the first i eigenvalues.
    tail = np.append(tail, 0.0)
    r = int(np.argmax(tail <= tol_trunc * total))
    Z = V @ (T[:, :r] * np.sqrt(lam[:r]))
    return LowRankFactor(Z, tol_trunc)


def feedback_from_factor(model, Z):
    """``K = B^T Z Z^T E1`` with the reduced ``B`` applied sparsely."""
    if Z.shape[1] == 0:
        return np.zeros((model.p, model.n1))
    return (model.B_red.T @ Z) @ apply_reduced(model, 'Et', Z).T


def bootstrap_feedback(model):
    """Bernoulli feedback at desk scale, or ``None`` when the model is stable.

    This is the only place where the solvers reduce the model densely.
    """
    if model.n1 > model.dense_cap:
        logger.info('n1=%d above dense cap; assuming a stable model (pass K0 otherwise)',
                    model.n1)
        return None
    system = reduce_dense(model)
    lam, _ = gen_eig_dense(system.A, system.E)
    if lam.size and np.max(lam.real) < 0:
        return None
    return solve_bernoulli_dense(system.E, system.A, system.B)


def compress_factor(Z, tol_trunc=1e-12):
    """Column compression of ``Z Z^T`` with the truncation rule of :func:`truncate_factor`."""
    if Z.shape[1] == 0:
        return LowRankFactor(Z, tol_trunc)
    Q, R = qr_thin(Z)
    return truncate_factor(Q, R @ R.T, tol_trunc)


def require_no_feedthrough(model):
    scale = 1.0 + (np.abs(model.D).max() if model.D.size else 0.0)
    if model.D_red.size and np.abs(model.D_red).max() > 1e-12 * scale:
        raise FeedthroughNotSupported('the Riccati solvers need a model with zero reduced D')
