"""Closed-loop assembly, spectra, LQR cost and step responses."""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as spla
import scipy.sparse as sp

from sparsecare.descriptor import Index1Descriptor, reduce_dense
from sparsecare.errors import DimensionMismatch, UnstableBlowup
from sparsecare.linalg import gen_eig_dense

BLOWUP = 1e12


@dataclass
class FeedbackMatrix:
    K: np.ndarray
    source: str = 'external'

    def __post_init__(self):
        self.K = np.atleast_2d(np.asarray(self.K, dtype=float))
        if not np.all(np.isfinite(self.K)):
            raise ValueError('feedback has non-finite entries')
        if self.source not in ('bernoulli', 'rksm', 'kn-adi', 'external'):
            raise ValueError(f'unknown feedback source {self.source!r}')


@dataclass
class TimeSeries:
    t: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        self.t = np.asarray(self.t, dtype=float)
        self.y = np.asarray(self.y, dtype=float)
        if self.t.shape != self.y.shape:
            raise DimensionMismatch('time grid and samples differ in length')
        if self.t.size > 1 and np.any(np.diff(self.t) <= 0):
            raise ValueError('time grid must be strictly increasing')

    def write_csv(self, path):
        np.savetxt(path, np.column_stack([self.t, self.y]), fmt='%.17g', delimiter=',',
                   header='t,y', comments='')

    @classmethod
    def read_csv(cls, path):
        data = np.loadtxt(path, delimiter=',', skiprows=1, ndmin=2)
        return cls(data[:, 0], data[:, 1])


def _feedback(model, K):
    if isinstance(K, FeedbackMatrix):
        K = K.K
    if K is None:
        return None
    K = np.atleast_2d(np.asarray(K, dtype=float))
    if K.shape != (model.p, model.n1):
        raise DimensionMismatch(f'K must be {model.p}x{model.n1}, got {K.shape}')
    return K


def assemble_closed_loop(model, K):
    """Model under ``u = -K x1 + v``.

    The blocks become ``J1 - B1 K``, ``J3 - B2 K`` and ``C1 - D K``; the others
    and the `J4` LU are shared.
    """
    K = _feedback(model, K)
    if K is None or not np.any(K):
        return model
    Ks = sp.csc_matrix(K)
    C1 = model.C1 - sp.csc_matrix(model.D @ K) if np.any(model.D) else model.C1
    return Index1Descriptor.from_blocks(
        model.E1, model.J1 - model.B1 @ Ks, model.J2, model.J3 - model.B2 @ Ks, model.J4,
        model.B1, model.B2, C1, model.C2, model.D, dense_cap=model.dense_cap,
        name=f'{model.name}-closed', J4_lu=model.J4_lu)


def closed_loop_spectrum(model, K=None):
    """Finite eigenvalues of ``(A - B K, E)`` sorted by real part, descending."""
    system = reduce_dense(assemble_closed_loop(model, K))
    lam, _ = gen_eig_dense(system.A, system.E)
    return lam


def optimal_cost(Z, x0):
    """LQR cost ``x0^T Z Z^T x0`` of the optimal feedback from state `x0`."""
    Z = getattr(Z, 'Z', Z)
    x0 = np.asarray(x0, dtype=float).ravel()
    if x0.shape[0] != Z.shape[0]:
        raise DimensionMismatch(f'x0 has length {x0.shape[0]}, expected {Z.shape[0]}')
    w = Z.T @ x0
    return float(w @ w)


def steady_state(model, K, input_idx, output_idx):
    """``D - C (A - B K)^{-1} B`` for one input/output channel."""
    s = reduce_dense(assemble_closed_loop(model, K))
    x = np.linalg.solve(s.A, s.B[:, input_idx])
    return float(s.D[output_idx, input_idx] - s.C[output_idx] @ x)


def step_response(model, K=None, input_idx=0, output_idx=0, t_final=20.0, dt=1e-2):
    """Unit-step response of the (closed-loop) reduced system from rest.

    TR-BDF2 on ``E x' = A x + B u``: a trapezoidal stage to ``t + gamma dt``
    followed by a BDF2 stage, ``gamma = 2 - sqrt(2)``.  The scheme is
    second-order and L-stable, so stiff modes are damped without a special
    startup, and both stages use the matrix ``E - (1 - 1/sqrt(2)) dt A``,
    factored once.

    Raises
    ------
    UnstableBlowup
        When ``|y|`` exceeds 1e12; ``exc.partial`` holds the samples so far.
    """
    if dt <= 0:
        raise ValueError('dt must be positive')
    if not 0 <= input_idx < model.p or not 0 <= output_idx < model.m:
        raise DimensionMismatch(f'channel ({input_idx}, {output_idx}) out of range '
                                f'for p={model.p}, m={model.m}')
    s = reduce_dense(assemble_closed_loop(model, K))
    steps = int(round(t_final / dt))
    t = dt * np.arange(steps + 1)
    y = np.empty(steps + 1)
    c = s.C[output_idx]
    d = s.D[output_idx, input_idx]
    b = s.B[:, input_idx]
    x = np.zeros(s.A.shape[0])
    y[0] = d
    if steps == 0:
        return TimeSeries(t, y)
    gamma = 2.0 - np.sqrt(2.0)
    w = 1.0 - 1.0 / np.sqrt(2.0)  # gamma / 2 == (1 - gamma) / (2 - gamma)
    lu = spla.lu_factor(s.E - w * dt * s.A)
    explicit = s.E + w * dt * s.A
    c_mid = 1.0 / (gamma * (2.0 - gamma))
    c_old = (1.0 - gamma) ** 2 / (gamma * (2.0 - gamma))
    for k in range(1, steps + 1):
        x_mid = spla.lu_solve(lu, explicit @ x + gamma * dt * b)
        x = spla.lu_solve(lu, s.E @ (c_mid * x_mid - c_old * x) + w * dt * b)
        y[k] = c @ x + d
        if not np.isfinite(y[k]) or abs(y[k]) > BLOWUP:
            raise UnstableBlowup(f'step response exceeded {BLOWUP:g} at t={t[k]:.4g}',
                                 partial=TimeSeries(t[:k + 1], y[:k + 1]))
    return TimeSeries(t, y)
