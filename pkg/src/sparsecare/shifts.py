"""Shift parameters for the rational Krylov and ADI iterations.

Krylov shifts live in the right half-plane and are chosen adaptively by
maximizing a rational function over the boundary of the mirrored Ritz
region.  ADI shifts live in the left half-plane and are chosen by Penzl's
heuristic from Ritz values of the current closed-loop operator.  Both kinds
are emitted closed under complex conjugation: a non-real shift is always
followed immediately by its conjugate.
"""

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as spla

from sparsecare.descriptor import ShiftedSolver, apply_reduced
from sparsecare.errors import ArnoldiBreakdown, EmptySpectralData, UnstableClosedLoop

BOUNDARY_POINTS = 10_000
# Relative imaginary part below which a shift is treated as real.
REAL_RTOL = 1e-10


@dataclass
class ShiftSequence:
    shifts: list = field(default_factory=list)
    origin: str = 'adi'

    def __post_init__(self):
        self.shifts = [complex(s) for s in self.shifts]
        check_shifts(self.shifts, self.origin)

    def __len__(self):
        return len(self.shifts)

    def __iter__(self):
        return iter(self.shifts)

    def __getitem__(self, i):
        return self.shifts[i]

    @property
    def conjugate_closed(self):
        return is_conjugate_closed(self.shifts)


def _clean(mu):
    mu = complex(mu)
    if abs(mu.imag) <= REAL_RTOL * abs(mu):
        return complex(mu.real, 0.0)
    return mu


def is_conjugate_closed(shifts):
    i = 0
    while i < len(shifts):
        s = complex(shifts[i])
        if s.imag != 0:
            if i + 1 >= len(shifts) or complex(shifts[i + 1]) != s.conjugate():
                return False
            i += 2
        else:
            i += 1
    return True


def check_shifts(shifts, origin):
    for s in shifts:
        if origin == 'rksm' and not complex(s).real > 0:
            raise ValueError(f'rational Krylov shift {s} is not in the right half-plane')
        if origin == 'adi' and not complex(s).real < 0:
            raise ValueError(f'ADI shift {s} is not in the left half-plane')
    if not is_conjugate_closed(shifts):
        raise ValueError('shift sequence is not closed under conjugation')


def arnoldi_ritz(matvec, n, steps, seed=0, max_restarts=3):
    """Ritz values of a linear operator from a short Arnoldi run.

    The start vector is a seeded Gaussian vector.  An invariant subspace
    (happy breakdown) ends the run early with exact Ritz values; a start
    vector that produces no usable direction, or non-finite values, is
    perturbed and the run restarted, at most `max_restarts` times.
    """
    rng = np.random.default_rng(seed)
    steps = min(steps, n)
    v0 = rng.standard_normal(n)
    for _ in range(max_restarts + 1):
        H = np.zeros((steps + 1, steps))
        Q = np.zeros((n, steps + 1))
        Q[:, 0] = v0 / np.linalg.norm(v0)
        k = steps
        ok = True
        for j in range(steps):
            w = np.asarray(matvec(Q[:, j]), dtype=float).ravel()
            if not np.all(np.isfinite(w)):
                ok = False
                break
            for _ in range(2):
                h = Q[:, :j + 1].T @ w
                w = w - Q[:, :j + 1] @ h
                H[:j + 1, j] += h
            H[j + 1, j] = np.linalg.norm(w)
            if H[j + 1, j] <= 1e-12 * max(np.abs(H[:j + 2, j]).max(), 1e-300):
                k = j + 1
                break
            Q[:, j + 1] = w / H[j + 1, j]
        if ok and np.all(np.isfinite(H)):
            ritz = np.linalg.eigvals(H[:k, :k])
            if ritz.size and np.any(ritz != 0):
                return ritz
        v0 = v0 + 0.5 * rng.standard_normal(n)
    raise ArnoldiBreakdown(f'Arnoldi failed after {max_restarts} restarts')


def _log_rational(points, used, ritz):
    val = np.zeros(points.shape)
    for mu in used:
        with np.errstate(divide='ignore'):
            val += np.log(np.abs(points - mu))
    for theta in ritz:
        with np.errstate(divide='ignore'):
            val -= np.log(np.abs(points - theta))
    return val


def region_boundary(ritz, region_bounds=None, npoints=BOUNDARY_POINTS):
    """Discretized boundary of the mirrored approximate spectral region.

    The region is the box spanned by the mirrored real parts of the Ritz
    values (plus `region_bounds`, a ``(lo, hi)`` pair of positive reals) and
    their largest imaginary part; only its upper half is returned since the
    rational function is symmetric under conjugation.  Real coordinates are
    log-spaced.
    """
    mirrored = -np.asarray(ritz, dtype=complex)
    re = np.abs(mirrored.real)
    re = re[re > 0]
    reals = list(re)
    if region_bounds is not None:
        reals.extend(b for b in region_bounds if b > 0)
    if not reals:
        raise EmptySpectralData('no spectral information to build the shift region')
    lo, hi = min(reals), max(reals)
    if hi <= lo:
        hi = lo * (1 + 1e-8)
    top = np.max(np.abs(mirrored.imag)) if mirrored.size else 0.0
    if top <= REAL_RTOL * hi:
        return np.geomspace(lo, hi, npoints).astype(complex)
    n_side = npoints // 4
    n_top = npoints - 2 * n_side
    xs = np.geomspace(lo, hi, n_top)
    ys = np.linspace(0.0, top, n_side)
    return np.concatenate([xs + 1j * top, lo + 1j * ys, hi + 1j * ys, xs + 0j])


def next_rksm_shift(ritz, used, region_bounds=None, npoints=BOUNDARY_POINTS):
    """Next adaptive rational Krylov shift.

    Maximizes ``|prod(mu - mu_j) / prod(mu - theta_j)|`` over the boundary of
    the mirrored Ritz region, with `used` the previous shifts and `ritz` the
    current Ritz values.
    """
    ritz = np.asarray(ritz, dtype=complex)
    if ritz.size == 0 and region_bounds is None:
        raise EmptySpectralData('first shift needs region bounds or Ritz values')
    boundary = region_boundary(ritz, region_bounds, npoints)
    vals = _log_rational(boundary, np.asarray(used, dtype=complex), ritz)
    vals[~np.isfinite(vals)] = -np.inf
    mu = _clean(boundary[int(np.argmax(vals))])
    return complex(abs(mu.real), mu.imag)


class RksmShiftEngine:
    """Stateful emitter of conjugate-closed right half-plane shifts."""

    def __init__(self, region_bounds, initial=None):
        self.region_bounds = tuple(region_bounds)
        self.used = []
        self._queue = []
        if initial is not None:
            self._push(initial)

    def _push(self, mu):
        mu = _clean(mu)
        if mu.real <= 0:
            raise ValueError(f'rational Krylov shift {mu} is not in the right half-plane')
        self._queue.append(mu)
        if mu.imag != 0:
            self._queue.append(mu.conjugate())

    def next(self, ritz=()):
        if not self._queue:
            self._push(next_rksm_shift(ritz, self.used, self.region_bounds))
        mu = self._queue.pop(0)
        self.used.append(mu)
        return mu

    def peek_conjugate_pending(self):
        return bool(self._queue)

    def sequence(self):
        return ShiftSequence(list(self.used), origin='rksm')


def closed_loop_matvecs(model, K=None, Z=None, solver=None):
    """Forward and inverse products with ``E^{-1}(A - B K - B B^T Z Z^T E)``.

    Only sparse products, the cached `J4` and `E1` factorizations and a
    shifted block solve at zero are used.
    """
    Bred = model.B_red
    if Z is not None and Z.shape[1]:
        KZ = (Bred.T @ Z) @ apply_reduced(model, 'Et', Z).T
        K = KZ if K is None else K + KZ
    if K is not None and not np.any(K):
        K = None

    def forward(v):
        w = apply_reduced(model, 'A', v)
        if K is not None:
            w = w - Bred @ (K @ v)
        return model.E1_lu.solve(w)

    solver = solver or ShiftedSolver(model)

    def inverse(v):
        return solver.solve(0.0, apply_reduced(model, 'E', v), K=K, trans=False)

    return forward, inverse, K


def operator_ritz(model, K=None, Z=None, k_plus=40, k_minus=20, seed=0, solver=None):
    """Ritz values of the closed-loop operator and of its inverse (reciprocated)."""
    forward, inverse, _ = closed_loop_matvecs(model, K, Z, solver)
    ritz = list(arnoldi_ritz(forward, model.n1, k_plus, seed))
    if k_minus:
        inv = arnoldi_ritz(inverse, model.n1, k_minus, seed + 1)
        inv = inv[np.abs(inv) > 0]
        ritz.extend(1.0 / inv)
    return np.asarray(ritz, dtype=complex)


def penzl_shifts(candidates, count):
    """Penzl's heuristic: greedy minimax choice from stable candidates.

    Picks the candidate minimizing the worst ADI contraction factor
    ``prod |t - conj(p)| / |t + p|`` over all candidates, then repeatedly
    adds the candidate that is currently worst approximated.  Complex
    candidates enter together with their conjugate.
    """
    cand = np.asarray([_clean(c) for c in candidates], dtype=complex)
    cand = cand[cand.imag >= 0]
    cand = np.unique(np.round(cand, 14))
    if cand.size == 0:
        raise EmptySpectralData('no candidate shifts')
    full = np.concatenate([cand, np.conj(cand[cand.imag != 0])])

    def expand(p):
        return [p] if p.imag == 0 else [p, p.conjugate()]

    def log_factor(P, t):
        P = np.asarray(P)
        with np.errstate(divide='ignore'):
            return np.sum(np.log(np.abs(t[:, None] - np.conj(P)[None, :]))
                          - np.log(np.abs(t[:, None] + P[None, :])), axis=1)

    scores = [np.max(log_factor(expand(p), full)) for p in cand]
    chosen = expand(complex(cand[int(np.argmin(scores))]))
    while len(chosen) < count:
        worst = log_factor(chosen, cand)
        order = np.argsort(-worst)
        added = False
        for idx in order:
            p = complex(cand[idx])
            if p in chosen:
                continue
            if p.imag != 0 and len(chosen) + 2 > count and len(chosen) > 0:
                continue
            chosen.extend(expand(p))
            added = True
            break
        if not added:
            break
    return chosen


def adi_shift_cycle(model, K=None, Z=None, count=25, stability_rtol=1e-8, seed=0,
                    k_plus=40, k_minus=20, solver=None):
    """ADI shift cycle for the closed-loop operator ``A - B K - B B^T Z Z^T E``.

    Raises
    ------
    UnstableClosedLoop
        If a Ritz value lies in the closed right half-plane or within
        ``stability_rtol * max|ritz|`` of the imaginary axis; ADI cannot
        converge for such (semi-)stable operators.
    """
    if count < 1:
        raise ValueError('count must be at least 1')
    ritz = operator_ritz(model, K, Z, k_plus, k_minus, seed, solver)
    scale = np.max(np.abs(ritz))
    if np.max(ritz.real) >= -stability_rtol * scale:
        raise UnstableClosedLoop(
            f'closed-loop Ritz value with Re = {np.max(ritz.real):.3e} '
            f'(spectral scale {scale:.3e}); ADI needs a strictly stable operator')
    return ShiftSequence(penzl_shifts(ritz, count), origin='adi')


def rksm_region_seeds(model, K0=None, steps=20, seed=0, solver=None):
    """Mirrored spectral bounds and first shift from warm-up Arnoldi runs.

    Returns ``(lo, hi)`` bounds for the shift region and the mirrored Ritz
    value of largest magnitude as initial shift.
    """
    ritz = operator_ritz(model, K0, None, steps, steps, seed, solver)
    mirrored = -ritz
    re = np.abs(mirrored.real)
    re = re[re > 0]
    if re.size == 0:
        raise EmptySpectralData('warm-up Arnoldi produced no usable Ritz values')
    first = mirrored[int(np.argmax(np.abs(mirrored)))]
    first = _clean(complex(abs(first.real), first.imag))
    return (float(re.min()), float(re.max())), first


def ritz_values(A_hat, E_hat):
    if A_hat.size == 0:
        return np.zeros(0, dtype=complex)
    return spla.eigvals(A_hat, E_hat)
