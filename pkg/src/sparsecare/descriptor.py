"""Index-1 descriptor systems and their implicit Schur-complement reduction.

The model is stored in its sparse block form

    [E1 0] d/dt [x1]   [J1 J2] [x1]   [B1]
    [0  0]      [x2] = [J3 J4] [x2] + [B2] u,     y = [C1 C2] x + D u,

and every operation on the reduced (dense) system ``A = J1 - J2 J4^{-1} J3``
is carried out by sparse products plus solves with a cached LU of ``J4``.
Only :func:`reduce_dense` forms the reduced matrices explicitly, and it
counts its calls in :data:`DENSE_REDUCTIONS` so that solvers can be audited.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np
import scipy.io
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from sparsecare.errors import (DimensionMismatch, MissingFile, SingularJ4, SingularMatrix,
                               SingularPencil, SingularShiftedSystem, SizeCapExceeded)
from sparsecare.linalg import SparseLU, as_sparse

DENSE_SIZE_CAP = 4000

BLOCK_NAMES = ('E1', 'J1', 'J2', 'J3', 'J4', 'B1', 'B2', 'C1', 'C2', 'D')

# Incremented on every explicit reduction; the solvers must leave it alone.
DENSE_REDUCTIONS = {'count': 0}


@dataclass(frozen=True)
class GeneralizedSystem:
    """Dense reduced system ``E x' = A x + B u, y = C x + D u``."""

    E: np.ndarray
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray


@dataclass(eq=False)
class Index1Descriptor:
    """Sparse index-1 descriptor system with a cached factorization of `J4`.

    Construct through :meth:`from_blocks` (or :func:`load_model`), which
    validates dimensions and factors `J4`.
    """

    E1: sp.csc_matrix
    J1: sp.csc_matrix
    J2: sp.csc_matrix
    J3: sp.csc_matrix
    J4: sp.csc_matrix
    B1: sp.csc_matrix
    B2: sp.csc_matrix
    C1: sp.csc_matrix
    C2: sp.csc_matrix
    D: np.ndarray
    dense_cap: int = DENSE_SIZE_CAP
    name: str = 'model'
    J4_lu: SparseLU = field(default=None, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    @classmethod
    def from_blocks(cls, E1, J1, J2, J3, J4, B1, B2, C1, C2, D=None, *, dense_cap=DENSE_SIZE_CAP,
                    name='model', J4_lu=None):
        blocks = {k: as_sparse(v) for k, v in
                  dict(E1=E1, J1=J1, J2=J2, J3=J3, J4=J4, B1=B1, B2=B2, C1=C1, C2=C2).items()}
        n1 = blocks['E1'].shape[0]
        n2 = blocks['J4'].shape[0]
        p = blocks['B1'].shape[1]
        m = blocks['C1'].shape[0]
        expected = dict(E1=(n1, n1), J1=(n1, n1), J2=(n1, n2), J3=(n2, n1), J4=(n2, n2),
                        B1=(n1, p), B2=(n2, p), C1=(m, n1), C2=(m, n2))
        for key, shape in expected.items():
            if blocks[key].shape != shape:
                raise DimensionMismatch(f'{key} has shape {blocks[key].shape}, expected {shape}')
        D = np.zeros((m, p)) if D is None else np.atleast_2d(
            np.asarray(D.toarray() if sp.issparse(D) else D, dtype=float))
        if D.shape != (m, p):
            raise DimensionMismatch(f'D has shape {D.shape}, expected {(m, p)}')
        if J4_lu is None:
            try:
                J4_lu = SparseLU(blocks['J4'])
            except SingularMatrix as exc:
                raise SingularJ4(f'J4 is singular, model is not index 1: {exc}') from exc
        model = cls(D=D, dense_cap=dense_cap, name=name, J4_lu=J4_lu, **blocks)
        try:
            model.E1_lu
        except SingularMatrix as exc:
            raise SingularMatrix(f'E1 is singular: {exc}') from exc
        return model

    @property
    def n1(self):
        return self.E1.shape[0]

    @property
    def n2(self):
        return self.J4.shape[0]

    @property
    def p(self):
        return self.B1.shape[1]

    @property
    def m(self):
        return self.C1.shape[0]

    def _memo(self, key, fn):
        if key not in self._cache:
            self._cache[key] = fn()
        return self._cache[key]

    @property
    def E1_lu(self):
        return self._memo('E1_lu', lambda: SparseLU(self.E1))

    @property
    def B_red(self):
        """Reduced input matrix ``B1 - J2 J4^{-1} B2`` (n1 x p, dense)."""
        return self._memo('B', lambda: self.B1.toarray()
                          - self.J2 @ self.J4_lu.solve(self.B2.toarray()))

    @property
    def Ct_red(self):
        """Transposed reduced output matrix ``(C1 - C2 J4^{-1} J3)^T`` (n1 x m)."""
        return self._memo('Ct', lambda: self.C1.T.toarray()
                          - self.J3.T @ self.J4_lu.solve(self.C2.T.toarray(), trans=True))

    @property
    def D_red(self):
        return self._memo('D', lambda: self.D - self.C2 @ self.J4_lu.solve(self.B2.toarray()))

    def full_pencil(self):
        """Sparse ``(E, A, B, C)`` of the unreduced n x n descriptor system."""
        n2 = self.n2
        E = sp.block_diag([self.E1, sp.csc_matrix((n2, n2))], format='csc')
        A = sp.bmat([[self.J1, self.J2], [self.J3, self.J4]], format='csc')
        B = sp.vstack([self.B1, self.B2], format='csc')
        C = sp.hstack([self.C1, self.C2], format='csc')
        return E, A, B, C


def apply_reduced(model, which, V):
    """Apply the reduced operator without forming it.

    Parameters
    ----------
    model
        The :class:`Index1Descriptor`.
    which
        One of ``'A'``, ``'At'``, ``'E'``, ``'Et'`` (``'t'`` means transposed).
    V
        Dense block with `n1` rows.
    """
    V = np.asarray(V)
    squeeze = V.ndim == 1
    if squeeze:
        V = V[:, None]
    if V.shape[0] != model.n1:
        raise DimensionMismatch(f'V has {V.shape[0]} rows, expected {model.n1}')
    if which == 'A':
        out = model.J1 @ V - model.J2 @ model.J4_lu.solve(model.J3 @ V)
    elif which == 'At':
        out = model.J1.T @ V - model.J3.T @ model.J4_lu.solve(model.J2.T @ V, trans=True)
    elif which == 'E':
        out = model.E1 @ V
    elif which == 'Et':
        out = model.E1.T @ V
    else:
        raise ValueError(f'unknown operator {which!r}')
    out = np.asarray(out)
    return out[:, 0] if squeeze else out


def reduce_dense(model):
    """Explicit reduced system; guarded by the model's dense size cap."""
    if model.n1 > model.dense_cap:
        raise SizeCapExceeded(f'n1={model.n1} exceeds dense cap {model.dense_cap}')
    DENSE_REDUCTIONS['count'] += 1
    J4_J3 = model.J4_lu.solve(model.J3.toarray())
    A = model.J1.toarray() - model.J2 @ J4_J3
    C = model.C1.toarray() - model.C2 @ J4_J3
    return GeneralizedSystem(E=model.E1.toarray(), A=np.asarray(A), B=model.B_red.copy(),
                             C=np.asarray(C), D=model.D_red.copy())


def transfer_eval(model, s):
    """Evaluate ``G(s) = C (sE - A)^{-1} B + D`` on the full block pencil."""
    E, A, B, C = model.full_pencil()
    try:
        lu = SparseLU((s * E - A).astype(complex))
    except SingularMatrix as exc:
        raise SingularPencil(f'sE - A is singular at s={s}') from exc
    return C @ lu.solve(B.toarray().astype(complex)) + model.D


def transfer_eval_reduced(system, s):
    """Same transfer function from the dense reduced system."""
    M = s * system.E - system.A
    return system.C @ np.linalg.solve(M, system.B) + system.D


class ShiftedSolver:
    """Solves shifted closed-loop systems through the sparse block form.

    For a shift ``sigma`` and feedback ``K`` (p x n1) this solves

        ((A - B K) + sigma E)^T x = r      (``trans=True``)
        ((A - B K) + sigma E)   x = r      (``trans=False``)

    on the reduced state space by factoring the (n1+n2) block matrix
    ``[[J1 + sigma E1, J2], [J3, J4]]`` and discarding the algebraic part.
    The feedback is folded in either by Sherman-Morrison-Woodbury against
    the unmodified factorization (``method='smw'``, the default, which
    lets one factorization per shift serve every feedback) or through the
    bordered matrix

        [[J1 + sigma E1, J2, -B1], [J3, J4, -B2], [K, 0, -I]]

    (``method='direct'``), which stays sparse and is nonsingular exactly when
    the closed-loop shifted system is.  SMW falls back to the bordered form
    when the open-loop block is singular at `sigma` (a shift that hits an
    open-loop eigenvalue moved by the feedback) or its capacitance matrix is
    too ill-conditioned.  Factorizations are cached per shift and feedback.
    """

    CAP_COND_MAX = 1e12
    BACKWARD_RTOL = 1e-12

    def __init__(self, model, method='smw'):
        if method not in ('smw', 'direct'):
            raise ValueError(f'unknown method {method!r}')
        self.model = model
        self.method = method
        self._lus = {}
        self._smw = {}
        self._Bf = None
        self.factorizations = 0

    def _block(self, sigma, K):
        mdl = self.model
        blocks = [[mdl.J1 + sigma * mdl.E1, mdl.J2], [mdl.J3, mdl.J4]]
        if K is not None:
            blocks[0].append(-mdl.B1)
            blocks[1].append(-mdl.B2)
            blocks.append([sp.csc_matrix(K), None, -sp.identity(mdl.p, format='csc')])
        M = sp.bmat(blocks, format='csc')
        return M.astype(complex) if isinstance(sigma, complex) else M

    def _lu(self, sigma, K=None):
        key = (complex(sigma), None if K is None else K.tobytes())
        if key not in self._lus:
            M = self._block(sigma, K)
            try:
                self._lus[key] = (SparseLU(M), M, spla.norm(M, 1))
            except SingularMatrix as exc:
                raise SingularShiftedSystem(f'shifted system singular at sigma={sigma}') from exc
            self.factorizations += 1
        return self._lus[key]

    def solve(self, sigma, r, K=None, trans=True):
        mdl = self.model
        if np.imag(sigma) == 0:
            sigma = float(np.real(sigma))
        else:
            sigma = complex(sigma)
        r = np.asarray(r)
        squeeze = r.ndim == 1
        if squeeze:
            r = r[:, None]
        if r.shape[0] != mdl.n1:
            raise DimensionMismatch(f'rhs has {r.shape[0]} rows, expected {mdl.n1}')
        if K is not None and not np.any(K):
            K = None
        if K is not None:
            K = np.asarray(K, dtype=float)
            if K.shape != (mdl.p, mdl.n1):
                raise DimensionMismatch(f'K must be {mdl.p}x{mdl.n1}, got {K.shape}')
        y = None
        if K is None or self.method == 'smw':
            try:
                lu, M, nrm = self._lu(sigma)
                rhs = self._pad(r, 0)
                y = lu.solve(rhs, trans=trans)
                if K is not None:
                    y = self._smw_correct(lu, sigma, K, y, trans)
                    self._check_backward(M, nrm, K, y, rhs, trans)
            except SingularShiftedSystem:
                if K is None:
                    raise
                y = None
        if y is None:
            y = self._lu(sigma, K)[0].solve(self._pad(r, mdl.p), trans=trans)
        x = y[:mdl.n1]
        return x[:, 0] if squeeze else x

    def _check_backward(self, M, nrm, K, y, rhs, trans):
        # SMW loses accuracy when sigma sits near an open-loop eigenvalue that
        # the feedback moved; detect it through the backward error.
        mdl = self.model
        if self._Bf is None:
            self._Bf = sp.vstack([mdl.B1, mdl.B2]).tocsc()
        Bf = self._Bf
        if trans:
            res = M.T @ y - np.vstack([K.T @ (Bf.T @ y), np.zeros((mdl.n2, y.shape[1]))])
        else:
            res = M @ y - Bf @ (K @ y[:mdl.n1])
        res -= rhs
        scale = (nrm + spla.norm(Bf, 1) * np.abs(K).sum(axis=1).max()) \
            * np.abs(y).sum(axis=0).max() + np.abs(rhs).max()
        if np.abs(res).max() > self.BACKWARD_RTOL * scale:
            raise SingularShiftedSystem('SMW solve inaccurate, shift close to open-loop spectrum')

    def _pad(self, r, extra):
        return np.vstack([r, np.zeros((self.model.n2 + extra, r.shape[1]), dtype=r.dtype)])

    def _smw_correct(self, lu, sigma, K, y0, trans):
        # Full-space feedback is Bf Kf with Bf = [B1; B2] and Kf = [K, 0].
        mdl = self.model
        key = (complex(sigma), K.tobytes(), trans)
        if key not in self._smw:
            Bf = np.vstack([mdl.B1.toarray(), mdl.B2.toarray()])
            Kf = np.hstack([K, np.zeros((mdl.p, mdl.n2))])
            if trans:
                # (M^T - Kf^T Bf^T)^{-1} = M^{-T} + M^{-T} Kf^T S^{-1} Bf^T M^{-T}
                left = lu.solve(Kf.T, trans=True)
                cap = np.eye(mdl.p) - Bf.T @ left
                right = Bf.T
            else:
                left = lu.solve(Bf)
                cap = np.eye(mdl.p) - Kf @ left
                right = Kf
            if not np.all(np.isfinite(cap)) or np.linalg.cond(cap) > self.CAP_COND_MAX:
                self._smw[key] = None
            else:
                self._smw[key] = (left, np.linalg.inv(cap), right)
        if self._smw[key] is None:
            raise SingularShiftedSystem('SMW capacitance matrix is ill-conditioned')
        left, cap_inv, right = self._smw[key]
        return y0 + left @ (cap_inv @ (right @ y0))


def _read_mtx(path):
    if not os.path.exists(path):
        raise MissingFile(f'missing block file {path}')
    M = scipy.io.mmread(path)
    return as_sparse(M) if sp.issparse(M) else np.asarray(M, dtype=float)


def load_model(manifest_path, dense_cap=DENSE_SIZE_CAP):
    """Load a model from a JSON manifest naming Matrix Market block files.

    The manifest holds integer ``n1, n2, p, m`` and a ``blocks`` mapping from
    block names (``E1 J1 J2 J3 J4 B1 B2 C1 C2`` and optional ``D``) to file
    paths, relative to the manifest's directory.
    """
    if not os.path.exists(manifest_path):
        raise MissingFile(f'missing manifest {manifest_path}')
    with open(manifest_path, encoding='utf-8') as fh:
        try:
            manifest = json.load(fh)
        except json.JSONDecodeError as exc:
            raise DimensionMismatch(f'malformed manifest {manifest_path}: {exc}') from exc
    if not isinstance(manifest, dict) or not isinstance(manifest.get('blocks'), dict):
        raise DimensionMismatch(f'manifest {manifest_path} lacks a "blocks" mapping')
    base = os.path.dirname(os.path.abspath(manifest_path))
    blocks = {}
    for key in BLOCK_NAMES:
        rel = manifest['blocks'].get(key)
        if rel is None:
            if key == 'D':
                continue
            raise MissingFile(f'manifest does not name block {key}')
        blocks[key] = _read_mtx(os.path.join(base, rel))
    model = Index1Descriptor.from_blocks(**blocks, dense_cap=dense_cap,
                                         name=manifest.get('name', os.path.basename(base)))
    for dim in ('n1', 'n2', 'p', 'm'):
        if dim in manifest and int(manifest[dim]) != getattr(model, dim):
            raise DimensionMismatch(f'declared {dim}={manifest[dim]} but blocks give '
                                    f'{getattr(model, dim)}')
    return model


def save_model(model, directory, name=None):
    """Write every block as Matrix Market plus a manifest; returns the manifest path."""
    os.makedirs(directory, exist_ok=True)
    files = {}
    for key in BLOCK_NAMES:
        M = getattr(model, key)
        path = os.path.join(directory, f'{key}.mtx')
        scipy.io.mmwrite(path, sp.coo_matrix(M), field='real', precision=17)
        files[key] = f'{key}.mtx'
    manifest = dict(name=name or model.name, n1=model.n1, n2=model.n2, p=model.p, m=model.m,
                    blocks=files)
    manifest_path = os.path.join(directory, 'manifest.json')
    with open(manifest_path, 'w', encoding='utf-8') as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
    return manifest_path
