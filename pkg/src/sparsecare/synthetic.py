"""Seeded random index-1 descriptor models with a prescribed reduced spectrum.

The reduced pencil is ``(E1 T, E1)`` with ``T = P (D + N) P^T``: ``D`` is
block diagonal with the requested eigenvalues (2x2 blocks for complex
pairs), ``N`` a sparse strictly upper block-triangular coupling and ``P`` a
random permutation.  ``J4`` is 2x2 block diagonal, so ``J2 J4^{-1} J3`` is
sparse and ``J1 = E1 T + J2 J4^{-1} J3`` is assembled without dense work.
"""

import numpy as np
import scipy.sparse as sp

from sparsecare.descriptor import DENSE_SIZE_CAP, Index1Descriptor


def _spectrum(rng, n, unstable, semi_stable, stable_range, complex_frac):
    lo, hi = stable_range
    blocks = []
    for _ in range(unstable):
        blocks.append([rng.uniform(0.3, 3.0)])
    if semi_stable is not None:
        blocks.append([semi_stable])
    size = sum(len(b) for b in blocks)
    while size < n:
        re = -np.exp(rng.uniform(np.log(-hi), np.log(-lo)))
        if n - size >= 2 and rng.random() < complex_frac:
            im = rng.uniform(0.5, 10.0)
            blocks.append([re, im])
            size += 2
        else:
            blocks.append([re])
            size += 1
    return blocks


def _block_diag(blocks):
    mats = []
    for b in blocks:
        if len(b) == 1:
            mats.append(np.array([[b[0]]]))
        else:
            re, im = b
            mats.append(np.array([[re, im], [-im, re]]))
    return sp.block_diag(mats, format='csc'), [m.shape[0] for m in mats]


def _upper_coupling(rng, sizes, density, scale):
    n = sum(sizes)
    N = sp.random(n, n, density=density, random_state=rng, format='coo',
                  data_rvs=lambda k: scale * rng.standard_normal(k))
    owner = np.repeat(np.arange(len(sizes)), sizes)
    keep = owner[N.row] < owner[N.col]
    return sp.csc_matrix((N.data[keep], (N.row[keep], N.col[keep])), shape=(n, n))


def _block_j4(rng, n2):
    mats = []
    i = 0
    while i < n2:
        if n2 - i >= 2 and rng.random() < 0.5:
            M = rng.standard_normal((2, 2))
            # keep singular values in a modest range
            U, _, Vt = np.linalg.svd(M)
            M = U @ np.diag(rng.uniform(1.0, 3.0, 2)) @ Vt
            mats.append(M)
            i += 2
        else:
            mats.append(np.array([[rng.choice([-1, 1]) * rng.uniform(1.0, 3.0)]]))
            i += 1
    if not mats:
        return sp.csc_matrix((0, 0)), sp.csc_matrix((0, 0))
    J4 = sp.block_diag(mats, format='csc')
    J4inv = sp.block_diag([np.linalg.inv(M) for M in mats], format='csc')
    return J4, J4inv


def random_index1_model(n1, n2, p=2, m=2, seed=0, *, unstable=0, semi_stable=None,
                        stable_range=(-20.0, -1.0), complex_frac=0.3, coupling=0.5,
                        density=None, dense_cap=DENSE_SIZE_CAP, name=None):
    """Random sparse index-1 model.

    Parameters
    ----------
    n1, n2, p, m
        Differential and algebraic state sizes, number of inputs and outputs.
    unstable
        Number of real eigenvalues placed in ``(0.3, 3)``.
    semi_stable
        Optional extra real eigenvalue (e.g. ``-1e-9``) placed near the axis.
    stable_range
        Interval of the real parts of the remaining eigenvalues.

    Returns
    -------
    Index1Descriptor
        With ``D = C2 J4^{-1} B2``, so the reduced feedthrough is zero.
    """
    rng = np.random.default_rng(seed)
    density = density if density is not None else min(1.0, 4.0 / max(n1, 1))
    blocks = _spectrum(rng, n1, unstable, semi_stable, stable_range, complex_frac)
    D, sizes = _block_diag(blocks)
    N = _upper_coupling(rng, sizes, density, coupling)
    perm = rng.permutation(n1)
    P = sp.csc_matrix((np.ones(n1), (perm, np.arange(n1))), shape=(n1, n1))
    T = P @ (D + N) @ P.T
    e1 = rng.uniform(0.5, 2.0, n1)
    E1 = sp.diags(e1, format='csc')
    J4, J4inv = _block_j4(rng, n2)
    if n2:
        J2 = sp.random(n1, n2, density=density, random_state=rng, format='csc')
        J3 = sp.random(n2, n1, density=density, random_state=rng, format='csc')
        J1 = E1 @ T + J2 @ J4inv @ J3
    else:
        J2 = sp.csc_matrix((n1, 0))
        J3 = sp.csc_matrix((0, n1))
        J1 = E1 @ T
    B1 = rng.standard_normal((n1, p))
    B2 = rng.standard_normal((n2, p))
    C1 = rng.standard_normal((m, n1))
    C2 = rng.standard_normal((m, n2))
    # full-model feedthrough chosen so that the reduced one vanishes
    D = C2 @ (J4inv @ B2) if n2 else np.zeros((m, p))
    return Index1Descriptor.from_blocks(E1, J1, J2, J3, J4, B1, B2, C1, C2, D, dense_cap=dense_cap,
                                        name=name or f'random-{n1}-{n2}-s{seed}')


def scalar_model(e=1.0, a=1.0, b=1.0, c=1.0):
    """One-state model without algebraic part, ``e x' = a x + b u, y = c x``."""
    z = sp.csc_matrix((1, 0))
    return Index1Descriptor.from_blocks(
        [[e]], [[a]], z, z.T, sp.csc_matrix((0, 0)), [[b]], np.zeros((0, 1)), [[c]],
        np.zeros((1, 0)), name='scalar')
