"""Low-rank solvers for the algebraic Riccati equation of sparse index-1 descriptor systems.

The two solvers, :func:`rksm_solve` (rational Krylov projection) and
:func:`kn_solve` (Kleinman-Newton with low-rank ADI), work on the sparse
block form of the model and never build the dense reduced state matrix.
"""

from sparsecare.dense import solve_bernoulli_dense, solve_care_dense, solve_lyap_dense
from sparsecare.descriptor import (GeneralizedSystem, Index1Descriptor, ShiftedSolver,
                                   apply_reduced, load_model, reduce_dense, save_model,
                                   transfer_eval)
from sparsecare.errors import (NonConvergence, SparseCareError, UnstableBlowup,
                               UnstableClosedLoop)
from sparsecare.kn_adi import adi_solve, fold_complex_pair, kn_solve
from sparsecare.lowrank import LowRankFactor
from sparsecare.rksm import rksm_solve
from sparsecare.stabilize import (assemble_closed_loop, closed_loop_spectrum, optimal_cost,
                                  step_response)

__version__ = '0.1.0'

__all__ = [
    'GeneralizedSystem', 'Index1Descriptor', 'LowRankFactor', 'NonConvergence', 'ShiftedSolver',
    'SparseCareError', 'UnstableBlowup', 'UnstableClosedLoop', 'adi_solve', 'apply_reduced',
    'assemble_closed_loop', 'closed_loop_spectrum', 'fold_complex_pair', 'kn_solve',
    'load_model', 'optimal_cost', 'reduce_dense', 'rksm_solve', 'save_model',
    'solve_bernoulli_dense', 'solve_care_dense', 'solve_lyap_dense', 'step_response',
    'transfer_eval',
]
