"""Command-line interface.

Exit codes: 0 success, 1 input error, 2 solver failure or non-convergence
(artifacts are still written, with ``converged`` false).
"""

import argparse
import csv
import json
import logging
import os
import sys

import numpy as np
import scipy.io

from sparsecare.descriptor import DENSE_SIZE_CAP, load_model
from sparsecare.errors import (DimensionMismatch, FeedthroughNotSupported, MissingFile,
                               NonConvergence, SingularJ4, SingularMatrix, SizeCapExceeded,
                               SparseCareError, UnstableBlowup)
from sparsecare.kn_adi import kn_solve
from sparsecare.rksm import rksm_solve
from sparsecare.stabilize import closed_loop_spectrum, step_response

METHODS = ('rksm', 'kn-adi')
INPUT_ERRORS = (DimensionMismatch, FeedthroughNotSupported, MissingFile, SingularJ4, SingularMatrix,
                SizeCapExceeded, ValueError, OSError)

log = logging.getLogger('sparsecare')


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # usage errors are input errors (exit 1), not argparse's default 2
    def error(self, message):
        self.print_usage(sys.stderr)
        sys.stderr.write(f'{self.prog}: error: {message}\n')
        sys.exit(1)


def _positive_tol(text):
    v = float(text)
    if not 0 < v < 1:
        raise argparse.ArgumentTypeError(f'tolerance must lie in (0, 1), got {text}')
    return v


def _read_dense(path, shape=None):
    if not os.path.exists(path):
        raise MissingFile(f'missing file {path}')
    M = scipy.io.mmread(path)
    M = np.atleast_2d(M.toarray() if hasattr(M, 'toarray') else np.asarray(M, dtype=float))
    if shape is not None and M.shape != shape:
        raise DimensionMismatch(f'{path} has shape {M.shape}, expected {shape}')
    return M


def _write_dense(path, M):
    scipy.io.mmwrite(path, np.asarray(M, dtype=float), field='real', precision=17,
                     symmetry='general')


def _write_json(path, doc):
    with open(path, 'w', encoding='utf-8') as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write('\n')


def run_solver(model, method, tol, max_iter=None, trunc_tol=1e-12, K0=None, seed=0):
    """Run one solver; returns ``(factor, K, report_dict)``.

    NonConvergence is caught and turned into a report with ``converged``
    false; other solver errors propagate.
    """
    if method not in METHODS:
        raise ValueError(f'unknown method {method!r}')
    try:
        if method == 'rksm':
            kw = {} if max_iter is None else {'max_iter': max_iter}
            factor, K, rep = rksm_solve(model, tol=tol, tol_trunc=trunc_tol, K0=K0, seed=seed, **kw)
        else:
            kw = {} if max_iter is None else {'max_outer': max_iter}
            factor, K, rep = kn_solve(model, tol_outer=tol, tol_trunc=trunc_tol, K0=K0,
                                      seed=seed, **kw)
    except NonConvergence as exc:
        if exc.result is None:
            raise
        factor, K, rep = exc.result
    if method == 'rksm':
        iterations = rep.iterations
        extra = {'basis_width': rep.basis_width}
    else:
        iterations = rep.outer_iterations + int(sum(rep.inner_iterations))
        extra = {'outer_iterations': rep.outer_iterations,
                 'inner_iterations': [int(k) for k in rep.inner_iterations]}
    history = [float(r) for r in rep.residual_history]
    doc = dict(model=model.name, method=method, iterations=int(iterations), tolerance=tol,
               rank=int(factor.rank), wall_time=float(rep.wall_time),
               residual=history[-1] if history else 0.0, residual_history=history,
               converged=bool(rep.converged), **extra)
    return factor, K, doc


def _load(args):
    cap = getattr(args, 'dense_cap', None) or DENSE_SIZE_CAP
    return load_model(args.model, dense_cap=cap)


def _k0(args, model):
    if getattr(args, 'k0', None) is None:
        return None
    return _read_dense(args.k0, (model.p, model.n1))


def _feedback(args, model):
    if getattr(args, 'feedback', None) is None:
        return None
    return _read_dense(args.feedback, (model.p, model.n1))


def cmd_solve(args):
    model = _load(args)
    K0 = _k0(args, model)
    factor, K, doc = run_solver(model, args.method, args.tol, args.max_iter, args.trunc_tol,
                                K0, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_dense(os.path.join(args.out_dir, 'Z.mtx'), factor.Z)
    _write_dense(os.path.join(args.out_dir, 'K.mtx'), K)
    _write_json(os.path.join(args.out_dir, 'report.json'), doc)
    print(json.dumps({k: doc[k] for k in ('method', 'iterations', 'rank', 'residual',
                                          'converged')}, sort_keys=True))
    return 0 if doc['converged'] else 2


COMPARE_FIELDS = ('model', 'method', 'tolerance', 'status', 'iterations', 'rank', 'wall_time',
                  'residual')


def cmd_compare(args):
    methods = list(METHODS) if args.method is None else args.method
    if not methods:
        raise InputError('compare needs at least one method')
    tols = args.tol or [1e-10]
    model = _load(args)
    K0 = _k0(args, model)
    os.makedirs(args.out_dir, exist_ok=True)
    rows = []
    for method in methods:
        for tol in tols:
            row = dict(model=model.name, method=method, tolerance=f'{tol:g}')
            try:
                factor, _, doc = run_solver(model, method, tol, args.max_iter, args.trunc_tol,
                                            K0, args.seed)
            except SparseCareError as exc:
                log.warning('%s at tol %g failed: %s', method, tol, exc)
                row.update(status=type(exc).__name__, iterations='', rank='', wall_time='',
                           residual='')
                rows.append(row)
                continue
            run_dir = os.path.join(args.out_dir, f'{method}_tol{tol:g}')
            os.makedirs(run_dir, exist_ok=True)
            _write_dense(os.path.join(run_dir, 'Z.mtx'), factor.Z)
            row.update(status='ok' if doc['converged'] else 'NonConvergence',
                       iterations=doc['iterations'], rank=doc['rank'],
                       wall_time=f"{doc['wall_time']:.3f}", residual=f"{doc['residual']:.3e}")
            rows.append(row)
    path = os.path.join(args.out_dir, 'compare.csv')
    with open(path, 'w', newline='', encoding='utf-8') as fh:
        writer = csv.DictWriter(fh, fieldnames=COMPARE_FIELDS, lineterminator='\n')
        writer.writeheader()
        writer.writerows(rows)
    with open(path, encoding='utf-8') as fh:
        sys.stdout.write(fh.read())
    return 0 if all(r['status'] == 'ok' for r in rows) else 2


def _spectrum_rows(open_lam, closed_lam=None):
    if closed_lam is None:
        return ['re,im'], [(z.real, z.imag) for z in open_lam]
    n = max(len(open_lam), len(closed_lam))

    def pad(lam, i):
        return (lam[i].real, lam[i].imag) if i < len(lam) else (np.nan, np.nan)
    return (['re_open,im_open,re_closed,im_closed'],
            [pad(open_lam, i) + pad(closed_lam, i) for i in range(n)])


def _write_rows(path, header, rows):
    with open(path, 'w', encoding='utf-8', newline='') as fh:
        fh.write(header[0] + '\n')
        for r in rows:
            fh.write(','.join(f'{v:.17g}' for v in r) + '\n')


def cmd_eigs(args):
    model = _load(args)
    K = _feedback(args, model)
    open_lam = closed_loop_spectrum(model)
    closed_lam = closed_loop_spectrum(model, K) if K is not None else None
    header, rows = _spectrum_rows(open_lam, closed_lam)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_rows(os.path.join(args.out_dir, 'eigs.csv'), header, rows)
    lam = open_lam if closed_lam is None else closed_lam
    print(f'{len(lam)} finite eigenvalues, max Re = {np.max(lam.real):.6g}')
    return 0


def cmd_step(args):
    model = _load(args)
    K = _feedback(args, model)
    path = os.path.join(args.out_dir, 'step.csv')
    try:
        ts = step_response(model, K, args.input, args.output, args.t_final, args.dt)
    except UnstableBlowup as exc:
        os.makedirs(args.out_dir, exist_ok=True)
        exc.partial.write_csv(path)
        raise
    os.makedirs(args.out_dir, exist_ok=True)
    ts.write_csv(path)
    print(f'{len(ts.t)} samples, y(t_final) = {ts.y[-1]:.10g}')
    return 0


def cmd_stabilize(args):
    model = _load(args)
    K0 = _k0(args, model)
    factor, K, doc = run_solver(model, args.method, args.tol, args.max_iter, args.trunc_tol,
                                K0, args.seed)
    lam = closed_loop_spectrum(model, K)
    doc['closed_loop_max_real'] = float(np.max(lam.real)) if lam.size else None
    doc['stable'] = bool(lam.size == 0 or np.max(lam.real) < 0)
    os.makedirs(args.out_dir, exist_ok=True)
    _write_dense(os.path.join(args.out_dir, 'K.mtx'), K)
    _write_dense(os.path.join(args.out_dir, 'Z.mtx'), factor.Z)
    _write_rows(os.path.join(args.out_dir, 'eigs.csv'),
                *_spectrum_rows(closed_loop_spectrum(model), lam))
    _write_json(os.path.join(args.out_dir, 'report.json'), doc)
    print(f"closed loop max Re = {doc['closed_loop_max_real']:.6g}, stable = {doc['stable']}")
    return 0 if doc['converged'] and doc['stable'] else 2


def build_parser():
    parser = _Parser(prog='sparsecare', description=__doc__.splitlines()[0])
    parser.add_argument('-v', '--verbose', action='store_true')
    sub = parser.add_subparsers(dest='command', required=True, parser_class=_Parser)

    def common(p, solver=False):
        p.add_argument('--model', required=True, help='JSON manifest of the model blocks')
        p.add_argument('--out-dir', default='.')
        p.add_argument('--dense-cap', type=int, default=None)
        if solver:
            p.add_argument('--max-iter', type=int, default=None)
            p.add_argument('--trunc-tol', type=float, default=1e-12)
            p.add_argument('--k0', default=None, help='initial feedback (Matrix Market)')
            p.add_argument('--seed', type=int, default=0)

    p = sub.add_parser('solve', help='solve the CARE')
    common(p, solver=True)
    p.add_argument('--method', choices=METHODS, default='rksm')
    p.add_argument('--tol', type=_positive_tol, default=1e-10)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser('compare', help='tabulate solvers over tolerances')
    common(p, solver=True)
    p.add_argument('--method', nargs='*', choices=METHODS, default=None)
    p.add_argument('--tol', nargs='*', type=_positive_tol, default=None)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser('eigs', help='finite open/closed-loop spectrum')
    common(p)
    p.add_argument('--feedback', default=None, help='feedback K (Matrix Market)')
    p.set_defaults(func=cmd_eigs)

    p = sub.add_parser('step', help='unit step response of one channel')
    common(p)
    p.add_argument('--feedback', default=None)
    p.add_argument('--input', type=int, default=0)
    p.add_argument('--output', type=int, default=0)
    p.add_argument('--t-final', type=float, default=20.0)
    p.add_argument('--dt', type=float, default=1e-2)
    p.set_defaults(func=cmd_step)

    p = sub.add_parser('stabilize', help='solve, apply the feedback and check the spectrum')
    common(p, solver=True)
    p.add_argument('--method', choices=METHODS, default='rksm')
    p.add_argument('--tol', type=_positive_tol, default=1e-10)
    p.set_defaults(func=cmd_stabilize)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format='%(levelname)s %(name)s: %(message)s')
    try:
        return args.func(args)
    except (InputError, *INPUT_ERRORS) as exc:
        print(f'error: {exc}', file=sys.stderr)
        return 1
    except SparseCareError as exc:
        print(f'error: {type(exc).__name__}: {exc}', file=sys.stderr)
        return 2


if __name__ == '__main__':
    sys.exit(main())
