import csv
import json
import subprocess
import sys

import numpy as np
import pytest
import scipy.io

from sparsecare.cli import main
from sparsecare.descriptor import save_model
from sparsecare.stabilize import TimeSeries
from sparsecare.synthetic import random_index1_model, scalar_model

SQRT2 = np.sqrt(2.0)


@pytest.fixture
def scalar_manifest(tmp_path):
    path = save_model(scalar_model(), tmp_path / 'scalar')
    k0 = tmp_path / 'k0.mtx'
    scipy.io.mmwrite(str(k0), np.array([[2.0]]))
    return str(path), str(k0)


@pytest.fixture
def stable_manifest(tmp_path):
    return str(save_model(random_index1_model(30, 20, seed=5), tmp_path / 'stable'))


def _rows(path):
    with open(path, newline='') as fh:
        return list(csv.DictReader(fh))


@pytest.mark.parametrize('method', ['rksm', 'kn-adi'])
def test_solve_scalar(tmp_path, scalar_manifest, method):
    manifest, k0 = scalar_manifest
    out = tmp_path / 'out'
    assert main(['solve', '--model', manifest, '--method', method, '--k0', k0,
                 '--out-dir', str(out)]) == 0
    report = json.loads((out / 'report.json').read_text())
    assert report['rank'] == 1 and report['converged']
    assert report['residual'] <= 1e-10
    K = scipy.io.mmread(str(out / 'K.mtx'))
    np.testing.assert_allclose(K, [[1 + SQRT2]], rtol=1e-12)
    Z = scipy.io.mmread(str(out / 'Z.mtx'))
    np.testing.assert_allclose(Z @ Z.T, [[1 + SQRT2]], rtol=1e-12)


def test_solve_malformed_manifest(tmp_path):
    bad = tmp_path / 'bad.json'
    bad.write_text('{"blocks": 3}')
    out = tmp_path / 'out'
    assert main(['solve', '--model', str(bad), '--out-dir', str(out)]) == 1
    assert not out.exists()


def test_solve_bad_k0_shape(tmp_path, stable_manifest):
    k0 = tmp_path / 'k0.mtx'
    scipy.io.mmwrite(str(k0), np.ones((1, 1)))
    assert main(['solve', '--model', stable_manifest, '--k0', str(k0),
                 '--out-dir', str(tmp_path / 'o')]) == 1


def test_usage_error_exit_code(stable_manifest):
    with pytest.raises(SystemExit) as info:
        main(['solve', '--model', stable_manifest, '--tol', '5'])
    assert info.value.code == 1


def test_compare_scalar(tmp_path, scalar_manifest):
    manifest, k0 = scalar_manifest
    out = tmp_path / 'cmp'
    assert main(['compare', '--model', manifest, '--k0', k0, '--method', 'rksm', 'kn-adi',
                 '--tol', '1e-8', '1e-10', '--out-dir', str(out)]) == 0
    rows = _rows(out / 'compare.csv')
    assert len(rows) == 4
    assert {r['rank'] for r in rows} == {'1'} and {r['status'] for r in rows} == {'ok'}
    assert (out / 'kn-adi_tol1e-10' / 'Z.mtx').exists()


def test_compare_semi_stable_split(tmp_path):
    manifest = save_model(random_index1_model(40, 20, seed=7, semi_stable=-1e-9), tmp_path / 'm')
    out = tmp_path / 'cmp'
    code = main(['compare', '--model', str(manifest), '--method', 'rksm', 'kn-adi',
                 '--tol', '1e-5', '--out-dir', str(out)])
    rows = {r['method']: r for r in _rows(out / 'compare.csv')}
    assert rows['rksm']['status'] == 'ok'
    assert rows['kn-adi']['status'] == 'UnstableClosedLoop'
    assert code == 2


def test_compare_needs_methods(tmp_path, stable_manifest):
    out = tmp_path / 'cmp'
    assert main(['compare', '--model', stable_manifest, '--method', '--out-dir', str(out)]) == 1
    assert not out.exists()


def test_eigs_scalar(tmp_path, scalar_manifest):
    manifest, _ = scalar_manifest
    K = tmp_path / 'K.mtx'
    scipy.io.mmwrite(str(K), np.array([[1 + SQRT2]]))
    out = tmp_path / 'e'
    assert main(['eigs', '--model', manifest, '--feedback', str(K), '--out-dir', str(out)]) == 0
    row = _rows(out / 'eigs.csv')[0]
    assert float(row['re_open']) == pytest.approx(1.0)
    assert float(row['re_closed']) == pytest.approx(-SQRT2, rel=1e-12)


def test_eigs_stable_and_bad_feedback(tmp_path, stable_manifest):
    out = tmp_path / 'e'
    assert main(['eigs', '--model', stable_manifest, '--out-dir', str(out)]) == 0
    assert all(float(r['re']) < 0 for r in _rows(out / 'eigs.csv'))
    K = tmp_path / 'K.mtx'
    scipy.io.mmwrite(str(K), np.ones((3, 3)))
    assert main(['eigs', '--model', stable_manifest, '--feedback', str(K),
                 '--out-dir', str(out)]) == 1


def test_eigs_size_cap(tmp_path, stable_manifest):
    assert main(['eigs', '--model', stable_manifest, '--dense-cap', '10',
                 '--out-dir', str(tmp_path / 'e')]) == 1


def test_step_round_trip(tmp_path, stable_manifest):
    out = tmp_path / 's'
    assert main(['step', '--model', stable_manifest, '--input', '1', '--output', '0',
                 '--t-final', '2', '--dt', '0.01', '--out-dir', str(out)]) == 0
    ts = TimeSeries.read_csv(out / 'step.csv')
    assert ts.t.size == 201
    again = tmp_path / 'again.csv'
    ts.write_csv(again)
    assert again.read_text() == (out / 'step.csv').read_text()


def test_step_invalid_channel(tmp_path, stable_manifest):
    assert main(['step', '--model', stable_manifest, '--input', '9',
                 '--out-dir', str(tmp_path / 's')]) == 1


def test_step_blowup_exit(tmp_path, scalar_manifest):
    manifest, _ = scalar_manifest
    out = tmp_path / 's'
    assert main(['step', '--model', manifest, '--t-final', '40', '--out-dir', str(out)]) == 2
    assert (out / 'step.csv').exists()


def test_stabilize_unstable_model(tmp_path):
    manifest = save_model(random_index1_model(30, 20, seed=6, unstable=2), tmp_path / 'm')
    out = tmp_path / 'st'
    assert main(['stabilize', '--model', str(manifest), '--out-dir', str(out)]) == 0
    report = json.loads((out / 'report.json').read_text())
    assert report['stable'] and report['closed_loop_max_real'] < 0


def test_module_entry_point(tmp_path, scalar_manifest):
    manifest, k0 = scalar_manifest
    proc = subprocess.run([sys.executable, '-m', 'sparsecare', 'solve', '--model', manifest,
                           '--k0', k0, '--out-dir', str(tmp_path / 'o')],
                          capture_output=True, text=True)
    assert proc.returncode == 0, proc.stderr
    assert json.loads(proc.stdout)['rank'] == 1


@pytest.mark.parametrize('method', ['rksm', 'kn-adi'])
def test_solve_is_deterministic(tmp_path, method):
    manifest = str(save_model(random_index1_model(30, 20, seed=6, unstable=2), tmp_path / 'm'))
    outs = []
    for run in ('a', 'b'):
        out = tmp_path / run
        assert main(['solve', '--model', manifest, '--method', method,
                     '--out-dir', str(out)]) == 0
        report = json.loads((out / 'report.json').read_text())
        report.pop('wall_time')
        outs.append(((out / 'Z.mtx').read_bytes(), (out / 'K.mtx').read_bytes(), report))
    assert outs[0] == outs[1]


def test_compare_defaults_to_all_methods(tmp_path, scalar_manifest):
    manifest, k0 = scalar_manifest
    out = tmp_path / 'cmp'
    assert main(['compare', '--model', manifest, '--k0', k0, '--out-dir', str(out)]) == 0
    assert [r['method'] for r in _rows(out / 'compare.csv')] == ['rksm', 'kn-adi']
