import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparsecare.errors import EmptySpectralData, UnstableClosedLoop
from sparsecare.shifts import (RksmShiftEngine, ShiftSequence, adi_shift_cycle, arnoldi_ritz,
                               is_conjugate_closed, next_rksm_shift, operator_ritz,
                               penzl_shifts, rksm_region_seeds)
from sparsecare.synthetic import random_index1_model, scalar_model


def test_next_shift_matches_brute_force():
    grid = np.linspace(1, 10, 10_000)
    f = np.abs(grid - 1) / (np.abs(grid + 1) * np.abs(grid + 10))
    mu = next_rksm_shift([-1.0, -10.0], [1.0])
    assert mu.imag == 0
    assert abs(mu.real - grid[np.argmax(f)]) <= 1e-3 * grid[np.argmax(f)]


def test_next_shift_real_for_real_ritz(rng):
    ritz = -rng.uniform(0.1, 100, 8)
    assert next_rksm_shift(ritz, [1.0, 5.0]).imag == 0


def test_next_shift_needs_data():
    with pytest.raises(EmptySpectralData):
        next_rksm_shift([], [])
    assert next_rksm_shift([], [], region_bounds=(1.0, 4.0)).real > 0


def test_engine_emits_conjugates():
    engine = RksmShiftEngine((0.5, 5.0), initial=1.0 + 2.0j)
    assert engine.next() == 1 + 2j
    assert engine.next() == 1 - 2j
    ritz = [-1 + 2j, -1 - 2j, -0.5, -4]
    for _ in range(6):
        mu = engine.next(ritz)
        assert mu.real > 0
        if mu.imag != 0:
            assert engine.next(ritz) == mu.conjugate()
        ritz = list(ritz) + [-mu]
    assert engine.sequence().conjugate_closed


def test_engine_rejects_left_shift():
    with pytest.raises(ValueError):
        RksmShiftEngine((1.0, 2.0), initial=-1.0)


def test_sequence_sign_discipline():
    with pytest.raises(ValueError):
        ShiftSequence([1.0], origin='adi')
    with pytest.raises(ValueError):
        ShiftSequence([-1.0], origin='rksm')
    with pytest.raises(ValueError):
        ShiftSequence([-1 + 1j, -2.0], origin='adi')
    assert len(ShiftSequence([-1 + 1j, -1 - 1j, -2.0])) == 3


def test_conjugate_closed_scan():
    assert is_conjugate_closed([1, 2 + 1j, 2 - 1j, 3])
    assert not is_conjugate_closed([2 + 1j, 3, 2 - 1j])


def test_penzl_single_candidate():
    assert penzl_shifts([-2.0], 5) == [-2.0]


def test_penzl_closure():
    shifts = penzl_shifts([-1.0, -5.0, -2 + 3j, -2 - 3j], 4)
    assert is_conjugate_closed(shifts)
    assert all(s.real < 0 for s in shifts)
    assert len(shifts) <= 4


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.floats(-100, -0.01), st.floats(0, 50)), min_size=1, max_size=12),
       st.integers(1, 12))
def test_penzl_properties(pairs, count):
    cand = []
    for re, im in pairs:
        cand.extend([complex(re, im), complex(re, -im)] if im else [re])
    shifts = penzl_shifts(cand, count)
    assert 1 <= len(shifts) <= max(count, 2)
    assert is_conjugate_closed(shifts)
    assert all(complex(s).real < 0 for s in shifts)


def test_arnoldi_exact_on_small_operator():
    A = np.diag([-1.0, -2.0, -3.0])
    ritz = arnoldi_ritz(lambda v: A @ v, 3, 10)
    np.testing.assert_allclose(np.sort(ritz.real), [-3, -2, -1])


def test_scalar_cycle():
    cycle = adi_shift_cycle(scalar_model(a=-2.0))
    np.testing.assert_allclose(list(cycle), [-2.0])


def test_cycle_deterministic_and_closed():
    mdl = random_index1_model(40, 20, seed=3, complex_frac=0.6)
    a = adi_shift_cycle(mdl, count=10, seed=0)
    b = adi_shift_cycle(mdl, count=10, seed=0)
    assert list(a) == list(b)
    assert a.conjugate_closed
    assert all(s.real < 0 for s in a)


def test_cycle_rejects_unstable_and_semi_stable():
    with pytest.raises(UnstableClosedLoop):
        adi_shift_cycle(scalar_model())
    mdl = random_index1_model(40, 20, seed=7, semi_stable=-1e-9)
    with pytest.raises(UnstableClosedLoop):
        adi_shift_cycle(mdl)


def test_cycle_with_feedback_is_stable():
    # K = 2 moves the scalar pole from +1 to -1
    np.testing.assert_allclose(list(adi_shift_cycle(scalar_model(), K=np.array([[2.0]]))), [-1])


def test_operator_ritz_with_low_rank_term():
    mdl = scalar_model()
    Z = np.array([[np.sqrt(2.0)]])
    # A - B B^T Z Z^T E = 1 - 2
    np.testing.assert_allclose(operator_ritz(mdl, Z=Z).real, -1.0)


def test_region_seeds(small_unstable):
    (lo, hi), first = rksm_region_seeds(small_unstable)
    assert 0 < lo <= hi
    assert first.real > 0
