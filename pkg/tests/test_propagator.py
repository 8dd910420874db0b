import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bsvsim.design import gaussian_pump, periodic_poling, pump_on_grid, uniform_crystal
from bsvsim.dispersion import FrequencyGrid, PhaseMismatchTable
from bsvsim.errors import DivergenceError, GridMismatchError
from bsvsim.observables import correlations, equal_photon_numbers, photon_numbers
from bsvsim.propagator import (
    CrystalDesign,
    GainSpec,
    SolverSpec,
    build_kernel,
    propagate_all,
    propagate_mode,
    symplectic_defect,
)

from conftest import PAIR_NM

LENGTH = 5e-3


def two_mode_setup(dk=0.0):
    grid = FrequencyGrid.from_wavelengths(*PAIR_NM, half_span_nm=1.0, n=1)
    table = PhaseMismatchTable.build(grid)
    table = replace(table, dk=np.full((1, 1), dk))
    design = CrystalDesign(uniform_crystal(LENGTH), pump_on_grid(np.ones(1), grid))
    unit = GainSpec.at_idler_center(1.0, grid, LENGTH)
    gamma = abs(build_kernel(design, table, unit).coupling[0, 0])
    return grid, table, design, unit, gamma


@pytest.mark.parametrize("gl", [0.1, 1.0, 3.0])
def test_two_mode_reduction_matches_cosh_sinh(gl):
    grid, table, design, unit, gamma = two_mode_setup()
    gain = unit.with_kappa(gl / (gamma * LENGTH))
    tf = propagate_all(design, table, gain, SolverSpec(n_z=2000))
    dw = grid.d_omega
    assert abs(tf.U_i[0, 0]) * dw == pytest.approx(math.cosh(gl), rel=1e-6)
    assert abs(tf.U_s[0, 0]) * dw == pytest.approx(math.cosh(gl), rel=1e-6)
    assert abs(tf.V_i[0, 0]) * dw == pytest.approx(math.sinh(gl), rel=1e-6)
    assert abs(tf.V_s[0, 0]) * dw == pytest.approx(math.sinh(gl), rel=1e-6)


@pytest.mark.parametrize("ratio", [0.5, 1.5])
def test_two_mode_with_mismatch_matches_closed_form(ratio):
    gl = 1.0
    dk = ratio * 2 * gl / LENGTH
    grid, table, design, unit, gamma = two_mode_setup(dk)
    gain = unit.with_kappa(gl / (gamma * LENGTH))
    tf = propagate_all(design, table, gain, SolverSpec(n_z=4000))
    g = gl / LENGTH
    s = complex(g * g - dk * dk / 4) ** 0.5
    expect = abs(g / s * np.sinh(s * LENGTH))
    assert abs(tf.V_s[0, 0]) * grid.d_omega == pytest.approx(expect, rel=1e-6)


def test_zero_gain_is_identity(ppktp_design, small_table, small_grid):
    gain = GainSpec.at_idler_center(0.0, small_grid, 13.7e-3)
    tf = propagate_all(ppktp_design, small_table, gain)
    dw = small_grid.d_omega
    assert np.array_equal(tf.U_i * dw, np.eye(small_grid.n_idler))
    assert np.all(tf.V_i == 0) and np.all(tf.V_s == 0)


@pytest.fixture(scope="module")
def ppktp_high(ppktp_design, small_table, small_grid):
    gain = GainSpec.at_idler_center(5.9, small_grid, 13.7e-3)
    return gain, propagate_all(ppktp_design, small_table, gain)


def test_symplectic_defect_small_and_converging(ppktp_design, small_table, ppktp_high):
    gain, tf = ppktp_high
    base = symplectic_defect(tf)["max"]
    defects = [symplectic_defect(propagate_all(ppktp_design, small_table, gain, SolverSpec(n_z=n)))["max"]
               for n in (500, 1000, 2000, 4000)]
    assert base < 1e-4
    assert all(b < a for a, b in zip(defects, defects[1:]))


@pytest.mark.parametrize("kappa", [0.023, 1.0, 5.9])
def test_twin_beam_balance(ppktp_design, small_table, small_grid, kappa):
    gain = GainSpec.at_idler_center(kappa, small_grid, 13.7e-3)
    corr = correlations(propagate_all(ppktp_design, small_table, gain))
    assert photon_numbers(corr)[0] > 0
    assert equal_photon_numbers(corr) < 1e-6


def test_photon_number_grows_with_gain(ppktp_design, small_table, small_grid):
    ns = []
    for kappa in (0.1, 1.0, 3.0):
        gain = GainSpec.at_idler_center(kappa, small_grid, 13.7e-3)
        ns.append(photon_numbers(correlations(propagate_all(ppktp_design, small_table, gain)))[0])
    assert ns[0] < ns[1] < ns[2]
    # low-gain photon number scales as kappa^2
    assert ns[1] / ns[0] == pytest.approx(100.0, rel=0.05)


def test_propagate_mode_matches_columns(ppktp_design, small_table, small_grid, ppktp_high):
    gain, tf = ppktp_high
    j = 11
    w = small_grid.idler[j]
    st_i = propagate_mode(w, "idler", ppktp_design, small_table, gain)
    assert st_i.idler_out is None and st_i.signal_vac is None
    assert np.allclose(st_i.idler_vac, tf.U_i[:, j], rtol=1e-12, atol=0)
    assert np.allclose(st_i.signal_out, tf.V_s[:, j], rtol=1e-12, atol=0)
    k = 5
    st_s = propagate_mode(small_grid.signal[k], "signal", ppktp_design, small_table, gain)
    assert st_s.idler_vac is None and st_s.signal_out is None
    assert np.allclose(st_s.signal_vac, tf.U_s[:, k], rtol=1e-12, atol=0)
    assert np.allclose(st_s.idler_out, tf.V_i[:, k], rtol=1e-12, atol=0)


@given(st.floats(-np.pi, np.pi))
def test_vacuum_phase_is_linear(theta):
    grid, table, design, unit, gamma = two_mode_setup()
    gain = unit.with_kappa(0.5 / (gamma * LENGTH))
    w = grid.idler[0]
    a = propagate_mode(w, "idler", design, table, gain, SolverSpec(n_z=50))
    b = propagate_mode(w, "idler", design, table, gain, SolverSpec(n_z=50), amplitude=np.exp(1j * theta))
    assert np.allclose(b.idler_vac, np.exp(1j * theta) * a.idler_vac, rtol=1e-12)
    assert np.allclose(b.signal_out, np.exp(1j * theta) * a.signal_out, rtol=1e-12)


def test_divergence_is_reported(ppktp_design, small_table, small_grid):
    gain = GainSpec.at_idler_center(1e6, small_grid, 13.7e-3)
    with pytest.raises(DivergenceError) as info:
        propagate_all(ppktp_design, small_table, gain, SolverSpec(n_z=50))
    assert info.value.family in ("idler", "signal") and info.value.omega is not None


def test_length_mismatch_rejected(ppktp_design, small_table, small_grid):
    with pytest.raises(GridMismatchError):
        propagate_all(ppktp_design, small_table, GainSpec.at_idler_center(1.0, small_grid, 1e-3))


def test_steps_align_with_domain_walls(small_table, small_grid):
    poling = periodic_poling(46.0, 1e-3)
    design = CrystalDesign(poling, gaussian_pump(791.0, 2.71, small_grid))
    tf = propagate_all(design, small_table, GainSpec.at_idler_center(1.0, small_grid, 1e-3))
    assert tf.n_steps >= 30 * (len(poling.walls) - 1) // 2


def test_threaded_sweep_matches_serial(ppktp_design, small_table, ppktp_high):
    gain, tf = ppktp_high
    par = propagate_all(ppktp_design, small_table, gain, SolverSpec(deterministic=False, workers=3))
    assert np.allclose(par.U_i, tf.U_i, rtol=1e-12, atol=0)
    assert np.allclose(par.V_s, tf.V_s, rtol=1e-12, atol=0)


def test_solver_spec_validation():
    with pytest.raises(ValueError):
        SolverSpec(method="euler")
    with pytest.raises(ValueError):
        SolverSpec(steps_per_period=0)
    assert SolverSpec().refined().steps_per_period == 60
    assert SolverSpec(n_z=10).refined().n_z == 20
    with pytest.raises(ValueError):
        GainSpec(-1.0, 1e15, 1.8, 1e-3)
