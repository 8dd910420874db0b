import math
import time

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bsvsim.dispersion import (
    C_LIGHT,
    KTP,
    Dispersion,
    FrequencyGrid,
    SellmeierSet,
    delta_k,
    find_phase_matched_pair,
    omega_to_wavelength,
    refractive_index,
    wavelength_to_omega,
    wavenumber,
)
from bsvsim.errors import NoPhaseMatchingError, WavelengthRangeError


def ny_oracle(lam):
    l2 = lam * lam
    return math.sqrt(3.45018 + 0.04341 / (l2 - 0.04597) + 16.98825 / (l2 - 39.43799))


def nz_oracle(lam):
    l2 = lam * lam
    return math.sqrt(2.12725 + 1.18431 * l2 / (l2 - 5.14852e-2) + 0.6603 * l2 / (l2 - 100.00507) - 9.68956e-3 * l2)


@pytest.mark.parametrize("lam", [0.5, 0.791, 1.064, 1.55, 1.6, 3.0])
def test_index_matches_written_out_fits(lam):
    assert refractive_index("y", lam) == pytest.approx(ny_oracle(lam), rel=1e-14)
    assert refractive_index("z", lam) == pytest.approx(nz_oracle(lam), rel=1e-14)


def test_index_frozen_values():
    # frozen from the closed-form fits above
    assert refractive_index("y", 1.55) == pytest.approx(1.734906, abs=1e-6)
    assert refractive_index("z", 1.55) == pytest.approx(1.816029, abs=1e-6)
    # commonly quoted KTP values at 1064 nm
    assert refractive_index("y", 1.064) == pytest.approx(1.7455, abs=2e-3)
    assert refractive_index("z", 1.064) == pytest.approx(1.8302, abs=2e-3)


def test_normal_dispersion_on_both_axes():
    lam = np.linspace(0.5, 3.0, 50)
    for axis in ("y", "z"):
        assert np.all(np.diff(refractive_index(axis, lam)) < 0)


@pytest.mark.parametrize("lam", [0.3, 0.429, 3.6, 10.0])
def test_out_of_range_wavelength_raises(lam):
    with pytest.raises(WavelengthRangeError):
        refractive_index("y", lam)


def test_unknown_axis_raises():
    with pytest.raises(KeyError):
        refractive_index("w", 1.0)


def test_wavenumber_definition():
    w = wavelength_to_omega(1.55e-6)
    assert wavenumber("z", w) == pytest.approx(nz_oracle(1.55) * w / C_LIGHT, rel=1e-14)
    with pytest.raises(WavelengthRangeError):
        wavenumber("y", 0.0)


@given(st.floats(0.45, 3.5))
def test_wavelength_omega_roundtrip(lam_um):
    lam = lam_um * 1e-6
    assert omega_to_wavelength(wavelength_to_omega(lam)) == pytest.approx(lam, rel=1e-14)


def test_delta_k_sign_convention():
    wi, ws = wavelength_to_omega(1.5638e-6), wavelength_to_omega(1.6007e-6)
    expect = wavenumber("y", wi + ws) - wavenumber("y", wi) - wavenumber("z", ws)
    assert delta_k(wi, ws) == pytest.approx(expect, rel=1e-13)


def test_phase_matched_pair_for_ppktp():
    t0 = time.perf_counter()
    li, ls = find_phase_matched_pair(791.0, 46.0)
    elapsed = time.perf_counter() - t0
    assert abs(li - 1564) < 15 and abs(ls - 1605) < 15
    assert abs(1 / 791.0 - 1 / li - 1 / ls) * 791.0 < 1e-6
    assert elapsed < 1.0
    dk = delta_k(wavelength_to_omega(li * 1e-9), wavelength_to_omega(ls * 1e-9))
    assert abs(abs(dk) - 2 * math.pi / 46e-6) < 1e-6 * 2 * math.pi / 46e-6


@pytest.mark.parametrize("period", [0.5, 1.0])
def test_no_phase_matching_for_short_period(period):
    with pytest.raises(NoPhaseMatchingError):
        find_phase_matched_pair(791.0, period)


def test_pump_outside_window_raises():
    with pytest.raises((NoPhaseMatchingError, WavelengthRangeError)):
        find_phase_matched_pair(400.0, 46.0)


def test_custom_sellmeier_roundtrip():
    data = KTP.to_mapping()
    again = SellmeierSet.from_mapping(data)
    for axis in ("x", "y", "z"):
        assert again.n(axis, 1.2) == KTP.n(axis, 1.2)


def test_axis_assignment_changes_dispersion():
    swapped = Dispersion(KTP, "y", "z", "y")
    wi, ws = wavelength_to_omega(1.56e-6), wavelength_to_omega(1.60e-6)
    assert swapped.delta_k(wi, ws) != Dispersion().delta_k(wi, ws)


@given(st.integers(1, 40), st.integers(1, 40))
def test_pump_node_is_index_sum(ni, ns):
    grid = FrequencyGrid(1.2e15, 1.18e15, ni, ns, 1e11)
    m, n = ni // 2, ns - 1
    j = grid.index_of("pump", grid.idler[m] + grid.signal[n])
    assert j == m + n
    assert grid.pump.size == ni + ns - 1


def test_grid_axes_and_index_of(small_grid):
    g = small_grid
    assert g.idler[(g.n_idler - 1) // 2] == pytest.approx(g.omega_i0)
    assert np.allclose(np.diff(g.idler), g.d_omega)
    assert g.index_of("i", g.idler[7] + 0.3 * g.d_omega) == 7
    with pytest.raises(ValueError):
        g.index_of("i", g.idler[-1] + 2 * g.d_omega)


def test_table_matches_pointwise_delta_k(small_grid, small_table):
    j, k = 3, 17
    assert small_table.dk[j, k] == pytest.approx(delta_k(small_grid.idler[j], small_grid.signal[k]), rel=1e-13)
    assert small_table.dk.shape == (small_grid.n_idler, small_grid.n_signal)
