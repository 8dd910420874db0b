import math
from dataclasses import fields

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from bsvsim.dispersion import FrequencyGrid
from bsvsim.errors import GridMismatchError, NRFUndefinedError, SingularMatrixError
from bsvsim.observables import (
    Bin,
    BinSet,
    CorrelationSet,
    CovarianceMatrix,
    Window,
    correlations,
    count_lobes,
    covariance,
    g2,
    half_max_axis_ratio,
    nrf,
    pearson,
    photon_numbers,
    wigner_value,
)
from bsvsim.propagator import GainSpec, propagate_all



def run(design, table, grid, kappa):
    return propagate_all(design, table, GainSpec.at_idler_center(kappa, grid, 13.7e-3))


@pytest.fixture(scope="module")
def tf_high(ppktp_design, small_table, small_grid):
    return run(ppktp_design, small_table, small_grid, 5.9)


def centre_bins(grid, half=2):
    d = grid.d_omega
    ci, cs = (grid.n_idler - 1) // 2, (grid.n_signal - 1) // 2
    w = (2 * half + 1) * d
    return BinSet(grid, (
        Bin("i", grid.idler[ci], w, "i0"), Bin("i", grid.idler[ci - 2 * half - 1], w, "i1"),
        Bin("s", grid.signal[cs], w, "s0"), Bin("s", grid.signal[cs + 2 * half + 1], w, "s1"),
    ))


def test_structural_zeros(tf_high, small_grid):
    corr = correlations(tf_high)
    assert not {f.name for f in fields(CorrelationSet)} & {"G1_is", "G1_si", "Q_ii", "Q_ss"}
    assert corr.q("i", "i") is None and corr.q("s", "s") is None
    cov = covariance(tf_high, centre_bins(small_grid), corr)
    same = np.array([[a[0] == b[0] for b in cov.labels] for a in cov.labels])
    assert np.all(cov.m[same] == 0) and np.all(cov.n[~same] == 0)
    assert np.abs(cov.m[~same]).max() > 0 and np.abs(cov.n[same]).max() > 0
    k = cov.n_modes
    assert np.all(cov.sigma[:k, k:][same] == 0) and np.all(cov.sigma[:k, :k][~same] == 0)


def test_covariance_vacuum_limit(ppktp_design, small_table, small_grid):
    bins = centre_bins(small_grid)
    low = covariance(run(ppktp_design, small_table, small_grid, 0.01), bins)
    zero = covariance(run(ppktp_design, small_table, small_grid, 0.0), bins)
    assert np.max(np.abs(low.sigma - np.eye(8))) < 0.05
    assert np.max(np.abs(zero.sigma - np.eye(8))) < 1e-10


def test_covariance_is_physical(tf_high, small_grid):
    cov = covariance(tf_high, centre_bins(small_grid))
    assert cov.is_physical()
    assert np.allclose(cov.sigma, cov.sigma.conj().T, atol=1e-12)
    assert not CovarianceMatrix(np.diag([0.5, 0.5])).is_physical()


def test_covariance_grid_mismatch(tf_high):
    other = FrequencyGrid.from_wavelengths(1560.0, 1600.0, half_span_nm=10.0, n=11)
    with pytest.raises(GridMismatchError):
        covariance(tf_high, centre_bins(other, half=1))


def test_g1_diagonal_matches_photon_number(tf_high, small_grid):
    corr = correlations(tf_high)
    n_i, _ = photon_numbers(corr)
    dw = small_grid.d_omega
    v = tf_high.V_i
    assert n_i == pytest.approx(dw * dw * float(np.sum(np.abs(v) ** 2)), rel=1e-12)
    assert np.allclose(corr.G1_ii, corr.G1_ii.conj().T)


def test_g2_same_field_has_bunching_term(tf_high):
    corr = correlations(tf_high)
    gii = g2(corr, "i", "i").raw
    d = np.real(np.diag(corr.G1_ii))
    assert np.allclose(np.diag(gii), 2 * d * d)
    assert g2(corr).normalized.max() == pytest.approx(1.0)


def test_nrf_without_pair_correlations_is_super_poissonian(tf_high, small_grid):
    corr = correlations(tf_high)
    blind = CorrelationSet(corr.grid, corr.G1_ii, corr.G1_ss, 0 * corr.Q_is, 0 * corr.Q_si)
    wi, ws = Window.full("i", small_grid), Window.full("s", small_grid)
    n_i, n_s = photon_numbers(corr)
    assert nrf(blind, wi, ws) == pytest.approx(1 + (n_i**2 + n_s**2) / (n_i + n_s), rel=1e-12)
    assert nrf(corr, wi, ws) < nrf(blind, wi, ws)


def test_nrf_errors(ppktp_design, small_table, small_grid):
    corr = correlations(run(ppktp_design, small_table, small_grid, 0.0))
    wi, ws = Window.full("i", small_grid), Window.full("s", small_grid)
    with pytest.raises(NRFUndefinedError):
        nrf(corr, wi, ws)
    with pytest.raises(ValueError):
        nrf(corr, ws, wi)
    with pytest.raises(ValueError):
        Window("i", 2.0, 1.0)


def test_window_from_nm_orders_edges():
    w = Window.from_nm("s", 1610.0, 1590.0)
    assert w.lo < w.hi and w.field == "s"


def test_bin_validation(small_grid):
    d = small_grid.d_omega
    with pytest.raises(ValueError):
        Bin("x", 1.0, d)
    with pytest.raises(ValueError):
        Bin("i", small_grid.idler[3], 0.0)
    with pytest.raises(ValueError):
        BinSet(small_grid, ())
    with pytest.raises(ValueError):
        BinSet(small_grid, (Bin("i", small_grid.idler[3], 3 * d), Bin("i", small_grid.idler[4], 3 * d)))
    with pytest.raises(ValueError):
        BinSet(small_grid, (Bin("i", small_grid.idler[0] - 10 * d, d),))


@given(st.integers(1, 7))
def test_bin_modes_are_orthonormal(half):
    grid = FrequencyGrid.from_wavelengths(1563.78, 1600.65, half_span_nm=30.0, n=61)
    bins = centre_bins(grid, half)
    u = np.array([bins.mode(b) for b in bins.bins])
    i_rows = u[:2]
    assert np.allclose(grid.d_omega * i_rows @ i_rows.T, np.eye(2))
    assert all(bins.nodes(b).size == 2 * half + 1 for b in bins.bins)


@pytest.mark.parametrize("sigma", [
    np.eye(2),
    np.array([[3.0, 2.0], [2.0, 3.0]]),
    np.array([[2.0, 1.2j], [-1.2j, 2.0]]),
])
def test_wigner_normalized_integrates_to_one(sigma):
    x = np.linspace(-6, 6, 241)
    re, im = np.meshgrid(x, x)
    vals = np.array([wigner_value(sigma, [a], normalized=True) for a in (re + 1j * im).ravel()])
    assert vals.sum() * (x[1] - x[0]) ** 2 == pytest.approx(1.0, rel=1e-6)


def test_wigner_default_convention():
    sigma = np.eye(4)
    assert wigner_value(sigma, [0, 0]) == pytest.approx(1 / math.pi**2)
    assert wigner_value(CovarianceMatrix.vacuum(1), [1.0]) == pytest.approx(math.exp(-2) / math.pi)
    with pytest.raises(SingularMatrixError):
        wigner_value(np.zeros((2, 2)), [0])
    with pytest.raises(ValueError):
        wigner_value(sigma, [0])


def test_pearson_and_lobes():
    x = np.linspace(-3, 3, 61)
    blob = np.exp(-(x[:, None] ** 2 + x[None, :] ** 2))
    assert pearson(blob, 2 * blob + 1) == pytest.approx(1.0)
    assert pearson(blob, -blob) == pytest.approx(-1.0)
    assert count_lobes(blob) == 1
    two = sum(np.exp(-4 * (x[:, None] ** 2 + (x[None, :] - c) ** 2)) for c in (-1.5, 1.5))
    assert count_lobes(two) == 2
    assert count_lobes(np.zeros((4, 4))) == 0
    assert half_max_axis_ratio(blob) == pytest.approx(1.0, abs=1e-9)
    ellipse = np.exp(-(x[:, None] ** 2 + (x[None, :] / 2) ** 2))
    assert half_max_axis_ratio(ellipse) == pytest.approx(2.0, rel=0.05)
