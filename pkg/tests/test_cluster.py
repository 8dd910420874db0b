import math
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bsvsim.cluster import (
    SQUARE_CLUSTER_G,
    GraphAdjacency,
    GraphWarning,
    cluster_matrix,
    edge_list,
    graph_deviation,
    hgraph_from_design,
    ideal_graph,
    nullifier_variances,
    partition_lattices,
    phi_sweep,
    square_cluster_integer,
)
from bsvsim.design import pump_on_grid
from bsvsim.errors import SingularMatrixError, UnsupportedGraphError
from bsvsim.observables import Bin, BinSet, CovarianceMatrix


def test_square_cluster_is_self_inverse_in_integers():
    m = square_cluster_integer()
    assert m.dtype.kind == "i"
    assert np.array_equal(m @ m, 2 * np.eye(4, dtype=np.int64))
    assert np.array_equal(m, m.T)
    assert np.allclose(SQUARE_CLUSTER_G @ SQUARE_CLUSTER_G, np.eye(4), atol=1e-15)


def test_cluster_matrix_accepts_self_inverse():
    assert np.array_equal(cluster_matrix(SQUARE_CLUSTER_G), SQUARE_CLUSTER_G)


def test_cluster_matrix_rejects_other_graphs():
    path = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=float)
    with pytest.raises(SingularMatrixError):
        cluster_matrix(path)
    with pytest.raises(UnsupportedGraphError):
        cluster_matrix(np.array([[0, 2.0], [2.0, 0]]))
    with pytest.raises(ValueError):
        cluster_matrix(np.ones((2, 3)))


def test_phi_sweep_covers_half_turn():
    phis = phi_sweep()
    assert phis.size == 721 and phis[0] == 0 and phis[-1] < math.pi
    assert np.allclose(np.diff(phis), math.pi / 721)


@given(arrays(float, (3, 3), elements=st.floats(-2, 2)))
def test_vacuum_nullifier_equals_reference(v):
    ns = nullifier_variances(CovarianceMatrix.vacuum(3), v, phi_sweep(13))
    assert np.allclose(ns.variances, ns.reference[None, :], rtol=1e-12)
    assert np.allclose(ns.ratio, 1.0, rtol=1e-12)


@pytest.mark.parametrize("r,theta", [(0.3, 0.0), (0.7, 1.0), (1.2, -2.0)])
def test_two_mode_squeezed_nullifier(r, theta):
    eye, x = np.eye(2), np.array([[0.0, 1.0], [1.0, 0.0]])
    n = np.sinh(r) ** 2 * eye
    m = np.exp(1j * theta) * np.sinh(r) * np.cosh(r) * x
    sigma = np.block([[eye + 2 * n.T, 2 * m], [2 * m.conj(), eye + 2 * n]])
    ns = nullifier_variances(sigma, x)
    assert ns.min_variance == pytest.approx([2 * math.exp(-2 * r)] * 2, rel=1e-3)
    assert ns.simultaneous_db == pytest.approx(10 * math.log10(math.exp(-2 * r)), abs=0.01)
    assert ns.all_below_reference


def test_nullifier_shape_mismatch():
    with pytest.raises(ValueError):
        nullifier_variances(CovarianceMatrix.vacuum(3), np.eye(2))


def block_graph():
    g = np.zeros((6, 6))
    g[0, 1] = g[1, 0] = 1.0
    g[2, 3] = g[3, 2] = -0.5
    g[3, 4] = g[4, 3] = 0.5
    return GraphAdjacency(tuple("abcdef"), g)


def test_partition_drops_isolated_and_sorts():
    comps = partition_lattices(block_graph())
    assert [c.modes for c in comps] == [(2, 3, 4), (0, 1)]
    assert comps[0].graph.labels == ("c", "d", "e")
    # components share no mode
    assert not set(comps[0].modes) & set(comps[1].modes)


def test_edge_list_phases():
    edges = edge_list(block_graph())
    byname = {(e["mode_a"], e["mode_b"]): e for e in edges}
    assert byname[("c", "d")]["phase"] == pytest.approx(math.pi)
    assert byname[("a", "b")]["phase"] == 0.0 and byname[("a", "b")]["weight"] == 1.0
    assert len(edges) == 3


def test_ideal_graph_and_deviation():
    g = SQUARE_CLUSTER_G * np.array([1.0, 0.98, 1.0, 1.02])[:, None]
    graph = GraphAdjacency(("i0", "i1", "s0", "s1"), g)
    ideal = ideal_graph(graph)
    assert np.allclose(ideal.G, SQUARE_CLUSTER_G)
    assert graph_deviation(graph, -SQUARE_CLUSTER_G) == graph_deviation(graph, SQUARE_CLUSTER_G)
    assert graph_deviation(graph, SQUARE_CLUSTER_G) == pytest.approx(0.02 / math.sqrt(2))
    with pytest.raises(UnsupportedGraphError):
        ideal_graph(block_graph())


def test_hgraph_samples_bin_centres(small_grid):
    n = small_grid.n_idler
    pump = pump_on_grid(np.ones(2 * n - 1), small_grid)
    ci, cs = 10, 20
    phi = np.zeros((n, n), dtype=complex)
    rot = np.exp(0.4j)
    pattern = SQUARE_CLUSTER_G[:2, 2:] * math.sqrt(2)
    for a in range(2):
        for b in range(2):
            phi[ci + 5 * a, cs + 5 * b] = rot * pattern[a, b]
    d = small_grid.d_omega
    bins = BinSet(small_grid, (
        Bin("i", small_grid.idler[ci], d, "i0"), Bin("i", small_grid.idler[ci + 5], d, "i1"),
        Bin("s", small_grid.signal[cs], d, "s0"), Bin("s", small_grid.signal[cs + 5], d, "s1"),
    ))
    graph = hgraph_from_design(pump, phi, bins)
    assert graph_deviation(graph, SQUARE_CLUSTER_G) < 1e-12
    assert np.max(np.linalg.norm(graph.G, axis=1)) == pytest.approx(1.0)


def test_hgraph_warns_on_complex_weights(small_grid):
    n = small_grid.n_idler
    pump = pump_on_grid(np.ones(2 * n - 1), small_grid)
    phi = np.zeros((n, n), dtype=complex)
    phi[10, 20] = 1.0
    phi[15, 20] = 1j
    d = small_grid.d_omega
    bins = BinSet(small_grid, (Bin("i", small_grid.idler[10], d), Bin("i", small_grid.idler[15], d),
                               Bin("s", small_grid.signal[20], d)))
    with pytest.warns(GraphWarning):
        hgraph_from_design(pump, phi, bins)
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        with pytest.warns(GraphWarning):
            hgraph_from_design(pump, np.zeros((n, n)), bins)
