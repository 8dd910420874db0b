"""Frequency-bin graph states: Hamiltonian adjacency from a design, sublattice
split, the self-inverse cluster check, and nullifier squeezing.

Quadratures follow q = e^{i phi} a + e^{-i phi} a^dag and
p = (e^{i phi} a - e^{-i phi} a^dag) / i, so the vacuum variance of either is 1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import csr_matrix
from scipy.sparse.csgraph import connected_components

from .design import PumpSpectrum
from .errors import SingularMatrixError, UnsupportedGraphError
from .observables import BinSet, CovarianceMatrix

__all__ = [
    "GraphAdjacency",
    "NullifierSet",
    "Component",
    "GraphWarning",
    "SQUARE_CLUSTER_G",
    "square_cluster_integer",
    "hgraph_from_design",
    "partition_lattices",
    "cluster_matrix",
    "nullifier_variances",
    "phi_sweep",
    "edge_list",
    "ideal_graph",
    "graph_deviation",
]

# Hamiltonian adjacency of the four-mode square cluster, ordering (i0, i1, s0, s1)
_SQUARE_INT = np.array(
    [[0, 0, 1, 1],
     [0, 0, -1, 1],
     [1, -1, 0, 0],
     [1, 1, 0, 0]],
    dtype=np.int64,
)
SQUARE_CLUSTER_G = _SQUARE_INT / math.sqrt(2.0)


def square_cluster_integer() -> np.ndarray:
    """sqrt(2) * G of the square cluster, as integers."""
    return _SQUARE_INT.copy()


class GraphWarning(UserWarning):
    """Diagnostic about a sampled Hamiltonian graph (weak declared edge, complex weight)."""


@dataclass(frozen=True)
class GraphAdjacency:
    labels: tuple[str, ...]
    G: np.ndarray = field(repr=False)
    V: np.ndarray | None = field(default=None, repr=False)
    normalization: dict = field(default_factory=dict)

    @property
    def n_modes(self) -> int:
        return len(self.labels)

    def edges(self, tol: float = 0.0) -> list[tuple[int, int, float]]:
        out = []
        for j in range(self.n_modes):
            for k in range(j + 1, self.n_modes):
                if abs(self.G[j, k]) > tol:
                    out.append((j, k, float(self.G[j, k])))
        return out

    def subgraph(self, idx: Sequence[int]) -> "GraphAdjacency":
        idx = list(idx)
        return GraphAdjacency(tuple(self.labels[j] for j in idx), self.G[np.ix_(idx, idx)].copy(),
                              normalization=dict(self.normalization))


def hgraph_from_design(
    pump: PumpSpectrum,
    phi: np.ndarray,
    bins: BinSet,
    threshold: float = 0.05,
    phase_tol: float = 0.05,
    declared_edges: Iterable[tuple[str, str]] | None = None,
) -> GraphAdjacency:
    """Sample P(w_i + w_s) Phi(w_i, w_s) at bin centres into a bipartite adjacency matrix.

    The global phase is taken from the strongest entry. Entries weaker than
    ``threshold`` times the strongest are no edge. The result is scaled so the
    largest row norm is one. Complex weights (residual phase beyond
    ``phase_tol`` rad from 0 or pi) and weak declared edges raise GraphWarning.
    """
    grid = bins.grid
    phi = np.asarray(phi)
    if phi.shape != (grid.n_idler, grid.n_signal):
        raise ValueError("phase-matching function does not match the bin grid")
    p = pump.on_pairs(grid.n_idler, grid.n_signal)
    k = len(bins)
    nodes = [bins.center_node(b) for b in bins.bins]
    fields = [b.field for b in bins.bins]
    raw = np.zeros((k, k), dtype=complex)
    for j in range(k):
        for l in range(k):
            if fields[j] == "i" and fields[l] == "s":
                m, n = nodes[j], nodes[l]
                raw[j, l] = raw[l, j] = p[m, n] * phi[m, n]
    labels = tuple(bins.labels)
    peak = np.max(np.abs(raw)) if raw.size else 0.0
    if peak == 0:
        warnings.warn("pump-hologram product vanishes at every bin pair", GraphWarning, stacklevel=2)
        return GraphAdjacency(labels, np.zeros((k, k)), normalization={"scale": 0.0})
    flat = np.argmax(np.abs(raw))
    rot = np.exp(-1j * np.angle(raw.flat[flat]))
    weights = raw * rot
    weak = np.abs(weights) < threshold * peak
    weights[weak] = 0.0
    strong = ~weak & (np.abs(weights) > 0)
    ang = np.abs(np.angle(weights[strong]))
    resid = np.minimum(ang, math.pi - ang)
    if resid.size and np.max(resid) > phase_tol:
        warnings.warn(
            f"complex edge weight (phase off 0/pi by {np.max(resid):.3f} rad); outside the self-inverse scope",
            GraphWarning, stacklevel=2,
        )
    if declared_edges:
        index = {name: j for j, name in enumerate(labels)}
        for a, b in declared_edges:
            if weights[index[a], index[b]] == 0:
                warnings.warn(f"declared edge {a}-{b} is below threshold (off-lattice bin?)",
                              GraphWarning, stacklevel=2)
    g = weights.real
    scale = float(np.max(np.linalg.norm(g, axis=1)))
    g = g / scale
    return GraphAdjacency(
        labels, g,
        normalization={"rotation": float(np.angle(rot)), "scale": scale, "peak": float(peak),
                       "threshold": threshold},
    )


@dataclass(frozen=True)
class Component:
    modes: tuple[int, ...]
    graph: GraphAdjacency


def partition_lattices(graph: GraphAdjacency) -> list[Component]:
    """Connected components of the mode graph, largest first; isolated modes are dropped.

    Components share no mode by construction, so their Hamiltonian terms commute.
    """
    adj = csr_matrix((np.abs(graph.G) > 0).astype(np.int8))
    count, labels = connected_components(adj, directed=False)
    comps = []
    for c in range(count):
        idx = tuple(int(j) for j in np.nonzero(labels == c)[0])
        if len(idx) < 2:
            continue
        comps.append(Component(idx, graph.subgraph(idx)))
    comps.sort(key=lambda c: (-len(c.modes), c.modes))
    return comps


def cluster_matrix(G: np.ndarray, tol: float = 1e-6) -> np.ndarray:
    """V = G when G is its own inverse; anything else is outside the implemented scope."""
    g = np.asarray(G, dtype=float)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError("adjacency matrix must be square")
    if g.size == 0 or np.linalg.matrix_rank(g) < g.shape[0]:
        raise SingularMatrixError("adjacency matrix is singular")
    defect = float(np.max(np.abs(g @ g - np.eye(g.shape[0]))))
    if defect >= tol:
        raise UnsupportedGraphError(
            f"G is not self-inverse (max |G^2 - I| = {defect:.3e}); general G -> V conversion is not implemented"
        )
    return g.copy()


def phi_sweep(n: int = 721) -> np.ndarray:
    """n phases uniformly covering [0, pi)."""
    return np.arange(n) * (math.pi / n)


@dataclass(frozen=True)
class NullifierSet:
    phi: np.ndarray = field(repr=False)
    variances: np.ndarray = field(repr=False)   # (n_phi, n_rows)
    reference: np.ndarray = field(repr=False)   # 1 + sum_k V_jk^2
    labels: tuple[str, ...] = ()

    @property
    def ratio(self) -> np.ndarray:
        return self.variances / self.reference

    @property
    def min_variance(self) -> np.ndarray:
        return self.variances.min(axis=0)

    @property
    def argmin_phi(self) -> np.ndarray:
        return self.phi[np.argmin(self.variances, axis=0)]

    @property
    def squeezing_db(self) -> np.ndarray:
        return 10.0 * np.log10(self.min_variance / self.reference)

    @property
    def simultaneous_index(self) -> int:
        return int(np.argmin(self.ratio.max(axis=1)))

    @property
    def simultaneous_phi(self) -> float:
        return float(self.phi[self.simultaneous_index])

    @property
    def simultaneous_ratio(self) -> float:
        """min over phi of the worst row's variance / reference."""
        return float(self.ratio.max(axis=1)[self.simultaneous_index])

    @property
    def simultaneous_db(self) -> float:
        return 10.0 * math.log10(self.simultaneous_ratio)

    @property
    def all_below_reference(self) -> bool:
        return self.simultaneous_ratio < 1.0


def nullifier_variances(
    cov: CovarianceMatrix | np.ndarray,
    V: np.ndarray,
    phis: np.ndarray | None = None,
    labels: Sequence[str] | None = None,
) -> NullifierSet:
    """Var(p_j(phi) - sum_k V_jk q_k(phi)) = c^T sigma conj(c) / 2 for each phi."""
    sigma = cov.sigma if isinstance(cov, CovarianceMatrix) else np.asarray(cov, dtype=complex)
    V = np.asarray(V, dtype=float)
    n = V.shape[0]
    if V.shape != (n, n) or sigma.shape != (2 * n, 2 * n):
        raise ValueError(f"sigma {sigma.shape} and V {V.shape} describe different mode counts")
    phis = phi_sweep() if phis is None else np.asarray(phis, dtype=float)
    eye = np.eye(n)
    out = np.empty((phis.size, n))
    for t, ph in enumerate(phis):
        e = np.exp(1j * ph)
        # rows: coefficients of (a_1..a_N) then (a_1^dag..a_N^dag)
        ca = -1j * e * eye - e * V
        cd = 1j * np.conj(e) * eye - np.conj(e) * V
        c = np.hstack([ca, cd])
        out[t] = 0.5 * np.real(np.einsum("jm,mn,jn->j", c, sigma, c.conj()))
    reference = 1.0 + np.sum(V**2, axis=1)
    if labels is None:
        labels = tuple(getattr(cov, "labels", ()) or (f"n{j}" for j in range(n)))
    return NullifierSet(phis, out, reference, tuple(labels))


def edge_list(graph: GraphAdjacency, tol: float = 0.0) -> list[dict]:
    """Edges as {mode_a, mode_b, weight, phase} with phase 0 or pi for real weights."""
    return [
        {"mode_a": graph.labels[j], "mode_b": graph.labels[k], "weight": abs(w),
         "phase": 0.0 if w >= 0 else math.pi}
        for j, k, w in graph.edges(tol)
    ]


def ideal_graph(graph: GraphAdjacency) -> GraphAdjacency:
    """Equal-weight graph with the sampled sign pattern: entries sign(G_jk) / sqrt(degree).

    Only defined when every mode has the same degree; the sampled weights are
    otherwise too irregular to name a target graph.
    """
    g = np.asarray(graph.G, dtype=float)
    mask = np.abs(g) > 0
    deg = mask.sum(axis=1)
    if deg.size == 0 or deg.min() == 0 or np.any(deg != deg[0]):
        raise UnsupportedGraphError("modes have unequal degrees; no equal-weight target graph")
    return GraphAdjacency(graph.labels, np.sign(g) / math.sqrt(deg[0]),
                          normalization=dict(graph.normalization))


def graph_deviation(sampled: GraphAdjacency, target: np.ndarray) -> float:
    """max |G_sampled - s * target| minimized over the global sign s."""
    g = np.asarray(sampled.G, dtype=float)
    t = np.asarray(target, dtype=float)
    return float(min(np.max(np.abs(g - t)), np.max(np.abs(g + t))))
