"""Correlations and squeezing metrics computed from the transfer matrices.

Operator normalization: [a(w), a^dag(w')] = delta_{ww'} / d_omega on the grid,
so G1 is a spectral density and sum d_omega G1(w, w) is a photon number.
With the propagator's vacuum amplitude set to one, these are already
operator-correlation units; the two-mode limit gives exactly
G1 = sinh^2 / d_omega and |Q| = cosh sinh / d_omega.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .dispersion import FrequencyGrid, wavelength_to_omega
from .errors import GridMismatchError, NRFUndefinedError, SingularMatrixError
from .propagator import TransferFunctions

__all__ = [
    "CorrelationSet",
    "G2Map",
    "Window",
    "Bin",
    "BinSet",
    "CovarianceMatrix",
    "g1",
    "q_corr",
    "correlations",
    "g2",
    "nrf",
    "photon_numbers",
    "covariance",
    "wigner_value",
    "pearson",
    "equal_photon_numbers",
    "windows_around",
    "count_lobes",
    "half_max_axis_ratio",
]


def _field(alpha: str) -> str:
    try:
        return {"i": "i", "idler": "i", "s": "s", "signal": "s"}[alpha]
    except KeyError:
        raise ValueError(f"unknown field {alpha!r}") from None


def g1(tf: TransferFunctions, alpha: str) -> np.ndarray:
    """G1_aa(w, w') = sum_Omega dOmega conj V_a(w, Omega) V_a(w', Omega).

    Only same-field blocks exist; G1_is vanishes identically and is not exposed.
    """
    v = tf.V_i if _field(alpha) == "i" else tf.V_s
    return tf.d_omega * (v.conj() @ v.T)


def q_corr(tf: TransferFunctions) -> tuple[np.ndarray, np.ndarray]:
    """(Q_is, Q_si) with Q_ab(w, w') = sum_Omega dOmega U_a(w, Omega) V_b(w', Omega)."""
    dw = tf.d_omega
    return dw * (tf.U_i @ tf.V_s.T), dw * (tf.U_s @ tf.V_i.T)


@dataclass(frozen=True)
class CorrelationSet:
    """Non-vanishing quadratic correlations; the cross-field G1 and same-field Q blocks are absent."""

    grid: FrequencyGrid
    G1_ii: np.ndarray = field(repr=False)
    G1_ss: np.ndarray = field(repr=False)
    Q_is: np.ndarray = field(repr=False)
    Q_si: np.ndarray = field(repr=False)

    def g1(self, alpha: str) -> np.ndarray:
        return self.G1_ii if _field(alpha) == "i" else self.G1_ss

    def q(self, alpha: str, beta: str) -> np.ndarray | None:
        a, b = _field(alpha), _field(beta)
        if a == b:
            return None
        return self.Q_is if a == "i" else self.Q_si


def correlations(tf: TransferFunctions) -> CorrelationSet:
    q_is, q_si = q_corr(tf)
    return CorrelationSet(tf.grid, g1(tf, "i"), g1(tf, "s"), q_is, q_si)


@dataclass(frozen=True)
class G2Map:
    raw: np.ndarray = field(repr=False)
    alpha: str = "i"
    beta: str = "s"

    @property
    def normalized(self) -> np.ndarray:
        peak = self.raw.max() if self.raw.size else 0.0
        return self.raw / peak if peak > 0 else np.zeros_like(self.raw)


def g2(corr: CorrelationSet, alpha: str = "i", beta: str = "s") -> G2Map:
    """G2(w, w') = G1_aa(w,w) G1_bb(w',w') + |G1_ab(w,w')|^2 + |Q_ab(w,w')|^2."""
    a, b = _field(alpha), _field(beta)
    ga, gb = corr.g1(a), corr.g1(b)
    out = np.outer(np.real(np.diag(ga)), np.real(np.diag(gb)))
    if a == b:
        out = out + np.abs(ga) ** 2
    else:
        out = out + np.abs(corr.q(a, b)) ** 2
    return G2Map(out, a, b)


@dataclass(frozen=True)
class Window:
    """Closed frequency interval [lo, hi] (rad/s) on one field's axis."""

    field: str
    lo: float
    hi: float

    def __post_init__(self):
        object.__setattr__(self, "field", _field(self.field))
        if not self.lo < self.hi:
            raise ValueError("window needs lo < hi")

    @classmethod
    def from_nm(cls, fld: str, nm_a: float, nm_b: float) -> "Window":
        w = sorted(float(x) for x in wavelength_to_omega(np.array([nm_a, nm_b]) * 1e-9))
        return cls(fld, w[0], w[1])

    @classmethod
    def full(cls, fld: str, grid: FrequencyGrid) -> "Window":
        ax = grid.axis(_field(fld))
        pad = 0.5 * grid.d_omega
        return cls(fld, ax[0] - pad, ax[-1] + pad)

    def mask(self, grid: FrequencyGrid) -> np.ndarray:
        ax = grid.axis(self.field)
        m = (ax >= self.lo) & (ax <= self.hi)
        if not m.any():
            raise ValueError(f"{self.field} window [{self.lo:.6e}, {self.hi:.6e}] holds no grid node")
        return m

    def to_mapping(self) -> dict:
        return {"field": self.field, "lo": self.lo, "hi": self.hi}


def photon_numbers(corr: CorrelationSet, window_i: Window | None = None, window_s: Window | None = None):
    """Windowed photon numbers (N_i, N_s); full grid by default."""
    grid, dw = corr.grid, corr.grid.d_omega
    wi = window_i or Window.full("i", grid)
    ws = window_s or Window.full("s", grid)
    n_i = dw * float(np.sum(np.real(np.diag(corr.G1_ii))[wi.mask(grid)]))
    n_s = dw * float(np.sum(np.real(np.diag(corr.G1_ss))[ws.mask(grid)]))
    return n_i, n_s


def nrf(corr: CorrelationSet, window_i: Window, window_s: Window) -> float:
    """1 + (N_i^2 + N_s^2 - Q_is^2 - Q_si^2) / (N_i + N_s) over the two windows."""
    if window_i.field != "i" or window_s.field != "s":
        raise ValueError("nrf needs an idler window and a signal window")
    grid, dw = corr.grid, corr.grid.d_omega
    mi, ms = window_i.mask(grid), window_s.mask(grid)
    n_i, n_s = photon_numbers(corr, window_i, window_s)
    if not n_i + n_s > 0:
        raise NRFUndefinedError("no photons in the NRF windows")
    q_is2 = dw * dw * float(np.sum(np.abs(corr.Q_is[np.ix_(mi, ms)]) ** 2))
    q_si2 = dw * dw * float(np.sum(np.abs(corr.Q_si[np.ix_(ms, mi)]) ** 2))
    return 1.0 + (n_i**2 + n_s**2 - q_is2 - q_si2) / (n_i + n_s)


@dataclass(frozen=True)
class Bin:
    """Top-hat frequency bin: nodes with |w - center| < width / 2 (left edge inclusive)."""

    field: str
    center: float
    width: float
    label: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "field", _field(self.field))
        if not self.width > 0:
            raise ValueError("bin width must be positive")

    @property
    def name(self) -> str:
        return self.label or f"{self.field}@{self.center:.6e}"


@dataclass(frozen=True)
class BinSet:
    """Ordered bins on a grid with orthonormal top-hat mode functions."""

    grid: FrequencyGrid
    bins: tuple[Bin, ...]

    def __post_init__(self):
        object.__setattr__(self, "bins", tuple(self.bins))
        if not self.bins:
            raise ValueError("empty bin set")
        seen = {"i": set(), "s": set()}
        for b in self.bins:
            idx = self.nodes(b)
            if idx.size == 0:
                raise ValueError(f"bin {b.name} holds no grid node")
            overlap = seen[b.field].intersection(idx.tolist())
            if overlap:
                raise ValueError(f"bin {b.name} overlaps another {b.field} bin")
            seen[b.field].update(idx.tolist())

    def nodes(self, b: Bin) -> np.ndarray:
        ax = self.grid.axis(b.field)
        lo, hi = b.center - 0.5 * b.width, b.center + 0.5 * b.width
        return np.nonzero((ax >= lo) & (ax < hi))[0]

    def center_node(self, b: Bin) -> int:
        return self.grid.index_of(b.field, b.center)

    def mode(self, b: Bin) -> np.ndarray:
        """u_b on the full axis of its field, sum d_omega |u|^2 = 1."""
        ax = self.grid.axis(b.field)
        u = np.zeros(ax.size)
        idx = self.nodes(b)
        u[idx] = 1.0 / math.sqrt(idx.size * self.grid.d_omega)
        return u

    @property
    def labels(self) -> list[str]:
        return [b.name for b in self.bins]

    def __len__(self):
        return len(self.bins)


@dataclass(frozen=True)
class CovarianceMatrix:
    """sigma over (a_1..a_N, a_1^dag..a_N^dag), sigma_mn = <{xi_m, xi_n^dag}>.

    Vacuum is the identity. ``n`` and ``m`` keep the binned <a_j^dag a_k> and
    <a_j a_k>.
    """

    sigma: np.ndarray = field(repr=False)
    labels: tuple[str, ...] = ()
    n: np.ndarray | None = field(default=None, repr=False)
    m: np.ndarray | None = field(default=None, repr=False)

    @property
    def n_modes(self) -> int:
        return self.sigma.shape[0] // 2

    def physicality_margin(self) -> float:
        """Smallest eigenvalue of sigma + diag(I, -I); non-negative for a physical state."""
        n = self.n_modes
        z = np.diag(np.concatenate([np.ones(n), -np.ones(n)]))
        h = self.sigma + z
        return float(np.min(np.linalg.eigvalsh(0.5 * (h + h.conj().T))))

    def is_physical(self, tol: float = 1e-8) -> bool:
        return self.physicality_margin() >= -tol

    @classmethod
    def vacuum(cls, n_modes: int) -> "CovarianceMatrix":
        return cls(np.eye(2 * n_modes, dtype=complex))


def covariance(tf: TransferFunctions, bins: BinSet, corr: CorrelationSet | None = None) -> CovarianceMatrix:
    """Binned covariance matrix; cross-field <a^dag a> and same-field <a a> blocks are exact zeros."""
    if bins.grid != tf.grid:
        raise GridMismatchError("bins and transfer functions use different grids")
    corr = corr or correlations(tf)
    dw = tf.d_omega
    modes = [bins.mode(b) for b in bins.bins]
    fields = [b.field for b in bins.bins]
    k = len(modes)
    n = np.zeros((k, k), dtype=complex)
    m = np.zeros((k, k), dtype=complex)
    for j in range(k):
        for l in range(k):
            uj, ul = modes[j], modes[l]
            if fields[j] == fields[l]:
                # <a_j^dag a_l> = dw^2 u_j^T G1 conj(u_l)
                n[j, l] = dw * dw * (uj @ corr.g1(fields[j]) @ ul.conj())
            else:
                # <a_j a_l> = dw^2 conj(u_j)^T Q_{jl} conj(u_l)
                m[j, l] = dw * dw * (uj.conj() @ corr.q(fields[j], fields[l]) @ ul.conj())
    eye = np.eye(k)
    sigma = np.block([[eye + 2.0 * n.T, 2.0 * m], [2.0 * m.conj(), eye + 2.0 * n]])
    return CovarianceMatrix(sigma, tuple(bins.labels), n, m)


def wigner_value(cov: CovarianceMatrix | np.ndarray, alpha, normalized: bool = False) -> float:
    """Gaussian Wigner function at alpha (length N complex vector).

    The default is exp(-v^H sigma^-1 v) / (pi^N det sigma) with v = (alpha, conj alpha).
    ``normalized=True`` returns the unit-mass density
    (2/pi)^N exp(-v^H sigma^-1 v) / sqrt(det sigma) over d^2N alpha.
    """
    sigma = cov.sigma if isinstance(cov, CovarianceMatrix) else np.asarray(cov, dtype=complex)
    alpha = np.atleast_1d(np.asarray(alpha, dtype=complex))
    n = sigma.shape[0] // 2
    if alpha.size != n:
        raise ValueError(f"alpha has {alpha.size} entries, sigma describes {n} modes")
    det = np.linalg.det(sigma).real
    if not abs(det) > 1e-300 or np.linalg.cond(sigma) > 1e14:
        raise SingularMatrixError("covariance matrix is singular")
    v = np.concatenate([alpha, alpha.conj()])
    quad = float(np.real(v.conj() @ np.linalg.solve(sigma, v)))
    if normalized:
        return (2.0 / math.pi) ** n * math.exp(-quad) / math.sqrt(det)
    return math.exp(-quad) / (math.pi**n * det)


def pearson(a: np.ndarray, b: np.ndarray) -> float:
    """Pearson correlation of two equally shaped maps."""
    a = np.asarray(a, dtype=float).ravel()
    b = np.asarray(b, dtype=float).ravel()
    return float(np.corrcoef(a, b)[0, 1])


def equal_photon_numbers(corr: CorrelationSet) -> float:
    """Relative mismatch |N_i - N_s| / max(N_i, N_s) over the full grid (0 when dark)."""
    n_i, n_s = photon_numbers(corr)
    top = max(abs(n_i), abs(n_s))
    return abs(n_i - n_s) / top if top > 0 else 0.0


def windows_around(grid: FrequencyGrid, omega_i: float, omega_s: float, half_i: float, half_s: float):
    return Window("i", omega_i - half_i, omega_i + half_i), Window("s", omega_s - half_s, omega_s + half_s)



def count_lobes(data: np.ndarray, level: float = 0.5) -> int:
    """Number of connected regions above ``level`` times the map maximum."""
    data = np.asarray(data, dtype=float)
    top = data.max()
    if not top > 0:
        return 0
    _, count = ndimage.label(data >= level * top)
    return int(count)


def half_max_axis_ratio(data: np.ndarray) -> float:
    """Major/minor axis ratio of the half-maximum region around the global peak.

    Uses the second moments of the connected region (on the uniform grid the
    index coordinates are proportional to frequency); 1 means round.
    """
    data = np.asarray(data, dtype=float)
    labels, _ = ndimage.label(data >= 0.5 * data.max())
    region = labels == labels[np.unravel_index(np.argmax(data), data.shape)]
    y, x = np.nonzero(region)
    if y.size < 3:
        raise ValueError("half-maximum region is too small to measure")
    ev = np.linalg.eigvalsh(np.cov(np.vstack([y, x])))
    if ev[0] <= 0:
        return math.inf
    return float(math.sqrt(ev[1] / ev[0]))
