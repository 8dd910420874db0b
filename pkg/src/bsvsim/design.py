"""Holography inputs: the poling pattern d_NL(z), the pump spectrum P(w), and the
low-gain predictors built from them (phase-matching function and JSI).

All phases along z are referenced to the crystal centre, z_ref = L/2. Hologram
carriers are written as exp(i K (z - L/2)) so that real peak amplitudes give
real phase-matching lobes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import brentq, minimize_scalar

from .dispersion import (
    DEFAULT_DISPERSION,
    Dispersion,
    FrequencyGrid,
    PhaseMismatchTable,
    omega_to_wavelength,
    wavelength_to_omega,
)
from .errors import DesignError, GridMismatchError

__all__ = [
    "PolingPattern",
    "PumpSpectrum",
    "PumpPeak",
    "HologramPeak",
    "HologramSpec",
    "periodic_poling",
    "apodized_poling",
    "multipeak_hologram",
    "uniform_crystal",
    "phase_matching_function",
    "gaussian_pump",
    "multi_gaussian_pump",
    "jsi",
    "pump_on_grid",
    "group_slopes",
    "round_envelope_fwhm",
    "LatticeSpec",
    "LatticeDesign",
    "build_lattice",
]

FWHM_TO_SIGMA = 1.0 / (2.0 * math.sqrt(2.0 * math.log(2.0)))
_GL_ORDER = 8


def _gaussian_envelope(z, center, fwhm):
    if fwhm is None or not np.isfinite(fwhm):
        return np.ones_like(np.asarray(z, dtype=float))
    sigma = fwhm * FWHM_TO_SIGMA
    return np.exp(-0.5 * ((np.asarray(z, dtype=float) - center) / sigma) ** 2)


@dataclass(frozen=True)
class PolingPattern:
    """Normalized nonlinearity modulation d_NL(z) on [0, L].

    ``walls`` holds every segment boundary (0 and L included). Inside a segment
    the profile is smooth; for binarized patterns it is the constant
    ``signs[j]``. ``scale`` is the shortest length the profile varies on, used
    to size integration steps.
    """

    length: float
    walls: np.ndarray = field(repr=False)
    profile: Callable[[np.ndarray], np.ndarray] = field(repr=False)
    binarized: bool
    n_z: int
    scale: float
    signs: np.ndarray | None = field(default=None, repr=False)
    kind: str = "custom"

    def __post_init__(self):
        if not self.length > 0:
            raise DesignError("crystal length must be positive")
        if self.n_z < 2:
            raise DesignError("N_z must be at least 2")

    @property
    def z(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n_z)

    @property
    def samples(self) -> np.ndarray:
        return self(self.z)

    @property
    def segments(self) -> np.ndarray:
        """(n, 2) array of [start, stop] pairs."""
        return np.column_stack([self.walls[:-1], self.walls[1:]])

    def __call__(self, z):
        return self.profile(np.asarray(z, dtype=float))

    def scaled(self, factor: float) -> "PolingPattern":
        """The same pattern multiplied by a constant (the result is continuous)."""
        prof = self.profile
        return PolingPattern(
            self.length, self.walls, lambda z: factor * prof(z), False, self.n_z, self.scale, kind=self.kind
        )


def _binary_pattern(length, walls, signs, n_z, scale, kind):
    walls = np.asarray(walls, dtype=float)
    signs = np.asarray(signs, dtype=float)

    def profile(z):
        j = np.clip(np.searchsorted(walls, z, side="right") - 1, 0, signs.size - 1)
        return signs[j]

    return PolingPattern(length, walls, profile, True, n_z, scale, signs=signs, kind=kind)


def _check_period(period, length):
    if not period > 0 or not length > 0:
        raise DesignError("poling period and crystal length must be positive")
    if period > length * (1 + 1e-12):
        raise DesignError(f"poling period {period:.3e} m exceeds crystal length {length:.3e} m")


def uniform_crystal(length: float, n_z: int = 2001) -> PolingPattern:
    """Unpoled crystal, d_NL = 1."""
    return _binary_pattern(length, [0.0, length], [1.0], n_z, length, "uniform")


def periodic_poling(period_um: float, length: float, n_z: int = 20001) -> PolingPattern:
    """50 % duty-cycle square wave of period ``period_um``, +1 on the first half-period."""
    period = period_um * 1e-6
    _check_period(period, length)
    half = period / 2.0
    n_half = int(math.floor(length / half * (1 + 1e-12)))
    walls = np.arange(n_half + 1) * half
    walls = walls[walls < length * (1 - 1e-12)]
    walls = np.append(walls, length)
    signs = np.where(np.arange(walls.size - 1) % 2 == 0, 1.0, -1.0)
    return _binary_pattern(length, walls, signs, n_z, period, "periodic")


def apodized_poling(
    period_um: float,
    length: float,
    envelope_fwhm: float,
    n_z: int = 20001,
    binarized: bool = True,
) -> PolingPattern:
    """Gaussian-apodized grating centred at L/2.

    The binarized form keeps unit-magnitude domains and lowers the duty cycle so
    that the first Fourier order of each period follows the envelope: a +1
    domain of width D*period centred on the quarter-period, with
    sin(pi D) = envelope.
    """
    period = period_um * 1e-6
    _check_period(period, length)
    if not envelope_fwhm > 0:
        raise DesignError("envelope FWHM must be positive")
    center = length / 2.0

    if not binarized:
        n_half = int(math.floor(length / (period / 2.0) * (1 + 1e-12)))
        walls = np.arange(n_half + 1) * (period / 2.0)
        walls = np.append(walls[walls < length * (1 - 1e-12)], length)

        def profile(z):
            s = np.where(np.mod(z, period) < period / 2.0, 1.0, -1.0)
            return s * _gaussian_envelope(z, center, envelope_fwhm)

        # sign(sin) with the +1 half first; the modulo form avoids sign(0) at walls
        return PolingPattern(length, walls, profile, False, n_z, period, kind="apodized")

    n_periods = int(math.ceil(length / period))
    walls = [0.0]
    signs = []
    for j in range(n_periods):
        start = j * period
        mid = start + period / 2.0
        env = float(_gaussian_envelope(min(mid, length), center, envelope_fwhm))
        duty = math.asin(min(env, 1.0)) / math.pi
        a = start + period / 4.0 - duty * period / 2.0
        b = start + period / 4.0 + duty * period / 2.0
        for edge, sign in ((a, -1.0), (b, 1.0), (start + period, -1.0)):
            lo = walls[-1]
            edge = min(edge, length)
            if edge > lo + 1e-15 * length:
                walls.append(edge)
                signs.append(sign)
            if edge >= length:
                break
        if walls[-1] >= length:
            break
    if walls[-1] < length:
        walls.append(length)
        signs.append(-1.0)
    signs = np.asarray(signs)
    walls = np.asarray(walls)
    # merge neighbouring domains of equal sign
    keep = np.concatenate([[True], signs[1:] != signs[:-1]])
    starts = walls[:-1][keep]
    walls = np.append(starts, length)
    signs = signs[keep]
    return _binary_pattern(length, walls, signs, n_z, period, "apodized")


@dataclass(frozen=True)
class HologramPeak:
    """One grating component: carrier (rad/m), complex amplitude, optional Gaussian envelope FWHM (m)."""

    carrier: float
    amplitude: complex = 1.0
    envelope_fwhm: float | None = None

    def __post_init__(self):
        if self.envelope_fwhm is not None and not self.envelope_fwhm > 0:
            raise DesignError("hologram envelope width must be positive")


@dataclass(frozen=True)
class HologramSpec:
    peaks: tuple[HologramPeak, ...]
    length: float

    def __post_init__(self):
        if len(self.peaks) == 0:
            raise DesignError("hologram needs at least one peak")
        if not self.length > 0:
            raise DesignError("crystal length must be positive")

    def field(self, z):
        """Complex sum of all components before taking the real part."""
        z = np.asarray(z, dtype=float)
        zc = self.length / 2.0
        out = np.zeros(z.shape, dtype=complex)
        for p in self.peaks:
            out += p.amplitude * _gaussian_envelope(z, zc, p.envelope_fwhm) * np.exp(1j * p.carrier * (z - zc))
        return out


def multipeak_hologram(spec: HologramSpec, n_z: int = 20001, binarized: bool = False) -> PolingPattern:
    """d_NL(z) = Re sum_k A_k env_k(z) exp(i K_k (z - L/2)), peak-normalized, or its sign."""
    length = spec.length
    k_max = max(abs(p.carrier) for p in spec.peaks)
    scale = 2.0 * np.pi / k_max if k_max > 0 else length
    # sample well above the highest carrier to bracket every zero crossing
    n_dense = max(n_z, int(math.ceil(length / scale * 64)) + 1)
    zd = np.linspace(0.0, length, n_dense)

    def raw(z):
        return spec.field(z).real

    vals = raw(zd)
    if binarized:
        sign = np.sign(vals)
        # nudge exact zeros onto the neighbouring sign
        for j in np.nonzero(sign == 0)[0]:
            sign[j] = sign[j - 1] if j > 0 else 1.0
        walls = [0.0]
        signs = [sign[0]]
        for j in np.nonzero(sign[1:] != sign[:-1])[0]:
            a, b = zd[j], zd[j + 1]
            fa, fb = vals[j], vals[j + 1]
            root = a if fa == 0 else (b if fb == 0 else brentq(raw, a, b, xtol=1e-15, rtol=1e-14))
            if root > walls[-1]:
                walls.append(root)
                signs.append(sign[j + 1])
        walls.append(length)
        if sign.size and np.all(vals == 0):
            raise DesignError("hologram sum vanishes identically")
        return _binary_pattern(length, np.asarray(walls), np.asarray(signs), n_z, scale, "multipeak")

    j = int(np.argmax(np.abs(vals)))
    peak = abs(vals[j])
    if peak == 0:
        raise DesignError("hologram sum vanishes identically")
    lo, hi = zd[max(j - 1, 0)], zd[min(j + 1, n_dense - 1)]
    if hi > lo:
        res = minimize_scalar(lambda z: -abs(raw(z)), bounds=(lo, hi), method="bounded",
                              options={"xatol": 1e-14 * length})
        peak = max(peak, -float(res.fun))
    norm = 1.0 / peak

    def profile(z):
        return np.clip(raw(z) * norm, -1.0, 1.0)

    n_seg = max(1, int(math.ceil(length / (scale / 4.0))))
    walls = np.linspace(0.0, length, n_seg + 1)
    return PolingPattern(length, walls, profile, False, n_z, scale, kind="multipeak")


def _phi_binary(poling: PolingPattern, dk: np.ndarray, z_ref: float) -> np.ndarray:
    a = poling.walls[:-1]
    b = poling.walls[1:]
    mid = 0.5 * (a + b) - z_ref
    h = b - a
    s = poling.signs
    flat = dk.ravel()
    out = np.zeros(flat.shape, dtype=complex)
    chunk = max(1, 4_000_000 // max(1, a.size))
    for start in range(0, flat.size, chunk):
        q = flat[start:start + chunk, None]
        # h * sinc(q h / 2) with numpy's normalized sinc
        term = (s * h) * np.sinc(q * h / (2.0 * np.pi)) * np.exp(1j * q * mid)
        out[start:start + chunk] = term.sum(axis=1)
    return out.reshape(dk.shape)


def _phi_gauss(poling: PolingPattern, dk: np.ndarray, z_ref: float, order: int) -> np.ndarray:
    x, w = np.polynomial.legendre.leggauss(order)
    a = poling.walls[:-1, None]
    b = poling.walls[1:, None]
    nodes = (0.5 * (b - a) * x + 0.5 * (b + a)).ravel()
    weights = (0.5 * (b - a) * w).ravel()
    # the profile is sampled strictly inside each segment, so walls never land on a node
    weights = weights * poling(nodes)
    nodes = nodes - z_ref
    flat = dk.ravel()
    out = np.zeros(flat.shape, dtype=complex)
    chunk = max(1, 8_000_000 // max(1, nodes.size))
    for start in range(0, flat.size, chunk):
        out[start:start + chunk] = np.exp(1j * np.outer(flat[start:start + chunk], nodes)) @ weights
    return out.reshape(dk.shape)


def _phi_trapezoid(poling: PolingPattern, dk: np.ndarray, z_ref: float) -> np.ndarray:
    z = poling.z
    d = poling.samples
    w = np.full(z.size, z[1] - z[0])
    w[0] = w[-1] = 0.5 * (z[1] - z[0])
    flat = dk.ravel()
    out = np.zeros(flat.shape, dtype=complex)
    chunk = max(1, 8_000_000 // z.size)
    for start in range(0, flat.size, chunk):
        out[start:start + chunk] = np.exp(1j * np.outer(flat[start:start + chunk], z - z_ref)) @ (w * d)
    return out.reshape(dk.shape)


def phase_matching_function(
    poling: PolingPattern,
    table: PhaseMismatchTable | np.ndarray,
    method: str = "exact",
    z_ref: float | None = None,
) -> np.ndarray:
    """Phi = int_0^L exp(i dk (z - z_ref)) d_NL(z) dz on every grid node (units m).

    ``method``: "exact" integrates each binary domain in closed form and each
    smooth segment by Gauss-Legendre; "trapezoid" uses the N_z uniform samples.
    ``table`` may also be a bare array of dk values.
    """
    dk = table.dk if isinstance(table, PhaseMismatchTable) else np.asarray(table, dtype=float)
    if z_ref is None:
        z_ref = poling.length / 2.0
    if method == "trapezoid":
        return _phi_trapezoid(poling, dk, z_ref)
    if method != "exact":
        raise ValueError(f"unknown quadrature {method!r}")
    if poling.binarized and poling.signs is not None:
        return _phi_binary(poling, dk, z_ref)
    return _phi_gauss(poling, dk, z_ref, _GL_ORDER)


@dataclass(frozen=True)
class PumpPeak:
    center_nm: float
    fwhm_nm: float
    amplitude: complex = 1.0


@dataclass(frozen=True)
class PumpSpectrum:
    """Peak-normalized complex pump amplitude on the pump axis.

    ``norm`` (rad/s) converts the spectrum into a temporal field: a single
    unit-amplitude line contributes a pulse whose peak equals
    ``int |P| dw / norm = 1``. The gain parameter refers to that peak field.
    """

    omega: np.ndarray = field(repr=False)
    amplitude: np.ndarray = field(repr=False)
    norm: float
    peaks: tuple[PumpPeak, ...] = ()

    def __post_init__(self):
        if self.omega.shape != self.amplitude.shape:
            raise DesignError("pump amplitude and axis differ in length")
        if not self.norm > 0:
            raise DesignError("pump normalization must be positive")

    def on_pairs(self, n_idler: int, n_signal: int) -> np.ndarray:
        """P(w_i + w_s) as an (n_idler, n_signal) matrix."""
        if self.amplitude.size != n_idler + n_signal - 1:
            raise GridMismatchError(
                f"pump axis has {self.amplitude.size} points, grid needs {n_idler + n_signal - 1}"
            )
        idx = np.add.outer(np.arange(n_idler), np.arange(n_signal))
        return self.amplitude[idx]

    def scaled(self, factor: complex) -> "PumpSpectrum":
        return PumpSpectrum(self.omega, self.amplitude * factor, self.norm, self.peaks)


def _line_width(center_nm, fwhm_nm):
    """FWHM in angular frequency of a line of ``fwhm_nm`` centred at ``center_nm``."""
    return float(
        wavelength_to_omega((center_nm - fwhm_nm / 2.0) * 1e-9)
        - wavelength_to_omega((center_nm + fwhm_nm / 2.0) * 1e-9)
    )


def multi_gaussian_pump(peaks: Sequence[PumpPeak | dict], grid: FrequencyGrid) -> PumpSpectrum:
    """Sum of complex Gaussians in w, normalized to unit peak modulus.

    Each line is Gaussian in angular frequency, centred at w(center_nm), with
    an amplitude FWHM equal to the frequency interval spanned by
    center_nm +- fwhm_nm / 2.
    """
    peaks = tuple(p if isinstance(p, PumpPeak) else PumpPeak(**p) for p in peaks)
    if not peaks:
        raise DesignError("pump needs at least one peak")
    axis = grid.pump
    lo, hi = axis[0] - 0.5 * grid.d_omega, axis[-1] + 0.5 * grid.d_omega
    amp = np.zeros(axis.size, dtype=complex)
    sigmas = []
    for p in peaks:
        if not p.fwhm_nm > 0:
            raise DesignError("pump line width must be positive")
        w0 = float(wavelength_to_omega(p.center_nm * 1e-9))
        if not lo <= w0 <= hi:
            raise DesignError(f"pump line at {p.center_nm} nm lies off the pump axis")
        sigma = _line_width(p.center_nm, p.fwhm_nm) * FWHM_TO_SIGMA
        sigmas.append(sigma)
        amp += complex(p.amplitude) * np.exp(-0.5 * ((axis - w0) / sigma) ** 2)
    peak = np.max(np.abs(amp))
    if peak > 0:
        amp /= peak
    norm = math.sqrt(2.0 * math.pi) * min(sigmas)
    return PumpSpectrum(axis, amp, norm, peaks)


def gaussian_pump(center_nm: float, fwhm_nm: float, grid: FrequencyGrid, amplitude: complex = 1.0) -> PumpSpectrum:
    return multi_gaussian_pump([PumpPeak(center_nm, fwhm_nm, amplitude)], grid)


def pump_on_grid(amplitude: np.ndarray, grid: FrequencyGrid) -> PumpSpectrum:
    """Wrap a sampled spectrum; the normalization is its temporal peak."""
    amp = np.asarray(amplitude, dtype=complex)
    axis = grid.pump
    if amp.size != axis.size:
        raise GridMismatchError("sampled pump does not match the pump axis")
    peak = np.max(np.abs(amp))
    if peak > 0:
        amp = amp / peak
    t = np.linspace(-np.pi / grid.d_omega, np.pi / grid.d_omega, 4 * axis.size + 1)
    field_t = np.abs(np.exp(-1j * np.outer(t, axis - axis.mean())) @ amp) * grid.d_omega
    norm = float(field_t.max()) if peak > 0 else grid.d_omega
    return PumpSpectrum(axis, amp, norm)


def jsi(pump: PumpSpectrum, phi: np.ndarray) -> np.ndarray:
    """|P(w_i + w_s) Phi(w_i, w_s)|^2 normalized to unit maximum (all-zero stays zero)."""
    phi = np.asarray(phi)
    amp = pump.on_pairs(*phi.shape) * phi
    out = np.abs(amp) ** 2
    peak = out.max() if out.size else 0.0
    return out / peak if peak > 0 else out


def group_slopes(omega_i: float, omega_s: float, dispersion: Dispersion = DEFAULT_DISPERSION,
                 step: float = 1e9) -> tuple[float, float]:
    """(a, b) with dk ~ a (w_i - w_i0) + b (w_s - w_s0) near the pair, in s/m."""
    wp = omega_i + omega_s

    def d(wave, w):
        return float(dispersion.k(wave, w + step) - dispersion.k(wave, w - step)) / (2 * step)

    kp = d("pump", wp)
    return kp - d("idler", omega_i), kp - d("signal", omega_s)


def round_envelope_fwhm(pump_sigma: float, a: float, b: float) -> float:
    """Gaussian d_NL envelope FWHM (m) that makes P * Phi separable and round.

    With P ~ exp(-(dw_i + dw_s)^2 / 2 s^2) and dk ~ a dw_i + b dw_s, a = -b
    cancels the cross term when the envelope standard deviation is
    1 / (s sqrt(-a b)).
    """
    if not a * b < 0:
        raise DesignError("group-velocity slopes have the same sign; no round lobe exists")
    return 1.0 / (pump_sigma * math.sqrt(-a * b)) / FWHM_TO_SIGMA


@dataclass(frozen=True)
class LatticeSpec:
    """Pump comb x hologram comb producing a square lattice of JSI lobes.

    Node (p, h) sits at idler offset (p + h) * spacing and signal offset
    (p - h) * spacing from the phase-matched pair, so pump line p is centred on
    the sum frequency w_p0 + 2 p spacing and hologram peak h supplies the
    mismatch of nodes with p = 0. ``spacing`` defaults to ``spacing_lobes``
    lobe FWHMs; the lobe FWHM is that of the JSI marginal of one round node.
    """

    pump_offsets: tuple[float, ...] = (-1.0, 0.0, 1.0)
    holo_offsets: tuple[float, ...] = (-1.0, 0.0, 1.0)
    pump_amplitudes: tuple[complex, ...] | None = None
    holo_amplitudes: tuple[complex, ...] | None = None
    pump_fwhm_nm: float = 5.0
    length: float = 6e-3
    spacing_lobes: float = 3.0
    envelope_fwhm: float | None = None
    binarized: bool = True
    equalize: int = 8
    equalize_on: str = "peak"
    n_z: int = 20001

    def __post_init__(self):
        if not self.pump_offsets or not self.holo_offsets:
            raise DesignError("lattice needs at least one pump line and one hologram peak")
        for name, amps, offs in (("pump", self.pump_amplitudes, self.pump_offsets),
                                 ("hologram", self.holo_amplitudes, self.holo_offsets)):
            if amps is not None and len(amps) != len(offs):
                raise DesignError(f"{name} amplitudes and offsets differ in length")
        if self.equalize_on not in ("peak", "node"):
            raise DesignError("equalize_on must be 'peak' or 'node'")


@dataclass(frozen=True)
class LatticeDesign:
    pump: PumpSpectrum
    poling: PolingPattern
    hologram: HologramSpec
    spacing: float
    lobe_fwhm: float
    nodes: dict = field(repr=False)

    def node_frequencies(self, p: float, h: float) -> tuple[float, float]:
        return self.nodes[(p, h)]


def build_lattice(spec: LatticeSpec, table: PhaseMismatchTable) -> LatticeDesign:
    """Lattice pump and hologram on ``table``'s grid, centred on the grid centres.

    The spacing is rounded to an even number of grid steps so every node
    (half-integer pump offsets included) lands on a grid point. ``equalize``
    rounds of log-mean rescaling of pump lines and hologram peaks even out
    |P Phi| across the nodes, undoing binarization distortion.
    """
    grid = table.grid
    disp = table.dispersion
    wi0, ws0 = grid.omega_i0, grid.omega_s0
    wp0 = wi0 + ws0
    lam_p = float(omega_to_wavelength(wp0)) * 1e9
    sigma_p = _line_width(lam_p, spec.pump_fwhm_nm) * FWHM_TO_SIGMA
    a, b = group_slopes(wi0, ws0, disp)
    env = spec.envelope_fwhm or round_envelope_fwhm(sigma_p, a, b)
    lobe = 2.0 * math.sqrt(math.log(2.0) / 2.0) * sigma_p
    unit = 2.0 * grid.d_omega
    spacing = max(1, round(spec.spacing_lobes * lobe / unit)) * unit

    pamp = np.array(spec.pump_amplitudes or [1.0] * len(spec.pump_offsets), dtype=complex)
    hamp = np.array(spec.holo_amplitudes or [1.0] * len(spec.holo_offsets), dtype=complex)
    centers = [float(omega_to_wavelength(wp0 + 2 * p * spacing)) * 1e9 for p in spec.pump_offsets]
    carriers = [-float(disp.delta_k(wi0 + h * spacing, ws0 - h * spacing)) for h in spec.holo_offsets]

    # nodes sit at the nominal lattice points; second-order dispersion moves
    # the lobe maxima of outer pump lines by a grid step or two. "peak" scores
    # each node by the max of |P Phi| over a patch of half-width lobe/2,
    # "node" by |P Phi| at the node itself (what bin-centre sampling sees)
    nodes, patches = {}, {}
    r = max(1, int(round(0.5 * lobe / grid.d_omega))) if spec.equalize_on == "peak" else 0
    for p in spec.pump_offsets:
        for h in spec.holo_offsets:
            j = grid.index_of("idler", wi0 + (p + h) * spacing)
            l = grid.index_of("signal", ws0 + (p - h) * spacing)
            nodes[(p, h)] = (float(grid.idler[j]), float(grid.signal[l]))
            jj = np.arange(max(0, j - r), min(grid.n_idler, j + r + 1))
            ll = np.arange(max(0, l - r), min(grid.n_signal, l + r + 1))
            patches[(p, h)] = (jj[:, None], ll[None, :])
    keys = list(patches)
    patch_dk = [table.dk[patches[k]] for k in keys]
    flat_dk = np.concatenate([d.ravel() for d in patch_dk])

    def assemble(pa, ha):
        pump = multi_gaussian_pump([PumpPeak(c, spec.pump_fwhm_nm, x) for c, x in zip(centers, pa)], grid)
        holo = HologramSpec(tuple(HologramPeak(k, x, env) for k, x in zip(carriers, ha)), spec.length)
        return pump, holo, multipeak_hologram(holo, spec.n_z, spec.binarized)

    def node_values(pump, poling):
        phi = phase_matching_function(poling, flat_dk)
        pp = pump.on_pairs(grid.n_idler, grid.n_signal)
        v, start = {}, 0
        for key, d in zip(keys, patch_dk):
            block = phi[start:start + d.size].reshape(d.shape)
            start += d.size
            v[key] = float(np.max(np.abs(pp[patches[key]] * block)))
        v = np.array([[v[(p, h)] for h in spec.holo_offsets] for p in spec.pump_offsets])
        if np.any(v <= 0):
            raise DesignError("a lattice node has no phase-matched amplitude")
        return np.log(v)

    # binarization makes each peak's response steeper than linear, so full
    # log-mean steps overshoot; halve the step whenever the spread grows
    pump, holo, poling = assemble(pamp, hamp)
    logv = node_values(pump, poling)
    step = 1.0
    for _ in range(spec.equalize):
        mean = logv.mean()
        pa = pamp * np.exp(step * (mean - logv.mean(axis=1)))
        ha = hamp * np.exp(step * (mean - logv.mean(axis=0)))
        trial = assemble(pa, ha)
        trial_logv = node_values(trial[0], trial[2])
        if np.ptp(trial_logv) < np.ptp(logv):
            pamp, hamp, logv = pa, ha, trial_logv
            pump, holo, poling = trial
        else:
            step *= 0.5
    return LatticeDesign(pump, poling, holo, spacing, lobe, nodes)
