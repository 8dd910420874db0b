"""Material dispersion of type-II KTP and the frequency grids built on it.

Wavelengths enter the Sellmeier fits in micrometres. Everything else is SI:
angular frequencies in rad/s, wavenumbers in rad/m.

The default coefficient set combines two flux-grown KTP fits that are widely
used for telecom-band type-II down-conversion:

* y axis: K. Kato and E. Takaoka, Appl. Opt. 41, 5040 (2002)
* z axis: K. Fradkin et al., Appl. Phys. Lett. 74, 914 (1999)

Both are quoted for 0.43-3.54 um at room temperature.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np
from scipy.constants import c as C_LIGHT
from scipy.optimize import brentq

from .errors import NoPhaseMatchingError, WavelengthRangeError

__all__ = [
    "C_LIGHT",
    "AxisFit",
    "SellmeierSet",
    "KTP",
    "Dispersion",
    "FrequencyGrid",
    "PhaseMismatchTable",
    "omega_to_wavelength",
    "wavelength_to_omega",
    "refractive_index",
    "wavenumber",
    "delta_k",
    "find_phase_matched_pair",
]


def wavelength_to_omega(wavelength):
    """Vacuum wavelength (m) to angular frequency (rad/s)."""
    return 2.0 * np.pi * C_LIGHT / np.asarray(wavelength, dtype=float)


def omega_to_wavelength(omega):
    """Angular frequency (rad/s) to vacuum wavelength (m)."""
    return 2.0 * np.pi * C_LIGHT / np.asarray(omega, dtype=float)


@dataclass(frozen=True)
class AxisFit:
    """Sellmeier fit for one principal axis.

    ``n^2 = a + sum B/(l^2 - C) [poles] + sum B l^2/(l^2 - C) [resonances] - ir * l^2``
    with ``l`` in um and ``C`` in um^2.
    """

    a: float
    poles: tuple[tuple[float, float], ...] = ()
    resonances: tuple[tuple[float, float], ...] = ()
    ir: float = 0.0

    def n_squared(self, lam_um):
        l2 = np.asarray(lam_um, dtype=float) ** 2
        out = np.full_like(l2, self.a)
        for b, cc in self.poles:
            out = out + b / (l2 - cc)
        for b, cc in self.resonances:
            out = out + b * l2 / (l2 - cc)
        return out - self.ir * l2

    @classmethod
    def from_mapping(cls, data: Mapping) -> "AxisFit":
        return cls(
            a=float(data["a"]),
            poles=tuple((float(b), float(cc)) for b, cc in data.get("poles", ())),
            resonances=tuple((float(b), float(cc)) for b, cc in data.get("resonances", ())),
            ir=float(data.get("ir", 0.0)),
        )

    def to_mapping(self) -> dict:
        return {
            "a": self.a,
            "poles": [list(p) for p in self.poles],
            "resonances": [list(r) for r in self.resonances],
            "ir": self.ir,
        }


@dataclass(frozen=True)
class SellmeierSet:
    """Named per-axis Sellmeier fits with a common validity window (um)."""

    name: str
    axes: Mapping[str, AxisFit]
    valid_um: tuple[float, float] = (0.43, 3.54)

    def check_range(self, lam_um):
        lam = np.asarray(lam_um, dtype=float)
        lo, hi = self.valid_um
        if not np.all(np.isfinite(lam)) or np.any(lam < lo) or np.any(lam > hi):
            bad = lam[~((lam >= lo) & (lam <= hi))]
            raise WavelengthRangeError(
                f"wavelength {bad.ravel()[0]:.6g} um outside {self.name} validity "
                f"window [{lo}, {hi}] um"
            )

    def n(self, axis: str, lam_um):
        try:
            fit = self.axes[axis]
        except KeyError:
            raise KeyError(f"{self.name} has no axis {axis!r}") from None
        self.check_range(lam_um)
        return np.sqrt(fit.n_squared(lam_um))

    @classmethod
    def from_mapping(cls, data: Mapping) -> "SellmeierSet":
        axes = {k: AxisFit.from_mapping(v) for k, v in data["axes"].items()}
        lo, hi = data.get("valid_um", (0.43, 3.54))
        return cls(name=str(data.get("name", "custom")), axes=axes, valid_um=(float(lo), float(hi)))

    def to_mapping(self) -> dict:
        return {
            "name": self.name,
            "valid_um": list(self.valid_um),
            "axes": {k: v.to_mapping() for k, v in self.axes.items()},
        }


KTP = SellmeierSet(
    name="KTP (Kato-Takaoka y / Fradkin z)",
    axes={
        "x": AxisFit(3.29100, poles=((0.04140, 0.03978), (9.35522, 31.45571))),
        "y": AxisFit(3.45018, poles=((0.04341, 0.04597), (16.98825, 39.43799))),
        "z": AxisFit(
            2.12725,
            resonances=((1.18431, 5.14852e-2), (0.6603, 100.00507)),
            ir=9.68956e-3,
        ),
    },
)


def refractive_index(axis: str, wavelength_um, sellmeier: SellmeierSet = KTP):
    """Refractive index on ``axis`` at vacuum wavelength ``wavelength_um`` (um)."""
    return sellmeier.n(axis, wavelength_um)


def wavenumber(axis: str, omega, sellmeier: SellmeierSet = KTP):
    """k(omega) = n(omega) omega / c in rad/m."""
    omega = np.asarray(omega, dtype=float)
    if np.any(omega <= 0):
        raise WavelengthRangeError("angular frequency must be positive")
    lam_um = omega_to_wavelength(omega) * 1e6
    return sellmeier.n(axis, lam_um) * omega / C_LIGHT


@dataclass(frozen=True)
class Dispersion:
    """A crystal plus the polarization axis carried by each of the three waves.

    The default puts the pump and the idler on y and the signal on z, which
    places the 46 um / 791 nm phase-matched pair at about 1564 / 1601 nm with
    the idler on the short-wavelength side.
    """

    sellmeier: SellmeierSet = KTP
    pump_axis: str = "y"
    idler_axis: str = "y"
    signal_axis: str = "z"

    def axis(self, wave: str) -> str:
        return {"pump": self.pump_axis, "idler": self.idler_axis, "signal": self.signal_axis}[wave]

    def n(self, wave: str, omega):
        return self.sellmeier.n(self.axis(wave), omega_to_wavelength(omega) * 1e6)

    def k(self, wave: str, omega):
        return wavenumber(self.axis(wave), omega, self.sellmeier)

    def delta_k(self, omega_i, omega_s):
        """k_p(w_i + w_s) - k_i(w_i) - k_s(w_s)."""
        omega_i = np.asarray(omega_i, dtype=float)
        omega_s = np.asarray(omega_s, dtype=float)
        return self.k("pump", omega_i + omega_s) - self.k("idler", omega_i) - self.k("signal", omega_s)


DEFAULT_DISPERSION = Dispersion()


def delta_k(omega_i, omega_s, dispersion: Dispersion = DEFAULT_DISPERSION):
    """Phase mismatch k_p(w_i + w_s) - k_i(w_i) - k_s(w_s) in rad/m."""
    return dispersion.delta_k(omega_i, omega_s)


def find_phase_matched_pair(
    pump_nm: float,
    period_um: float,
    dispersion: Dispersion = DEFAULT_DISPERSION,
    samples: int = 2001,
) -> tuple[float, float]:
    """Idler/signal wavelengths (nm) quasi-phase-matched by a grating of period ``period_um``.

    Solves ``|dk(w_i, w_p - w_i)| = 2 pi / period`` along the energy-conservation
    curve. The grating supplies both +-2pi/period, so only the magnitude of the
    mismatch matters. Returns the root with lambda_i < lambda_s closest to
    degeneracy.
    """
    omega_p = float(wavelength_to_omega(pump_nm * 1e-9))
    grating = 2.0 * np.pi / (period_um * 1e-6)
    lo_um, hi_um = dispersion.sellmeier.valid_um
    # every wave must stay inside the fit window
    omega_lo = max(float(wavelength_to_omega(hi_um * 1e-6)), omega_p - float(wavelength_to_omega(lo_um * 1e-6)))
    omega_hi = omega_p - omega_lo
    if omega_lo >= omega_hi:
        raise NoPhaseMatchingError(f"{pump_nm} nm pump leaves no room inside the dispersion window")

    def residual(omega_i):
        return abs(float(dispersion.delta_k(omega_i, omega_p - omega_i))) - grating

    grid = np.linspace(omega_lo, omega_hi, samples)[1:-1]
    values = np.array([residual(w) for w in grid])
    roots = []
    for j in np.nonzero(np.sign(values[:-1]) * np.sign(values[1:]) <= 0)[0]:
        if values[j] == 0.0:
            roots.append(grid[j])
            continue
        roots.append(brentq(residual, grid[j], grid[j + 1], xtol=1e-6, rtol=4 * np.finfo(float).eps))
    pairs = []
    for omega_i in roots:
        lam_i = float(omega_to_wavelength(omega_i)) * 1e9
        lam_s = float(omega_to_wavelength(omega_p - omega_i)) * 1e9
        if lam_i < lam_s:
            pairs.append((lam_i, lam_s))
    if not pairs:
        raise NoPhaseMatchingError(
            f"no quasi-phase-matching root for a {pump_nm} nm pump and a {period_um} um period"
        )
    return min(pairs, key=lambda p: p[1] - p[0])


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform idler and signal angular-frequency axes with a shared spacing.

    Sharing the spacing makes every sum w_i + w_s land on the pump axis, whose
    node ``m + n`` is the sum of idler node ``m`` and signal node ``n``.
    """

    omega_i0: float
    omega_s0: float
    n_idler: int
    n_signal: int
    d_omega: float

    def __post_init__(self):
        if self.n_idler < 1 or self.n_signal < 1:
            raise ValueError("grid needs at least one point per axis")
        if not self.d_omega > 0:
            raise ValueError("grid spacing must be positive")

    @classmethod
    def from_wavelengths(cls, idler_nm: float, signal_nm: float, half_span_nm: float = 40.0, n: int = 201):
        """Grid of ``n`` points per axis; the spacing comes from +-half_span_nm about the idler."""
        w_i = float(wavelength_to_omega(idler_nm * 1e-9))
        w_s = float(wavelength_to_omega(signal_nm * 1e-9))
        if n == 1:
            d_omega = float(wavelength_to_omega((idler_nm - half_span_nm) * 1e-9)) - w_i
        else:
            span = float(
                wavelength_to_omega((idler_nm - half_span_nm) * 1e-9)
                - wavelength_to_omega((idler_nm + half_span_nm) * 1e-9)
            )
            d_omega = span / (n - 1)
        return cls(w_i, w_s, n, n, d_omega)

    def _axis(self, center, count):
        return center + (np.arange(count) - (count - 1) / 2.0) * self.d_omega

    @property
    def idler(self) -> np.ndarray:
        return self._axis(self.omega_i0, self.n_idler)

    @property
    def signal(self) -> np.ndarray:
        return self._axis(self.omega_s0, self.n_signal)

    @property
    def pump(self) -> np.ndarray:
        start = self.idler[0] + self.signal[0]
        return start + np.arange(self.n_idler + self.n_signal - 1) * self.d_omega

    @property
    def omega_p0(self) -> float:
        return self.omega_i0 + self.omega_s0

    def axis(self, field: str) -> np.ndarray:
        return {"i": self.idler, "idler": self.idler, "s": self.signal, "signal": self.signal,
                "p": self.pump, "pump": self.pump}[field]

    def index_of(self, field: str, omega: float) -> int:
        """Nearest node on ``field``'s axis; raises if ``omega`` lies off the axis."""
        ax = self.axis(field)
        j = int(np.rint((omega - ax[0]) / self.d_omega))
        if j < 0 or j >= ax.size or abs(ax[j] - omega) > 0.5 * self.d_omega * (1 + 1e-9):
            raise ValueError(f"{omega:.6e} rad/s is off the {field} axis")
        return j

    def to_mapping(self) -> dict:
        return {
            "omega_i0": self.omega_i0,
            "omega_s0": self.omega_s0,
            "n_idler": self.n_idler,
            "n_signal": self.n_signal,
            "d_omega": self.d_omega,
        }


@dataclass(frozen=True)
class PhaseMismatchTable:
    """Delta-k on every (idler, signal) node, plus the per-wave wavenumbers."""

    grid: FrequencyGrid
    dk: np.ndarray = field(repr=False)
    k_pump: np.ndarray = field(repr=False)
    k_idler: np.ndarray = field(repr=False)
    k_signal: np.ndarray = field(repr=False)
    dispersion: Dispersion = DEFAULT_DISPERSION

    @classmethod
    def build(cls, grid: FrequencyGrid, dispersion: Dispersion = DEFAULT_DISPERSION) -> "PhaseMismatchTable":
        wi, ws = grid.idler, grid.signal
        dk = dispersion.delta_k(wi[:, None], ws[None, :])
        return cls(
            grid=grid,
            dk=dk,
            k_pump=dispersion.k("pump", grid.pump),
            k_idler=dispersion.k("idler", wi),
            k_signal=dispersion.k("signal", ws),
            dispersion=dispersion,
        )
