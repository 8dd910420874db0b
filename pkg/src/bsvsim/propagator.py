"""Coupled-mode integration of the single-photon amplitudes from z = 0 to L.

The four amplitude families split into two independent pairs:

* a vacuum photon in idler mode Omega feeds (A_i^vac, A_s^out),
* a vacuum photon in signal mode Omega feeds (A_s^vac, A_i^out).

With M[m, n] the discretized kernel linking idler node m to signal node n,
stacking S1 = [A_i^vac | A_i^out] and S2 = [conj A_s^out | conj A_s^vac]
turns both pairs into one linear system

    dS1/dz = i M S2,      dS2/dz = -i M^H S1,

so each Runge-Kutta stage costs two dense matrix products regardless of how
many vacuum modes are traced.

Amplitudes are kept in photon units: the kernel uses sqrt(g_i g_s) so that
the discrete transformation is exactly Bogoliubov.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.constants import c as C_LIGHT

from .design import PolingPattern, PumpSpectrum
from .dispersion import DEFAULT_DISPERSION, Dispersion, FrequencyGrid, PhaseMismatchTable
from .errors import DivergenceError, GridMismatchError

__all__ = [
    "GainSpec",
    "SolverSpec",
    "CrystalDesign",
    "Kernel",
    "VacuumModeState",
    "TransferFunctions",
    "coupling_coefficient",
    "build_kernel",
    "rhs",
    "propagate_mode",
    "propagate_all",
    "symplectic_defect",
]


@dataclass(frozen=True)
class GainSpec:
    """Normalized gain kappa = w_ref chi2 E_p L / (c n_ref).

    ``omega_ref`` defaults to the central idler frequency and ``n_ref`` to the
    idler index there. ``chi2`` only fixes the units of ``pump_field``.
    """

    kappa: float
    omega_ref: float
    n_ref: float
    length: float
    chi2: float = 1.0e-11

    def __post_init__(self):
        if not self.kappa >= 0:
            raise ValueError("kappa must be non-negative")
        if not (self.omega_ref > 0 and self.n_ref > 0 and self.length > 0 and self.chi2 > 0):
            raise ValueError("gain reference quantities must be positive")

    @property
    def pump_field(self) -> float:
        """E_p (V/m) solving kappa = w_ref chi2 E_p L / (c n_ref)."""
        return self.kappa * C_LIGHT * self.n_ref / (self.omega_ref * self.chi2 * self.length)

    @classmethod
    def at_idler_center(
        cls, kappa: float, grid: FrequencyGrid, length: float,
        dispersion: Dispersion = DEFAULT_DISPERSION, chi2: float = 1.0e-11,
    ) -> "GainSpec":
        w = grid.omega_i0
        return cls(float(kappa), w, float(dispersion.n("idler", w)), length, chi2)

    def with_kappa(self, kappa: float) -> "GainSpec":
        return replace(self, kappa=float(kappa))


def coupling_coefficient(omega, gain: GainSpec, wave: str = "idler",
                         dispersion: Dispersion = DEFAULT_DISPERSION):
    """g(w) = w^2 chi2 E_p / (c^2 k(w)) in rad/m per unit amplitude."""
    omega = np.asarray(omega, dtype=float)
    k = dispersion.k(wave, omega)
    return omega**2 * gain.chi2 * gain.pump_field / (C_LIGHT**2 * k)


@dataclass(frozen=True)
class SolverSpec:
    """Fixed-step RK4 settings.

    By default the steps are aligned to the domain walls and each step spans
    at most 1/steps_per_period of the fastest spatial oscillation (the poling
    scale or the largest |dk| on the grid). ``n_z`` instead forces that many
    uniform steps, ignoring the walls.
    """

    steps_per_period: int = 30
    n_z: int | None = None
    method: str = "rk4"
    deterministic: bool = True
    workers: int = 1

    def __post_init__(self):
        if self.method != "rk4":
            raise ValueError(f"unsupported integrator {self.method!r}")
        if self.steps_per_period < 1:
            raise ValueError("steps_per_period must be positive")
        if self.n_z is not None and self.n_z < 1:
            raise ValueError("n_z must be positive")
        if self.workers < 1:
            raise ValueError("workers must be positive")

    def refined(self) -> "SolverSpec":
        """The same scheme with half the step."""
        if self.n_z is not None:
            return replace(self, n_z=2 * self.n_z)
        return replace(self, steps_per_period=2 * self.steps_per_period)


@dataclass(frozen=True)
class CrystalDesign:
    poling: PolingPattern
    pump: PumpSpectrum


@dataclass(frozen=True)
class Kernel:
    """Everything the right-hand side needs, pre-multiplied on the grid.

    M(z) = d_NL(z) * coupling * exp(i dk (z - z_ref)).
    """

    coupling: np.ndarray = field(repr=False)
    dk: np.ndarray = field(repr=False)
    poling: PolingPattern
    d_omega: float
    z_ref: float

    def matrix(self, z: float) -> np.ndarray:
        return (float(self.poling(z)) * self.coupling) * np.exp(1j * self.dk * (z - self.z_ref))


def build_kernel(design: CrystalDesign, table: PhaseMismatchTable, gain: GainSpec) -> Kernel:
    grid = table.grid
    disp = table.dispersion
    if not math.isclose(design.poling.length, gain.length, rel_tol=1e-12):
        raise GridMismatchError("poling length and gain length differ")
    p = design.pump.on_pairs(grid.n_idler, grid.n_signal)
    g_i = coupling_coefficient(grid.idler, gain, "idler", disp)
    g_s = coupling_coefficient(grid.signal, gain, "signal", disp)
    coupling = np.sqrt(np.outer(g_i, g_s)) * grid.d_omega * p / design.pump.norm
    return Kernel(coupling, table.dk, design.poling, grid.d_omega, design.poling.length / 2.0)


@dataclass
class VacuumModeState:
    """Amplitudes seeded by one vacuum mode Omega of ``family`` ("idler" or "signal").

    Only the two amplitudes reachable from that seed are stored; the other
    pair is structurally zero and kept as None.
    """

    z: float
    omega: float
    family: str
    idler_out: np.ndarray | None = None
    idler_vac: np.ndarray | None = None
    signal_out: np.ndarray | None = None
    signal_vac: np.ndarray | None = None


def rhs(state: VacuumModeState, z: float, kernel: Kernel) -> VacuumModeState:
    """d/dz of every stored amplitude.

    d A_i^out = i M conj(A_s^vac),   d A_i^vac = i M conj(A_s^out),
    d A_s^out = i M^T conj(A_i^vac), d A_s^vac = i M^T conj(A_i^out).
    """
    m = kernel.matrix(z)

    def drive(mat, src):
        return None if src is None else 1j * (mat @ np.conj(src))

    return VacuumModeState(
        z=z,
        omega=state.omega,
        family=state.family,
        idler_out=drive(m, state.signal_vac),
        idler_vac=drive(m, state.signal_out),
        signal_out=drive(m.T, state.idler_vac),
        signal_vac=drive(m.T, state.idler_out),
    )


def _schedule(kernel: Kernel, solver: SolverSpec) -> list[tuple[float, float, int]]:
    """(start, stop, n_steps) per interval over which the profile is smooth."""
    length = kernel.poling.length
    if solver.n_z is not None:
        return [(0.0, length, int(solver.n_z))]
    k_fast = max(2.0 * np.pi / kernel.poling.scale, float(np.max(np.abs(kernel.dk))) if kernel.dk.size else 0.0)
    h_max = 2.0 * np.pi / (k_fast * solver.steps_per_period)
    out = []
    for a, b in kernel.poling.segments:
        if b > a:
            out.append((float(a), float(b), max(1, int(math.ceil((b - a) / h_max * (1 - 1e-12))))))
    return out


@np.errstate(over="ignore", invalid="ignore")
def _integrate(kernel: Kernel, s1: np.ndarray, s2: np.ndarray, solver: SolverSpec, labels=None):
    """RK4 on dS1 = i M S2, dS2 = -i M^H S1 in place of copies; returns (S1, S2, steps)."""
    coupling = kernel.coupling
    dk = kernel.dk
    prof = kernel.poling
    binary = prof.binarized
    steps = 0
    for a, b, n in _schedule(kernel, solver):
        h = (b - a) / n
        e = np.exp(1j * dk * (a - kernel.z_ref))
        half = np.exp(0.5j * dk * h)
        base = coupling * e
        if binary:
            dconst = float(prof(0.5 * (a + b)))
        for j in range(n):
            z0 = a + j * h
            m0 = base
            mh = m0 * half
            m1 = mh * half
            base = m1
            if binary:
                d0 = dh = d1 = dconst
            else:
                d0, dh, d1 = (float(prof(z)) for z in (z0, z0 + 0.5 * h, z0 + h))
            # stage matrices carry the scalar modulation
            k1a = 1j * d0 * (m0 @ s2)
            k1b = -1j * d0 * (m0.conj().T @ s1)
            t1 = s1 + 0.5 * h * k1a
            t2 = s2 + 0.5 * h * k1b
            mhh = mh.conj().T
            k2a = 1j * dh * (mh @ t2)
            k2b = -1j * dh * (mhh @ t1)
            t1 = s1 + 0.5 * h * k2a
            t2 = s2 + 0.5 * h * k2b
            k3a = 1j * dh * (mh @ t2)
            k3b = -1j * dh * (mhh @ t1)
            t1 = s1 + h * k3a
            t2 = s2 + h * k3b
            k4a = 1j * d1 * (m1 @ t2)
            k4b = -1j * d1 * (m1.conj().T @ t1)
            s1 = s1 + (h / 6.0) * (k1a + 2.0 * k2a + 2.0 * k3a + k4a)
            s2 = s2 + (h / 6.0) * (k1b + 2.0 * k2b + 2.0 * k3b + k4b)
            steps += 1
        if not (np.all(np.isfinite(s1)) and np.all(np.isfinite(s2))):
            bad = np.nonzero(~(np.isfinite(s1).all(axis=0) & np.isfinite(s2).all(axis=0)))[0]
            col = int(bad[0]) if bad.size else 0
            omega, family = labels(col) if labels else (None, None)
            raise DivergenceError(
                f"non-finite amplitudes by z = {b:.6e} m (vacuum mode {family} "
                f"Omega = {omega!r} rad/s)", z=b, omega=omega, family=family,
            )
    return s1, s2, steps


@dataclass(frozen=True)
class TransferFunctions:
    """Bogoliubov transfer matrices at z = L, rows = output w, columns = vacuum Omega.

    U_i: idler <- idler vacuum, V_i: idler <- signal vacuum,
    U_s: signal <- signal vacuum, V_s: signal <- idler vacuum.
    """

    grid: FrequencyGrid
    U_i: np.ndarray = field(repr=False)
    V_i: np.ndarray = field(repr=False)
    U_s: np.ndarray = field(repr=False)
    V_s: np.ndarray = field(repr=False)
    n_steps: int = 0
    method: str = "rk4"
    meta: dict = field(default_factory=dict)

    @property
    def d_omega(self) -> float:
        return self.grid.d_omega


def _seed(grid: FrequencyGrid, columns_i, columns_s):
    """Initial S1, S2 for the requested vacuum columns (delta of weight 1/d_omega)."""
    ni, ns = grid.n_idler, grid.n_signal
    ci, cs = len(columns_i), len(columns_s)
    s1 = np.zeros((ni, ci + cs), dtype=complex)
    s2 = np.zeros((ns, ci + cs), dtype=complex)
    inv = 1.0 / grid.d_omega
    s1[columns_i, np.arange(ci)] = inv
    s2[columns_s, ci + np.arange(cs)] = inv
    return s1, s2


def propagate_mode(
    omega: float,
    family: str,
    design: CrystalDesign,
    table: PhaseMismatchTable,
    gain: GainSpec,
    solver: SolverSpec = SolverSpec(),
    amplitude: complex = 1.0,
) -> VacuumModeState:
    """Trace one vacuum mode Omega (on the ``family`` axis) through the crystal."""
    grid = table.grid
    if family not in ("idler", "signal"):
        raise ValueError("family must be 'idler' or 'signal'")
    j = grid.index_of(family, omega)
    kernel = build_kernel(design, table, gain)
    if family == "idler":
        s1, s2 = _seed(grid, [j], [])
    else:
        s1, s2 = _seed(grid, [], [j])
    s1 = s1 * amplitude
    s2 = s2 * np.conj(amplitude)
    s1, s2, _ = _integrate(kernel, s1, s2, solver, labels=lambda _c: (omega, family))
    state = VacuumModeState(z=design.poling.length, omega=omega, family=family)
    if family == "idler":
        state.idler_vac = s1[:, 0]
        state.signal_out = np.conj(s2[:, 0])
    else:
        state.signal_vac = np.conj(s2[:, 0])
        state.idler_out = s1[:, 0]
    return state


def propagate_all(
    design: CrystalDesign,
    table: PhaseMismatchTable,
    gain: GainSpec,
    solver: SolverSpec = SolverSpec(),
) -> TransferFunctions:
    """Trace every idler and signal vacuum mode; assemble U/V."""
    grid = table.grid
    ni, ns = grid.n_idler, grid.n_signal
    kernel = build_kernel(design, table, gain)
    t0 = time.perf_counter()
    cols = [("idler", j) for j in range(ni)] + [("signal", j) for j in range(ns)]

    def run(chunk):
        ci = [j for f, j in chunk if f == "idler"]
        cs = [j for f, j in chunk if f == "signal"]
        s1, s2 = _seed(grid, ci, cs)

        def labels(c):
            f, j = chunk[c]
            return float(grid.axis(f)[j]), f

        return _integrate(kernel, s1, s2, solver, labels=labels)

    if solver.deterministic or solver.workers == 1:
        s1, s2, steps = run(cols)
    else:
        bounds = np.linspace(0, len(cols), solver.workers + 1).astype(int)
        chunks = [cols[bounds[k]:bounds[k + 1]] for k in range(solver.workers) if bounds[k + 1] > bounds[k]]
        with ThreadPoolExecutor(max_workers=solver.workers) as pool:
            parts = list(pool.map(run, chunks))
        s1 = np.concatenate([p[0] for p in parts], axis=1)
        s2 = np.concatenate([p[1] for p in parts], axis=1)
        steps = parts[0][2]
    meta = {
        "n_z": steps,
        "steps_per_period": solver.steps_per_period if solver.n_z is None else None,
        "method": solver.method,
        "deterministic": solver.deterministic,
        "workers": solver.workers,
        "kappa": gain.kappa,
        "omega_ref": gain.omega_ref,
        "seconds": time.perf_counter() - t0,
    }
    return TransferFunctions(
        grid=grid,
        U_i=s1[:, :ni],
        V_i=s1[:, ni:],
        V_s=np.conj(s2[:, :ni]),
        U_s=np.conj(s2[:, ni:]),
        n_steps=steps,
        method=solver.method,
        meta=meta,
    )


def symplectic_defect(tf: TransferFunctions) -> dict:
    """Worst entry of d_omega (U U^H - V V^H) - I per field, relative to the delta weight.

    The columns of U and V are summed with weight d_omega; the discrete delta is
    I / d_omega, so the defect is reported after multiplying through by d_omega.
    """
    dw = tf.d_omega
    out = {}
    for name, u, v in (("idler", tf.U_i, tf.V_i), ("signal", tf.U_s, tf.V_s)):
        gram = (dw * dw) * (u @ u.conj().T - v @ v.conj().T)
        out[name] = float(np.max(np.abs(gram - np.eye(gram.shape[0]))))
    out["max"] = max(out["idler"], out["signal"])
    return out
