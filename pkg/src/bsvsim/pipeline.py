"""End-to-end runs: config -> design -> propagation -> observables -> files."""

from __future__ import annotations

import logging
import math
import os
import shutil
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cluster import (
    GraphWarning,
    cluster_matrix,
    edge_list,
    graph_deviation,
    hgraph_from_design,
    ideal_graph,
    nullifier_variances,
    partition_lattices,
    phi_sweep,
)
from .config import ExperimentConfig
from .design import (
    HologramPeak,
    HologramSpec,
    LatticeDesign,
    LatticeSpec,
    PolingPattern,
    PumpPeak,
    PumpSpectrum,
    apodized_poling,
    build_lattice,
    jsi,
    multi_gaussian_pump,
    multipeak_hologram,
    periodic_poling,
    phase_matching_function,
    uniform_crystal,
)
from .dispersion import (
    Dispersion,
    FrequencyGrid,
    PhaseMismatchTable,
    find_phase_matched_pair,
    omega_to_wavelength,
    wavelength_to_omega,
)
from .errors import ConfigError, NRFUndefinedError, UnsupportedGraphError, WavelengthRangeError
from .io import OutputWriter, write_manifest
from .observables import (
    Bin,
    BinSet,
    Window,
    correlations,
    covariance,
    g2,
    nrf,
    photon_numbers,
    windows_around,
)
from .propagator import CrystalDesign, GainSpec, SolverSpec, propagate_all, symplectic_defect

__all__ = [
    "Experiment",
    "KappaResult",
    "build_experiment",
    "run_kappa",
    "run",
    "run_jsi",
    "convergence_report",
    "run_to_directory",
]

log = logging.getLogger(__name__)

CONVERGENCE_TOL = 1e-3
# symplectic defects are unit-normalized; anything below this is rounding
DEFECT_FLOOR = 1e-14


@dataclass
class Experiment:
    config: ExperimentConfig
    dispersion: Dispersion
    grid: FrequencyGrid
    table: PhaseMismatchTable
    poling: PolingPattern
    pump: PumpSpectrum
    phi: np.ndarray
    jsi: np.ndarray
    lattice: LatticeDesign | None = None
    pair_nm: tuple[float, float] = (0.0, 0.0)

    @property
    def design(self) -> CrystalDesign:
        return CrystalDesign(self.poling, self.pump)

    def solver(self) -> SolverSpec:
        s = self.config.solver
        return SolverSpec(s.steps_per_period, s.n_z, s.method, s.deterministic, s.workers)

    def gain(self, kappa: float) -> GainSpec:
        return GainSpec.at_idler_center(kappa, self.grid, self.poling.length, self.dispersion,
                                        self.config.gain.chi2)


def _check_wavelengths(cfg: ExperimentConfig, disp: Dispersion, grid: FrequencyGrid):
    sell = disp.sellmeier
    checks = [("pump.peaks", omega_to_wavelength(grid.pump[[0, -1]])),
              ("grid.half_span_nm", omega_to_wavelength(grid.idler[[0, -1]])),
              ("grid.half_span_nm", omega_to_wavelength(grid.signal[[0, -1]]))]
    checks += [(f"pump.peaks[{j}].center_nm", np.array([c * 1e-9])) for j, (c, _, _) in enumerate(cfg.pump.peaks)]
    for path, lam in checks:
        try:
            sell.check_range(np.asarray(lam) * 1e6)
        except WavelengthRangeError as exc:
            raise ConfigError(path, str(exc)) from None


def _poling(cfg: ExperimentConfig, table: PhaseMismatchTable):
    c = cfg.crystal
    L = c.length
    if c.poling == "periodic":
        return periodic_poling(c.period_um, L, c.n_z), None
    if c.poling == "apodized":
        return apodized_poling(c.period_um, L, c.envelope_fwhm_mm * 1e-3, c.n_z, c.binarized), None
    if c.poling == "uniform":
        return uniform_crystal(L, c.n_z), None
    if c.poling == "multipeak":
        peaks = tuple(HologramPeak(p["carrier_per_m"], p["amplitude"],
                                   None if p.get("envelope_fwhm_mm") is None else p["envelope_fwhm_mm"] * 1e-3)
                      for p in c.peaks)
        return multipeak_hologram(HologramSpec(peaks, L), c.n_z, c.binarized), None
    lat = cfg.lattice
    spec = LatticeSpec(
        lat.pump_offsets, lat.holo_offsets, lat.pump_amplitudes, lat.holo_amplitudes, lat.pump_fwhm_nm, L,
        lat.spacing_lobes, None if lat.envelope_fwhm_mm is None else lat.envelope_fwhm_mm * 1e-3,
        c.binarized, lat.equalize, lat.equalize_on, c.n_z,
    )
    lattice = build_lattice(spec, table)
    return lattice.poling, lattice


def build_experiment(cfg: ExperimentConfig, grid: FrequencyGrid | None = None) -> Experiment:
    """Dispersion, grid, poling, pump and the low-gain predictors for ``cfg``."""
    c = cfg.crystal
    axes = dict(c.axes)
    disp = Dispersion(c.sellmeier_set(), axes["pump"], axes["idler"], axes["signal"])
    if cfg.grid.idler_nm is not None:
        pair = (cfg.grid.idler_nm, cfg.grid.signal_nm)
    else:
        try:
            pair = find_phase_matched_pair(cfg.pump.center_nm, c.period_um, disp)
        except WavelengthRangeError as exc:
            raise ConfigError("pump.center_nm", str(exc)) from None
    if grid is None:
        grid = FrequencyGrid.from_wavelengths(pair[0], pair[1], cfg.grid.half_span_nm, cfg.grid.n)
    _check_wavelengths(cfg, disp, grid)
    table = PhaseMismatchTable.build(grid, disp)
    poling, lattice = _poling(cfg, table)
    if lattice is not None:
        pump = lattice.pump
    else:
        pump = multi_gaussian_pump([PumpPeak(a, b, z) for a, b, z in cfg.pump.peaks], grid)
    phi = phase_matching_function(poling, table)
    return Experiment(cfg, disp, grid, table, poling, pump, phi, jsi(pump, phi), lattice, tuple(pair))


def _nm_width(center_nm: float, width_nm: float) -> float:
    return float(wavelength_to_omega((center_nm - width_nm / 2) * 1e-9)
                 - wavelength_to_omega((center_nm + width_nm / 2) * 1e-9))


def resolve_bins(exp: Experiment) -> BinSet | None:
    a = exp.config.analysis
    if not a.bins:
        return None
    grid = exp.grid
    bins = []
    for j, b in enumerate(a.bins):
        path = f"analysis.bins[{j}]"
        if "offset" in b:
            base = grid.omega_i0 if b["field"] == "i" else grid.omega_s0
            center = base + b["offset"] * exp.lattice.spacing
        else:
            center = float(wavelength_to_omega(b["center_nm"] * 1e-9))
        if "width_nm" in b:
            lam = float(omega_to_wavelength(center)) * 1e9
            width = _nm_width(lam, b["width_nm"])
        elif exp.lattice is not None:
            width = a.bin_width_lobes * exp.lattice.lobe_fwhm
        else:
            raise ConfigError(f"{path}.width_nm", "required without a lattice")
        ax = grid.axis(b["field"])
        if center - width / 2 < ax[0] - grid.d_omega / 2 or center + width / 2 > ax[-1] + grid.d_omega / 2:
            raise ConfigError(path, "bin extends beyond the frequency grid")
        center = float(ax[grid.index_of(b["field"], center)])
        bins.append(Bin(b["field"], center, width, b["label"]))
    try:
        return BinSet(grid, tuple(bins))
    except ValueError as exc:
        raise ConfigError("analysis.bins", str(exc)) from None


def lattice_bins(exp: Experiment) -> BinSet:
    """One bin per distinct idler and signal lattice position."""
    lat = exp.lattice
    grid = exp.grid
    width = exp.config.analysis.bin_width_lobes * lat.lobe_fwhm
    oi = sorted({p + h for p, h in lat.nodes})
    os_ = sorted({p - h for p, h in lat.nodes})
    bins = [Bin("i", float(grid.idler[grid.index_of("i", grid.omega_i0 + o * lat.spacing)]), width, f"i{o:+g}")
            for o in oi]
    bins += [Bin("s", float(grid.signal[grid.index_of("s", grid.omega_s0 + o * lat.spacing)]), width, f"s{o:+g}")
             for o in os_]
    return BinSet(grid, tuple(bins))


def resolve_windows(exp: Experiment) -> list[tuple[str, Window, Window]]:
    out = []
    grid = exp.grid
    for j, w in enumerate(exp.config.analysis.nrf_windows):
        if w["kind"] == "full":
            out.append(("full", Window.full("i", grid), Window.full("s", grid)))
        elif w["kind"] == "nm":
            out.append((f"w{j}", Window.from_nm("i", *w["idler_nm"]), Window.from_nm("s", *w["signal_nm"])))
        else:
            if exp.lattice is None:
                raise ConfigError(f"analysis.nrf_windows[{j}]", "node windows need a lattice")
            key = tuple(w["node"])
            if key not in exp.lattice.nodes:
                raise ConfigError(f"analysis.nrf_windows[{j}].node", f"no lattice node {list(key)}")
            wi, ws = exp.lattice.nodes[key]
            half = 0.5 * w["side_lobes"] * exp.lattice.lobe_fwhm
            wi_, ws_ = windows_around(grid, wi, ws, half, half)
            out.append((f"node{key[0]:+g}{key[1]:+g}", wi_, ws_))
    return out


@dataclass
class KappaResult:
    kappa: float
    tf: object = field(repr=False)
    corr: object = field(repr=False)
    defect: dict = field(default_factory=dict)
    photons: tuple[float, float] = (0.0, 0.0)
    nrf: dict = field(default_factory=dict)
    cov: object = None
    nullifiers: object = None
    graph: object = None
    V: np.ndarray | None = None
    graph_deviation: float | None = None
    components: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    seconds: float = 0.0


def analyse_graph(exp: Experiment, bins: BinSet):
    """Sampled Hamiltonian graph on ``bins`` and the cluster matrix of its equal-weight target."""
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", GraphWarning)
        graph = hgraph_from_design(exp.pump, exp.phi, bins)
    notes = [str(w.message) for w in caught]
    try:
        target = ideal_graph(graph)
        V = cluster_matrix(target.G)
        return graph, V, graph_deviation(graph, target.G), notes
    except UnsupportedGraphError as exc:
        notes.append(str(exc))
        return graph, None, None, notes


def run_kappa(exp: Experiment, kappa: float, solver: SolverSpec | None = None) -> KappaResult:
    solver = solver or exp.solver()
    obs = set(exp.config.analysis.observables)
    t0 = time.perf_counter()
    tf = propagate_all(exp.design, exp.table, exp.gain(kappa), solver)
    corr = correlations(tf)
    res = KappaResult(kappa, tf, corr, symplectic_defect(tf), photon_numbers(corr))
    for name, wi, ws in resolve_windows(exp):
        try:
            res.nrf[name] = nrf(corr, wi, ws)
        except NRFUndefinedError:
            res.nrf[name] = None
    bins = resolve_bins(exp)
    if bins is not None and {"covariance", "nullifiers", "graph"} & obs:
        res.cov = covariance(tf, bins, corr)
        res.graph, res.V, res.graph_deviation, res.notes = analyse_graph(exp, bins)
        if "nullifiers" in obs and res.V is not None:
            res.nullifiers = nullifier_variances(res.cov, res.V, phi_sweep(exp.config.analysis.phi_samples))
    if exp.config.analysis.graph_bins == "lattice" and exp.lattice is not None:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", GraphWarning)
            full = hgraph_from_design(exp.pump, exp.phi, lattice_bins(exp))
        res.components = partition_lattices(full)
    res.seconds = time.perf_counter() - t0
    return res


def _kappa_dir(kappa: float) -> str:
    return f"kappa_{kappa:g}"


def _write_design(exp: Experiment, w: OutputWriter):
    grid = exp.grid
    if "jsi" in exp.config.analysis.observables:
        w.matrix("jsi", exp.jsi, ("omega_i", grid.idler), ("omega_s", grid.signal))
        w.matrix("phase_matching", exp.phi, ("omega_i", grid.idler), ("omega_s", grid.signal))
    w.table("pump", {"omega_p": grid.pump, "amplitude": exp.pump.amplitude}, {"norm": exp.pump.norm})
    p = exp.poling
    if p.binarized and p.signs is not None:
        w.table("poling_domains", {"z_start": p.walls[:-1], "z_end": p.walls[1:], "sign": p.signs.astype(float)})
    else:
        z = p.z
        w.table("poling_profile", {"z": z, "d": p(z)})


def _write_kappa(exp: Experiment, res: KappaResult, w: OutputWriter):
    grid = exp.grid
    obs = set(exp.config.analysis.observables)
    d = _kappa_dir(res.kappa)
    axes_is = (("omega_i", grid.idler), ("omega_s", grid.signal))
    if "g2" in obs:
        m = g2(res.corr, "i", "s")
        w.matrix(f"{d}/g2_is", m.raw, *axes_is)
        w.matrix(f"{d}/g2_is_normalized", m.normalized, *axes_is)
    if "g1" in obs:
        w.table(f"{d}/g1_idler_diag", {"omega_i": grid.idler, "G1_ii": np.real(np.diag(res.corr.G1_ii))})
        w.table(f"{d}/g1_signal_diag", {"omega_s": grid.signal, "G1_ss": np.real(np.diag(res.corr.G1_ss))})
    if "q" in obs:
        w.matrix(f"{d}/q_is", res.corr.Q_is, *axes_is)
    if res.cov is not None:
        labels = list(res.cov.labels)
        idx = np.arange(2 * len(labels), dtype=float)
        w.matrix(f"{d}/covariance", res.cov.sigma, ("row", idx), ("col", idx),
                 {"modes": labels + [f"{x}^dag" for x in labels]})
    if res.nullifiers is not None:
        ns = res.nullifiers
        cols = {"phi": ns.phi}
        for j, lab in enumerate(ns.labels):
            cols[f"var_{lab}"] = ns.variances[:, j]
        w.table(f"{d}/nullifiers", cols, {"reference": ns.reference})
    summary = {
        "kappa": res.kappa,
        "photon_number_idler": res.photons[0],
        "photon_number_signal": res.photons[1],
        "nrf": res.nrf,
        "symplectic_defect": res.defect,
        "n_steps": res.tf.n_steps,
        "notes": res.notes,
    }
    if res.cov is not None:
        summary["covariance_physical"] = res.cov.is_physical()
        summary["physicality_margin"] = res.cov.physicality_margin()
    if res.graph is not None:
        summary["graph"] = {"labels": list(res.graph.labels), "G": res.graph.G,
                            "edges": edge_list(res.graph), "normalization": res.graph.normalization,
                            "V": res.V, "deviation_from_target": res.graph_deviation}
    if res.nullifiers is not None:
        ns = res.nullifiers
        summary["nullifiers"] = {
            "labels": list(ns.labels), "reference": ns.reference, "min_variance": ns.min_variance,
            "argmin_phi": ns.argmin_phi, "squeezing_db": ns.squeezing_db,
            "simultaneous_phi": ns.simultaneous_phi, "simultaneous_db": ns.simultaneous_db,
            "all_below_reference": ns.all_below_reference,
        }
    if res.components:
        summary["components"] = [
            {"modes": list(c.graph.labels), "edges": edge_list(c.graph)} for c in res.components
        ]
    w.json(f"{d}/summary.json", summary)


def _render(exp: Experiment, results, w: OutputWriter):
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        log.warning("matplotlib is not installed; skipping figures")
        return
    lam_i = omega_to_wavelength(exp.grid.idler) * 1e9
    lam_s = omega_to_wavelength(exp.grid.signal) * 1e9
    maps = [("jsi.png", exp.jsi, "JSI")]
    maps += [(f"{_kappa_dir(r.kappa)}/g2_is.png", g2(r.corr).normalized, f"G2 kappa={r.kappa:g}") for r in results]
    for rel, data, title in maps:
        fig, ax = plt.subplots(figsize=(4.5, 4))
        ax.pcolormesh(lam_s, lam_i, data, shading="auto")
        ax.set_xlabel("signal wavelength (nm)")
        ax.set_ylabel("idler wavelength (nm)")
        ax.set_title(title)
        fig.tight_layout()
        fig.savefig(w.register(rel), dpi=120, metadata={"Software": None})
        plt.close(fig)


def _info(exp: Experiment) -> dict:
    return {"config": exp.config.to_mapping(), "grid": exp.grid.to_mapping(),
            "phase_matched_pair_nm": list(exp.pair_nm), "poling_domains": int(len(exp.poling.walls) - 1)}


def run_jsi(cfg: ExperimentConfig, w: OutputWriter, render: bool = False) -> dict:
    exp = build_experiment(cfg)
    _write_design(exp, w)
    w.text("config.yaml", cfg.dump())
    if render:
        _render(exp, [], w)
    return {**_info(exp), "timings": {}}


def run(cfg: ExperimentConfig, w: OutputWriter, render: bool = False) -> dict:
    """Full pipeline for every kappa in the config."""
    exp = build_experiment(cfg)
    _write_design(exp, w)
    w.text("config.yaml", cfg.dump())
    results, timings = [], {}
    for kappa in cfg.gain.kappa:
        log.info("propagating kappa=%g on %d x %d modes", kappa, exp.grid.n_idler, exp.grid.n_signal)
        res = run_kappa(exp, kappa)
        timings[_kappa_dir(kappa)] = res.seconds
        _write_kappa(exp, res, w)
        results.append(res)
    if render:
        _render(exp, results, w)
    return {**_info(exp), "timings": timings,
            "symplectic_defect": {_kappa_dir(r.kappa): r.defect["max"] for r in results}}


def _rel_delta(a, b) -> float:
    if a is None and b is None:
        return 0.0
    if a is None or b is None:
        return math.inf
    if a == b:
        return 0.0
    return abs(a - b) / max(abs(a), abs(b))


def _metrics(res: KappaResult) -> dict:
    full = next(iter(res.nrf.values())) if res.nrf else None
    d = res.defect["max"]
    return {
        "photon_number": res.photons[0],
        "nrf": full,
        "min_nullifier_variance": None if res.nullifiers is None else float(res.nullifiers.min_variance.min()),
        "symplectic_defect": 0.0 if d < DEFECT_FLOOR else d,
    }


def coarse_grid(grid: FrequencyGrid) -> FrequencyGrid:
    """Same centres and span with about half the points."""
    n_i = (grid.n_idler + 1) // 2
    n_s = (grid.n_signal + 1) // 2
    if grid.n_idler < 3:
        raise ConfigError("grid.n", "grid too small to coarsen")
    dw = grid.d_omega * (grid.n_idler - 1) / (n_i - 1)
    return FrequencyGrid(grid.omega_i0, grid.omega_s0, n_i, n_s, dw)


def convergence_report(cfg: ExperimentConfig, tol: float = CONVERGENCE_TOL) -> dict:
    """Compare each observable under halved z steps and under a coarser frequency grid."""
    exp = build_experiment(cfg)
    coarse = build_experiment(cfg, coarse_grid(exp.grid))
    solver = exp.solver()
    rows = []
    for kappa in cfg.gain.kappa:
        base = _metrics(run_kappa(exp, kappa, solver))
        fine_z = _metrics(run_kappa(exp, kappa, solver.refined()))
        coarse_n = _metrics(run_kappa(coarse, kappa, solver))
        for check, other in (("z_steps", fine_z), ("grid", coarse_n)):
            for key in base:
                if key == "symplectic_defect":
                    delta = abs(base[key] - other[key])
                else:
                    delta = _rel_delta(base[key], other[key])
                rows.append({"kappa": kappa, "check": check, "quantity": key, "base": base[key],
                             "other": other[key], "delta": delta, "flagged": bool(delta > tol)})
    return {"tolerance": tol, "grid": exp.grid.to_mapping(), "coarse_grid": coarse.grid.to_mapping(),
            "rows": rows, "flagged": any(r["flagged"] for r in rows)}


def format_convergence(report: dict) -> str:
    lines = [f"{'kappa':>8} {'check':>8} {'quantity':>24} {'base':>14} {'other':>14} {'delta':>10}"]
    def fmt(v):
        return "n/a" if v is None else f"{v:.6e}"

    for r in report["rows"]:
        mark = "  FLAG" if r["flagged"] else ""
        lines.append(f"{r['kappa']:>8g} {r['check']:>8} {r['quantity']:>24} {fmt(r['base']):>14} "
                     f"{fmt(r['other']):>14} {r['delta']:>10.2e}{mark}")
    return "\n".join(lines) + "\n"


def _safe_target(out: Path):
    if out.exists():
        if not out.is_dir():
            raise ConfigError("output.directory", f"{out} exists and is not a directory")
        if any(out.iterdir()) and not (out / "manifest.json").exists():
            raise ConfigError("output.directory", f"{out} holds files from something else; refusing to overwrite")


def run_to_directory(cfg: ExperimentConfig, out: Path, mode: str = "run", render: bool = False) -> Path:
    """Run ``mode`` into a staging directory and move it to ``out`` only on success."""
    out = Path(out)
    _safe_target(out)
    out.parent.mkdir(parents=True, exist_ok=True)
    stage = out.parent / f".{out.name}.partial-{os.getpid()}"
    if stage.exists():
        shutil.rmtree(stage)
    stage.mkdir()
    try:
        w = OutputWriter(stage, cfg.output.formats)
        t0 = time.perf_counter()
        if mode == "run":
            info = run(cfg, w, render)
        elif mode == "jsi":
            info = run_jsi(cfg, w, render)
        elif mode == "convergence":
            report = convergence_report(cfg)
            w.json("convergence.json", report)
            w.text("convergence.txt", format_convergence(report))
            w.text("config.yaml", cfg.dump())
            info = {"config": cfg.to_mapping(), "convergence_flagged": report["flagged"]}
        else:
            raise ValueError(f"unknown mode {mode!r}")
        info = {**info, "mode": mode, "total_seconds": time.perf_counter() - t0}
        write_manifest(stage, w.files, info)
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    if out.exists():
        shutil.rmtree(out)
    stage.rename(out)
    return out


