"""Experiment configuration: YAML files (or bundled presets) parsed into frozen dataclasses.

Validation errors raise ConfigError carrying the dotted path of the offending
field, e.g. ``gain.kappa[2]: must be >= 0``.
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path
import yaml

from .dispersion import KTP, SellmeierSet
from .errors import ConfigError

__all__ = [
    "CrystalConfig",
    "PumpConfig",
    "LatticeConfig",
    "GridConfig",
    "GainConfig",
    "SolverConfig",
    "AnalysisConfig",
    "OutputConfig",
    "ExperimentConfig",
    "parse_config",
    "load_config",
    "list_presets",
    "preset_path",
    "apply_overrides",
]

POLING_TYPES = ("periodic", "apodized", "multipeak", "lattice", "uniform")
OBSERVABLES = ("jsi", "g2", "g1", "q", "nrf", "covariance", "nullifiers", "graph")


def _complex(value, path):
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    if isinstance(value, (list, tuple)) and len(value) == 2:
        try:
            return complex(float(value[0]), float(value[1]))
        except (TypeError, ValueError):
            pass
    if isinstance(value, dict) and set(value) <= {"re", "im"}:
        return complex(float(value.get("re", 0.0)), float(value.get("im", 0.0)))
    raise ConfigError(path, f"expected a number or [re, im], got {value!r}")


def _encode_complex(z: complex):
    z = complex(z)
    return z.real if z.imag == 0 else [z.real, z.imag]


class _Reader:
    """Typed access into a mapping that records the dotted path for error messages."""

    def __init__(self, data, path):
        if data is None:
            data = {}
        if not isinstance(data, dict):
            raise ConfigError(path or "<root>", f"expected a mapping, got {type(data).__name__}")
        self.data = data
        self.path = path
        self.used = set()

    def sub(self, key):
        return f"{self.path}.{key}" if self.path else key

    def get(self, key, default=None, kind=None, check=None, msg=None):
        self.used.add(key)
        if key not in self.data or self.data[key] is None:
            return default
        value = self.data[key]
        if kind is not None:
            try:
                if kind is bool:
                    if not isinstance(value, bool):
                        raise TypeError
                elif kind is int:
                    if isinstance(value, bool) or int(value) != value:
                        raise TypeError
                    value = int(value)
                else:
                    if isinstance(value, bool):
                        raise TypeError
                    value = kind(value)
            except (TypeError, ValueError):
                raise ConfigError(self.sub(key), f"expected {kind.__name__}, got {value!r}") from None
        if check is not None and not check(value):
            raise ConfigError(self.sub(key), msg or f"invalid value {value!r}")
        return value

    def child(self, key):
        self.used.add(key)
        return _Reader(self.data.get(key), self.sub(key))

    def finish(self):
        extra = sorted(set(self.data) - self.used)
        if extra:
            raise ConfigError(self.sub(extra[0]), "unknown field")


@dataclass(frozen=True)
class CrystalConfig:
    period_um: float = 46.0
    length_mm: float = 13.7
    poling: str = "periodic"
    envelope_fwhm_mm: float | None = None
    binarized: bool = True
    n_z: int = 20001
    peaks: tuple[dict, ...] = ()
    axes: tuple[tuple[str, str], ...] = (("pump", "y"), ("idler", "y"), ("signal", "z"))
    sellmeier: dict | None = None

    @property
    def length(self) -> float:
        return self.length_mm * 1e-3

    def sellmeier_set(self) -> SellmeierSet:
        return KTP if self.sellmeier is None else SellmeierSet.from_mapping(self.sellmeier)


@dataclass(frozen=True)
class PumpConfig:
    center_nm: float = 791.0
    peaks: tuple[tuple[float, float, complex], ...] = ((791.0, 2.71, 1.0),)


@dataclass(frozen=True)
class LatticeConfig:
    pump_offsets: tuple[float, ...] = (-1.0, 0.0, 1.0)
    holo_offsets: tuple[float, ...] = (-1.0, 0.0, 1.0)
    pump_amplitudes: tuple[complex, ...] | None = None
    holo_amplitudes: tuple[complex, ...] | None = None
    pump_fwhm_nm: float = 5.0
    spacing_lobes: float = 3.0
    envelope_fwhm_mm: float | None = None
    equalize: int = 8
    equalize_on: str = "peak"


@dataclass(frozen=True)
class GridConfig:
    n: int = 201
    half_span_nm: float = 40.0
    idler_nm: float | None = None
    signal_nm: float | None = None


@dataclass(frozen=True)
class GainConfig:
    kappa: tuple[float, ...] = (1.0,)
    reference: str = "idler_center"
    chi2: float = 1.0e-11


@dataclass(frozen=True)
class SolverConfig:
    steps_per_period: int = 30
    n_z: int | None = None
    method: str = "rk4"
    deterministic: bool = True
    workers: int = 1


@dataclass(frozen=True)
class AnalysisConfig:
    observables: tuple[str, ...] = ("jsi", "g2", "g1", "q", "nrf")
    nrf_windows: tuple[dict, ...] = ({"kind": "full"},)
    bins: tuple[dict, ...] = ()
    bin_width_lobes: float = 1.0
    graph_bins: str | None = None
    phi_samples: int = 721


@dataclass(frozen=True)
class OutputConfig:
    directory: str = "out"
    formats: tuple[str, ...] = ("csv", "bin")


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    description: str = ""
    crystal: CrystalConfig = field(default_factory=CrystalConfig)
    pump: PumpConfig = field(default_factory=PumpConfig)
    lattice: LatticeConfig | None = None
    grid: GridConfig = field(default_factory=GridConfig)
    gain: GainConfig = field(default_factory=GainConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    analysis: AnalysisConfig = field(default_factory=AnalysisConfig)
    output: OutputConfig = field(default_factory=OutputConfig)

    def to_mapping(self) -> dict:
        """Plain-data form that parse_config maps back to an equal config."""
        c = self.crystal
        crystal = {
            "period_um": c.period_um,
            "length_mm": c.length_mm,
            "poling": {"type": c.poling, "binarized": c.binarized, "n_z": c.n_z},
            "axes": dict(c.axes),
        }
        if c.envelope_fwhm_mm is not None:
            crystal["poling"]["envelope_fwhm_mm"] = c.envelope_fwhm_mm
        if c.peaks:
            crystal["poling"]["peaks"] = [
                {"carrier_per_m": p["carrier_per_m"], "amplitude": _encode_complex(p["amplitude"]),
                 **({"envelope_fwhm_mm": p["envelope_fwhm_mm"]} if p.get("envelope_fwhm_mm") is not None else {})}
                for p in c.peaks
            ]
        if c.sellmeier is not None:
            crystal["sellmeier"] = copy.deepcopy(c.sellmeier)
        out = {
            "name": self.name,
            "description": self.description,
            "crystal": crystal,
            "pump": {
                "center_nm": self.pump.center_nm,
                "peaks": [{"center_nm": a, "fwhm_nm": b, "amplitude": _encode_complex(z)}
                          for a, b, z in self.pump.peaks],
            },
            "grid": {k: v for k, v in asdict(self.grid).items() if v is not None},
            "gain": {"kappa": list(self.gain.kappa), "reference": self.gain.reference, "chi2": self.gain.chi2},
            "solver": {k: v for k, v in asdict(self.solver).items() if v is not None},
            "analysis": {
                "observables": list(self.analysis.observables),
                "nrf_windows": [copy.deepcopy(w) for w in self.analysis.nrf_windows],
                "bins": [copy.deepcopy(b) for b in self.analysis.bins],
                "bin_width_lobes": self.analysis.bin_width_lobes,
                "phi_samples": self.analysis.phi_samples,
            },
            "output": {"directory": self.output.directory, "formats": list(self.output.formats)},
        }
        if self.analysis.graph_bins is not None:
            out["analysis"]["graph_bins"] = self.analysis.graph_bins
        if self.lattice is not None:
            lat = self.lattice
            out["lattice"] = {
                "pump_offsets": list(lat.pump_offsets),
                "holo_offsets": list(lat.holo_offsets),
                "pump_fwhm_nm": lat.pump_fwhm_nm,
                "spacing_lobes": lat.spacing_lobes,
                "equalize": lat.equalize,
                "equalize_on": lat.equalize_on,
            }
            if lat.pump_amplitudes is not None:
                out["lattice"]["pump_amplitudes"] = [_encode_complex(z) for z in lat.pump_amplitudes]
            if lat.holo_amplitudes is not None:
                out["lattice"]["holo_amplitudes"] = [_encode_complex(z) for z in lat.holo_amplitudes]
            if lat.envelope_fwhm_mm is not None:
                out["lattice"]["envelope_fwhm_mm"] = lat.envelope_fwhm_mm
        return out

    def dump(self) -> str:
        return yaml.safe_dump(self.to_mapping(), sort_keys=False)


def _positive(x):
    return x > 0


def _number(v):
    """float(v) for numbers and numeric strings (YAML reads 1e6 as a string); None otherwise."""
    if isinstance(v, bool):
        return None
    try:
        return float(v)
    except (TypeError, ValueError):
        return None


def _float_list(r: _Reader, key, default, check=None, msg=None):
    raw = r.get(key, default)
    if not isinstance(raw, (list, tuple)):
        raw = [raw] if _number(raw) is not None else raw
    if not isinstance(raw, (list, tuple)):
        raise ConfigError(r.sub(key), "expected a list of numbers")
    out = []
    for j, v in enumerate(raw):
        x = _number(v)
        if x is None:
            raise ConfigError(f"{r.sub(key)}[{j}]", f"expected a number, got {v!r}")
        if check is not None and not check(x):
            raise ConfigError(f"{r.sub(key)}[{j}]", msg or f"invalid value {v!r}")
        out.append(x)
    return tuple(out)


def _parse_crystal(r: _Reader) -> CrystalConfig:
    period = r.get("period_um", 46.0, float, _positive, "must be > 0")
    length = r.get("length_mm", 13.7, float, _positive, "must be > 0")
    pol = r.child("poling")
    kind = pol.get("type", "periodic", str, lambda s: s in POLING_TYPES, f"must be one of {POLING_TYPES}")
    env = pol.get("envelope_fwhm_mm", None, float, _positive, "must be > 0")
    if kind == "apodized" and env is None:
        raise ConfigError(pol.sub("envelope_fwhm_mm"), "required for apodized poling")
    binarized = pol.get("binarized", True, bool)
    n_z = pol.get("n_z", 20001, int, lambda v: v >= 2, "must be >= 2")
    peaks = []
    raw_peaks = pol.get("peaks", [])
    if not isinstance(raw_peaks, list):
        raise ConfigError(pol.sub("peaks"), "expected a list")
    for j, p in enumerate(raw_peaks):
        pr = _Reader(p, f"{pol.sub('peaks')}[{j}]")
        peaks.append({
            "carrier_per_m": pr.get("carrier_per_m", None, float),
            "amplitude": _complex(pr.get("amplitude", 1.0), pr.sub("amplitude")),
            "envelope_fwhm_mm": pr.get("envelope_fwhm_mm", None, float, _positive, "must be > 0"),
        })
        if peaks[-1]["carrier_per_m"] is None:
            raise ConfigError(pr.sub("carrier_per_m"), "required")
        pr.finish()
    if kind == "multipeak" and not peaks:
        raise ConfigError(pol.sub("peaks"), "multipeak poling needs at least one peak")
    pol.finish()
    ax = r.child("axes")
    axes = []
    for wave, default in (("pump", "y"), ("idler", "y"), ("signal", "z")):
        axes.append((wave, ax.get(wave, default, str, lambda s: s in ("x", "y", "z"), "must be x, y or z")))
    ax.finish()
    sell = r.get("sellmeier", None)
    if sell is not None:
        if sell == "default":
            sell = None
        else:
            try:
                SellmeierSet.from_mapping(sell)
            except (KeyError, TypeError, ValueError) as exc:
                raise ConfigError(r.sub("sellmeier"), f"bad coefficient table ({exc})") from None
            sell = copy.deepcopy(sell)
    r.finish()
    return CrystalConfig(period, length, kind, env, binarized, n_z, tuple(peaks), tuple(axes), sell)


def _parse_pump(r: _Reader) -> PumpConfig:
    center = r.get("center_nm", 791.0, float, _positive, "must be > 0")
    raw = r.get("peaks", [{"center_nm": center, "fwhm_nm": 2.71}])
    if not isinstance(raw, list) or not raw:
        raise ConfigError(r.sub("peaks"), "expected a non-empty list")
    peaks = []
    for j, p in enumerate(raw):
        pr = _Reader(p, f"{r.sub('peaks')}[{j}]")
        c = pr.get("center_nm", center, float, _positive, "must be > 0")
        w = pr.get("fwhm_nm", None, float, _positive, "must be > 0")
        if w is None:
            raise ConfigError(pr.sub("fwhm_nm"), "required")
        a = _complex(pr.get("amplitude", 1.0), pr.sub("amplitude"))
        pr.finish()
        peaks.append((c, w, a))
    r.finish()
    return PumpConfig(center, tuple(peaks))


def _parse_lattice(r: _Reader) -> LatticeConfig:
    po = _float_list(r, "pump_offsets", [-1, 0, 1])
    ho = _float_list(r, "holo_offsets", [-1, 0, 1])
    amps = {}
    for key, offs in (("pump_amplitudes", po), ("holo_amplitudes", ho)):
        raw = r.get(key, None)
        if raw is None:
            amps[key] = None
            continue
        if not isinstance(raw, list) or len(raw) != len(offs):
            raise ConfigError(r.sub(key), f"expected a list of {len(offs)} amplitudes")
        amps[key] = tuple(_complex(v, f"{r.sub(key)}[{j}]") for j, v in enumerate(raw))
    if not po:
        raise ConfigError(r.sub("pump_offsets"), "needs at least one entry")
    if not ho:
        raise ConfigError(r.sub("holo_offsets"), "needs at least one entry")
    out = LatticeConfig(
        po, ho, amps["pump_amplitudes"], amps["holo_amplitudes"],
        r.get("pump_fwhm_nm", 5.0, float, _positive, "must be > 0"),
        r.get("spacing_lobes", 3.0, float, _positive, "must be > 0"),
        r.get("envelope_fwhm_mm", None, float, _positive, "must be > 0"),
        r.get("equalize", 8, int, lambda v: v >= 0, "must be >= 0"),
        r.get("equalize_on", "peak", str, lambda v: v in ("peak", "node"), "must be peak or node"),
    )
    r.finish()
    return out


def _parse_windows(r: _Reader, key):
    raw = r.get(key, [{"kind": "full"}])
    if raw == "full":
        raw = [{"kind": "full"}]
    if not isinstance(raw, list) or not raw:
        raise ConfigError(r.sub(key), "expected a non-empty list of windows")
    out = []
    for j, w in enumerate(raw):
        wr = _Reader(w, f"{r.sub(key)}[{j}]")
        kind = wr.get("kind", "full", str, lambda s: s in ("full", "nm", "node"), "must be full, nm or node")
        item = {"kind": kind}
        if kind == "nm":
            for fld in ("idler_nm", "signal_nm"):
                v = wr.get(fld, None)
                if not (isinstance(v, list) and len(v) == 2 and all(isinstance(x, (int, float)) for x in v)):
                    raise ConfigError(wr.sub(fld), "expected [lo_nm, hi_nm]")
                if not v[0] < v[1]:
                    raise ConfigError(wr.sub(fld), "needs lo < hi")
                item[fld] = [float(v[0]), float(v[1])]
        elif kind == "node":
            node = wr.get("node", [0, 0])
            if not (isinstance(node, list) and len(node) == 2):
                raise ConfigError(wr.sub("node"), "expected [pump_offset, holo_offset]")
            item["node"] = [float(node[0]), float(node[1])]
            item["side_lobes"] = wr.get("side_lobes", 2.0, float, _positive, "must be > 0")
        wr.finish()
        out.append(item)
    return tuple(out)


def _parse_bins(r: _Reader, key):
    raw = r.get(key, [])
    if not isinstance(raw, list):
        raise ConfigError(r.sub(key), "expected a list")
    out = []
    for j, b in enumerate(raw):
        br = _Reader(b, f"{r.sub(key)}[{j}]")
        fld = br.get("field", None, str, lambda s: s in ("i", "s", "idler", "signal"), "must be i or s")
        if fld is None:
            raise ConfigError(br.sub("field"), "required")
        item = {"field": fld[0], "label": br.get("label", f"{fld[0]}{j}", str)}
        off = br.get("offset", None, float)
        center = br.get("center_nm", None, float, _positive, "must be > 0")
        if (off is None) == (center is None):
            raise ConfigError(br.sub("offset"), "give exactly one of offset (lattice units) or center_nm")
        if off is not None:
            item["offset"] = off
        else:
            item["center_nm"] = center
        width = br.get("width_nm", None, float, _positive, "must be > 0")
        if width is not None:
            item["width_nm"] = width
        br.finish()
        out.append(item)
    return tuple(out)


def parse_config(data: dict, name: str | None = None) -> ExperimentConfig:
    """Validate a plain mapping into an ExperimentConfig."""
    r = _Reader(data, "")
    cfg_name = r.get("name", name or "experiment", str)
    description = r.get("description", "", str)
    crystal = _parse_crystal(r.child("crystal"))
    pump = _parse_pump(r.child("pump"))
    lattice = _parse_lattice(r.child("lattice")) if r.data.get("lattice") is not None else None
    r.used.add("lattice")
    if crystal.poling == "lattice" and lattice is None:
        raise ConfigError("lattice", "required when crystal.poling.type is lattice")
    if lattice is not None and crystal.poling != "lattice":
        raise ConfigError("crystal.poling.type", "must be lattice when a lattice block is given")

    g = r.child("grid")
    grid = GridConfig(
        g.get("n", 201, int, lambda v: v >= 1, "must be >= 1"),
        g.get("half_span_nm", 40.0, float, _positive, "must be > 0"),
        g.get("idler_nm", None, float, _positive, "must be > 0"),
        g.get("signal_nm", None, float, _positive, "must be > 0"),
    )
    g.finish()
    if (grid.idler_nm is None) != (grid.signal_nm is None):
        raise ConfigError("grid.idler_nm", "idler_nm and signal_nm must be given together")

    ga = r.child("gain")
    kappa = _float_list(ga, "kappa", [1.0], lambda v: v >= 0, "must be >= 0")
    if not kappa:
        raise ConfigError("gain.kappa", "needs at least one gain value")
    gain = GainConfig(
        kappa,
        ga.get("reference", "idler_center", str, lambda s: s == "idler_center", "only idler_center is supported"),
        ga.get("chi2", 1.0e-11, float, _positive, "must be > 0"),
    )
    ga.finish()

    s = r.child("solver")
    solver = SolverConfig(
        s.get("steps_per_period", 30, int, lambda v: v >= 1, "must be >= 1"),
        s.get("n_z", None, int, lambda v: v >= 1, "must be >= 1"),
        s.get("method", "rk4", str, lambda v: v == "rk4", "only rk4 is available"),
        s.get("deterministic", True, bool),
        s.get("workers", 1, int, lambda v: v >= 1, "must be >= 1"),
    )
    s.finish()

    a = r.child("analysis")
    obs = a.get("observables", list(AnalysisConfig.observables))
    if not isinstance(obs, list):
        raise ConfigError(a.sub("observables"), "expected a list")
    for j, o in enumerate(obs):
        if o not in OBSERVABLES:
            raise ConfigError(f"{a.sub('observables')}[{j}]", f"unknown observable {o!r}")
    analysis = AnalysisConfig(
        tuple(obs),
        _parse_windows(a, "nrf_windows"),
        _parse_bins(a, "bins"),
        a.get("bin_width_lobes", 1.0, float, _positive, "must be > 0"),
        a.get("graph_bins", None, str, lambda v: v == "lattice", "only 'lattice' is supported"),
        a.get("phi_samples", 721, int, lambda v: v >= 2, "must be >= 2"),
    )
    a.finish()
    if any(b.get("offset") is not None for b in analysis.bins) and lattice is None:
        raise ConfigError("analysis.bins", "offset bins need a lattice block")
    if {"covariance", "nullifiers"} & set(analysis.observables) and not analysis.bins:
        raise ConfigError("analysis.bins", "covariance and nullifiers need bins")

    o = r.child("output")
    formats = o.get("formats", ["csv", "bin"])
    if not isinstance(formats, list) or not formats or any(f not in ("csv", "bin") for f in formats):
        raise ConfigError(o.sub("formats"), "expected a non-empty subset of [csv, bin]")
    output = OutputConfig(o.get("directory", f"out/{cfg_name}", str), tuple(formats))
    o.finish()
    r.finish()
    return ExperimentConfig(cfg_name, description, crystal, pump, lattice, grid, gain, solver, analysis, output)


def list_presets() -> list[str]:
    root = resources.files("bsvsim") / "presets"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def preset_path(name: str):
    return resources.files("bsvsim") / "presets" / f"{name}.yaml"


def load_config(source: str | Path) -> ExperimentConfig:
    """Load a YAML file, or a bundled preset when ``source`` names one."""
    path = Path(source)
    if path.is_file():
        text = path.read_text()
        default_name = path.stem
    elif str(source) in list_presets():
        text = preset_path(str(source)).read_text()
        default_name = str(source)
    else:
        raise ConfigError("config", f"no such file or preset: {source}")
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError("config", f"YAML syntax error: {exc}") from None
    return parse_config(data, default_name)


def apply_overrides(cfg: ExperimentConfig, overrides: list[str]) -> ExperimentConfig:
    """Apply ``dotted.key=value`` overrides (values parsed as YAML) and revalidate."""
    data = cfg.to_mapping()
    for item in overrides:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, raw = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            if not isinstance(node.get(p), dict):
                node[p] = {}
            node = node[p]
        node[parts[-1]] = yaml.safe_load(raw)
    return parse_config(data, cfg.name)

