"""Command-line entry point.

Exit codes: 0 success, 1 configuration or validation error, 2 numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from filelock import FileLock, Timeout

from . import __version__
from .config import apply_overrides, list_presets, load_config
from .errors import (
    BSVError,
    ConfigError,
    DesignError,
    DivergenceError,
    GridMismatchError,
    NRFUndefinedError,
    NoPhaseMatchingError,
    SingularMatrixError,
    UnsupportedGraphError,
    WavelengthRangeError,
)
from .pipeline import run_to_directory

log = logging.getLogger("bsvsim")

CONFIG_ERRORS = (ConfigError, WavelengthRangeError, NoPhaseMatchingError, DesignError, GridMismatchError)
NUMERIC_ERRORS = (DivergenceError, NRFUndefinedError, SingularMatrixError, UnsupportedGraphError,
                  FloatingPointError, ArithmeticError)


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bsvsim", description="High-gain SPDC frequency-domain simulator.")
    p.add_argument("--version", action="version", version=f"bsvsim {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", required=True, help="YAML file or bundled preset name")
        sp.add_argument("--out", help="output directory (default: output.directory from the config)")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config field, e.g. grid.n=61 (repeatable)")
        sp.add_argument("--workers", type=int, help="threads for the mode sweep")
        sp.add_argument("--deterministic", action="store_true", default=None,
                        help="single-threaded, bit-reproducible propagation")
        sp.add_argument("--render", action="store_true", help="also write PNG heatmaps (needs matplotlib)")

    common(sub.add_parser("run", help="propagate and write all requested observables"))
    common(sub.add_parser("jsi", help="low-gain design outputs only (no propagation)"))
    common(sub.add_parser("convergence", help="step-halving and grid-coarsening comparison"))
    sub.add_parser("list-presets", help="print bundled preset names")
    return p


def _load(args):
    cfg = load_config(args.config)
    if args.overrides:
        cfg = apply_overrides(cfg, args.overrides)
    solver = cfg.solver
    if args.workers is not None:
        if args.workers < 1:
            raise ConfigError("--workers", "must be >= 1")
        solver = replace(solver, workers=args.workers, deterministic=False if args.deterministic is None
                         else solver.deterministic)
    if args.deterministic:
        solver = replace(solver, deterministic=True)
    return replace(cfg, solver=solver)


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if args.command == "list-presets":
        for name in list_presets():
            print(name)
        return 0
    try:
        cfg = _load(args)
        out = Path(args.out or cfg.output.directory)
        lock = FileLock(str(out.parent / f".{out.name}.lock"))
        out.parent.mkdir(parents=True, exist_ok=True)
        with lock.acquire(timeout=0):
            run_to_directory(cfg, out, args.command, args.render)
    except Timeout:
        print(f"error: another run is writing to {out}", file=sys.stderr)
        return 1
    except CONFIG_ERRORS as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    except NUMERIC_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return 2
    except (BSVError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(out)
    return 0


if __name__ == "__main__":
    sys.exit(main())
