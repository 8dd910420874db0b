"""Output writers: CSV with axis headers, raw little-endian binaries with JSON
sidecars, and a checksummed run manifest."""

from __future__ import annotations

import hashlib
import json
import platform
from pathlib import Path

import numpy as np
import scipy

from . import __version__

__all__ = ["OutputWriter", "sha256_file", "read_binary", "write_manifest", "software_versions"]


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def software_versions() -> dict:
    return {"bsvsim": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return _jsonable(obj.item())
    return obj


def read_binary(path: Path) -> np.ndarray:
    """Load a .bin file through its .json sidecar."""
    path = Path(path)
    meta = json.loads(path.with_suffix(".json").read_text())
    dtype = np.dtype("<c16" if meta["dtype"] == "complex128" else "<f8")
    return np.fromfile(path, dtype=dtype).reshape(meta["shape"])


class OutputWriter:
    """Writes arrays under ``root`` and remembers every file it produced."""

    def __init__(self, root: Path, formats=("csv", "bin")):
        self.root = Path(root)
        self.formats = tuple(formats)
        self.files: list[Path] = []

    def _path(self, rel: str) -> Path:
        path = self.root / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        self.files.append(path)
        return path

    def matrix(self, rel: str, data: np.ndarray, rows: tuple[str, np.ndarray], cols: tuple[str, np.ndarray],
               meta: dict | None = None):
        """2-D array with labelled axes: ``rows``/``cols`` are (name, values)."""
        data = np.asarray(data)
        complex_data = np.iscomplexobj(data)
        if "csv" in self.formats:
            parts = [("_re", data.real), ("_im", data.imag)] if complex_data else [("", data)]
            for suffix, block in parts:
                header = f"{rows[0]}\\{cols[0]}," + ",".join(repr(float(c)) for c in cols[1])
                body = np.column_stack([np.asarray(rows[1], dtype=float), block])
                np.savetxt(self._path(rel + suffix + ".csv"), body, delimiter=",", header=header,
                           comments="", fmt="%.17g")
        if "bin" in self.formats:
            self._binary(rel, data, {"rows": {"name": rows[0], "values": np.asarray(rows[1], dtype=float)},
                                     "cols": {"name": cols[0], "values": np.asarray(cols[1], dtype=float)},
                                     **(meta or {})})

    def table(self, rel: str, columns: dict[str, np.ndarray], meta: dict | None = None):
        """Column table: the first column is the axis."""
        names = list(columns)
        arrays = [np.asarray(v) for v in columns.values()]
        if "csv" in self.formats:
            cols, heads = [], []
            for name, arr in zip(names, arrays):
                if np.iscomplexobj(arr):
                    cols += [arr.real, arr.imag]
                    heads += [f"{name}_re", f"{name}_im"]
                else:
                    cols.append(arr.astype(float))
                    heads.append(name)
            np.savetxt(self._path(rel + ".csv"), np.column_stack(cols), delimiter=",",
                       header=",".join(heads), comments="", fmt="%.17g")
        if "bin" in self.formats:
            stacked = np.column_stack(arrays)
            self._binary(rel, stacked, {"columns": names, **(meta or {})})

    def _binary(self, rel, data, meta):
        data = np.ascontiguousarray(data)
        if np.iscomplexobj(data):
            arr, dtype = data.astype("<c16"), "complex128"
        else:
            arr, dtype = data.astype("<f8"), "float64"
        arr.tofile(self._path(rel + ".bin"))
        side = {"shape": list(arr.shape), "dtype": dtype, "byte_order": "little", "order": "C",
                "complex_layout": "interleaved re, im" if dtype == "complex128" else None, **meta}
        self.json(rel + ".json", side)

    def json(self, rel: str, obj):
        self._path(rel).write_text(json.dumps(_jsonable(obj), indent=2, sort_keys=True) + "\n")

    def text(self, rel: str, text: str):
        self._path(rel).write_text(text)

    def register(self, rel: str) -> Path:
        """Reserve a path for a file written by someone else (e.g. a figure)."""
        return self._path(rel)


def write_manifest(root: Path, files, info: dict) -> Path:
    """manifest.json listing every output file with size and sha256."""
    root = Path(root)
    entries = []
    for path in sorted(set(Path(f) for f in files)):
        if path.exists():
            entries.append({"path": path.relative_to(root).as_posix(), "bytes": path.stat().st_size,
                            "sha256": sha256_file(path)})
    manifest = {**_jsonable(info), "software": software_versions(), "files": entries}
    out = root / "manifest.json"
    out.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return out
