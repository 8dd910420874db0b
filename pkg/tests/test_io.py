import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bsvsim.io import OutputWriter, read_binary, sha256_file, write_manifest


@given(arrays(np.complex128, st.tuples(st.integers(1, 5), st.integers(1, 5)),
              elements=st.complex_numbers(max_magnitude=1e6, allow_nan=False)))
def test_complex_matrix_roundtrip(tmp_path_factory, data):
    root = tmp_path_factory.mktemp("w")
    w = OutputWriter(root)
    rows, cols = np.arange(data.shape[0], dtype=float), np.arange(data.shape[1], dtype=float) * 2
    w.matrix("m", data, ("w_i", rows), ("w_s", cols))
    assert np.array_equal(read_binary(root / "m.bin"), data)
    side = json.loads((root / "m.json").read_text())
    assert side["dtype"] == "complex128" and side["byte_order"] == "little"
    assert side["shape"] == list(data.shape) and side["cols"]["values"] == cols.tolist()
    re = np.loadtxt(root / "m_re.csv", delimiter=",", skiprows=1, ndmin=2)
    im = np.loadtxt(root / "m_im.csv", delimiter=",", skiprows=1, ndmin=2)
    assert np.array_equal(re[:, 0], rows)
    assert np.array_equal(re[:, 1:] + 1j * im[:, 1:], data)


def test_real_matrix_and_header(tmp_path):
    w = OutputWriter(tmp_path, formats=("csv",))
    w.matrix("sub/r", np.eye(2), ("a", [1.0, 2.0]), ("b", [3.0, 4.0]))
    first = (tmp_path / "sub" / "r.csv").read_text().splitlines()[0]
    assert first == "a\\b,3.0,4.0"
    assert not (tmp_path / "sub" / "r.bin").exists()


def test_table_roundtrip(tmp_path):
    w = OutputWriter(tmp_path)
    x = np.linspace(0, 1, 5)
    w.table("t", {"x": x, "y": x**2})
    back = read_binary(tmp_path / "t.bin")
    assert np.array_equal(back, np.column_stack([x, x**2]))
    assert json.loads((tmp_path / "t.json").read_text())["columns"] == ["x", "y"]


def test_manifest_lists_every_file(tmp_path):
    w = OutputWriter(tmp_path)
    w.matrix("a", np.ones((2, 2)), ("r", [0, 1]), ("c", [0, 1]))
    w.json("info.json", {"z": 1 + 2j, "arr": np.arange(3)})
    w.text("note.txt", "hi\n")
    path = write_manifest(tmp_path, w.files, {"mode": "test"})
    man = json.loads(path.read_text())
    listed = {f["path"]: f for f in man["files"]}
    assert set(listed) == {"a.csv", "a.bin", "a.json", "info.json", "note.txt"}
    assert listed["note.txt"]["sha256"] == sha256_file(tmp_path / "note.txt")
    assert listed["note.txt"]["bytes"] == 3
    assert man["mode"] == "test" and "numpy" in man["software"]
    assert json.loads((tmp_path / "info.json").read_text()) == {"arr": [0, 1, 2], "z": [1.0, 2.0]}


def test_read_binary_needs_sidecar(tmp_path):
    np.zeros(3).tofile(tmp_path / "x.bin")
    with pytest.raises(FileNotFoundError):
        read_binary(tmp_path / "x.bin")
