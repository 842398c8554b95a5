import json

import numpy as np
import pytest

from gridedge.apps import RocCurve, RocPoint
from gridedge.recover import SolverDiagnostics
from gridedge.shared.exceptions import ConfigError, DataIOError
from gridedge.utils.io import (
    Manifest,
    file_digest,
    read_json,
    read_matrix,
    read_table,
    write_json,
    write_matrix,
    write_table,
)
from gridedge.utils.json import JsonFormat, dumps


def diagnostics(**overrides):
    values = dict(
        solver="full",
        status="converged",
        iterations=12,
        lam=0.05,
        rho=2.0,
        primal_residual=1e-7,
        dual_residual=2e-7,
        objective=3.5,
        feasible=True,
        max_violation=0.4,
        infeasibility_suspected=False,
        cg_iterations=40,
        support=3,
    )
    values.update(overrides)
    return SolverDiagnostics(**values)


def test_matrix_csv_layout(tmp_path):
    path = write_matrix(tmp_path / "m.csv", np.array([[1.0, 2.5], [3.0, 4.0]]), ["P1", "Q1"], [0, 15])
    lines = path.read_text().splitlines()
    assert lines[0] == "channel,0,15"
    assert lines[1] == "P1,1,2.5"
    frame = read_matrix(path)
    assert list(frame.index) == ["P1", "Q1"]
    np.testing.assert_array_equal(frame.to_numpy(), [[1.0, 2.5], [3.0, 4.0]])


def test_matrix_label_mismatch(tmp_path):
    with pytest.raises(DataIOError, match="channel labels"):
        write_matrix(tmp_path / "m.csv", np.zeros((2, 3)), ["P1"])


def test_missing_inputs(tmp_path):
    with pytest.raises(ConfigError):
        read_matrix(tmp_path / "absent.csv")
    assert read_matrix(tmp_path / "absent.csv", required=False) is None
    assert read_table(tmp_path / "absent.csv", required=False) is None
    assert read_json(tmp_path / "absent.json", required=False) is None


def test_malformed_inputs(tmp_path):
    bad_csv = tmp_path / "bad.csv"
    bad_csv.write_text("house,time\n1,2\n")
    with pytest.raises(DataIOError):
        read_matrix(bad_csv)
    bad_json = tmp_path / "bad.json"
    bad_json.write_text("{")
    with pytest.raises(DataIOError):
        read_json(bad_json)


def test_table_columns_are_fixed(tmp_path):
    path = write_table(tmp_path / "t.csv", [{"b": 2, "a": 1, "extra": 0}], ("a", "b"))
    assert path.read_text().splitlines() == ["a,b", "1,2"]
    empty = write_table(tmp_path / "e.csv", [], ("a", "b"))
    assert empty.read_text().strip() == "a,b"


def test_canonical_json(tmp_path):
    text = dumps({"b": np.float64(1.5), "a": [np.int64(2), float("nan")], "c": np.arange(2)})
    assert json.loads(text) == {"a": [2, None], "b": 1.5, "c": [0, 1]}
    assert text.index('"a"') < text.index('"b"')
    assert text.endswith("\n")
    path = write_json(tmp_path / "x.json", {"k": 1})
    assert read_json(path) == {"k": 1}


def test_diagnostics_through_json():
    original = diagnostics(primal_trace=[1.0, 0.5])
    data = json.loads(dumps(JsonFormat.to_json(original)))
    assert data["_class"] == "SolverDiagnostics"
    assert JsonFormat.from_json(data) == original


def test_nested_serializable_objects():
    curve = RocCurve(tolerance=1, points=[RocPoint(0.5, 1.0, 0.0, 2)])
    restored = JsonFormat.from_json(json.loads(dumps(JsonFormat.to_json(curve))))
    assert restored == curve


def test_decoding_errors():
    with pytest.raises(ValueError, match="_class"):
        JsonFormat.from_json({"status": "converged"})
    with pytest.raises(ValueError, match="Unknown class"):
        JsonFormat.from_json({"_class": "Nope"})
    assert JsonFormat.from_json(None) is None


def test_manifest_hashes_each_file_once(tmp_path):
    manifest = Manifest(tmp_path, "synth", "abc", 7)
    (tmp_path / "sub").mkdir()
    path = write_json(tmp_path / "sub" / "meta.json", {})
    manifest.add(path, "metadata")
    manifest.add(write_json(tmp_path / "timing.json", {"t": 1.0}), "timing", volatile=True)
    with pytest.raises(DataIOError, match="registered twice"):
        manifest.add(path, "metadata")

    saved = json.loads(manifest.save({"extra": True}).read_text())
    assert saved["format"] == "gridedge-manifest/1"
    assert saved["seed"] == 7 and saved["extra"] is True
    entry = saved["files"]["sub/meta.json"]
    assert entry == {"kind": "metadata", "sha256": file_digest(path), "volatile": False}
    assert saved["files"]["timing.json"]["volatile"] is True
