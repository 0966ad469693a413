import csv
import json
import struct

import numpy as np
import pytest

from pixelhop.cli import exit_code, main
from pixelhop.config import ConfigError
from pixelhop.exceptions import (ConsistencyError, DataIOError, FormatError, InsufficientDataError,
                                 NumericError)

from conftest import require, synthetic_images

FAST = ["--set", "patch_sample_limit=3000", "--set", "n_clusters=2"]


def write_idx(path, array, magic):
    array = np.asarray(array, dtype=np.uint8)
    path.write_bytes(struct.pack(">I", magic) + struct.pack(f">{array.ndim}I", *array.shape)
                     + array.tobytes())


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("data")
    (root / "mnist").mkdir()
    for split, prefix, seed in (("train", "train", 1), ("test", "t10k", 2)):
        ds = synthetic_images(n_per=14 if split == "train" else 6, seed=seed)
        write_idx(root / "mnist" / f"{prefix}-images-idx3-ubyte",
                  np.round(ds.images[..., 0] * 255), 0x803)
        write_idx(root / "mnist" / f"{prefix}-labels-idx1-ubyte", ds.labels, 0x801)
    return root


@pytest.fixture(scope="module")
def model_dir(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("m1")
    code = main(["train", "--config", "mnist_default", "--data-dir", str(data_dir),
                 "--out", str(out), "--train-accuracy"] + FAST)
    assert code == 0
    return out


def test_train_outputs(model_dir, data_dir):
    assert (model_dir / "model.sslpxh").read_bytes()[:8] == b"SSLPXH01"
    report = json.loads((model_dir / "report.json").read_text())
    assert report["n_train"] == 42 and report["n_features"] == 4 * 3 * 2
    assert report["config"]["patch_sample_limit"] == 3000
    assert report["overrides"] == {"patch_sample_limit": 3000, "n_clusters": 2}
    assert report["seeds"] == {"seed": 0}
    assert len(report["hashes"]["model"]) == 64 and len(report["hashes"]["data"]) == 2
    assert 0 <= report["train_accuracy"] <= 1
    assert {"cascade", "lag", "classifier", "total"} <= set(report["timings"])


def test_train_is_reproducible(model_dir, data_dir, tmp_path):
    assert main(["train", "--config", "mnist_default", "--data-dir", str(data_dir),
                 "--out", str(tmp_path), "--train-accuracy"] + FAST) == 0
    first = json.loads((model_dir / "report.json").read_text())
    second = json.loads((tmp_path / "report.json").read_text())
    assert first["hashes"] == second["hashes"]
    assert (model_dir / "model.sslpxh").read_bytes() == (tmp_path / "model.sslpxh").read_bytes()


def test_eval_outputs(model_dir, data_dir, tmp_path):
    assert main(["eval", "--model", str(model_dir / "model.sslpxh"), "--data-dir", str(data_dir),
                 "--out", str(tmp_path), "--per-unit"]) == 0
    rows = list(csv.reader((tmp_path / "confusion.csv").open()))
    assert len(rows) == 10 + 1
    summary = json.loads((tmp_path / "summary.json").read_text())
    assert 0 <= summary["accuracy"] <= 1
    assert sorted(summary["per_unit_accuracy"]) == ["1", "2", "3", "4"]
    for row in summary["confusion"][:3]:
        assert sum(row) == pytest.approx(1.0, abs=1e-6)


def test_predict_limit(model_dir, data_dir, tmp_path):
    assert main(["predict", "--model", str(model_dir / "model.sslpxh"), "--data-dir",
                 str(data_dir), "--out", str(tmp_path), "--limit", "5"]) == 0
    rows = list(csv.reader((tmp_path / "predictions.csv").open()))
    assert rows[0] == ["index", "predicted", "label"] and len(rows) == 6


def test_diagnose_energy_from_model(model_dir, tmp_path):
    assert main(["diagnose", "--mode", "energy", "--model", str(model_dir / "model.sslpxh"),
                 "--out", str(tmp_path)]) == 0
    names = sorted(p.name for p in tmp_path.glob("energy_g0_unit*.csv"))
    assert names == [f"energy_g0_unit{u}.csv" for u in range(1, 5)]
    rows = list(csv.DictReader((tmp_path / "energy_g0_unit1.csv").open()))
    assert float(rows[-1]["cumulative_ratio"]) == pytest.approx(1.0)


def test_diagnose_convergence(data_dir, tmp_path):
    assert main(["diagnose", "--mode", "convergence", "--config", "mnist_default",
                 "--data-dir", str(data_dir), "--out", str(tmp_path), "--schedule", "10,20,42",
                 "--runs", "2", "--units", "1,2", "--set", "patch_sample_limit=3000"]) == 0
    assert {p.name for p in tmp_path.glob("*.csv")} == {
        "delta_unit1.csv", "cosine_unit1.csv", "delta_unit2.csv", "cosine_unit2.csv"}
    last = list(csv.DictReader((tmp_path / "cosine_unit1.csv").open()))[-1]
    assert float(last["filter1_mean"]) == pytest.approx(1.0, abs=1e-9)


def test_sweep(data_dir, tmp_path):
    assert main(["sweep", "--config", "mnist_default", "--data-dir", str(data_dir),
                 "--out", str(tmp_path), "--fractions", "1,1/2,3/4", "--seeds", "0"] + FAST) == 0
    rows = list(csv.DictReader((tmp_path / "sweep.csv").open()))
    assert [r["n_train"] for r in rows] == ["42", "21", "32"]
    assert json.loads((tmp_path / "sweep.json").read_text())["seeds"] == {"seeds": [0]}


@pytest.mark.parametrize("argv,code", [
    (["train", "--config", "mnist_default", "--set", "bogus_key=1"], 2),
    (["train", "--config", "no_such_preset"], 2),
    (["train", "--config", "mnist_default", "--set", "train_fraction=2.0"], 2),
    (["sweep", "--config", "mnist_default", "--fractions", "1,2.0"], 2),
    (["eval", "--model", "missing.sslpxh"], 5),
    (["diagnose", "--mode", "convergence", "--config", "mnist_default", "--schedule", "10,100"], 2),
    (["diagnose", "--mode", "convergence", "--config", "mnist_default", "--schedule", "20,10"], 2),
])
def test_exit_codes(argv, code, data_dir, tmp_path, capsys):
    argv = [argv[0], "--data-dir", str(data_dir), "--out", str(tmp_path / "o")] + argv[1:]
    assert main(argv) == code
    if "bogus_key=1" in argv:
        assert "bogus_key" in capsys.readouterr().err


def test_invalid_mode_exits_2(tmp_path):
    with pytest.raises(SystemExit) as info:
        main(["diagnose", "--mode", "spectral", "--out", str(tmp_path)])
    assert info.value.code == 2


def test_corrupt_model_exits_3(tmp_path, data_dir):
    bad = tmp_path / "bad.sslpxh"
    bad.write_bytes(b"NOTAMODEL" + bytes(20))
    assert main(["eval", "--model", str(bad), "--data-dir", str(data_dir),
                 "--out", str(tmp_path)]) == 3


def test_missing_data_exits_5(tmp_path):
    assert main(["train", "--config", "mnist_default", "--data-dir", str(tmp_path),
                 "--out", str(tmp_path / "o")]) == 5


@pytest.mark.parametrize("exc,code", [
    (ConfigError("x"), 2), (FormatError("x"), 3), (ConsistencyError("x"), 3),
    (InsufficientDataError("x"), 3), (NumericError("x"), 4), (DataIOError("x"), 5),
])
def test_exit_code_mapping(exc, code):
    assert exit_code(exc) == code


@require("mnist")
@pytest.mark.slow
def test_quarter_fraction_records_15000(data_root, tmp_path):
    argv = ["train", "--config", "mnist_default", "--data-dir", str(data_root), "--out",
            str(tmp_path), "--set", "train_fraction=0.25", "--set", "n_units=1",
            "--set", "blocks=4", "--set", "patch_sample_limit=5000", "--set", "n_clusters=2"]
    assert main(argv) == 0
    assert json.loads((tmp_path / "report.json").read_text())["n_train"] == 15_000
