import json
import os

import numpy as np
import pytest

from surfkit.cli import main
from surfkit.io import decode, read_volume, write_volume
from surfkit.volume import Grid3, LabelVolume, ProbVolume


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def ball(shape=(10, 10, 10), r=3.0, c=(5, 5, 5)):
    idx = np.indices(shape).transpose(1, 2, 3, 0) + 0.5
    return (((idx - c) ** 2).sum(-1) <= r * r).astype(np.uint8)


@pytest.fixture
def volumes(tmp_path):
    grid = Grid3((10, 10, 10), (1.0, 1.0, 2.0))
    truth = LabelVolume(grid, ball(), 2)
    pred_labels = ball(c=(5, 5, 6))
    probs = np.stack([1.0 - pred_labels, pred_labels]).astype(np.float64) * 0.8 + 0.1
    write_volume(tmp_path / "truth.svf", truth)
    write_volume(tmp_path / "pred_lab.svf", LabelVolume(grid, pred_labels, 2))
    write_volume(tmp_path / "pred.svf", ProbVolume(grid, probs))
    return tmp_path


def test_version(capsys):
    code, out, _ = run(capsys, "version")
    assert code == 0 and json.loads(out)["name"] == "surfkit"


def test_unknown_subcommand(capsys):
    code, _, _ = run(capsys, "frobnicate")
    assert code == 1


def test_boundary_loss_requires_dtm(capsys, volumes):
    code, out, err = run(capsys, "loss", "--kind", "gsl", "--pred", volumes / "pred.svf", "--truth", volumes / "truth.svf")
    assert code == 1 and out == ""
    assert "--dtm" in err


def test_missing_file_is_data_error(capsys, tmp_path):
    code, _, err = run(capsys, "metrics", "--pred", tmp_path / "nope.svf", "--truth", tmp_path / "nope.svf")
    assert code == 2 and err


def test_corrupt_file_is_data_error(capsys, tmp_path):
    (tmp_path / "bad.svf").write_bytes(b"JUNKJUNKJUNK")
    code, _, err = run(capsys, "dtm", "--in", tmp_path / "bad.svf", "--out", tmp_path / "o.svf")
    assert code == 2 and "FormatError" in err
    assert not (tmp_path / "o.svf").exists()


def test_metrics_identical(capsys, volumes):
    code, out, _ = run(capsys, "metrics", "--pred", volumes / "truth.svf", "--truth", volumes / "truth.svf")
    assert code == 0
    report = json.loads(out)["classes"]["1"]
    assert report["dice"] == 1.0 and report["hd95"] == 0.0 and report["asd"] == 0.0


def test_metrics_shifted(capsys, volumes):
    code, out, _ = run(capsys, "metrics", "--pred", volumes / "pred_lab.svf", "--truth", volumes / "truth.svf")
    report = json.loads(out)["classes"]["1"]
    assert code == 0 and 0 < report["dice"] < 1 and report["hd"] > 0


def test_weights(capsys):
    code, out, _ = run(capsys, "weights", "--counts", "100,300", "--p", "1")
    assert code == 0
    np.testing.assert_allclose(json.loads(out)["weights"], [0.75, 0.25], rtol=0, atol=1e-12)


def test_weights_empty_class(capsys):
    code, _, err = run(capsys, "weights", "--counts", "10,0")
    assert code == 2 and "EmptyClassInDataset" in err


def test_schedule_table(capsys):
    code, out, _ = run(capsys, "schedule", "--kind", "linear", "--epochs", "4")
    assert code == 0 and json.loads(out) == [[0, 1.0], [1, 0.75], [2, 0.5], [3, 0.25], [4, 0.0]]


def test_schedule_invalid(capsys):
    code, _, err = run(capsys, "schedule", "--kind", "step", "--epochs", "10", "--step-length", "0")
    assert code == 2 and "InvalidSchedule" in err


def test_dtm_methods_agree(capsys, volumes):
    a, b = volumes / "a.svf", volumes / "b.svf"
    assert run(capsys, "dtm", "--in", volumes / "truth.svf", "--out", a)[0] == 0
    assert run(capsys, "dtm", "--in", volumes / "truth.svf", "--out", b, "--brute-force")[0] == 0
    fa, fb = read_volume(a), read_volume(b)
    assert fa.values.shape == (2, 10, 10, 10)
    np.testing.assert_allclose(fa.values, fb.values, rtol=0, atol=1e-9)


def test_dtm_single_class_f32(capsys, volumes):
    out = volumes / "c.svf"
    code, text, _ = run(capsys, "dtm", "--in", volumes / "truth.svf", "--out", out, "--class", "1", "--dtype", "f32")
    assert code == 0 and json.loads(text)["channels"] == 1
    header, data = decode(out.read_bytes())
    assert header["dtype"] == "f32" and data.dtype == np.float32


def test_loss_pipeline(capsys, volumes):
    dtm = volumes / "d.svf"
    run(capsys, "dtm", "--in", volumes / "truth.svf", "--out", dtm)
    for kind in ("dice", "dice-ce", "gdl", "hl", "bl", "gsl", "composite"):
        code, out, _ = run(capsys, "loss", "--kind", kind, "--pred", volumes / "pred.svf", "--truth", volumes / "truth.svf", "--dtm", dtm)
        assert code == 0, kind
        assert np.isfinite(json.loads(out)["value"])


def test_gsl_of_truth_is_zero(capsys, volumes):
    dtm = volumes / "d.svf"
    run(capsys, "dtm", "--in", volumes / "truth.svf", "--out", dtm)
    code, out, _ = run(capsys, "loss", "--kind", "gsl", "--pred", volumes / "truth.svf", "--truth", volumes / "truth.svf", "--dtm", dtm)
    assert code == 0 and json.loads(out)["value"] <= 1e-12


def test_degenerate_truth_is_numeric_failure(capsys, tmp_path):
    # on a 2^3 grid every background voxel touches the border, so all DTMs vanish
    grid = Grid3((2, 2, 2))
    path = tmp_path / "empty.svf"
    write_volume(path, LabelVolume(grid, np.zeros((2, 2, 2), np.uint8), 2))
    code, _, err = run(capsys, "loss", "--kind", "gdl", "--pred", path, "--truth", path)
    assert code == 0  # background is present, so the loss is defined
    dtm = tmp_path / "d.svf"
    run(capsys, "dtm", "--in", path, "--out", dtm)
    code, _, err = run(capsys, "loss", "--kind", "gsl", "--pred", path, "--truth", path, "--dtm", dtm)
    assert code == 3 and "numeric failure" in err


def test_grad_check(capsys):
    code, out, _ = run(capsys, "grad-check", "--kind", "gsl", "--instances", "2", "--probes", "8")
    report = json.loads(out)
    assert code == 0 and report["passed"] and report["seed"] == 42


def test_grad_check_composite(capsys):
    code, out, _ = run(capsys, "grad-check", "--kind", "composite", "--alpha", "0.3", "--instances", "1", "--probes", "8")
    assert code == 0 and json.loads(out)["alpha"] == 0.3


def toy_config(path, **kw):
    cfg = {
        "scene": {"shape": [8, 8, 8], "spacing": [1.0, 1.0, 1.0],
                  "spheres": [{"center": [4.0, 4.0, 4.0], "radius": 2.5, "label": 1}],
                  "num_classes": 2},
        "coarse_factor": 2,
        "epochs": 5,
        "boundary_kind": "gsl",
    }
    cfg.update(kw)
    path.write_text(json.dumps(cfg))
    return path


def test_train_toy_is_byte_identical(capsys, tmp_path):
    cfg = toy_config(tmp_path / "cfg.json")
    first = run(capsys, "train-toy", "--config", cfg)
    second = run(capsys, "train-toy", "--config", cfg)
    assert first[0] == 0 and first[1] == second[1]
    assert len(json.loads(first[1])["epochs"]) == 5


def test_train_toy_writes_only_out(capsys, tmp_path, monkeypatch):
    work = tmp_path / "work"
    work.mkdir()
    monkeypatch.chdir(work)
    cfg = toy_config(tmp_path / "cfg.json")
    out = tmp_path / "report.json"
    before = set(os.listdir(tmp_path))
    code, text, _ = run(capsys, "train-toy", "--config", cfg, "--out", out)
    assert code == 0 and json.loads(text)["out"] == str(out)
    assert set(os.listdir(tmp_path)) - before == {"report.json"}
    assert os.listdir(work) == []
    assert json.loads(out.read_text())["config"]["epochs"] == 5


def test_train_toy_seed_override(capsys, tmp_path):
    cfg = toy_config(tmp_path / "cfg.json")
    _, a, _ = run(capsys, "train-toy", "--config", cfg, "--seed", "7")
    assert json.loads(a)["config"]["seed"] == 7


def test_train_toy_unknown_key(capsys, tmp_path):
    cfg = toy_config(tmp_path / "cfg.json", learning_rate=1.0)
    code, _, _ = run(capsys, "train-toy", "--config", cfg)
    assert code == 2


def test_experiment(capsys, tmp_path):
    sweep = {
        "scene": json.loads(toy_config(tmp_path / "c.json").read_text())["scene"],
        "base": {"coarse_factor": 2, "epochs": 3},
        "variants": [{"name": "region"}, {"name": "surface", "boundary_kind": "gsl"}],
        "seeds": [1, 2],
    }
    path = tmp_path / "sweep.json"
    path.write_text(json.dumps(sweep))
    out = tmp_path / "table.json"
    code, text, _ = run(capsys, "experiment", "--config", path, "--out", out)
    table = json.loads(text)
    assert code == 0 and len(table["rows"]) == 4
    assert set(table["summary"]) == {"region", "surface"}
    assert json.loads(out.read_text()) == table
