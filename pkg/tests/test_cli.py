import csv
import json

import numpy as np
import pytest

from omnet import cli
from omnet.io import read_labels, read_volume

TINY = {"network": {"patch": [16, 16, 8], "base_channels": 2, "feature_channels": 4, "depth": 2},
        "schedule": {"stage_epochs": [1, 1, 1], "desk_scale": 4e-5, "batch_per_task": 2}}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    (root / "tiny.json").write_text(json.dumps(TINY))
    assert cli.main(["phantom", "--out", str(root / "train"), "--count", "2", "--shape", "32", "32", "16",
                     "--seed", "1"]) == 0
    assert cli.main(["phantom", "--out", str(root / "test"), "--count", "1", "--shape", "32", "32", "16",
                     "--seed", "2"]) == 0
    return root


def _pipeline(root, tag, attention="none"):
    run = root / tag
    assert cli.main(["train", "--data", str(root / "train"), "--out", str(run), "--config", str(root / "tiny.json"),
                     "--attention", attention, "--deterministic", "--seed", "3"]) == 0
    assert cli.main(["infer", "--model", str(run / "model.omw"), "--data", str(root / "test"),
                     "--out", str(run / "pred"), "--deterministic"]) == 0
    assert cli.main(["postprocess", "--pred", str(run / "pred"), "--data", str(root / "test"),
                     "--out", str(run / "pred")]) == 0
    assert cli.main(["eval", "--pred", str(run / "pred"), "--gt", str(root / "test"),
                     "--out", str(run / "eval")]) == 0
    return run


def test_full_pipeline_writes_artifacts(workspace):
    run = _pipeline(workspace, "cga", attention="cga")
    for name in ("model.omw", "trace.csv", "manifest.json"):
        assert (run / name).exists()
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["subcommand"] == "train" and manifest["deterministic"] is True
    pred = read_labels(run / "pred" / "case_000_pp.oml")
    assert pred.shape == (32, 32, 16) and set(np.unique(pred)) <= set(range(5))
    rows = list(csv.DictReader(open(run / "eval" / "metrics_overlap.csv")))
    assert rows[0]["case"] == "case_000" and "dice_complete" in rows[0]


def test_deterministic_runs_give_identical_metrics(workspace):
    a = _pipeline(workspace, "det_a")
    b = _pipeline(workspace, "det_b")
    strip = lambda m: {k: v for k, v in m.items() if k not in ("created", "arguments")}
    assert strip(json.loads((a / "manifest.json").read_text())) == strip(json.loads((b / "manifest.json").read_text()))
    assert (a / "eval" / "metrics_overlap.csv").read_bytes() == (b / "eval" / "metrics_overlap.csv").read_bytes()


def test_mc3_mode_and_dump_features(workspace):
    run = workspace / "mc3"
    assert cli.main(["train", "--data", str(workspace / "train"), "--out", str(run), "--config",
                     str(workspace / "tiny.json"), "--mode", "mc3", "--deterministic"]) == 0
    assert (run / "model.omw").exists()
    cga = workspace / "cga"
    if not (cga / "model.omw").exists():
        _pipeline(workspace, "cga", attention="cga")
    out = workspace / "features"
    assert cli.main(["dump-features", "--model", str(cga / "model.omw"),
                     "--input", str(workspace / "test" / "case_000.omv"), "--out", str(out), "--task", "2"]) == 0
    meta = json.loads((out / "features.json").read_text())["importance"]
    assert abs(sum(meta["m_t"]) - 1) < 1e-5 and abs(sum(meta["m_n"]) - 1) < 1e-5
    assert read_volume(out / "task2_ch00.omv").ndim == 4


def test_params_ratio(capsys):
    assert cli.main(["params"]) == 0
    report = json.loads(capsys.readouterr().out)
    assert report["mc3"] == 3 * report["mc1"] and report["mc3_over_mc1"] == 3.0
    assert report["omnet_minus_mc1"] == report["extra_heads"]


def test_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv(cli.OUTPUT_ENV, str(tmp_path / "env_out"))
    assert cli.main(["phantom", "--count", "1", "--shape", "32", "32", "16"]) == 0
    assert (tmp_path / "env_out" / "case_000.omv").exists()
    assert (tmp_path / "env_out" / "manifest.json").exists()


def test_unknown_flag_exits_2(capsys):
    assert cli.main(["phantom", "--bogus"]) == 2
    assert cli.main(["nonsense"]) == 2


def test_domain_errors_exit_1(tmp_path, monkeypatch, capsys):
    monkeypatch.delenv(cli.OUTPUT_ENV, raising=False)
    assert cli.main(["phantom", "--count", "1"]) == 1  # no output directory
    assert cli.main(["train", "--data", str(tmp_path / "missing"), "--out", str(tmp_path / "o")]) == 1
    bad = tmp_path / "bad"
    bad.mkdir()
    (bad / "case_000.omv").write_bytes(b"nope")
    assert cli.main(["infer", "--model", str(bad / "case_000.omv"), "--data", str(bad), "--out", str(tmp_path)]) == 1
    assert "error" in capsys.readouterr().err
