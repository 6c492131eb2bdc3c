import json
import shutil

import numpy as np
import pytest

from mdir.cli import load_run_config, main, UsageError
from mdir.synth.dataset import Manifest, load_image, save_image
from mdir.synth.scenes import make_scenes


@pytest.fixture(scope="module")
def clean_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("clean")
    for i, img in enumerate(make_scenes(10, 40, seed=9)):
        save_image(d / f"img{i:02d}.png", img[:, :, 4:36] if i % 2 else img)
    return d


@pytest.fixture(scope="module")
def dataset(tmp_path_factory, clean_dir):
    out = tmp_path_factory.mktemp("data") / "cir"
    assert main(["synth", "--clean-dir", str(clean_dir), "--out-dir", str(out),
                 "--per-category", "2", "--test-per-category", "1", "--size", "32"]) == 0
    return out


@pytest.fixture(scope="module")
def trained(tmp_path_factory, dataset):
    runs = tmp_path_factory.mktemp("runs")
    assert main(["train-classifier", "--data", str(dataset), "--run-dir", str(runs / "clf"),
                 "--classifier-epochs", "1"]) == 0
    assert main(["train", "--data", str(dataset), "--run-dir", str(runs / "net"),
                 "--classifier", str(runs / "clf" / "classifier.ckpt"), "--max-steps", "3",
                 "--crop", "16", "--batch-size", "2", "--base-channels", "8", "--res-blocks", "1"]) == 0
    return runs


def test_synth_counts_and_verify(tmp_path, clean_dir, capsys):
    out = tmp_path / "ds"
    assert main(["synth", "--clean-dir", str(clean_dir), "--out-dir", str(out),
                 "--per-category", "10", "--test-per-category", "0", "--size", "32"]) == 0
    assert "70 files written" in capsys.readouterr().out
    assert len(list(out.glob("*/train/*.png"))) == 70
    assert (out / "config.json").exists()
    assert main(["synth", "--clean-dir", str(clean_dir), "--out-dir", str(out), "--per-category", "10",
                 "--test-per-category", "0", "--size", "32", "--verify"]) == 0
    assert "0 files changed" in capsys.readouterr().out


def test_manifest_rows_round_trip(dataset):
    for line in (dataset / "manifest.jsonl").read_text().splitlines():
        assert json.dumps(json.loads(line), sort_keys=True) == line


def test_synth_procedural(tmp_path):
    assert main(["synth", "--procedural", "3", "--out-dir", str(tmp_path / "p"),
                 "--per-category", "1", "--test-per-category", "0", "--size", "32"]) == 0
    assert len(Manifest.read(tmp_path / "p").entries) == 7


def test_synth_bad_input_cleans_up(tmp_path):
    empty = tmp_path / "empty"
    empty.mkdir()
    out = tmp_path / "never"
    assert main(["synth", "--clean-dir", str(empty), "--out-dir", str(out), "--per-category", "1"]) == 2
    assert not out.exists()
    assert main(["synth", "--clean-dir", str(tmp_path / "nope"), "--out-dir", str(out)]) == 2
    assert main(["synth", "--out-dir", str(out), "--procedural", "2", "--per-category", "0",
                 "--test-per-category", "0"]) == 2


def test_config_unknown_key(tmp_path, dataset):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"train": {"learning_rate": 1}}))
    assert main(["train", "--data", str(dataset), "--run-dir", str(tmp_path / "r"),
                 "--config", str(bad), "--no-cfe"]) == 2
    bad.write_text(json.dumps({"optimizer": {}}))
    with pytest.raises(UsageError):
        load_run_config(bad)
    good = tmp_path / "good.json"
    good.write_text(json.dumps({"train": {"epochs": 3}}))
    cfg = load_run_config(good, {"train": {"epochs": 5}})
    assert cfg["train"]["epochs"] == 5 and cfg["net"]["base_channels"] == 16


def test_missing_files_exit_2(tmp_path, dataset):
    assert main(["eval", "--data", str(dataset), "--checkpoint", str(tmp_path / "none.ckpt")]) == 2
    assert main(["eval", "--data", str(tmp_path / "nodata")]) == 2
    assert main(["infer", "--checkpoint", str(tmp_path / "none.ckpt"), "--input", str(tmp_path / "x.png"),
                 "--output", str(tmp_path / "y.png")]) == 2
    assert main(["train", "--data", str(dataset), "--run-dir", str(tmp_path / "r")]) == 2


def test_eval_ground_truth_predictions(tmp_path, dataset, capsys):
    m = Manifest.read(dataset)
    preds = tmp_path / "preds"
    for e in m.split("test"):
        (preds / e["degraded"]).parent.mkdir(parents=True, exist_ok=True)
        shutil.copy(dataset / e["clean"], preds / e["degraded"])
    out = tmp_path / "report.json"
    assert main(["eval", "--data", str(dataset), "--predictions", str(preds), "--out", str(out)]) == 0
    doc = json.loads(out.read_text())
    for row in doc["categories"].values():
        assert abs(row["ssim"] - 1.0) < 1e-9 and row["psnr_inf"] is True


def test_train_run_directory(trained):
    net = trained / "net"
    for name in ("config.json", "train_log.csv", "last.ckpt", "report.json"):
        assert (net / name).exists(), name
    assert (trained / "clf" / "classifier.ckpt").exists()
    assert json.loads((net / "config.json").read_text())["train"]["max_steps"] == 3
    assert (net / "train_log.csv").read_text().splitlines()[0] == "step,epoch,lr,loss"


def test_eval_and_infer_from_checkpoint(tmp_path, trained, dataset):
    ckpt = trained / "net" / "last.ckpt"
    assert main(["eval", "--data", str(dataset), "--checkpoint", str(ckpt), "--out", str(tmp_path / "r.json")]) == 0
    assert "average" in json.loads((tmp_path / "r.json").read_text())
    src = tmp_path / "in.png"
    save_image(src, np.random.default_rng(0).random((3, 24, 36)))
    assert main(["infer", "--checkpoint", str(ckpt), "--input", str(src), "--output", str(tmp_path / "o.png")]) == 0
    assert load_image(tmp_path / "o.png").shape == (3, 24, 36)
    save_image(src, np.random.default_rng(0).random((3, 30, 36)))
    assert main(["infer", "--checkpoint", str(ckpt), "--input", str(src), "--output", str(tmp_path / "o.png")]) == 2


def test_train_resume_flag(tmp_path, trained, dataset):
    assert main(["train", "--data", str(dataset), "--run-dir", str(trained / "net"),
                 "--classifier", str(trained / "clf" / "classifier.ckpt"), "--max-steps", "4",
                 "--crop", "16", "--batch-size", "2", "--base-channels", "8", "--res-blocks", "1",
                 "--resume", str(trained / "net" / "last.ckpt")]) == 0
    assert main(["train", "--data", str(dataset), "--run-dir", str(tmp_path),
                 "--no-cfe", "--resume", str(tmp_path / "missing.ckpt")]) == 2


def test_gradcheck_command(capsys):
    assert main(["gradcheck", "--cases", "1"]) == 0
    assert "checks passed" in capsys.readouterr().out
