import json
from pathlib import Path

import numpy as np
import pytest

from axialseg import cli
from axialseg.data import DatasetManifest, nifti


def run(argv):
    return cli.main(argv)


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth -> split -> cv --test, shared by the read-only CLI tests."""
    ws = tmp_path_factory.mktemp("ws")
    data_dir = ws / "data"
    spec = {
        "shape": [28, 28, 24],
        "noise_sd": 0.03,
    }
    spec_path = ws / "phantom.json"
    spec_path.write_text(json.dumps(spec))

    assert run(["synth", "--spec", str(spec_path), "--count", "12", "--seed", "3",
                "--out", str(data_dir)]) == 0
    assert run(["split", "--manifest", str(data_dir / "manifest.json"),
                "--test-fraction", "0.25", "--folds", "2", "--seed", "5"]) == 0

    config = {
        "manifest": str(data_dir / "manifest.json"),
        "output_dir": str(ws / "out"),
        "seed": 9,
        "folds": 2,
        "model": {"patch": [8, 8, 8], "hidden": 2, "depth": 2},
        "schedule": {"epochs": 3, "lr_initial": 0.01, "lr_after": 0.001,
                     "decay_epoch": 2, "batch_size": 4},
        "crop_margin": 4,
    }
    config_path = ws / "config.json"
    config_path.write_text(json.dumps(config))
    assert run(["cv", "--config", str(config_path), "--test"]) == 0
    return ws, data_dir, config_path


def test_synth_outputs(workspace):
    ws, data_dir, _ = workspace
    manifest = DatasetManifest.load(data_dir / "manifest.json")
    assert len(manifest.entries) == 12
    strata = {e.strata for e in manifest.entries}
    assert strata == {"small", "medium", "large"}
    sample = manifest.entries[0]
    img = nifti.read_volume(manifest.image_path(sample))
    msk = nifti.read_volume(manifest.mask_path(sample))
    assert img.shape == (28, 28, 24) and msk.shape == (28, 28, 24)
    assert set(np.unique(msk.data)) <= {0, 1}


def test_split_assignments(workspace):
    _, data_dir, _ = workspace
    manifest = DatasetManifest.load(data_dir / "manifest.json")
    assert len(manifest.subset(split="test")) == 3
    assert len(manifest.subset(split="train")) == 9
    manifest.validate_no_leakage()
    folds = {e.fold for e in manifest.subset(split="train")}
    assert folds == {0, 1}


def test_cv_artifacts(workspace):
    ws, _, _ = workspace
    out = ws / "out"
    assert (out / "checkpoints" / "fold0.ckpt").exists()
    assert (out / "checkpoints" / "fold1.ckpt").exists()
    assert (out / "reports" / "validation.json").exists()
    assert (out / "reports" / "test.json").exists()
    assert len(list((out / "predictions" / "val").glob("*.nii"))) == 9
    assert len(list((out / "predictions" / "test").glob("*.nii"))) == 3


def test_eval_and_report_round_trip(workspace, tmp_path, capsys):
    ws, data_dir, _ = workspace
    report_path = tmp_path / "val_report.json"
    assert run(["eval", "--pred", str(ws / "out" / "predictions" / "val"),
                "--manifest", str(data_dir / "manifest.json"),
                "--split", "val", "--out", str(report_path)]) == 0
    parsed = json.loads(report_path.read_text())
    assert parsed["n"] == 9

    capsys.readouterr()
    assert run(["report", "--in", str(report_path), "--format", "table"]) == 0
    table = capsys.readouterr().out
    assert "Dice" in table and "MAVER" in table

    assert run(["report", "--in", str(report_path), "--format", "csv"]) == 0
    csv = capsys.readouterr().out
    assert csv.splitlines()[0].startswith("id,dice")
    assert len(csv.splitlines()) == 11  # header + 9 samples + mean


def test_eval_split_val_means_train_pool(workspace, tmp_path):
    # the out-of-fold pool covers exactly the training split
    ws, data_dir, _ = workspace
    report_path = tmp_path / "r.json"
    run(["eval", "--pred", str(ws / "out" / "predictions" / "val"),
         "--manifest", str(data_dir / "manifest.json"),
         "--split", "val", "--out", str(report_path)])
    manifest = DatasetManifest.load(data_dir / "manifest.json")
    ids = {s["id"] for s in json.loads(report_path.read_text())["per_sample"]}
    assert ids == {e.id for e in manifest.subset(split="train")}


def test_predict_single_volume(workspace, tmp_path):
    ws, data_dir, _ = workspace
    manifest = DatasetManifest.load(data_dir / "manifest.json")
    entry = manifest.subset(split="test")[0]
    out_path = tmp_path / "pred.nii"
    assert run(["predict", "--checkpoints", str(ws / "out" / "checkpoints"),
                "--input", str(manifest.image_path(entry)),
                "--out", str(out_path)]) == 0
    pred = nifti.read_volume(out_path)
    assert pred.shape == (28, 28, 24)
    assert pred.data.dtype == np.float32
    assert 0.0 <= pred.data.min() and pred.data.max() <= 1.0
    # matches the persisted ensemble prediction for the same sample
    persisted = nifti.read_volume(ws / "out" / "predictions" / "test" / f"{entry.id}.nii")
    np.testing.assert_array_equal(pred.data, persisted.data)


def test_train_single_fold_composes_with_eval(workspace, tmp_path):
    ws, data_dir, _ = workspace
    config = json.loads((ws / "config.json").read_text())
    config["output_dir"] = str(tmp_path / "fold_out")
    config_path = tmp_path / "config.json"
    config_path.write_text(json.dumps(config))

    for fold in (0, 1):
        assert run(["train", "--config", str(config_path), "--fold", str(fold)]) == 0
        assert (tmp_path / "fold_out" / "checkpoints" / f"fold{fold}.ckpt").exists()

    report_path = tmp_path / "val.json"
    assert run(["eval", "--pred", str(tmp_path / "fold_out" / "predictions" / "val"),
                "--manifest", str(data_dir / "manifest.json"),
                "--split", "val", "--out", str(report_path)]) == 0
    assert json.loads(report_path.read_text())["n"] == 9

    # per-fold training reproduces the cv command's checkpoints exactly
    for fold in (0, 1):
        a = (tmp_path / "fold_out" / "checkpoints" / f"fold{fold}.ckpt").read_bytes()
        b = (ws / "out" / "checkpoints" / f"fold{fold}.ckpt").read_bytes()
        assert a == b


def test_baseline_commands(workspace, tmp_path):
    _, data_dir, _ = workspace
    mean_path = tmp_path / "mean.nii"
    opt_path = tmp_path / "opt.nii"
    assert run(["baseline", "--manifest", str(data_dir / "manifest.json"),
                "--kind", "mean", "--out", str(mean_path)]) == 0
    assert run(["baseline", "--manifest", str(data_dir / "manifest.json"),
                "--kind", "optimized", "--steps", "20", "--out", str(opt_path)]) == 0
    mean = nifti.read_volume(mean_path).data
    opt = nifti.read_volume(opt_path).data
    assert mean.min() >= 0 and mean.max() <= 1
    assert opt.min() >= 0 and opt.max() <= 1
    meta = json.loads(Path(str(opt_path) + ".json").read_text())
    assert meta["provenance"] == "optimized" and meta["steps"] == 20


def test_bench_command(tmp_path, capsys):
    config = {
        "manifest": "unused.json",
        "output_dir": str(tmp_path / "o"),
        "model": {"crop_shape": [16, 16, 16], "patch": [8, 8, 8], "hidden": 2, "depth": 1},
        "schedule": {"epochs": 2, "lr_initial": 0.01, "lr_after": 0.001,
                     "decay_epoch": 1, "batch_size": 4},
    }
    path = tmp_path / "bench_config.json"
    path.write_text(json.dumps(config))
    assert run(["bench", "--config", str(path), "--iterations", "3"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["params"] > 0 and out["step_time_seconds"] > 0


# -- exit codes ---------------------------------------------------------------------


def test_usage_error_exit_code():
    assert run(["synth", "--count", "not-a-number", "--out", "x"]) == 1
    assert run(["definitely-not-a-command"]) == 1


def test_data_error_exit_code(tmp_path):
    bad = tmp_path / "bad.nii"
    bad.write_bytes(b"garbage")
    assert run(["predict", "--checkpoints", str(tmp_path), "--input", str(bad),
                "--out", str(tmp_path / "o.nii")]) == 2

    missing = tmp_path / "missing.json"
    assert run(["split", "--manifest", str(missing), "--test-fraction", "0.3"]) == 2


def test_malformed_manifest_exit_code(tmp_path):
    path = tmp_path / "manifest.json"
    path.write_text("{broken json")
    assert run(["split", "--manifest", str(path), "--test-fraction", "0.3"]) == 2
