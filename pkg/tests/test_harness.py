import json
from pathlib import Path

import numpy as np
import pytest

from axialseg import harness, metrics
from axialseg import model as M
from axialseg import optim as O
from axialseg.data import (
    DatasetManifest,
    ManifestEntry,
    PhantomSpec,
    Volume,
    generate_phantom,
    make_folds,
    nifti,
    stratified_split,
)
from axialseg.errors import LeakageError, ManifestError, ParameterError

SMOKE_SPEC = PhantomSpec(shape=(28, 28, 24))


def write_dataset(root: Path, count: int, seed: int = 0, spec: PhantomSpec = SMOKE_SPEC):
    (root / "images").mkdir(parents=True, exist_ok=True)
    (root / "masks").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(count):
        image, mask = generate_phantom(spec, np.random.default_rng((seed, i)))
        sid = f"p{i:04d}"
        nifti.write_volume(root / "images" / f"{sid}.nii", Volume(image.data.astype(np.float32)))
        nifti.write_volume(root / "masks" / f"{sid}.nii", mask)
        entries.append(
            ManifestEntry(id=sid, image=f"images/{sid}.nii", mask=f"masks/{sid}.nii")
        )
    manifest = DatasetManifest(entries=entries, meta={"seed": seed}, root=root)
    return manifest


def smoke_config(root: Path, out: Path, folds: int = 2, epochs: int = 3) -> harness.ExperimentConfig:
    return harness.ExperimentConfig(
        manifest=root / "manifest.json",
        output_dir=out,
        seed=11,
        folds=folds,
        model={"patch": [8, 8, 8], "hidden": 2, "depth": 2},
        schedule=O.TrainSchedule(epochs=epochs, decay_epoch=max(1, epochs - 1), batch_size=4),
        crop_margin=4,
    )


@pytest.fixture(scope="module")
def smoke_run(tmp_path_factory):
    """One shared K=2 smoke experiment over 8 phantoms plus 4 test phantoms."""
    root = tmp_path_factory.mktemp("dataset")
    manifest = write_dataset(root, 12)
    manifest = stratified_split(manifest, 4 / 12, np.random.default_rng(1))
    manifest = make_folds(manifest, k=2, rng=np.random.default_rng(2))
    manifest.save(root / "manifest.json")

    out = tmp_path_factory.mktemp("out")
    config = smoke_config(root, out)
    result = harness.run_cv(config)
    return root, out, config, result


def test_cv_out_of_fold_coverage(smoke_run):
    root, _, config, result = smoke_run
    manifest = DatasetManifest.load(root / "manifest.json")
    train_ids = {e.id for e in manifest.subset(split="train")}
    assert sorted(result.val_prediction_ids) == sorted(train_ids)
    assert len(result.val_report.per_sample) == len(train_ids) == 8


def test_cv_persists_artifacts(smoke_run):
    _, out, config, result = smoke_run
    for fold in range(config.folds):
        assert (out / "checkpoints" / f"fold{fold}.ckpt").exists()
    for sid in result.val_prediction_ids:
        assert (out / "predictions" / "val" / f"{sid}.nii").exists()
    assert (out / "reports" / "validation.json").exists()
    assert (out / "experiment.json").exists()
    summary = json.loads((out / "experiment.json").read_text())
    assert len(summary["folds"]) == 2
    assert len(summary["folds"][0]["history"]) == 3


def test_cv_best_checkpoint_matches_history(smoke_run):
    _, _, _, result = smoke_run
    for ckpt, history in zip(result.checkpoints, result.histories):
        assert ckpt.meta["val_dice"] == max(r.val_dice for r in history)


def test_cv_report_recomputable_from_persisted_predictions(smoke_run):
    root, out, _, result = smoke_run
    manifest = DatasetManifest.load(root / "manifest.json")
    recomputed = harness.evaluate_from_predictions(
        out / "predictions" / "val", manifest, "train", note=result.val_report.note
    )
    by_id = {s.id: s for s in recomputed.per_sample}
    for a in result.val_report.per_sample:
        b = by_id[a.id]
        for name in metrics.METRIC_NAMES:
            assert abs(getattr(a, name) - getattr(b, name)) < 1e-12
    assert abs(result.val_report.pearson_r - recomputed.pearson_r) < 1e-12
    for name in metrics.METRIC_NAMES:
        assert (
            abs(result.val_report.aggregate[name]["mean"] - recomputed.aggregate[name]["mean"])
            < 1e-12
        )


def test_cv_deterministic_rerun(smoke_run, tmp_path):
    root, out, config, result = smoke_run
    config2 = smoke_config(root, tmp_path / "out2")
    result2 = harness.run_cv(config2)
    for a, b in zip(result.checkpoints, result2.checkpoints):
        np.testing.assert_array_equal(a.params, b.params)
    assert result.val_report.to_dict() == result2.val_report.to_dict()


def test_cv_never_reads_test_files(smoke_run, tmp_path, monkeypatch):
    root, _, config, _ = smoke_run
    manifest = DatasetManifest.load(root / "manifest.json")
    test_paths = {
        str(manifest.image_path(e)) for e in manifest.subset(split="test")
    } | {str(manifest.mask_path(e)) for e in manifest.subset(split="test")}

    seen = []
    real_read = nifti.read_volume

    def audited(path):
        seen.append(str(path))
        return real_read(path)

    monkeypatch.setattr(nifti, "read_volume", audited)
    config2 = smoke_config(root, tmp_path / "out_audit")
    harness.run_cv(config2)
    assert seen, "audit hook never fired"
    assert not (set(seen) & test_paths), "cross-validation read test-split files"


def test_cv_refuses_leaked_manifest(smoke_run, tmp_path):
    root, _, _, _ = smoke_run
    manifest = DatasetManifest.load(root / "manifest.json")
    leaked_entries = [e for e in manifest.entries]
    for e in leaked_entries:
        if e.split == "test":
            e.fold = 0  # contaminate
    leaked = DatasetManifest(entries=leaked_entries, meta=manifest.meta, root=manifest.root)
    leaked_path = tmp_path / "leaked.json"
    leaked.save(leaked_path)
    config = smoke_config(root, tmp_path / "out_leak")
    config.manifest = leaked_path
    with pytest.raises(LeakageError):
        harness.run_cv(config)


def test_cv_rejects_fold_mismatch(smoke_run, tmp_path):
    root, _, _, _ = smoke_run
    config = smoke_config(root, tmp_path / "out_k3", folds=3)
    with pytest.raises(ManifestError):
        harness.run_cv(config)


def test_evaluate_test_scores_every_test_sample(smoke_run):
    root, out, config, result = smoke_run
    manifest = DatasetManifest.load(root / "manifest.json")
    report = harness.evaluate_test(result, manifest)
    assert len(report.per_sample) == len(manifest.subset(split="test")) == 4
    for e in manifest.subset(split="test"):
        assert (out / "predictions" / "test" / f"{e.id}.nii").exists()
    recomputed = harness.evaluate_from_predictions(
        out / "predictions" / "test", manifest, "test"
    )
    for a, b in zip(report.per_sample, recomputed.per_sample):
        assert abs(a.dice - b.dice) < 1e-12


def test_ensemble_not_far_below_any_single_fold(smoke_run):
    # averaging soft outputs must not catastrophically degrade test Dice
    root, _, config, result = smoke_run
    manifest = DatasetManifest.load(root / "manifest.json")
    mean_dice = {}
    for label, ckpts in [("ensemble", result.checkpoints)] + [
        (f"fold{i}", [c]) for i, c in enumerate(result.checkpoints)
    ]:
        scores = []
        for e in manifest.subset(split="test"):
            vol = nifti.read_volume(manifest.image_path(e))
            truth = nifti.read_volume(manifest.mask_path(e)).data.astype(np.float64)
            pred = harness.predict_volume(ckpts, vol, result.crop_box)
            scores.append(metrics.dice(pred.astype(np.float64), truth))
        mean_dice[label] = float(np.mean(scores))
    singles = [v for k, v in mean_dice.items() if k != "ensemble"]
    assert mean_dice["ensemble"] >= min(singles) - 0.02


# -- ensembling ----------------------------------------------------------------


def make_checkpoints(n, seed=0, identical=False):
    cfg = M.ModelConfig(crop_shape=(16, 16, 16), patch=(8, 8, 8), hidden=2, depth=1)
    ckpts = []
    for i in range(n):
        model = M.init_model(cfg, np.random.default_rng(seed if identical else (seed, i)))
        ckpts.append(model.to_checkpoint({"fold": i}))
    return ckpts


def test_ensemble_of_identical_checkpoints_is_single_prediction(rng):
    ckpts = make_checkpoints(2, identical=True)
    x = rng.standard_normal((16, 16, 16))
    single = M.predict(ckpts[0].build_model(), x)
    combined = harness.ensemble_predict(ckpts, x)
    np.testing.assert_array_equal(combined, single)


def test_ensemble_is_voxelwise_mean(rng):
    ckpts = make_checkpoints(3)
    x = rng.standard_normal((16, 16, 16))
    members = [M.predict(c.build_model(), x) for c in ckpts]
    combined = harness.ensemble_predict(ckpts, x)
    np.testing.assert_allclose(combined, np.mean(members, axis=0), atol=1e-12)
    assert np.all(combined >= np.min(members, axis=0) - 1e-15)
    assert np.all(combined <= np.max(members, axis=0) + 1e-15)
    assert combined.min() > 0.0 and combined.max() < 1.0


def test_ensemble_rejects_mismatched_configs(rng):
    a = make_checkpoints(1)[0]
    cfg_b = M.ModelConfig(crop_shape=(16, 16, 16), patch=(8, 8, 8), hidden=3, depth=1)
    b = M.init_model(cfg_b, np.random.default_rng(0)).to_checkpoint()
    with pytest.raises(ParameterError):
        harness.ensemble_predict([a, b], rng.standard_normal((16, 16, 16)))


# -- benchmark ------------------------------------------------------------------


def test_benchmark_reports_params_and_positive_time():
    cfg = M.ModelConfig(crop_shape=(16, 16, 16), patch=(8, 8, 8), hidden=2, depth=2)
    result = harness.benchmark(cfg, iterations=20)
    assert result["params"] == M.parameter_count(cfg)
    assert result["step_time_seconds"] > 0
    assert result["peak_memory_estimate_bytes"] > 0
    assert result["batch_size"] == 4


def test_benchmark_cost_grows_with_width():
    small = M.ModelConfig(crop_shape=(16, 16, 16), patch=(8, 8, 8), hidden=4, depth=2)
    big = M.ModelConfig(crop_shape=(16, 16, 16), patch=(8, 8, 8), hidden=16, depth=2)
    t_small = harness.benchmark(small, iterations=10)["step_time_seconds"]
    t_big = harness.benchmark(big, iterations=10)["step_time_seconds"]
    assert t_big > t_small
