"""Cross-validation experiment harness.

Orchestrates the protocol end to end: stratified folds come from the
manifest, each fold trains to its best validation checkpoint, out-of-fold
predictions are pooled into one validation report, and the untouched test
split is scored with the voxelwise mean of the per-fold best models. The
test split is never read during cross-validation; a contaminated manifest is
refused outright.

Per-fold best-checkpoint selection can over-estimate validation metrics; the
validation report carries that caveat in its note field, and the held-out
test report is the unbiased figure.
"""

from __future__ import annotations

import json
import logging
import resource
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import metrics
from . import model as M
from . import optim as O
from .data import nifti
from .data.augment import AugmentConfig
from .data.manifest import DatasetManifest
from .data.preprocess import CropBox, apply_crop, crop_bbox, embed_crop, z_normalize_array
from .errors import ManifestError, ParameterError

log = logging.getLogger(__name__)

VALIDATION_NOTE = (
    "Validation pools each fold's best-checkpoint predictions; per-fold best-model "
    "selection can over-estimate these metrics. The held-out test report is the "
    "unbiased figure."
)


@dataclass
class ExperimentConfig:
    """Everything one CV run needs; mirrors the JSON config file."""

    manifest: Path
    output_dir: Path
    seed: int = 0
    folds: int = 5
    model: dict = field(default_factory=dict)  # ModelConfig fields except crop_shape
    schedule: O.TrainSchedule = field(default_factory=O.TrainSchedule)
    augment: Optional[AugmentConfig] = None
    crop_margin: int = 10
    dtype: str = "float64"
    smooth: float = 1.0

    def __post_init__(self):
        self.manifest = Path(self.manifest)
        self.output_dir = Path(self.output_dir)
        if self.folds < 2:
            raise ParameterError(f"need at least 2 folds, got {self.folds}")
        if self.dtype not in ("float64", "float32"):
            raise ParameterError(f"dtype must be float64 or float32, got {self.dtype!r}")
        if self.crop_margin < 0:
            raise ParameterError("crop_margin must be >= 0")

    @property
    def np_dtype(self):
        return np.float64 if self.dtype == "float64" else np.float32

    def to_dict(self) -> dict:
        return {
            "manifest": str(self.manifest),
            "output_dir": str(self.output_dir),
            "seed": self.seed,
            "folds": self.folds,
            "model": dict(self.model),
            "schedule": self.schedule.to_dict(),
            "augment": self.augment.to_dict() if self.augment else None,
            "crop_margin": self.crop_margin,
            "dtype": self.dtype,
            "smooth": self.smooth,
        }

    @classmethod
    def from_dict(cls, d: dict, base_dir: Optional[Path] = None) -> "ExperimentConfig":
        base = Path(base_dir) if base_dir else Path(".")
        aug = d.get("augment")
        return cls(
            manifest=base / d["manifest"],
            output_dir=base / d["output_dir"],
            seed=int(d.get("seed", 0)),
            folds=int(d.get("folds", 5)),
            model=dict(d.get("model", {})),
            schedule=O.TrainSchedule.from_dict(d["schedule"]) if "schedule" in d else O.TrainSchedule(),
            augment=AugmentConfig.from_dict(aug) if aug else None,
            crop_margin=int(d.get("crop_margin", 10)),
            dtype=d.get("dtype", "float64"),
            smooth=float(d.get("smooth", 1.0)),
        )


def load_experiment_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"config {path} is not valid JSON: {exc}") from exc
    return ExperimentConfig.from_dict(raw, base_dir=path.parent)


@dataclass
class CVResult:
    config: ExperimentConfig
    model_config: M.ModelConfig
    crop_box: CropBox
    checkpoints: list  # per-fold best Checkpoint, fold order
    histories: list  # per-fold list[EpochRecord]
    val_report: metrics.MetricsReport
    val_prediction_ids: list


@dataclass
class _TrainData:
    entries: list
    images: dict  # id -> cropped, z-normalized float64 array
    masks: dict  # id -> cropped binary float64 array
    full_masks: dict  # id -> original-grid mask array
    full_shape: tuple
    crop_box: CropBox


def _load_training_split(manifest: DatasetManifest, margin: int) -> _TrainData:
    entries = manifest.subset(split="train")
    if not entries:
        raise ManifestError("manifest has no training entries; run split first")
    raw_images = {}
    raw_masks = {}
    for e in entries:
        raw_images[e.id] = nifti.read_volume(manifest.image_path(e))
        raw_masks[e.id] = nifti.read_volume(manifest.mask_path(e))
    full_shape = raw_images[entries[0].id].shape
    box = crop_bbox([raw_masks[e.id].data for e in entries], margin=margin)
    images = {
        e.id: z_normalize_array(apply_crop(raw_images[e.id].data, box)) for e in entries
    }
    masks = {
        e.id: apply_crop(raw_masks[e.id].data, box).astype(np.float64) for e in entries
    }
    full_masks = {e.id: raw_masks[e.id].data.astype(np.float64) for e in entries}
    return _TrainData(entries, images, masks, full_masks, full_shape, box)


def _model_config_for(config: ExperimentConfig, box: CropBox) -> M.ModelConfig:
    fields = dict(config.model)
    fields.pop("crop_shape", None)  # always derived from the crop box
    return M.ModelConfig(crop_shape=box.shape, **fields)


def _fold_sets(data: _TrainData, fold: int):
    train = [e for e in data.entries if e.fold != fold]
    val = [e for e in data.entries if e.fold == fold]
    if not val:
        raise ManifestError(f"fold {fold} has no validation entries")
    to_pairs = lambda ids: [(data.images[e.id], data.masks[e.id]) for e in ids]
    return train, val, to_pairs(train), to_pairs(val)


def train_fold(config: ExperimentConfig, data: _TrainData, model_cfg: M.ModelConfig, fold: int):
    """Train one fold; returns (best checkpoint, history, val entry list)."""
    _, val_entries, train_pairs, val_pairs = _fold_sets(data, fold)
    model = M.init_model(model_cfg, np.random.default_rng((config.seed, fold, 0)))
    if config.np_dtype != np.float64:
        model = model.astype(config.np_dtype)
    log.info("fold %d: %d train / %d val samples", fold, len(train_pairs), len(val_pairs))
    ckpt, history = O.train(
        model,
        train_pairs,
        val_pairs,
        config.schedule,
        augment=config.augment,
        rng=np.random.default_rng((config.seed, fold, 1)),
        smooth=config.smooth,
    )
    ckpt.meta.update({"fold": fold, "crop_box": data.crop_box.to_dict()})
    return ckpt, history, val_entries


def _predict_cropped(model: M.AxialMLPModel, image: np.ndarray) -> np.ndarray:
    return M.predict(model, image.astype(model.dtype, copy=False)).astype(np.float64)


def _persist_prediction(path: Path, pred_full: np.ndarray, voxel_size=(1.0, 1.0, 1.0)):
    path.parent.mkdir(parents=True, exist_ok=True)
    from .data.volume import Volume

    nifti.write_volume(path, Volume(pred_full, voxel_size))


def persist_fold_predictions(config: ExperimentConfig, data: _TrainData, ckpt, val_entries):
    """Predict a fold's validation entries with its best checkpoint, embed
    into the original grid and persist as float32; returns (id, array) pairs."""
    best_model = ckpt.build_model(config.np_dtype)
    out = config.output_dir
    results = []
    for e in val_entries:
        pred = _predict_cropped(best_model, data.images[e.id])
        full = embed_crop(pred.astype(np.float32), data.crop_box, data.full_shape)
        _persist_prediction(out / "predictions" / "val" / f"{e.id}.nii", full)
        results.append((e.id, full))
    return results


def run_cv(config: ExperimentConfig) -> CVResult:
    """The cross-validation protocol over the manifest's training split."""
    manifest = DatasetManifest.load(config.manifest)
    manifest.validate_no_leakage()
    data = _load_training_split(manifest, config.crop_margin)

    folds_present = sorted({e.fold for e in data.entries})
    if folds_present != list(range(config.folds)):
        raise ManifestError(
            f"manifest folds {folds_present} do not match configured k={config.folds}"
        )

    model_cfg = _model_config_for(config, data.crop_box)
    out = config.output_dir
    (out / "checkpoints").mkdir(parents=True, exist_ok=True)

    checkpoints = []
    histories = []
    pooled_pairs = []
    pooled_ids = []
    for fold in range(config.folds):
        ckpt, history, val_entries = train_fold(config, data, model_cfg, fold)
        M.save_checkpoint(out / "checkpoints" / f"fold{fold}.ckpt", ckpt)
        checkpoints.append(ckpt)
        histories.append(history)
        for sample_id, full in persist_fold_predictions(config, data, ckpt, val_entries):
            pooled_pairs.append((full.astype(np.float64), data.full_masks[sample_id]))
            pooled_ids.append(sample_id)

    val_report = metrics.evaluate(pooled_pairs, ids=pooled_ids, note=VALIDATION_NOTE)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    (out / "reports" / "validation.json").write_text(val_report.to_json())

    summary = {
        "config": config.to_dict(),
        "model_config": model_cfg.to_dict(),
        "crop_box": data.crop_box.to_dict(),
        "folds": [
            {
                "fold": i,
                "best_epoch": ckpt.meta["epoch"],
                "best_val_dice": ckpt.meta["val_dice"],
                "history": [r.to_dict() for r in hist],
            }
            for i, (ckpt, hist) in enumerate(zip(checkpoints, histories))
        ],
    }
    (out / "experiment.json").write_text(json.dumps(summary, indent=2))

    return CVResult(
        config=config,
        model_config=model_cfg,
        crop_box=data.crop_box,
        checkpoints=checkpoints,
        histories=histories,
        val_report=val_report,
        val_prediction_ids=pooled_ids,
    )


def ensemble_predict(checkpoints, image: np.ndarray, dtype=np.float64) -> np.ndarray:
    """Voxelwise mean of each checkpoint's soft prediction on one cropped volume."""
    if not checkpoints:
        raise ParameterError("ensemble_predict needs at least one checkpoint")
    cfg = checkpoints[0].config
    for c in checkpoints[1:]:
        if c.config != cfg:
            raise ParameterError("checkpoints disagree on model config; cannot ensemble")
    acc = None
    for c in checkpoints:
        pred = _predict_cropped(c.build_model(dtype), image)
        acc = pred if acc is None else acc + pred
    return acc / len(checkpoints)


def predict_volume(checkpoints, volume, crop_box: CropBox, dtype=np.float64) -> np.ndarray:
    """Full standalone pipeline for one volume: crop, normalize, ensemble, embed."""
    image = z_normalize_array(apply_crop(np.asarray(volume.data, dtype=np.float64), crop_box))
    pred = ensemble_predict(checkpoints, image, dtype=dtype)
    return embed_crop(pred.astype(np.float32), crop_box, volume.shape)


def evaluate_test(result: CVResult, manifest: DatasetManifest) -> metrics.MetricsReport:
    """Score the ensemble on the untouched test split; persists predictions."""
    manifest.validate_no_leakage()
    test_entries = manifest.subset(split="test")
    if not test_entries:
        raise ManifestError("manifest has no test entries")

    out = result.config.output_dir
    pairs = []
    ids = []
    for e in test_entries:
        vol = nifti.read_volume(manifest.image_path(e))
        truth = nifti.read_volume(manifest.mask_path(e)).data.astype(np.float64)
        full = predict_volume(result.checkpoints, vol, result.crop_box, result.config.np_dtype)
        _persist_prediction(out / "predictions" / "test" / f"{e.id}.nii", full)
        pairs.append((full.astype(np.float64), truth))
        ids.append(e.id)

    report = metrics.evaluate(pairs, ids=ids)
    (out / "reports").mkdir(parents=True, exist_ok=True)
    (out / "reports" / "test.json").write_text(report.to_json())
    return report


def evaluate_from_predictions(
    pred_dir, manifest: DatasetManifest, split: str, note: str = ""
) -> metrics.MetricsReport:
    """Recompute a report offline from persisted prediction volumes.

    `split` is "val" or "test"; the validation pool covers every sample of the
    manifest's training split (one out-of-fold prediction each).
    """
    pred_dir = Path(pred_dir)
    manifest_split = {"val": "train", "train": "train", "test": "test"}.get(split)
    if manifest_split is None:
        raise ParameterError(f"split must be 'val' or 'test', got {split!r}")
    entries = manifest.subset(split=manifest_split)
    if not entries:
        raise ManifestError(f"manifest has no '{manifest_split}' entries")
    pairs = []
    ids = []
    for e in entries:
        pred_path = pred_dir / f"{e.id}.nii"
        if not pred_path.exists():
            raise ManifestError(f"missing prediction for {e.id}: {pred_path}")
        pred = nifti.read_volume(pred_path).data.astype(np.float64)
        truth = nifti.read_volume(manifest.mask_path(e)).data.astype(np.float64)
        pairs.append((pred, truth))
        ids.append(e.id)
    return metrics.evaluate(pairs, ids=ids, note=note)


def benchmark(
    model_cfg: M.ModelConfig,
    batch_size: int = 4,
    iterations: int = 20,
    warmup: int = 3,
    dtype=np.float64,
    seed: int = 0,
) -> dict:
    """Median duration of one training step (forward + backward + update).

    Wall-clock numbers are hardware-specific; treat them as trends, not
    reference values. Memory is the process peak RSS, an upper estimate.
    """
    if iterations < 1:
        raise ParameterError("iterations must be >= 1")
    rng = np.random.default_rng(seed)
    model = M.init_model(model_cfg, rng)
    if dtype != np.float64:
        model = model.astype(dtype)
    x = rng.standard_normal((batch_size,) + model_cfg.crop_shape).astype(dtype)
    y = (rng.random((batch_size,) + model_cfg.crop_shape) > 0.98).astype(dtype)
    opt = O.Adam(model.named_parameters())

    def step():
        opt.zero_grad()
        loss = M.batch_soft_dice_loss(M.forward(model, x, "train", rng), y)
        loss.backward()
        opt.step(1e-3)

    for _ in range(warmup):
        step()
    times = []
    for _ in range(iterations):
        t0 = time.perf_counter()
        step()
        times.append(time.perf_counter() - t0)

    peak_kb = resource.getrusage(resource.RUSAGE_SELF).ru_maxrss
    return {
        "params": M.parameter_count(model_cfg),
        "step_time_seconds": float(np.median(times)),
        "peak_memory_estimate_bytes": int(peak_kb) * 1024,
        "batch_size": batch_size,
        "iterations": iterations,
        "dtype": str(np.dtype(dtype)),
    }
