"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data or parse error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import baselines as bl
from . import harness, metrics
from . import model as M
from .data import (
    DatasetManifest,
    ManifestEntry,
    PhantomSpec,
    Volume,
    generate_phantom,
    make_folds,
    nifti,
    stratified_split,
)
from .data.phantom import STRATA_SCALES
from .data.preprocess import CropBox
from .errors import (
    AxialsegError,
    ManifestError,
    NiftiParseError,
    NumericalError,
    UndefinedValueError,
)

log = logging.getLogger("axialseg")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_NUMERIC = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _load_spec(path) -> PhantomSpec:
    if path is None:
        return PhantomSpec()
    try:
        return PhantomSpec.from_dict(json.loads(Path(path).read_text()))
    except json.JSONDecodeError as exc:
        raise ManifestError(f"phantom spec {path} is not valid JSON: {exc}") from exc
    except TypeError as exc:
        raise ManifestError(f"phantom spec {path} has unknown fields: {exc}") from exc


def cmd_synth(args) -> int:
    spec = _load_spec(args.spec)
    out = Path(args.out)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)
    strata_cycle = sorted(STRATA_SCALES)
    entries = []
    for i in range(args.count):
        label = strata_cycle[i % len(strata_cycle)]
        sample_spec = PhantomSpec.from_dict({**spec.to_dict(), "strata": label})
        image, mask = generate_phantom(sample_spec, np.random.default_rng((args.seed, i)))
        sid = f"p{i:04d}"
        nifti.write_volume(out / "images" / f"{sid}.nii", Volume(image.data.astype(np.float32), image.voxel_size))
        nifti.write_volume(out / "masks" / f"{sid}.nii", mask)
        entries.append(
            ManifestEntry(
                id=sid, image=f"images/{sid}.nii", mask=f"masks/{sid}.nii", strata=label
            )
        )
    manifest = DatasetManifest(
        entries=entries, meta={"seed": args.seed, "spec": spec.to_dict()}, root=out
    )
    manifest.save(out / "manifest.json")
    print(f"wrote {args.count} phantoms and manifest.json to {out}")
    return EXIT_OK


def cmd_split(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    manifest = stratified_split(manifest, args.test_fraction, np.random.default_rng((args.seed, 0)))
    manifest = make_folds(manifest, k=args.folds, rng=np.random.default_rng((args.seed, 1)))
    manifest.save(args.manifest)
    n_train = len(manifest.subset(split="train"))
    n_test = len(manifest.subset(split="test"))
    print(f"split {args.manifest}: {n_train} train / {n_test} test, {args.folds} folds")
    return EXIT_OK


def cmd_train(args) -> int:
    config = harness.load_experiment_config(args.config)
    manifest = DatasetManifest.load(config.manifest)
    manifest.validate_no_leakage()
    data = harness._load_training_split(manifest, config.crop_margin)
    model_cfg = harness._model_config_for(config, data.crop_box)
    ckpt, history, val_entries = harness.train_fold(config, data, model_cfg, args.fold)
    ckpt_dir = config.output_dir / "checkpoints"
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    path = ckpt_dir / f"fold{args.fold}.ckpt"
    M.save_checkpoint(path, ckpt)
    harness.persist_fold_predictions(config, data, ckpt, val_entries)
    print(
        f"fold {args.fold}: best epoch {ckpt.meta['epoch']} "
        f"val_dice {ckpt.meta['val_dice']:.4f} -> {path}"
    )
    return EXIT_OK


def cmd_cv(args) -> int:
    config = harness.load_experiment_config(args.config)
    result = harness.run_cv(config)
    print(metrics.format_table(result.val_report, label="validation"))
    if args.test:
        manifest = DatasetManifest.load(config.manifest)
        report = harness.evaluate_test(result, manifest)
        print(metrics.format_table(report, label="test"))
    print(f"artifacts in {config.output_dir}")
    return EXIT_OK


def cmd_predict(args) -> int:
    ckpt_dir = Path(args.checkpoints)
    paths = sorted(ckpt_dir.glob("fold*.ckpt"))
    if not paths:
        raise ManifestError(f"no fold*.ckpt files in {ckpt_dir}")
    checkpoints = [M.load_checkpoint(p) for p in paths]
    box_dict = checkpoints[0].meta.get("crop_box")
    if box_dict is None:
        raise ManifestError("checkpoint carries no crop box; cannot place predictions")
    box = CropBox.from_dict(box_dict)
    volume = nifti.read_volume(args.input)
    pred = harness.predict_volume(checkpoints, volume, box)
    nifti.write_volume(args.out, Volume(pred, volume.voxel_size))
    print(f"wrote soft mask {args.out} (ensemble of {len(checkpoints)})")
    return EXIT_OK


def cmd_baseline(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    train = manifest.subset(split="train")
    if not train:
        raise ManifestError("manifest has no training entries; run split first")
    masks = [nifti.read_volume(manifest.mask_path(e)).data.astype(np.float64) for e in train]
    if args.kind == "mean":
        result = bl.mean_mask(masks)
    else:
        result = bl.optimized_mask(masks, steps=args.steps, lr=args.lr)
    result.source = str(args.manifest)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    nifti.write_volume(out, Volume(result.values.astype(np.float32)))
    sidecar = {
        "provenance": result.provenance,
        "source": result.source,
        **result.meta,
    }
    Path(str(out) + ".json").write_text(json.dumps(sidecar, indent=2))
    print(f"wrote {args.kind} mask ({len(masks)} training masks) to {out}")
    return EXIT_OK


def cmd_eval(args) -> int:
    manifest = DatasetManifest.load(args.manifest)
    report = harness.evaluate_from_predictions(args.pred, manifest, args.split)
    Path(args.out).write_text(report.to_json())
    print(f"evaluated {len(report.per_sample)} {args.split} samples -> {args.out}")
    return EXIT_OK


def cmd_report(args) -> int:
    try:
        report = metrics.MetricsReport.from_json(Path(args.infile).read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"report file is not valid JSON: {exc}") from exc
    if args.format == "table":
        print(metrics.format_table(report, label=args.label))
    else:
        print(metrics.format_csv(report))
    return EXIT_OK


def cmd_bench(args) -> int:
    config = harness.load_experiment_config(args.config)
    fields = dict(config.model)
    crop = tuple(fields.pop("crop_shape", (102, 94, 76)))
    model_cfg = M.ModelConfig(crop_shape=crop, **fields)
    result = harness.benchmark(
        model_cfg,
        iterations=args.iterations,
        dtype=config.np_dtype,
        seed=config.seed,
    )
    print(json.dumps(result, indent=2))
    return EXIT_OK


def build_parser() -> _Parser:
    parser = _Parser(prog="axialseg", description=__doc__)
    parser.add_argument("--version", action="version", version=f"axialseg {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate phantom volumes and a manifest")
    p.add_argument("--spec", help="phantom spec JSON (defaults to the built-in spec)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("split", help="assign train/test and CV folds in place")
    p.add_argument("--manifest", required=True)
    p.add_argument("--test-fraction", type=float, required=True)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_split)

    p = sub.add_parser("train", help="train a single cross-validation fold")
    p.add_argument("--config", required=True)
    p.add_argument("--fold", type=int, required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("cv", help="run the full cross-validation protocol")
    p.add_argument("--config", required=True)
    p.add_argument("--test", action="store_true", help="also ensemble-score the test split")
    p.set_defaults(fn=cmd_cv)

    p = sub.add_parser("predict", help="ensemble-predict one volume")
    p.add_argument("--checkpoints", required=True, help="directory with fold*.ckpt")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_predict)

    p = sub.add_parser("baseline", help="compute an image-free constant-mask baseline")
    p.add_argument("--manifest", required=True)
    p.add_argument("--kind", choices=("mean", "optimized"), required=True)
    p.add_argument("--steps", type=int, default=100)
    p.add_argument("--lr", type=float, default=1.0)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_baseline)

    p = sub.add_parser("eval", help="score persisted predictions against a manifest")
    p.add_argument("--pred", required=True, help="directory of <id>.nii predictions")
    p.add_argument("--manifest", required=True)
    p.add_argument("--split", choices=("val", "test"), required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="render a report JSON as a table or CSV")
    p.add_argument("--in", dest="infile", metavar="IN", required=True)
    p.add_argument("--format", choices=("table", "csv"), default="table")
    p.add_argument("--label", default="model")
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("bench", help="time one training step for a config")
    p.add_argument("--config", required=True)
    p.add_argument("--iterations", type=int, default=20)
    p.set_defaults(fn=cmd_bench)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(message)s", stream=sys.stderr)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.fn(args)
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (NiftiParseError, ManifestError, UndefinedValueError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except AxialsegError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    raise SystemExit(main())
