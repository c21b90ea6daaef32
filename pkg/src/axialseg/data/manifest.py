"""Dataset manifests: file listings with strata labels, train/test split and
K-fold assignments, serialized as JSON so every method reuses identical splits."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import LeakageError, ManifestError, ParameterError


@dataclass
class ManifestEntry:
    id: str
    image: str  # path relative to the manifest file
    mask: str
    strata: str = "all"
    split: Optional[str] = None  # "train" | "test"
    fold: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image": self.image,
            "mask": self.mask,
            "strata": self.strata,
            "split": self.split,
            "fold": self.fold,
        }


@dataclass
class DatasetManifest:
    entries: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)
    root: Optional[Path] = None  # directory paths are relative to; not serialized

    def __post_init__(self):
        ids = [e.id for e in self.entries]
        if len(set(ids)) != len(ids):
            dupes = sorted({i for i in ids if ids.count(i) > 1})
            raise ManifestError(f"duplicate entry ids: {dupes}")

    def image_path(self, entry: ManifestEntry) -> Path:
        return (self.root or Path(".")) / entry.image

    def mask_path(self, entry: ManifestEntry) -> Path:
        return (self.root or Path(".")) / entry.mask

    def subset(self, split: Optional[str] = None, fold: Optional[int] = None) -> list:
        out = self.entries
        if split is not None:
            out = [e for e in out if e.split == split]
        if fold is not None:
            out = [e for e in out if e.fold == fold]
        return list(out)

    @property
    def fold_count(self) -> int:
        folds = {e.fold for e in self.entries if e.fold is not None}
        return len(folds)

    def validate_no_leakage(self) -> None:
        leaked = [e.id for e in self.entries if e.split == "test" and e.fold is not None]
        if leaked:
            raise LeakageError(f"test entries assigned to CV folds: {leaked}")

    def to_dict(self) -> dict:
        return {"meta": self.meta, "entries": [e.to_dict() for e in self.entries]}

    def save(self, path) -> None:
        path = Path(path)
        path.write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        path = Path(path)
        try:
            raw = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ManifestError(f"manifest {path} is not valid JSON: {exc}") from exc
        try:
            entries = [ManifestEntry(**e) for e in raw["entries"]]
        except (KeyError, TypeError) as exc:
            raise ManifestError(f"manifest {path} has malformed entries: {exc}") from exc
        return cls(entries=entries, meta=raw.get("meta", {}), root=path.parent)


def _by_stratum(entries) -> dict:
    groups: dict = {}
    for e in entries:
        groups.setdefault(e.strata, []).append(e)
    return dict(sorted(groups.items()))


def stratified_split(
    manifest: DatasetManifest, test_fraction: float, rng: np.random.Generator
) -> DatasetManifest:
    """Assign train/test per stratum, proportionally within one sample.

    Largest-remainder apportionment of round(N * test_fraction) test slots
    across strata, then a seeded shuffle inside each stratum. Every stratum's
    test count is within one sample of its exact quota.
    """
    if not 0.0 < test_fraction < 1.0:
        raise ParameterError(f"test_fraction must be in (0, 1), got {test_fraction}")
    entries = manifest.entries
    if not entries:
        raise ManifestError("cannot split an empty manifest")
    groups = _by_stratum(entries)
    n_test_total = int(round(len(entries) * test_fraction))
    if n_test_total == 0 or n_test_total == len(entries):
        raise ParameterError(
            f"test_fraction {test_fraction} leaves an empty split for {len(entries)} entries"
        )

    quotas = {s: len(g) * test_fraction for s, g in groups.items()}
    counts = {s: int(np.floor(q)) for s, q in quotas.items()}
    remaining = n_test_total - sum(counts.values())
    if remaining < 0:
        raise ParameterError("inconsistent stratification quotas")
    leftovers = sorted(groups, key=lambda s: (-(quotas[s] - counts[s]), s))
    for s in leftovers[:remaining]:
        counts[s] += 1
    for s, g in groups.items():
        if counts[s] > len(g):
            raise ParameterError(f"stratum {s!r} too small for its test quota")

    assignment = {}
    for s, group in groups.items():
        ids = [e.id for e in group]
        order = rng.permutation(len(ids))
        test_ids = {ids[i] for i in order[: counts[s]]}
        for e in group:
            assignment[e.id] = "test" if e.id in test_ids else "train"

    new_entries = [
        replace(e, split=assignment[e.id], fold=None) for e in entries
    ]
    meta = dict(manifest.meta)
    meta["test_fraction"] = test_fraction
    return DatasetManifest(entries=new_entries, meta=meta, root=manifest.root)


def make_folds(manifest: DatasetManifest, k: int = 5, rng: np.random.Generator = None) -> DatasetManifest:
    """Deal the training split into k stratified folds (round-robin after a
    seeded shuffle within each stratum)."""
    if k < 2:
        raise ParameterError(f"need at least 2 folds, got {k}")
    if rng is None:
        rng = np.random.default_rng()
    train = [e for e in manifest.entries if e.split == "train"]
    if not train:
        raise ManifestError("manifest has no training split; run the split step first")
    groups = _by_stratum(train)
    smallest = min(len(g) for g in groups.values())
    if k > smallest:
        raise ParameterError(
            f"k={k} exceeds the smallest stratum size ({smallest})"
        )

    fold_of = {}
    for group in groups.values():
        ids = [e.id for e in group]
        order = rng.permutation(len(ids))
        for slot, i in enumerate(order):
            fold_of[ids[i]] = slot % k

    new_entries = [
        replace(e, fold=fold_of[e.id]) if e.split == "train" else replace(e, fold=None)
        for e in manifest.entries
    ]
    meta = dict(manifest.meta)
    meta["folds"] = k
    return DatasetManifest(entries=new_entries, meta=meta, root=manifest.root)
