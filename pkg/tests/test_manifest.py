import numpy as np
import pytest

from axialseg.data import DatasetManifest, ManifestEntry, make_folds, stratified_split
from axialseg.errors import LeakageError, ManifestError, ParameterError


def build_manifest(counts: dict) -> DatasetManifest:
    entries = []
    i = 0
    for stratum, n in counts.items():
        for _ in range(n):
            entries.append(
                ManifestEntry(
                    id=f"s{i:04d}", image=f"img/{i}.nii", mask=f"msk/{i}.nii", strata=stratum
                )
            )
            i += 1
    return DatasetManifest(entries=entries)


COHORT = {"HC": 44, "RR": 61, "PP": 13, "SP": 23}  # 141 subjects, 4 strata


def test_split_cohort_analog_totals_and_proportions():
    manifest = build_manifest(COHORT)
    out = stratified_split(manifest, 50 / 141, np.random.default_rng(0))
    train = out.subset(split="train")
    test = out.subset(split="test")
    assert len(train) == 91 and len(test) == 50
    for stratum, n in COHORT.items():
        got = sum(1 for e in test if e.strata == stratum)
        quota = n * 50 / 141
        assert abs(got - quota) < 1.0, f"{stratum}: {got} vs quota {quota:.2f}"
    # the published training/testing rows obey the same +-1 criterion
    published_test = {"HC": 16, "RR": 21, "PP": 5, "SP": 8}
    assert sum(published_test.values()) == 50
    for stratum, got in published_test.items():
        assert abs(got - COHORT[stratum] * 50 / 141) < 1.0


def test_split_deterministic_given_seed():
    manifest = build_manifest(COHORT)
    a = stratified_split(manifest, 0.3, np.random.default_rng(7))
    b = stratified_split(manifest, 0.3, np.random.default_rng(7))
    assert [e.split for e in a.entries] == [e.split for e in b.entries]


def test_split_rejects_degenerate_fraction():
    manifest = build_manifest({"a": 4})
    with pytest.raises(ParameterError):
        stratified_split(manifest, 0.01, np.random.default_rng(0))  # empty test split


def test_folds_even_partition():
    manifest = build_manifest({"all": 90})
    for e in manifest.entries:
        e.split = "train"
    folded = make_folds(manifest, k=5, rng=np.random.default_rng(2))
    sizes = [len(folded.subset(split="train", fold=i)) for i in range(5)]
    assert sizes == [18] * 5


def test_folds_partition_training_set():
    manifest = build_manifest(COHORT)
    out = stratified_split(manifest, 50 / 141, np.random.default_rng(3))
    folded = make_folds(out, k=5, rng=np.random.default_rng(4))
    train_ids = {e.id for e in folded.subset(split="train")}
    seen = []
    for i in range(5):
        seen.extend(e.id for e in folded.subset(fold=i))
    assert len(seen) == len(set(seen)) == len(train_ids)
    assert set(seen) == train_ids
    for e in folded.subset(split="test"):
        assert e.fold is None
    folded.validate_no_leakage()


def test_folds_stratification_balanced():
    manifest = build_manifest(COHORT)
    out = stratified_split(manifest, 50 / 141, np.random.default_rng(3))
    folded = make_folds(out, k=5, rng=np.random.default_rng(4))
    for stratum in COHORT:
        counts = [
            sum(1 for e in folded.subset(fold=i) if e.strata == stratum) for i in range(5)
        ]
        assert max(counts) - min(counts) <= 1, f"{stratum}: {counts}"


def test_folds_reject_k_above_smallest_stratum():
    manifest = build_manifest({"big": 30, "tiny": 3})
    for e in manifest.entries:
        e.split = "train"
    with pytest.raises(ParameterError):
        make_folds(manifest, k=5, rng=np.random.default_rng(0))


def test_leakage_detection():
    manifest = build_manifest({"a": 6})
    for i, e in enumerate(manifest.entries):
        e.split = "test" if i < 2 else "train"
        e.fold = 0 if i < 2 else None
    with pytest.raises(LeakageError):
        manifest.validate_no_leakage()


def test_manifest_save_load_round_trip(tmp_path):
    manifest = build_manifest({"a": 3, "b": 2})
    out = stratified_split(manifest, 0.4, np.random.default_rng(0))
    path = tmp_path / "manifest.json"
    out.save(path)
    back = DatasetManifest.load(path)
    assert back.to_dict() == out.to_dict()
    assert back.root == tmp_path


def test_manifest_rejects_duplicate_ids():
    with pytest.raises(ManifestError):
        DatasetManifest(
            entries=[
                ManifestEntry(id="x", image="a.nii", mask="b.nii"),
                ManifestEntry(id="x", image="c.nii", mask="d.nii"),
            ]
        )


def test_manifest_rejects_bad_json(tmp_path):
    path = tmp_path / "broken.json"
    path.write_text("{not json")
    with pytest.raises(ManifestError):
        DatasetManifest.load(path)
