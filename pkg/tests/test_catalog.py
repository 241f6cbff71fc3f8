import csv

import numpy as np
import pytest
from conftest import BASELINE
from hypothesis import given, settings
from hypothesis import strategies as st

from pseudosyn.catalog import (
    MANIFEST_COLUMNS,
    Catalog,
    ClassDistribution,
    ImageRecord,
    IntegrityError,
    ManifestError,
    Provenance,
    Split,
    StratificationError,
    class_distribution,
    load_manifest,
    split_cv,
    write_manifest,
)
from pseudosyn.labels import ClassLabel


def _write_rows(path, rows):
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(MANIFEST_COLUMNS)
        writer.writerows(rows)
    return path


def _labeled(counts, prefix="r"):
    return [
        ImageRecord(f"{prefix}_{c.key}_{i}", "x.png", Split.TRAIN_LABELED, c)
        for c in ClassLabel
        for i in range(counts[int(c)])
    ]


def test_load_published_baseline_counts(tmp_path):
    rows = [
        (f"{c.key}_{i}", f"{c.key}_{i}.png", "train_labeled", c.key, "real", "", "")
        for c in ClassLabel
        for i in range(BASELINE[c])
    ]
    catalog = load_manifest(_write_rows(tmp_path / "m.csv", rows))
    dist = class_distribution(catalog)
    assert dist.as_dict() == {"none": 2552, "infection": 2555, "ischaemia": 227, "both": 621}
    assert dist.total == 5955


def test_header_only_manifest_is_empty(tmp_path):
    catalog = load_manifest(_write_rows(tmp_path / "m.csv", []))
    assert len(catalog) == 0
    assert all(d.total == 0 for d in catalog.distributions.values())


def test_duplicate_id_names_both_lines(tmp_path):
    row = ("a", "a.png", "train_labeled", "none", "real", "", "")
    with pytest.raises(IntegrityError, match="line 3.*line 2"):
        load_manifest(_write_rows(tmp_path / "m.csv", [row, row]))


def test_missing_column_is_manifest_error(tmp_path):
    path = tmp_path / "m.csv"
    path.write_text("id,path,split\na,a.png,test\n")
    with pytest.raises(ManifestError, match="missing columns"):
        load_manifest(path)


@pytest.mark.parametrize(
    "row, message",
    [
        (("a", "a.png", "train_labeled", "", "real", "", ""), "label required"),
        (("a", "a.png", "train_unlabeled", "none", "real", "", ""), "carries a label"),
        (("a", "a.png", "train_labeled", "none", "synthetic", "", ""), "source_class"),
        (("a", "a.png", "train_labeled", "none", "pseudo", "", ""), "confidence"),
        (("a", "a.png", "train_labeled", "none", "pseudo", "", "1.5"), "outside"),
    ],
)
def test_record_invariants(tmp_path, row, message):
    with pytest.raises(IntegrityError, match=message):
        load_manifest(_write_rows(tmp_path / "m.csv", [row]))


def test_unknown_label_is_manifest_error(tmp_path):
    with pytest.raises(ManifestError, match="line 2"):
        load_manifest(_write_rows(tmp_path / "m.csv", [("a", "a.png", "train_labeled", "ulcer", "real", "", "")]))


def test_cross_class_synthetic_record_allowed():
    r = ImageRecord("s", "s.png", Split.TRAIN_LABELED, "both", Provenance.SYNTHETIC, source_class="none")
    assert r.label is ClassLabel.BOTH and r.source_class is ClassLabel.NONE


def test_manifest_round_trip_rebases_paths(tmp_path):
    (tmp_path / "a").mkdir()
    src = _write_rows(tmp_path / "a" / "m.csv", [("x", "img/x.png", "train_labeled", "both", "real", "", "")])
    catalog = load_manifest(src)
    out = write_manifest(catalog, tmp_path / "b" / "deeper" / "m.csv")
    again = load_manifest(out)
    assert again.resolve(again.get("x")).resolve() == (tmp_path / "a" / "img" / "x.png").resolve()
    assert again.get("x").label is ClassLabel.BOTH


def test_synthetic_filter_and_nothing_filter():
    real = _labeled((1, 1, 1, 1))
    syn = [
        ImageRecord(f"syn/{c.key}/{i}", "s.png", Split.TRAIN_LABELED, c, Provenance.SYNTHETIC, source_class=0)
        for c, n in zip(ClassLabel, (6016, 8258, 12500, 11974))
        for i in range(n)
    ]
    catalog = Catalog(tuple(real + syn))
    dist = class_distribution(catalog, provenance=Provenance.SYNTHETIC)
    assert dist.counts == (6016, 8258, 12500, 11974) and dist.total == 38748
    assert class_distribution(catalog, split=Split.TEST).counts == (0, 0, 0, 0)


def test_table_totals_per_class():
    catalog = Catalog(tuple(_labeled((12916,) * 4)))
    dist = class_distribution(catalog)
    assert dist.counts == (12916,) * 4 and dist.total == 51664


def test_extend_never_mutates_real_records():
    catalog = Catalog(tuple(_labeled((2, 2, 2, 2))))
    extra = ImageRecord("p", "p.png", Split.TRAIN_LABELED, 0, Provenance.PSEUDO, confidence=0.8)
    bigger = catalog.extend([extra])
    assert bigger.records[: len(catalog)] == catalog.records
    assert len(catalog) == 8 and "p" not in catalog
    with pytest.raises(IntegrityError):
        bigger.extend([extra])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.sampled_from([0, 1, 2, 3, None]), max_size=60), st.sampled_from(list(Split)))
def test_distribution_sums_to_total(labels, split):
    records = []
    for i, label in enumerate(labels):
        s = Split.TRAIN_LABELED if label is not None else Split.TRAIN_UNLABELED
        records.append(ImageRecord(str(i), "x.png", s, label))
    catalog = Catalog(tuple(records))
    for prov in (None, Provenance.REAL, Provenance.PSEUDO):
        d = class_distribution(catalog, split=split, provenance=prov)
        assert sum(d.counts) == d.total


def test_distribution_arithmetic():
    a = ClassDistribution.from_mapping({"none": 1, "both": 2})
    assert (a + a).counts == (2, 0, 0, 4)
    assert a[ClassLabel.BOTH] == 2 and a["none"] == 1
    with pytest.raises(ValueError):
        ClassDistribution((1, -1, 0, 0))


def test_cv_exact_divisibility():
    catalog = Catalog(tuple(_labeled((25,) * 4)))
    folds = split_cv(catalog, k=5, seed=3)
    assert folds.sizes() == [20] * 5
    labels = {r.id: int(r.label) for r in catalog}
    for f in range(5):
        counts = np.bincount([labels[i] for i in folds.held_out(f)], minlength=4)
        assert counts.tolist() == [5, 5, 5, 5]


def test_cv_deterministic_and_seed_sensitive():
    catalog = Catalog(tuple(_labeled((25,) * 4)))
    assert split_cv(catalog, 5, 1).assignment == split_cv(catalog, 5, 1).assignment
    assert split_cv(catalog, 5, 1).assignment != split_cv(catalog, 5, 2).assignment


def test_cv_published_scale_is_stratified_partition():
    catalog = Catalog(tuple(_labeled(BASELINE.counts)))
    folds = split_cv(catalog, k=5, seed=0)
    assert set(folds.assignment) == {r.id for r in catalog}
    assert all(abs(s - 1191) <= 1 for s in folds.sizes())
    labels = {r.id: int(r.label) for r in catalog}
    for f in range(5):
        held = folds.held_out(f)
        counts = np.bincount([labels[i] for i in held], minlength=4)
        expected = np.array(BASELINE.counts) * len(held) / BASELINE.total
        assert np.all(np.abs(counts - expected) <= 1)
        assert set(held).isdisjoint(folds.training(f))


def test_cv_rejects_tiny_classes():
    catalog = Catalog(tuple(_labeled((10, 10, 3, 10))))
    with pytest.raises(StratificationError, match="ischaemia"):
        split_cv(catalog, k=5)
