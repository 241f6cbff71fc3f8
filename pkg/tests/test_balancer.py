import time
from fractions import Fraction

import pytest
from conftest import BASELINE, PSEUDO
from hypothesis import given, settings
from hypothesis import strategies as st

from pseudosyn.balancer import DegeneratePlanError, plan_balance, verify_extension
from pseudosyn.catalog import Catalog, ClassDistribution, ImageRecord, Provenance, Split
from pseudosyn.labels import ClassLabel, round_half_up

# Published shares (percent of the grand total) per cell, rows in class order.
PUBLISHED_SHARES = {
    "baseline": ["4.94", "4.95", "0.44", "0.12", "11.53"],
    "pseudo": ["8.42", "4.07", "0.37", "0.62", "13.47"],
    "synthetic": ["11.64", "15.98", "24.19", "23.18", "75.00"],
    "total": ["25.00", "25.00", "25.00", "25.00", "100.00"],
}


def test_published_plan_is_exact():
    start = time.perf_counter()
    plan = plan_balance(BASELINE + PSEUDO, BASELINE)
    assert time.perf_counter() - start < 1.0
    assert plan.target_per_class == 12916
    assert [plan.quotas[c] for c in ClassLabel] == [6016, 8258, 12500, 11974]
    assert plan.synthetic_total == 38748 and plan.grand_total == 51664
    assert plan.real_to_synthetic == 3
    assert plan.multiplier == Fraction(51664, 5955)
    assert abs(float(plan.multiplier) - 8.676) <= 0.001
    assert plan.mask_sources[ClassLabel.NONE] == {
        ClassLabel.INFECTION: 4658,
        ClassLabel.ISCHAEMIA: 416,
        ClassLabel.BOTH: 942,
    }


def test_published_shares_with_one_transposed_cell():
    plan = plan_balance(BASELINE + PSEUDO, BASELINE)
    rows = plan.table_rows()
    mismatches = []
    for column, published in PUBLISHED_SHARES.items():
        for row, value in zip(rows, published):
            ours = str(round_half_up(plan.share(row[column])))
            if ours != value:
                mismatches.append((row["class"], column, ours, value))
    # 621 / 51,664 is 1.20 %; the published cell reads 0.12 %
    assert mismatches == [("both", "baseline", "1.20", "0.12")]


def test_balanced_input():
    plan = plan_balance(ClassDistribution((7, 7, 7, 7)))
    assert plan.target_per_class == 28 and set(plan.quotas.values()) == {21}


def test_hand_enumerated_small_case():
    plan = plan_balance(ClassDistribution((3, 1, 1, 1)))
    assert plan.target_per_class == 6
    assert [plan.quotas[c] for c in ClassLabel] == [3, 5, 5, 5]
    assert plan.mask_sources[ClassLabel.NONE] == {ClassLabel.INFECTION: 1, ClassLabel.ISCHAEMIA: 1, ClassLabel.BOTH: 1}


def test_degenerate_inputs():
    with pytest.raises(DegeneratePlanError):
        plan_balance(ClassDistribution((0, 0, 5, 0)))
    with pytest.raises(DegeneratePlanError):
        plan_balance(ClassDistribution((0, 0, 0, 0)))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(0, 10_000), min_size=4, max_size=4).filter(lambda c: sum(1 for x in c if x) >= 2))
def test_plan_invariants(counts):
    after = ClassDistribution(tuple(counts))
    plan = plan_balance(after)
    for c in ClassLabel:
        assert plan.quotas[c] == plan.target_per_class - after[c]
        assert sum(plan.mask_sources[c].values()) == plan.quotas[c]
        assert c not in plan.mask_sources[c]
        assert after[c] + plan.quotas[c] == plan.target_per_class
    assert plan.grand_total == after.total + plan.synthetic_total
    assert plan.real_to_synthetic == 3
    # relabeling the classes permutes the plan
    rotated = plan_balance(ClassDistribution(tuple(counts[1:] + counts[:1])))
    assert [rotated.quotas[c] for c in ClassLabel] == [plan.quotas[ClassLabel((i + 1) % 4)] for i in range(4)]


def _real(after):
    return [
        ImageRecord(f"{c.key}_{i}", "x.png", Split.TRAIN_LABELED, c) for c in ClassLabel for i in range(after[c])
    ]


def _synthetic(plan):
    return [
        ImageRecord(f"syn/{c.key}/{s.key}_{i}", "s.png", Split.TRAIN_LABELED, c, Provenance.SYNTHETIC, source_class=s)
        for c in ClassLabel
        for s, n in plan.mask_sources[c].items()
        for i in range(n)
    ]


def test_verify_published_scale_clean():
    after = BASELINE + PSEUDO
    plan = plan_balance(after, BASELINE)
    catalog = Catalog(tuple(_real(after) + _synthetic(plan)))
    report = verify_extension(plan, catalog)
    assert report.ok and report.discrepancies == []
    # every class now holds exactly the target count
    counts = ClassDistribution.from_labels(r.label for r in catalog)
    assert set(counts.counts) == {plan.target_per_class}


def test_verify_zero_quota_plan():
    plan = plan_balance(ClassDistribution((1, 1, 1, 1)))
    plan = type(plan)(plan.baseline, plan.after_pseudo, 1, {c: 0 for c in ClassLabel}, {c: {} for c in ClassLabel})
    assert verify_extension(plan, Catalog(tuple(_real(plan.after_pseudo)))).ok


def test_verify_single_missing_image():
    after = ClassDistribution((3, 1, 2, 1))
    plan = plan_balance(after)
    syn = _synthetic(plan)
    dropped = next(r for r in syn if r.label is ClassLabel.ISCHAEMIA)
    catalog = Catalog(tuple(_real(after) + [r for r in syn if r is not dropped]))
    report = verify_extension(plan, catalog)
    assert len(report.discrepancies) == 1
    d = report.discrepancies[0]
    assert d.label is ClassLabel.ISCHAEMIA and d.expected - d.actual == 1
    assert "shortfall 1" in str(d)


def test_verify_flags_same_class_masks_and_misallocation():
    after = ClassDistribution((2, 2, 2, 2))
    plan = plan_balance(after)
    syn = _synthetic(plan)
    # swap one none-model image's source from infection to none
    idx = next(i for i, r in enumerate(syn) if r.label is ClassLabel.NONE and r.source_class is ClassLabel.INFECTION)
    bad = syn[idx]
    syn[idx] = ImageRecord(bad.id, bad.path, bad.split, bad.label, bad.provenance, source_class=ClassLabel.NONE)
    report = verify_extension(plan, Catalog(tuple(_real(after) + syn)))
    kinds = {d.kind for d in report.discrepancies}
    assert kinds == {"same-class masks", "mask sources"}


def test_table_outputs(tmp_path):
    plan = plan_balance(BASELINE + PSEUDO, BASELINE)
    text = plan.format_table()
    assert "12,916 ( 25.00 %)" in text and "1:3" in text and "x8.676" in text
    lines = plan.to_csv(tmp_path / "plan.csv").read_text().splitlines()
    assert lines[0].startswith("class,baseline,baseline_pct")
    assert lines[-1] == "total,5955,11.53,6961,13.47,38748,75.00,51664,100.00"
