import warnings
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from oracles import metrics_reference
from sklearn.metrics import accuracy_score, confusion_matrix, f1_score

from pseudosyn.labels import round_half_up
from pseudosyn.metrics import (
    UndefinedMetricWarning,
    evaluate,
    format_table,
    improvement,
    read_reports,
    write_reports,
)


def _quiet_evaluate(t, p):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UndefinedMetricWarning)
        return evaluate(t, p)


def test_perfect_prediction():
    labels = [0, 1, 2, 3, 3, 2]
    rep = evaluate(labels, labels)
    assert rep.per_class_f1.tolist() == [1.0] * 4
    assert rep.accuracy == rep.macro_f1 == rep.weighted_f1 == 1.0


def test_hand_computed_case():
    with pytest.warns(UndefinedMetricWarning, match="ischaemia, both"):
        rep = evaluate([0, 0, 1, 1], [0, 1, 1, 1])
    assert rep.confusion[:2, :2].tolist() == [[1, 1], [0, 2]]
    assert rep.per_class_f1[0] == pytest.approx(2 / 3, abs=1e-15)
    assert rep.per_class_f1[1] == pytest.approx(4 / 5, abs=1e-15)
    assert rep.macro_f1 == pytest.approx((2 / 3 + 4 / 5) / 4, abs=1e-15)


def test_random_sets_match_recount(rng):
    for _ in range(500):
        n = int(rng.integers(1, 200))
        t, p = rng.integers(0, 4, n), rng.integers(0, 4, n)
        rep = _quiet_evaluate(t, p)
        ref = metrics_reference(t, p)
        assert rep.confusion.tolist() == ref["confusion"]
        np.testing.assert_allclose(rep.per_class_f1, ref["f1"], atol=1e-9)
        assert abs(rep.macro_f1 - ref["macro"]) < 1e-9
        assert abs(rep.weighted_f1 - ref["weighted"]) < 1e-9
        assert abs(rep.accuracy - ref["accuracy"]) < 1e-9


def test_agrees_with_sklearn(rng):
    t, p = rng.integers(0, 4, 300), rng.integers(0, 4, 300)
    rep = evaluate(t, p)
    labels = [0, 1, 2, 3]
    assert np.array_equal(rep.confusion, confusion_matrix(t, p, labels=labels))
    np.testing.assert_allclose(rep.per_class_f1, f1_score(t, p, labels=labels, average=None))
    assert rep.macro_f1 == pytest.approx(f1_score(t, p, labels=labels, average="macro"))
    assert rep.weighted_f1 == pytest.approx(f1_score(t, p, labels=labels, average="weighted"))
    assert rep.accuracy == pytest.approx(accuracy_score(t, p))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=80), st.randoms())
def test_properties(pairs, random):
    t = [a for a, _ in pairs]
    p = [b for _, b in pairs]
    rep = _quiet_evaluate(t, p)
    shuffled = list(pairs)
    random.shuffle(shuffled)
    rep2 = _quiet_evaluate([a for a, _ in shuffled], [b for _, b in shuffled])
    assert np.array_equal(rep.confusion, rep2.confusion) and rep.macro_f1 == rep2.macro_f1
    assert rep.macro_f1 == float(np.mean(rep.per_class_f1))
    recall = np.divide(np.diag(rep.confusion), rep.support, out=np.zeros(4), where=rep.support > 0)
    assert abs(rep.accuracy - (rep.support * recall).sum() / rep.n) < 1e-12
    assert rep.confusion.sum() == len(pairs)
    assert all(0 <= v <= 1 for v in [*rep.per_class_f1, rep.macro_f1, rep.weighted_f1, rep.accuracy])


@settings(max_examples=50, deadline=None)
@given(st.lists(st.integers(0, 3), min_size=1, max_size=60), st.integers(0, 3))
def test_single_class_predictions(truth, c):
    rep = _quiet_evaluate(truth, [c] * len(truth))
    support = truth.count(c)
    assert rep.per_class_f1[c] == pytest.approx(2 * support / (len(truth) + support))
    assert all(rep.per_class_f1[k] == 0 for k in range(4) if k != c)


def test_errors():
    with pytest.raises(ValueError, match="length"):
        evaluate([0, 1], [0])
    with pytest.raises(ValueError, match="empty"):
        evaluate([], [])


def test_improvement_published_gain():
    d = improvement(0.6077, 0.55)
    assert round_half_up(d.points) == Decimal("5.77")
    assert round_half_up(d.relative) == Decimal("10.49")
    assert str(d) == "+5.77 pp (10.49 %)"


def test_improvement_trivial_cases():
    assert improvement(0.4, 0.4).points == 0 and improvement(0.4, 0.4).relative == 0
    d = improvement(0.75, 0.5)
    assert d.points == pytest.approx(25) and d.relative == pytest.approx(50)
    assert improvement(0.3, 0.0).relative is None
    with pytest.raises(ValueError):
        improvement(1.2, 0.5)


def test_round_half_up_presentation():
    assert str(round_half_up(0.125)) == "0.13"
    assert str(round_half_up(2.675)) == "2.68"


def test_report_files_round_trip(tmp_path):
    rep = evaluate([0, 1, 2, 3], [0, 1, 2, 2])
    path = write_reports({"B1": rep}, tmp_path / "e.csv")
    rows = read_reports(path)
    assert rows["B1"]["macro_f1"] == pytest.approx(100 * rep.macro_f1)
    table = format_table(rows)
    assert table.splitlines()[0].split()[:2] == ["Model", "none"]
    assert "B1" in table
    rep.confusion_to_csv(tmp_path / "c.csv")
    assert (tmp_path / "c.csv").read_text().splitlines()[1] == "none,1,0,0,0"
