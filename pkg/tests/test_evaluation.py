import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import metrics_by_counting
from elp.evaluation import (ConfusionMatrix, EvalReport, StratificationError, f1_and_mf1,
                            f1_score, format_table, kfold_split, per_class_metrics, round_pct)


def test_kfold_stratified_partition():
    labels = np.array([0] * 23 + [1] * 11 + [2] * 6)
    folds = kfold_split(labels, 5, seed=0)
    tests = np.concatenate([te for _, te in folds])
    assert sorted(tests.tolist()) == list(range(40))
    for tr, te in folds:
        assert not set(tr) & set(te)
    for c in range(3):
        per = [int((labels[te] == c).sum()) for _, te in folds]
        assert max(per) - min(per) <= 1
    again = kfold_split(labels, 5, seed=0)
    assert all(np.array_equal(a[1], b[1]) for a, b in zip(folds, again))


def test_kfold_small_class_and_groups():
    with pytest.raises(StratificationError, match="class 1"):
        kfold_split([0] * 10 + [1] * 3, 5, 0)
    assert len(kfold_split([0] * 10 + [1] * 3, 5, 0, stratified=False)) == 5
    groups = np.repeat(np.arange(6), 4)
    for _, te in kfold_split(np.zeros(24), 3, 1, groups=groups):
        for g in np.unique(groups[te]):
            assert set(np.flatnonzero(groups == g)) <= set(te)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.lists(st.integers(0, 50), min_size=3, max_size=3), min_size=3, max_size=3))
def test_metrics_agree_with_counting_oracle(rows):
    M = np.array(rows)
    if M.sum() == 0:
        return
    cm = ConfusionMatrix(M, ("a", "b", "c"))
    for c in range(3):
        got = per_class_metrics(cm, c)
        tp, row, col = M[c, c], M[c].sum(), M[:, c].sum()
        if row == 0 or col == 0 or M.sum() - row == 0:
            continue
        want = metrics_by_counting(M, c)
        for k in want:
            assert got[k] == pytest.approx(want[k])


def test_undefined_ratios_are_none():
    cm = ConfusionMatrix(np.array([[5, 0], [3, 0]]), ("x", "y"))
    m = per_class_metrics(cm, 1)
    assert m["ppv"] is None and m["sen"] == 0.0
    assert f1_score(None, 50.0) is None


def test_f1_edge_cases():
    assert f1_score(100.0, 100.0) == 100.0
    assert f1_score(0.0, 80.0) == 0.0
    assert f1_score(0.0, 0.0) is None
    f1s, mf1 = f1_and_mf1([{"ppv": 100.0, "sen": 100.0}, {"ppv": None, "sen": 0.0}])
    assert f1s == [100.0, None] and mf1 == 100.0


def test_round_half_even():
    assert round_pct(0.125) == 0.12 and round_pct(0.135) == 0.14
    assert round_pct(np.float64(97.3548)) == 97.35
    assert round_pct(None) is None


def test_confusion_matrix_validation_and_sum():
    with pytest.raises(ValueError):
        ConfusionMatrix(np.array([[1, -1], [0, 0]]), ("a", "b"))
    with pytest.raises(ValueError):
        ConfusionMatrix(np.zeros((2, 3)), ("a", "b"))
    a = ConfusionMatrix.from_predictions([0, 1, 1], [0, 1, 0], ("a", "b"))
    assert (a + a).counts.tolist() == [[2, 0], [2, 2]]


def test_report_pools_folds_and_marks_partial():
    f = ConfusionMatrix(np.array([[3, 1], [0, 4]]), ("a", "b"))
    rep = EvalReport(("a", "b"), [f, f, None], "fp", {2: "ValueError: boom"})
    assert rep.pooled.counts.tolist() == [[6, 2], [0, 8]]
    assert not rep.complete
    obj = json.loads(rep.dumps())
    assert obj["status"] == "partial" and obj["failures"] == {"2": "ValueError: boom"}
    back = EvalReport.from_json(obj)
    assert back.pooled.counts.tolist() == rep.pooled.counts.tolist()
    assert back.failures == {2: "ValueError: boom"}


def test_table_layout():
    cm = ConfusionMatrix(np.array([[9, 1], [2, 8]]), ("N", "AFIB"))
    text = format_table(cm)
    lines = text.splitlines()
    assert lines[0].split()[:3] == ["actual\\pred", "N", "AFIB"]
    assert "90.00" in lines[2] and text.endswith("n=20")
