import csv
import datetime as dt

import numpy as np
import pytest

from riskpipe.core import AccidentRecord
from riskpipe.evaluate import RocCurve, auc_score, average_roc, fold_report, roc_auc, timeline_export


def pairwise_auc(scores, labels):
    pos = scores[labels == 1]
    neg = scores[labels == 0]
    wins = (pos[:, None] > neg[None, :]).sum() + 0.5 * (pos[:, None] == neg[None, :]).sum()
    return wins / (len(pos) * len(neg))


def test_small_example():
    assert auc_score([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_all_tied_scores_give_half():
    assert auc_score(np.ones(10), np.r_[np.ones(4), np.zeros(6)]) == 0.5


def test_curve_endpoints_and_monotone(rng):
    c = roc_auc(rng.normal(size=50), np.r_[np.ones(20), np.zeros(30)])
    assert (c.fpr[0], c.tpr[0], c.fpr[-1], c.tpr[-1]) == (0.0, 0.0, 1.0, 1.0)
    assert np.all(np.diff(c.fpr) >= 0) and np.all(np.diff(c.tpr) >= 0)


def test_matches_pairwise_formula(rng):
    for _ in range(50):
        n = int(rng.integers(2, 120))
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        s = rng.integers(0, 8, n).astype(float)
        assert abs(auc_score(s, y) - pairwise_auc(s, y)) < 1e-12


def test_needs_both_classes():
    with pytest.raises(ValueError):
        roc_auc([0.1, 0.2], [1, 1])


def test_average_of_chance_and_perfect():
    chance = RocCurve(np.array([0.0, 1.0]), np.array([0.0, 1.0]), 0.5)
    perfect = RocCurve(np.array([0.0, 0.0, 1.0]), np.array([0.0, 1.0, 1.0]), 1.0)
    avg = average_roc([chance, perfect])
    assert avg.auc == pytest.approx(0.75, abs=0.005)
    assert avg.fpr[0] == 0.0 and avg.tpr[0] == 0.0


def test_fold_report_summary():
    rep = fold_report([0.5, 0.7], [0.6], "retrain")
    assert rep["val_auc_mean"] == pytest.approx(0.6)
    assert rep["val_auc_std"] == pytest.approx(0.1)
    assert rep["test_auc"] == 0.6
    rep = fold_report([0.5, 0.7], [0.4, 0.6], "fold_mean")
    assert rep["test_auc"] == pytest.approx(0.5)


def test_fold_report_errors():
    with pytest.raises(ValueError):
        fold_report([0.5], [0.5], "retrain")
    with pytest.raises(ValueError):
        fold_report([0.5, 0.6], [0.5, 0.6], "retrain")
    with pytest.raises(ValueError):
        fold_report([0.5, 0.6], [0.5], "other")


def test_timeline_exports(tmp_path):
    accs = [
        AccidentRecord("A", dt.date(2018, 3, 1), 1),
        AccidentRecord("A", dt.date(2018, 4, 1), 7),
        AccidentRecord("B", dt.date(2018, 3, 5), 3),
    ]
    csv_path, svg_path = timeline_export("accidents", accs, tmp_path / "acc")
    rows = list(csv.DictReader(open(csv_path)))
    assert len(rows) == 3 and {r["driver_id"] for r in rows} == {"A", "B"}
    assert svg_path.read_text().count("<circle") == 3
    preds = [("A", 1_520_000_000, 0.2), ("C", 1_520_086_400, 0.9)]
    csv_path, svg_path = timeline_export("predictions", preds, tmp_path / "pred")
    assert len(list(csv.DictReader(open(csv_path)))) == 2
    with pytest.raises(ValueError):
        timeline_export("other", [], tmp_path / "x")
