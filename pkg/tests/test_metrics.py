import numpy as np
import pytest

from geoat.errors import ClassMismatch, Degenerate, DegenerateClass, NoPositives
from geoat.metrics import (
    EvalReport,
    average_precision,
    classify_delta,
    evaluate,
    f1_micro,
    mean_average_precision,
    per_class_ap,
    per_class_delta,
    roc_auc,
)
from oracles import ap_oracle, auc_oracle, f1_oracle, random_metric_instance


def test_ap_worked_example():
    assert average_precision([0.9, 0.8, 0.7, 0.1], [1, 0, 1, 0]) == pytest.approx(5 / 6, abs=1e-15)


def test_ap_perfect_and_tie_policy():
    assert average_precision([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0
    # equal scores: the earlier index ranks first
    assert average_precision([0.5, 0.5], [1, 0]) == 1.0
    assert average_precision([0.5, 0.5], [0, 1]) == 0.5
    with pytest.raises(NoPositives):
        average_precision([0.1, 0.2], [0, 0])


@pytest.mark.parametrize("seed", range(5))
def test_ap_and_auc_match_oracles(seed):
    rng = np.random.default_rng(seed)
    for _ in range(100):
        s, y = random_metric_instance(rng)
        assert abs(average_precision(s, y) - ap_oracle(s, y)) <= 1e-12
        assert abs(roc_auc(s, y) - auc_oracle(s, y)) <= 1e-12


def test_monotone_transform_invariance():
    rng = np.random.default_rng(7)
    for _ in range(50):
        s, y = random_metric_instance(rng)
        t = np.exp(3 * s) - 2
        assert average_precision(t, y) == average_precision(s, y)
        assert roc_auc(t, y) == pytest.approx(roc_auc(s, y), abs=1e-15)


def test_auc_conventions():
    assert roc_auc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert roc_auc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5
    with pytest.raises(Degenerate):
        roc_auc([0.1, 0.2], [1, 1])


def test_auc_micro_and_macro():
    rng = np.random.default_rng(1)
    s = rng.random((12, 3))
    y = (rng.random((12, 3)) < 0.5).astype(int)
    y[0, :], y[1, :] = 1, 0
    y[:, 2] = 1  # degenerate column
    assert roc_auc(s, y, "micro") == pytest.approx(auc_oracle(s.ravel(), y.ravel()), abs=1e-12)
    macro = roc_auc(s, y, "macro")
    assert macro.skipped == 1
    assert macro.value == pytest.approx(np.mean([auc_oracle(s[:, k], y[:, k]) for k in range(2)]), abs=1e-12)
    with pytest.raises(DegenerateClass):
        roc_auc(s[:, 2:], y[:, 2:], "macro")


def test_f1_examples():
    y = np.array([1, 1, 1, 1, 1, 0, 0])
    p = np.array([0.9, 0.8, 0.7, 0.1, 0.2, 0.6, 0.3])  # TP=3, FP=1, FN=2
    r = f1_micro(p, y)
    assert (r.tp, r.fp, r.fn) == (3, 1, 2) and r.value == pytest.approx(6 / 9, abs=1e-15)
    assert f1_micro(y.astype(float), y).value == 1.0
    empty = f1_micro(np.zeros(4), np.zeros(4, dtype=int))
    assert empty.value == 0.0 and empty.degenerate


def test_f1_matches_counting():
    rng = np.random.default_rng(3)
    for _ in range(200):
        p = rng.random((5, 4))
        y = (rng.random((5, 4)) < 0.3).astype(int)
        thr = float(rng.choice([0.3, 0.5, 0.7]))
        assert f1_micro(p, y, thr).value == pytest.approx(f1_oracle(p, y, thr), abs=1e-15)


def test_map_excludes_classes_without_positives(caplog):
    s = np.array([[0.9, 0.1], [0.2, 0.3], [0.4, 0.8]])
    y = np.array([[1, 0], [0, 0], [1, 0]])
    aps = per_class_ap(s, y)
    assert aps == [1.0, None]
    mAP, excluded = mean_average_precision(aps)
    assert (mAP, excluded) == (1.0, 1)
    assert "excludes 1" in caplog.text


def test_map_is_exact_mean():
    rng = np.random.default_rng(4)
    s = rng.random((30, 6))
    y = (rng.random((30, 6)) < 0.4).astype(int)
    y[0] = 1
    rep = evaluate(s, y)
    assert rep.map == sum(rep.per_class_ap) / 6
    assert 0 <= rep.micro_auc <= 1 and 0 <= rep.f1_micro <= 1


def test_delta_grouping():
    assert classify_delta(0.3378) == "benefiting"
    assert classify_delta(-0.051) == "nonbenefiting"
    assert classify_delta(0.05) == "neutral" and classify_delta(-0.05) == "neutral"
    assert classify_delta(None) == "undefined"


def _report(aps, names=("a", "b", "c")):
    return EvalReport(list(names), list(aps), 0.0, 0, None, None, 0, 0.0)


def test_per_class_delta():
    same = per_class_delta(_report([0.5, 0.6, 0.7]), _report([0.5, 0.6, 0.7]))
    assert same.delta == [0.0, 0.0, 0.0] and same.groups["neutral"] == ["a", "b", "c"]
    d = per_class_delta(_report([0.9, 0.4, None]), _report([0.5, 0.6, 0.7]))
    assert d.groups["benefiting"] == ["a"] and d.groups["nonbenefiting"] == ["b"]
    assert d.groups["undefined"] == ["c"]
    with pytest.raises(ClassMismatch):
        per_class_delta(_report([0.5] * 3), _report([0.5] * 3, names=("a", "b", "x")))


def test_report_save_load(tmp_path):
    rng = np.random.default_rng(5)
    s = rng.random((10, 2))
    y = np.array([[1, 0], [0, 1]] * 5)
    rep = evaluate(s, y, ["dog", "rain"], seed=2, variant="late")
    rep.save(tmp_path)
    assert EvalReport.load(tmp_path / "report.json") == rep
    rows = (tmp_path / "report_per_class_ap.csv").read_text().splitlines()
    assert rows[0] == "class,ap" and rows[1].startswith("dog,")
    with pytest.raises(ClassMismatch):
        evaluate(s, y, ["only one"])
