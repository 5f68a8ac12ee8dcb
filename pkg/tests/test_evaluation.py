import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hiercrop import evaluation as E
from hiercrop.taxonomy import AggregationMap


def tally(truth, pred, labels):
    out = {}
    for c in labels:
        tp = sum(1 for t, p in zip(truth, pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(truth, pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(truth, pred) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out[c] = (prec, rec, f1, tp + fn)
    return out


def test_perfect_predictions():
    y = ["a", "b", "c", "a"]
    spec = E.LevelSpec(interest=("a", "b"))
    for r in E.compute_metrics(y, y, spec).values():
        assert r.accuracy == r.precision == r.recall == r.f1 == r.micro_f1 == 1.0


def test_single_class():
    r = E.level_report(["x"] * 5, ["x"] * 5, "all")
    assert r.accuracy == 1.0 and r.f1 == 1.0 and list(r.per_class) == ["x"]


def test_three_class_tally():
    truth = ["a"] * 6 + ["b"] * 3 + ["c"] * 4
    pred = ["a", "a", "a", "b", "c", "a", "b", "b", "a", "c", "c", "a", "b"]
    scores = E.per_class_scores(truth, pred)
    oracle = tally(truth, pred, ["a", "b", "c"])
    for c in "abc":
        assert np.max(np.abs(np.array(scores[c]) - np.array(oracle[c]))) < 1e-12
    macro = E.macro_scores(truth, pred)
    assert abs(macro["f1"] - np.mean([oracle[c][2] for c in "abc"])) < 1e-12


def test_confusion():
    y = list("abcabc")
    labels, cm = E.confusion_matrix(y, y)
    assert np.array_equal(cm, np.diag([2, 2, 2]))
    rng = np.random.default_rng(0)
    t, p = rng.choice(list("wxyz"), 200), rng.choice(list("wxyz"), 200)
    labels, cm = E.confusion_matrix(t, p, list("wxyz"))
    for i, a in enumerate("wxyz"):
        for j, b in enumerate("wxyz"):
            assert cm[i, j] == sum(1 for u, v in zip(t, p) if u == a and v == b)
    pct = E.column_percentages(cm)
    assert np.all((pct >= 0) & (pct <= 100))
    assert np.allclose(pct.sum(axis=0), 100, atol=1e-6)
    with pytest.raises(ValueError):
        E.confusion_matrix(["a"], ["a", "b"])


def test_empty_column_stays_zero():
    pct = E.column_percentages(np.array([[3, 0], [1, 0]]))
    assert np.array_equal(pct[:, 1], [0, 0])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abcde"), st.sampled_from("abcde")), min_size=1, max_size=60))
def test_micro_f1_equals_accuracy(pairs):
    t, p = zip(*pairs)
    assert abs(E.micro_f1(t, p) - E.accuracy(t, p)) < 1e-12


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.sampled_from("abcde"), st.sampled_from("abcde")), min_size=1, max_size=60),
       st.permutations("abcde"))
def test_relabel_equivariance(pairs, perm):
    t, p = zip(*pairs)
    m = dict(zip("abcde", perm))
    a = E.per_class_scores(t, p)
    b = E.per_class_scores([m[x] for x in t], [m[x] for x in p])
    for c, s in a.items():
        assert np.allclose(s, b[m[c]])
    assert E.accuracy(t, p) == E.accuracy([m[x] for x in t], [m[x] for x in p])


def test_levels():
    agg = AggregationMap({"a1": "A", "a2": "A", "b": "b"}, {"A": 2, "b": 1}, {})
    spec = E.LevelSpec(agg, interest=("a1", "b"), grassland=("g",))
    truth = ["a1", "a2", "b", "g", "z"]
    pred = ["a2", "a2", "b", "z", "g"]
    assert E.project(truth, "aggregated", spec) == ["A", "A", "b", "others", "others"]
    assert E.project(truth, "interest", spec) == ["a1", "others", "b", "grassland", "others"]
    rep = E.compute_metrics(truth, pred, spec)
    assert set(rep) == set(E.LEVELS)
    # aggregation can only merge errors away
    assert rep["aggregated"].accuracy >= rep["all"].accuracy
    only = rep["interest_only"]
    assert only.n == 2 and only.micro_f1 == pytest.approx(2 / 3)
    with pytest.raises(ValueError, match="empty"):
        E.level_report(["z"], ["z"], "interest_only", spec)
    with pytest.raises(ValueError):
        E.project(truth, "bogus", spec)


def test_curve_and_writers(tmp_path):
    truth = ["a", "b", "a", "b"]
    spec = E.LevelSpec(interest=("a", "b"))
    preds = {t: (truth if t >= 20 else ["a"] * 4) for t in range(10, 25)}
    curve = E.early_season_curve(lambda t: preds[t], truth, range(10, 25), spec)
    assert sorted(curve) == list(range(10, 25))
    assert curve[24].summary() == E.compute_metrics(truth, truth, spec)["interest_only"].summary()
    E.write_curve_csv(tmp_path / "c.csv", curve)
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["cutoff", "label", "f1"] and len(rows) == 1 + 15 * 3
    reps = E.compute_metrics(truth, ["a", "a", "a", "b"], spec)
    E.write_level_csv(tmp_path / "m.csv", reps)
    E.write_summary_json(tmp_path / "s.json", reps)
    s = json.load(open(tmp_path / "s.json"))
    assert set(s["levels"]["all"]) == {"level", "n", "accuracy", "precision", "recall", "f1", "micro_f1"}
    labels, cm = E.confusion_matrix(truth, ["a", "a", "a", "b"])
    E.write_confusion_csv(tmp_path / "cm.csv", labels, cm)
    rows = list(csv.reader(open(tmp_path / "cm.csv")))
    assert rows[0] == ["true\\pred", "a", "b"] and float(rows[1][1]) == pytest.approx(100 * 2 / 3)
