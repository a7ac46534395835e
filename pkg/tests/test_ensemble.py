import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tdse.ensemble import (
    MetaFitCache,
    ScheduleEntry,
    choose,
    predict_window,
    select_meta,
    split_validation,
    stack_features,
    write_schedule_csv,
)
from tdse.errors import LengthMismatch, SingleClassTraining
from tdse.meta import KIND_ORDER, MetaKind, Stage2Params

SMALL = Stage2Params(rf_trees=5, et_trees=5, ann_h1=4, ann_h2=4, ann_h3=4)


def planted_features(rng, n=80):
    """x1 = P(Up) from a perfect extractor; the other two are noise."""
    y = rng.integers(0, 2, n)
    p1 = np.where(y == 1, rng.uniform(0.6, 0.9, n), rng.uniform(0.1, 0.4, n))
    return stack_features(p1, rng.random(n), rng.random(n)), y


def test_stack_features_rows():
    assert np.array_equal(stack_features([0.5], [0.5], [0.5]), np.full((1, 6), 0.5))
    g, i, m = np.array([0.1, 0.7]), np.array([0.2, 0.4]), np.array([[0.9, 0.1], [0.3, 0.7]])
    X = stack_features(g, i, m)
    for r in range(2):
        assert X[r].tolist() == [g[r], 1 - g[r], i[r], 1 - i[r], *m[r]]
    with pytest.raises(LengthMismatch):
        stack_features(g, i[:1], m)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)), min_size=1, max_size=20))
def test_stacked_rows_on_simplex(rows):
    a = np.array(rows)
    X = stack_features(a[:, 0], a[:, 1], a[:, 2])
    for j in range(3):
        assert np.all(np.abs(X[:, 2 * j] + X[:, 2 * j + 1] - 1.0) <= 1e-9)


def test_split_validation_chronological():
    fit, val = split_validation(50)
    assert fit.tolist() == list(range(40)) and val.tolist() == list(range(40, 50))
    with pytest.raises(SingleClassTraining):
        split_validation(2)


def test_choose_ties_follow_priority():
    assert choose({k: 0.5 for k in KIND_ORDER}) is MetaKind.LR
    accs = {k: 0.5 for k in KIND_ORDER}
    accs[MetaKind.ET] = accs[MetaKind.RF] = 0.8
    assert choose(accs) is MetaKind.RF
    accs = {k: math.nan for k in KIND_ORDER}
    accs[MetaKind.ANN] = 0.1
    assert choose(accs) is MetaKind.ANN
    with pytest.raises(SingleClassTraining):
        choose({k: math.nan for k in KIND_ORDER})


def test_planted_linear_rule_selected(rng):
    X, y = planted_features(rng)
    e = select_meta(X, y, SMALL)
    assert e.accuracies[MetaKind.LR] == 1.0
    assert e.chosen_accuracy == 1.0
    assert e.chosen is MetaKind.LR  # priority breaks the tie with any other perfect kind


def test_argmax_invariance(rng):
    for seed in range(5):
        n = 60
        y = rng.integers(0, 2, n)
        X = stack_features(np.clip(y + rng.normal(0, 0.6, n), 0, 1), rng.random(n), rng.random(n))
        e = select_meta(X, y, SMALL, seed=seed)
        assert len(e.accuracies) == 7
        assert e.chosen_accuracy == max(e.accuracies.values())


def test_selection_deterministic(rng):
    X, y = planted_features(rng, 100)
    a = select_meta(X, y, SMALL, seed=1)
    b = select_meta(X, y, SMALL, seed=1)
    assert a.chosen == b.chosen and a.accuracies == b.accuracies


def test_single_class_rejected(rng):
    with pytest.raises(SingleClassTraining):
        select_meta(rng.random((20, 6)), np.ones(20, dtype=int))


def test_predict_window(rng):
    X, y = planted_features(rng, 100)
    e = select_meta(X[:80], y[:80], SMALL)
    labels, scores = predict_window(e, X[80:])
    assert np.mean(labels == y[80:]) == 1.0
    dup = np.vstack([X[80:81], X[80:81]])
    l2, s2 = predict_window(e, dup)
    assert l2[0] == l2[1] and s2[0] == s2[1]


def test_output_length_is_sum_of_test_lengths(rng):
    total, expected = 0, 0
    for w in range(10):
        X, y = planted_features(rng, 40)
        n_test = int(rng.integers(5, 15))
        expected += n_test
        e = select_meta(X, y, SMALL, window=w, kinds=[MetaKind.LR, MetaKind.KNN])
        total += len(predict_window(e, rng.random((n_test, 6)))[0])
        assert e.window == w
    assert total == expected


def test_cache_gives_same_schedule(rng):
    X, y = planted_features(rng, 60)
    X = X + rng.normal(0, 0.1, X.shape)
    cache = MetaFitCache()
    plain = select_meta(X, y, SMALL, seed=3)
    cached = select_meta(X, y, SMALL, seed=3, cache=cache)
    again = select_meta(X, y, SMALL, seed=3, cache=cache)
    assert plain.accuracies == cached.accuracies == again.accuracies
    assert cache.hits == 7


def test_schedule_csv(tmp_path):
    accs = {k: 0.5 + 0.05 * i for i, k in enumerate(KIND_ORDER)}
    write_schedule_csv([ScheduleEntry(0, MetaKind.ANN, None, accs)], tmp_path / "s.csv")
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0] == "window,chosen,acc_LR,acc_KNN,acc_RBF,acc_Poly,acc_RF,acc_ET,acc_ANN"
    assert lines[1].split(",")[:3] == ["0", "ANN", "0.5"]
