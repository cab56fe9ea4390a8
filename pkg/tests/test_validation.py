import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pairwise_auc
from spendxai.learners import LearnerSpec, auc, choose_threshold, cross_validate, stratified_folds


def test_auc_examples():
    assert auc([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0]) == 1.0
    assert auc([0.9, 0.2, 0.8, 0.3], [1, 0, 0, 1]) == 0.75
    assert auc([0.5] * 6, [1, 0, 1, 0, 0, 1]) == 0.5
    with pytest.raises(ValueError):
        auc([0.1, 0.2], [1, 1])


scored = st.integers(2, 60).flatmap(
    lambda n: st.tuples(
        st.lists(st.integers(0, 8), min_size=n, max_size=n),
        st.lists(st.integers(0, 1), min_size=n, max_size=n).filter(lambda l: 0 < sum(l) < len(l)),
    )
)


@settings(max_examples=150, deadline=None)
@given(scored)
def test_auc_matches_pairwise_oracle(data):
    scores, labels = data
    assert auc(scores, labels) == pytest.approx(float(pairwise_auc(scores, labels)), abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(scored, st.floats(0.1, 5.0), st.floats(-3.0, 3.0))
def test_auc_monotone_invariance(data, a, b):
    scores, labels = data
    s = np.asarray(scores, dtype=float)
    base = auc(s, labels)
    for f in (lambda v: a * v + b, np.exp, lambda v: v**3 + v, lambda v: np.arctan(v / 10)):
        assert auc(f(s), labels) == pytest.approx(base, abs=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(2, 50), st.integers(0, 2**32 - 1))
def test_auc_negation_complement(n, seed):
    rng = np.random.default_rng(seed)
    labels = np.r_[1, 0, rng.integers(0, 2, n - 2)]
    s = rng.random(n)  # continuous -> tie-free
    assert auc(s, labels) == pytest.approx(1 - auc(-s, labels), abs=1e-12)


def test_folds_ten_by_five():
    plan = stratified_folds(np.array([0, 1] * 5), 5, seed=0)
    assert [len(f) for f in plan.folds] == [2] * 5
    assert sorted(np.concatenate(plan.folds).tolist()) == list(range(10))


@settings(max_examples=60, deadline=None)
@given(st.integers(5, 200), st.integers(2, 5), st.integers(0, 2**32 - 1))
def test_folds_partition_and_balance(n, k, seed):
    rng = np.random.default_rng(seed)
    y = rng.integers(0, 2, n)
    plan = stratified_folds(y, k, seed)
    sizes = [len(f) for f in plan.folds]
    assert max(sizes) - min(sizes) <= 1
    assert sorted(np.concatenate(plan.folds).tolist()) == list(range(n))
    pos = [int(y[f].sum()) for f in plan.folds]
    assert max(pos) - min(pos) <= 1
    train, test = plan.split(0)
    assert len(np.intersect1d(train, test)) == 0 and len(train) + len(test) == n


def test_folds_need_enough_rows():
    with pytest.raises(ValueError):
        stratified_folds([0, 1, 0], 5)


def test_cv_deterministic_and_noise_near_half():
    rng = np.random.default_rng(0)
    X = rng.random((1000, 5))
    y = rng.integers(0, 2, 1000)
    spec = LearnerSpec("logistic", penalty="l2", lam=1.0)
    a = cross_validate(X, y, spec, 5, seed=3)
    b = cross_validate(X, y, spec, 5, seed=3)
    assert a.fold_auc == b.fold_auc and a.fold_sizes == [200] * 5
    assert 0.45 <= a.mean_auc <= 0.55
    assert a.to_json()["learner"] == "logistic-l2"


def test_cv_forest_noise_near_half():
    rng = np.random.default_rng(1)
    X = rng.random((600, 4))
    y = rng.integers(0, 2, 600)
    res = cross_validate(X, y, LearnerSpec("forest", n_trees=20), 5, seed=0)
    assert 0.45 <= res.mean_auc <= 0.55


def test_cv_rejects_single_class_fold():
    X = np.zeros((6, 1))
    with pytest.raises(ValueError, match="lacks a class"):
        cross_validate(X, [1, 0, 0, 0, 0, 0], LearnerSpec("logistic"), 5)


def test_choose_threshold_examples():
    s = np.array([0.1, 0.2, 0.9])
    t = choose_threshold(s, 1 / 3)
    assert 0.2 <= t < 0.9 and (s > t).sum() == 1
    assert choose_threshold(s, 1.0) < 0.1
    assert choose_threshold(s, 0.0) >= 0.9
    with pytest.raises(ValueError):
        choose_threshold([0.4, 0.4], 0.5)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.integers(0, 6), min_size=2, max_size=30), st.floats(0, 1))
def test_choose_threshold_brute_force(values, rate):
    s = np.asarray(values, dtype=float)
    if s.min() == s.max():
        return
    cands = sorted(set(values) | {s.min() - 1})
    ok = [c for c in cands if (s > c).sum() <= np.floor(rate * len(s) + 1e-9)]
    t = choose_threshold(s, rate)
    assert (s > t).sum() == (s > min(ok)).sum()
    assert (s > t).sum() <= rate * len(s) + 1e-9
