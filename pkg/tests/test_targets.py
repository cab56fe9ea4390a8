import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from spendxai.targets import (
    DegenerateScaleError,
    MinMax,
    ScaleDefinition,
    ScaleDefinitions,
    build_all_targets,
    cronbach_alpha,
    discretize,
    keyed_items,
    minmax_normalize,
    percentile_cutoffs,
    read_targets,
    reliability_report,
    score_scales,
    template_scales,
    write_targets,
)


def test_all_fives_score_five():
    scale = ScaleDefinition("T", (1, 2, 3, 4, 5, 6), (False,) * 6, "trait")
    assert keyed_items(np.full((1, 30), 5), scale).mean() == 5.0


def test_reverse_keyed_pair():
    scale = ScaleDefinition("F", (1, 2), (False, True), "facet", "T")
    items = np.zeros((1, 30), dtype=int)
    items[0, :2] = [1, 5]
    assert keyed_items(items, scale).mean() == 1.0


def test_hand_mean():
    scale = ScaleDefinition("T", (1, 2, 3, 4, 5, 6), (False,) * 6, "trait")
    items = np.zeros((1, 30), dtype=int)
    items[0, :6] = [2, 4, 4, 2, 3, 3]
    assert keyed_items(items, scale).mean() == 3.0


def test_scale_definitions_validate_structure():
    with pytest.raises(ValueError):
        ScaleDefinition("T", (1, 2, 3), (False,) * 3, "trait")
    trait = ScaleDefinition("T", (1, 2, 3, 4, 5, 6), (False,) * 6, "trait")
    facets = [ScaleDefinition(f"F{i}", (2 * i + 1, 2 * i + 2), (False, False), "facet", "T") for i in range(2)]
    bad = facets + [ScaleDefinition("F9", (5, 7), (False, False), "facet", "T")]
    with pytest.raises(ValueError):
        ScaleDefinitions([trait, *bad])


def test_template_roundtrip(tmp_path):
    defs = template_scales()
    assert len(defs.traits) == 5 and len(list(defs)) == 20
    again = ScaleDefinitions.load(defs.save(tmp_path / "s.json"))
    assert again.to_json() == defs.to_json()


def test_identical_columns_alpha_one():
    col = np.array([1, 2, 3, 4, 5, 2.0])
    assert cronbach_alpha(np.column_stack([col] * 4)) == pytest.approx(1.0)


def test_independent_items_alpha_near_zero():
    rng = np.random.default_rng(0)
    assert abs(cronbach_alpha(rng.integers(1, 6, (10_000, 6)))) < 0.05


def test_alpha_hand_table():
    t = np.array([[1, 2], [2, 2], [3, 4], [4, 5]], dtype=float)
    k = 2
    item_var = t[:, 0].var(ddof=1) + t[:, 1].var(ddof=1)  # 5/3 + 9/4
    total_var = t.sum(axis=1).var(ddof=1)  # sums 3,4,7,9 -> 7.5833...
    expected = k / (k - 1) * (1 - item_var / total_var)
    assert cronbach_alpha(t) == pytest.approx(expected, abs=1e-12)
    assert cronbach_alpha(t) == pytest.approx(88 / 91, abs=1e-12)


def test_alpha_degenerate():
    with pytest.raises(DegenerateScaleError):
        cronbach_alpha(np.full((5, 3), 3.0))


def test_minmax_examples():
    assert minmax_normalize([1, 2, 4]).tolist() == pytest.approx([0, 1 / 3, 1])
    assert minmax_normalize([0, 5, 10])[1] == 0.5
    with pytest.raises(ValueError):
        minmax_normalize([2, 2])
    # held-out values use the training split's range
    assert MinMax.fit([0, 10]).transform([5, 20]).tolist() == [0.5, 2.0]


def test_discretize_one_to_hundred_literal_cutoffs():
    scores = np.arange(1, 101)
    high, low = discretize(scores, "literal")
    assert percentile_cutoffs(scores, "literal")[1] == pytest.approx(66.34)
    assert high.sum() == 34
    assert np.flatnonzero(high).min() + 1 == 67
    assert low.sum() == 33


def test_discretize_one_to_hundred_tertiles():
    scores = np.arange(1, 101)
    assert percentile_cutoffs(scores) == pytest.approx((34.0, 67.0))
    high, low = discretize(scores)
    assert high.sum() == 33 and low.sum() == 33


def test_discretize_ties_and_three():
    high, low = discretize(np.full(9, 2.0))
    assert high.sum() == 0 and low.sum() == 0
    high, low = discretize([1, 2, 3])
    assert high.tolist() == [0, 0, 1] and low.tolist() == [1, 0, 0]
    with pytest.raises(ValueError):
        discretize([1, 2])
    with pytest.raises(ValueError):
        discretize([1, 2, 3], "quartile")


@settings(max_examples=60, deadline=None)
@given(st.integers(3, 400), st.integers(0, 2**32 - 1))
def test_label_rates_and_monotone_invariance(n, seed):
    rng = np.random.default_rng(seed)
    scores = rng.permutation(n) + rng.random(n) * 0.5  # tie-free
    high, low = discretize(scores)
    assert abs(high.mean() - 1 / 3) <= 2 / n
    assert abs(low.mean() - 1 / 3) <= 2 / n
    assert not np.any(high & low)
    for f in (np.exp, lambda s: 3 * s - 7, lambda s: np.cbrt(s) + s**3):
        h2, l2 = discretize(f(scores))
        assert np.array_equal(h2, high) and np.array_equal(l2, low)


def test_targets_roundtrip_and_reliability(tmp_path):
    rng = np.random.default_rng(1)
    items = rng.integers(1, 6, (50, 30))
    ids = [f"p{i:02d}" for i in range(50)]
    targets = build_all_targets(ids, items, template_scales())
    assert set(targets) == set(template_scales().names)
    t = targets["Neuroticism"]
    assert np.array_equal(t.raw, score_scales(items, template_scales())["Neuroticism"])
    again = read_targets(write_targets(tmp_path / "t.csv", targets))
    assert np.array_equal(again["Neuroticism"].high, t.high)
    assert np.allclose(again["Openness"].normalized, targets["Openness"].normalized)
    rel = reliability_report(items, template_scales())
    assert set(rel) == set(targets)
