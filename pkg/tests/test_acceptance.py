"""End-to-end acceptance checks, one test per criterion, each printing PASS/FAIL."""

import math
import time
from datetime import datetime, timedelta, timezone
from decimal import Decimal

import numpy as np

from oracles import fidelity_oracle
from spendxai._util import sha256_file, write_json
from spendxai.cli import main
from spendxai.counterfactuals import (
    CounterfactualExplanation,
    compute_reference_values,
    explanation_analytics,
    sedc_explain,
)
from spendxai.features import FeatureRegistry, feature_vector
from spendxai.ingest import CategoryVocabulary, PersonLedger, TransactionRecord, Window
from spendxai.learners import auc, choose_threshold, cross_validate, fit_forest, stratified_folds
from spendxai.learners.validation import LearnerSpec
from spendxai.rules import evaluate_fidelity, extract_rules, fidelity_metrics, random_baseline
from spendxai.synth import PlantedRuleSpec, brute_force_auc, brute_force_counterfactual, category_names, generate_dataset
from spendxai.targets import build_all_targets, discretize, template_scales

CATS = category_names(30)
GRADED = [
    ("n_c:" + CATS[0], ">", 0.1),
    ("a_c:" + CATS[1], ">", 0.1),
    ("n_c:" + CATS[2], ">", 0.05),
    ("a_c:" + CATS[3], ">", 0.08),
    ("n_c:" + CATS[4], "<=", 0.02),
    ("a_c:" + CATS[5], ">", 0.05),
]


def high_labels(ds):
    return build_all_targets(ds.person_ids, ds.survey.items, template_scales())[ds.spec.trait].high.astype(int)


def prior_matched_forest(X, y, n_trees, seed):
    model = fit_forest(X, y, n_trees=n_trees, seed=seed)
    model.threshold = choose_threshold(model.score(X), y.mean())
    return model


def out_of_fold_explanations(ds, seed, n_trees=100):
    """Explain every predicted positive with a forest that did not see that person."""
    X, y = ds.feature_matrix().X, high_labels(ds)
    plan = stratified_folds(y, 5, seed)
    expls, truth = [], []
    for k in range(plan.k):
        train, test = plan.split(k)
        model = prior_matched_forest(X[train], y[train], n_trees, seed + k)
        refs = compute_reference_values(X[train])
        for i in test[model.score(X[test]) > model.threshold]:
            e = sedc_explain(X[i], model.score, model.threshold, refs)
            if isinstance(e, CounterfactualExplanation):
                expls.append(e)
                truth.append(int(y[i]))
    return expls, truth


def test_criterion_1_metric_oracles(verdict):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 501))
        s = rng.integers(0, 20, n) if rng.random() < 0.5 else rng.random(n)
        y = rng.integers(0, 2, n)
        y[:2] = [0, 1]
        worst = max(worst, abs(auc(s, y) - brute_force_auc(s, y)))
    exact = 0
    for _ in range(100):
        n = int(rng.integers(1, 60))
        a, b = rng.integers(0, 2, n), rng.integers(0, 2, n)
        m = fidelity_metrics(a, b)
        want = fidelity_oracle(a, b)
        got = (m["fidelity"], m["precision_f"], m["recall_f"], m["fscore_f"])
        exact += all((g is None and w is None) or (w is not None and g == float(w)) for g, w in zip(got, want))
    elapsed = time.perf_counter() - t0
    ok = worst <= 1e-12 and exact == 100 and elapsed < 10
    verdict(1, ok, f"max |auc - brute force| = {worst:.1e}; fidelity quadruples exact {exact}/100; {elapsed:.1f}s")
    assert ok


def test_criterion_2_counterfactual_validity(verdict):
    t0 = time.perf_counter()
    ds = generate_dataset(PlantedRuleSpec(GRADED, n_persons=1000, months=3, seed=11, combine="graded"))
    fm = ds.feature_matrix()
    names = [c[0] for c in GRADED] + ["n_tot", "a_cv", "C_entropy", "n_c:" + CATS[6], "a_c:" + CATS[7], "a_avg"]
    cols = [fm.registry.index(n) for n in names]
    X, y = fm.X[:, cols], high_labels(ds)
    train, _ = stratified_folds(y, 5, 11).split(0)
    model = prior_matched_forest(X[train], y[train], 100, 11)
    refs = compute_reference_values(X[train])
    f, t = model.score, model.threshold
    positives = np.flatnonzero(f(X) > t)
    n_valid = n_irreducible = n_bound = n_equal = n_expl = 0
    for i in positives:
        e = sedc_explain(X[i], f, t, refs)
        if not isinstance(e, CounterfactualExplanation):
            continue
        n_expl += 1
        z = X[i].copy()
        z[list(e.features)] = refs.values[list(e.features)]
        n_valid += f(z[None])[0] <= t
        irreducible = True
        for j in e.features:
            w = X[i].copy()
            rest = [k for k in e.features if k != j]
            w[rest] = refs.values[rest]
            irreducible &= f(w[None])[0] > t
        n_irreducible += irreducible
        best = brute_force_counterfactual(X[i], f, t, refs)
        n_bound += best is not None and len(best) <= e.size
        n_equal += best is not None and len(best) == e.size
    elapsed = time.perf_counter() - t0
    ok = n_expl > 0 and n_valid == n_irreducible == n_bound == n_expl and elapsed < 120
    verdict(
        2,
        ok,
        f"N=1000, M={X.shape[1]}, {n_expl}/{len(positives)} positives explained; flip {n_valid}/{n_expl}, "
        f"irreducible {n_irreducible}/{n_expl}, >= brute-force minimum {n_bound}/{n_expl}, "
        f"equal to minimum {n_equal / max(n_expl, 1):.3f}; {elapsed:.1f}s",
    )
    assert ok


def test_criterion_3_surrogate_recovery(verdict):
    t0 = time.perf_counter()
    cats = category_names(46)
    planted = [("n_c:" + cats[0], ">", 0.1), ("a_c:" + cats[1], ">", 0.1)]
    ds = generate_dataset(PlantedRuleSpec(planted, 0.95, 0.05, n_persons=5000, n_categories=46, months=3, seed=5))
    fm = ds.feature_matrix()
    X, y = fm.X, high_labels(ds)
    train, test = stratified_folds(y, 5, 5).split(0)
    model = prior_matched_forest(X[train], y[train], 100, 5)
    rules = extract_rules(model, X[train], max_depth=3)
    report = evaluate_fidelity(rules, model, X[test])
    base = random_baseline(model, X[test], rate=float(rules.predict(X[test]).mean()), repetitions=1000, seed=5)
    mentioned = {fm.registry.names[j] for j in rules.features()}
    both = {planted[0][0], planted[1][0]} <= mentioned
    margin = report.fidelity - base["expected"]["fidelity"]
    elapsed = time.perf_counter() - t0
    ok = X.shape[1] == 100 and report.fidelity >= 0.90 and both and margin >= 0.15 and elapsed < 60
    verdict(
        3,
        ok,
        f"N=5000, M={X.shape[1]}; held-out fidelity {report.fidelity:.4f}, random baseline "
        f"{base['expected']['fidelity']:.4f} (margin {margin:.4f}); planted features in rules: {both}; {elapsed:.1f}s",
    )
    assert ok


def test_criteria_4_and_5_explanation_size(verdict):
    rs, tp_fp = [], []
    for seed in range(5):
        spec = PlantedRuleSpec(GRADED, 1.0, 0.0, n_persons=1500, months=3, seed=seed, combine="graded")
        ds = generate_dataset(spec)
        expls, truth = out_of_fold_explanations(ds, seed)
        an = explanation_analytics(expls, truth, ds.feature_matrix().shape[1])
        rs.append(an.score_size_r)
        tp_fp.append((an.mean_size_tp, an.mean_size_fp))
    ok4 = all(r is not None and r > 0.2 for r in rs)
    ok5 = all(tp is not None and fp is not None and tp >= fp for tp, fp in tp_fp)
    verdict(4, ok4, "score-size Pearson r per seed: " + ", ".join(f"{r:.3f}" for r in rs))
    verdict(5, ok5, "mean size TP/FP per seed: " + ", ".join(f"{tp:.2f}/{fp:.2f}" for tp, fp in tp_fp))
    assert ok4 and ok5


def test_criterion_6_target_construction(verdict):
    rng = np.random.default_rng(6)
    maps = [lambda s: np.exp(s / len(s)), lambda s: 4 * s - 1, lambda s: np.cbrt(s) + s**3]
    failures = 0
    sizes = [3, 10, 99, 300, 1000, 5000, 12345]
    for n in sizes:
        scores = rng.permutation(n) + rng.random(n) * 0.5
        high, low = discretize(scores)
        failures += abs(high.mean() - 1 / 3) > 2 / n or abs(low.mean() - 1 / 3) > 2 / n
        failures += bool(np.any(high & low))
        for f in maps:
            h, l = discretize(f(scores))
            failures += not (np.array_equal(h, high) and np.array_equal(l, low))
    verdict(6, failures == 0, f"{len(sizes)} tie-free score sets (N up to {max(sizes)}), 3 monotone maps; {failures} failures")
    assert failures == 0


def test_criterion_7_feature_invariants(verdict):
    rng = np.random.default_rng(7)
    vocab = CategoryVocabulary(list("ABCDEFGH"))
    reg = FeatureRegistry(vocab)
    window = Window.year(2019)
    failures = 0
    for i in range(100):
        n = int(rng.integers(1, 60))
        cents = rng.integers(1, 100_000, n)
        days = rng.integers(0, 365, n)
        cats = rng.choice(list("ABCDEFGH"), n)
        k = int(rng.integers(2, 1000))

        def ledger(scale):
            recs = [
                TransactionRecord(
                    "p",
                    datetime(2019, 1, 1, 12, tzinfo=timezone.utc) + timedelta(days=int(d)),
                    Decimal(int(c) * scale).scaleb(-2),
                    str(cat),
                )
                for c, d, cat in zip(cents, days, cats)
            ]
            return PersonLedger("p", recs, window)

        v, w = feature_vector(ledger(1), reg), feature_vector(ledger(k), reg)
        n_c, a_c = v[reg.count_block()], v[reg.amount_block()]
        failures += abs(n_c.sum() - 1) > 1e-9 or abs(a_c.sum() - 1) > 1e-9
        failures += not (0 <= v[-1] <= math.log(v[-2]) + 1e-12)
        same = [0, 3, 5, *range(6, len(reg))]
        failures += not np.allclose(w[same], v[same], rtol=1e-9, atol=1e-12)
        failures += not np.allclose(w[[1, 2, 4]], k * v[[1, 2, 4]], rtol=1e-9)
    verdict(7, failures == 0, f"100 random ledgers; {failures} invariant failures")
    assert failures == 0


def test_criterion_8_chance_level(verdict):
    ds = generate_dataset(PlantedRuleSpec(GRADED, n_persons=2000, months=3, seed=8, combine="graded"))
    X, y = ds.feature_matrix().X, high_labels(ds)
    means = []
    for seed in range(5):
        permuted = np.random.default_rng(seed).permutation(y)
        means.append(cross_validate(X, permuted, LearnerSpec("forest", n_trees=50), 5, seed=seed).mean_auc)
    ok = all(0.45 <= m <= 0.55 for m in means)
    verdict(8, ok, "N=2000, 50 trees, permuted labels, mean 5-fold AUC per seed: " + ", ".join(f"{m:.4f}" for m in means))
    assert ok


def test_criterion_9_determinism(verdict, tmp_path):
    spec = write_json(
        tmp_path / "spec.json",
        {"conditions": [list(c) for c in GRADED[:3]], "n_persons": 200, "months": 3, "seed": 9, "combine": "graded"},
    )
    assert main(["synth", "--synth-spec", str(spec), "--out", str(tmp_path / "data")]) == 0
    common = [
        "--transactions", str(tmp_path / "data" / "transactions.csv"),
        "--survey", str(tmp_path / "data" / "survey.csv"),
        "--window-end", "2019-03-31",
        "--n-trees", "30",
        "--baseline-repetitions", "200",
        "--seed", "9",
    ]
    assert main(["run", *common, "--out", str(tmp_path / "a")]) == 0
    assert main(["run", *common, "--out", str(tmp_path / "b")]) == 0
    files = sorted(p.name for p in (tmp_path / "a").iterdir())
    same = [n for n in files if sha256_file(tmp_path / "a" / n) == sha256_file(tmp_path / "b" / n)]
    ok = len(files) > 0 and len(same) == len(files) and files == sorted(p.name for p in (tmp_path / "b").iterdir())
    verdict(9, ok, f"two full pipeline runs, {len(same)}/{len(files)} artifacts byte-identical")
    assert ok
