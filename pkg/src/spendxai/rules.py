"""Global explanations: a shallow CART surrogate of a classifier, read as if-then-else rules."""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .learners.tree import DecisionTree, fit_tree

log = logging.getLogger(__name__)

ARROW = "→"
OPS = ("<=", ">")


@dataclass(frozen=True)
class Condition:
    feature: int
    op: str
    threshold: float

    def __post_init__(self):
        if self.op not in OPS:
            raise ValueError(f"comparator must be one of {OPS}, got {self.op!r}")

    def holds(self, X: np.ndarray) -> np.ndarray:
        col = X[:, self.feature]
        return col <= self.threshold if self.op == "<=" else col > self.threshold


@dataclass(frozen=True)
class Rule:
    conditions: tuple[Condition, ...]
    label: str = "positive"

    def fires(self, X: np.ndarray) -> np.ndarray:
        out = np.ones(len(X), dtype=bool)
        for c in self.conditions:
            out &= c.holds(X)
        return out

    def features(self) -> set[int]:
        return {c.feature for c in self.conditions}


@dataclass
class RuleSet:
    """Positive-class rules plus an implicit default. Rules are disjoint tree paths."""

    rules: list[Rule]
    default_class: str = "default"
    provenance: dict = field(default_factory=dict)
    surrogate: DecisionTree | None = field(default=None, repr=False, compare=False)

    def firing(self, X) -> np.ndarray:
        """(n, n_rules) boolean matrix of which rule fires on which row."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.rules:
            return np.zeros((len(X), 0), dtype=bool)
        return np.column_stack([r.fires(X) for r in self.rules])

    def predict(self, X) -> np.ndarray:
        return self.firing(X).any(axis=1).astype(np.int64)

    def features(self) -> set[int]:
        return set().union(*(r.features() for r in self.rules)) if self.rules else set()

    def to_json(self, names: Sequence[str] | None = None) -> dict:
        def fname(j):
            return names[j] if names is not None else j

        return {
            "rules": [
                {
                    "conditions": [
                        {"feature": fname(c.feature), "op": c.op, "threshold": c.threshold} for c in r.conditions
                    ],
                    "class": r.label,
                }
                for r in self.rules
            ],
            "default_class": self.default_class,
            "provenance": self.provenance,
        }

    @classmethod
    def from_json(cls, d: dict, names: Sequence[str] | None = None) -> "RuleSet":
        index = {n: i for i, n in enumerate(names)} if names is not None else None

        def fidx(f):
            return index[f] if index is not None and isinstance(f, str) else int(f)

        rules = [
            Rule(
                tuple(Condition(fidx(c["feature"]), c["op"], float(c["threshold"])) for c in r["conditions"]),
                r.get("class", "positive"),
            )
            for r in d["rules"]
        ]
        return cls(rules, d.get("default_class", "default"), d.get("provenance", {}))


def _predictions(model, X) -> np.ndarray:
    if hasattr(model, "classify"):
        return np.asarray(model.classify(X), dtype=np.int64)
    if callable(model):
        return np.asarray(model(X), dtype=np.int64)
    return np.asarray(model, dtype=np.int64)


def extract_rules(
    model,
    X_train,
    max_depth: int = 3,
    min_leaf: int = 5,
    provenance: dict | None = None,
) -> RuleSet:
    """Fit a depth-limited CART tree to the model's predicted classes on X_train.

    ``model`` is anything with ``classify(X)``, a callable returning 0/1, or
    the predicted classes themselves. Every root-to-leaf path whose leaf has a
    strict positive majority becomes one rule.
    """
    X_train = np.asarray(X_train, dtype=float)
    y_hat = _predictions(model, X_train)
    prov = {"surrogate_depth": max_depth, "min_leaf": min_leaf, **(provenance or {})}
    tree = fit_tree(X_train, y_hat, max_depth=max_depth, min_leaf=min_leaf)
    if len(np.unique(y_hat)) < 2:
        log.warning("model predicts a single class on the training split; no rules extracted")
        return RuleSet([], provenance=prov, surrogate=tree)
    value = tree.value
    rules = [
        Rule(tuple(Condition(f, op, t) for f, op, t in conds))
        for leaf, conds in tree.paths()
        if value[leaf] > 0.5
    ]
    return RuleSet(rules, provenance=prov, surrogate=tree)


# -- quality of explanation ---------------------------------------------------


def fidelity_metrics(y_model, y_rules) -> dict:
    """Fidelity, precision_f, recall_f and fscore_f with the model's classes as truth.

    Undefined ratios come back as None and are named in ``degenerate``.
    """
    y_model = np.asarray(y_model, dtype=np.int64)
    y_rules = np.asarray(y_rules, dtype=np.int64)
    if y_model.shape != y_rules.shape or y_model.ndim != 1 or len(y_model) == 0:
        raise ValueError("need two equal-length, non-empty 1-D label vectors")
    n = len(y_model)
    tp = int(np.sum((y_model == 1) & (y_rules == 1)))
    fp = int(np.sum((y_model == 0) & (y_rules == 1)))
    fn = int(np.sum((y_model == 1) & (y_rules == 0)))
    agree = int(np.sum(y_model == y_rules))
    degenerate = []
    precision = tp / (tp + fp) if tp + fp else None
    recall = tp / (tp + fn) if tp + fn else None
    if precision is None:
        degenerate.append("precision_f")
    if recall is None:
        degenerate.append("recall_f")
    fscore = 2 * tp / (2 * tp + fp + fn) if (2 * tp + fp + fn) else None
    if fscore is None:
        degenerate.append("fscore_f")
    return {
        "fidelity": agree / n,
        "precision_f": precision,
        "recall_f": recall,
        "fscore_f": fscore,
        "n": n,
        "tp": tp,
        "fp": fp,
        "fn": fn,
        "degenerate": degenerate,
    }


@dataclass
class FidelityReport:
    fidelity: float
    fscore_f: float | None
    precision_f: float | None
    recall_f: float | None
    n: int
    split: str = "test"
    degenerate: list = field(default_factory=list)
    baseline: dict | None = None

    def to_json(self) -> dict:
        return {
            "fidelity": self.fidelity,
            "fscore_f": self.fscore_f,
            "precision_f": self.precision_f,
            "recall_f": self.recall_f,
            "n": self.n,
            "split": self.split,
            "degenerate": self.degenerate,
            "baseline": self.baseline,
        }


def evaluate_fidelity(rules: RuleSet, model, X_test, split: str = "test") -> FidelityReport:
    """Agreement between rule predictions and model predictions on held-out rows."""
    X_test = np.asarray(X_test, dtype=float)
    m = fidelity_metrics(_predictions(model, X_test), rules.predict(X_test))
    if m["degenerate"]:
        log.warning("degenerate fidelity metrics on %s split: %s", split, ", ".join(m["degenerate"]))
    return FidelityReport(
        fidelity=m["fidelity"],
        fscore_f=m["fscore_f"],
        precision_f=m["precision_f"],
        recall_f=m["recall_f"],
        n=m["n"],
        split=split,
        degenerate=m["degenerate"],
    )


def random_baseline(model, X_test, rate: float | None = None, repetitions: int = 1000, seed: int = 0) -> dict:
    """Quality of a rule-free explainer that says 'positive' with probability ``rate``.

    ``rate`` defaults to the model's positive rate on X_test, which makes
    precision_f and recall_f both equal that rate in expectation. Returns
    simulated means over ``repetitions`` draws and the closed-form expectations.
    Undefined precision in a draw (no positives drawn) counts as 0.
    """
    y_model = _predictions(model, np.asarray(X_test, dtype=float))
    p = float(y_model.mean())
    q = p if rate is None else float(rate)
    if not 0.0 <= q <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    rng = np.random.default_rng(seed)
    draws = rng.random((repetitions, len(y_model))) < q
    pos = y_model == 1
    tp = (draws & pos).sum(axis=1)
    fp = (draws & ~pos).sum(axis=1)
    fn = (~draws & pos).sum(axis=1)
    with np.errstate(divide="ignore", invalid="ignore"):
        precision = np.where(tp + fp > 0, tp / np.maximum(tp + fp, 1), 0.0)
        recall = np.where(tp + fn > 0, tp / np.maximum(tp + fn, 1), 0.0)
        fscore = np.where(2 * tp + fp + fn > 0, 2 * tp / np.maximum(2 * tp + fp + fn, 1), 0.0)
    fidelity = (draws == pos).mean(axis=1)
    expected_f = 2 * p * q / (p + q) if p + q > 0 else 0.0
    return {
        "rate": q,
        "model_positive_rate": p,
        "repetitions": repetitions,
        "seed": str(seed),
        "fidelity": float(fidelity.mean()),
        "fidelity_sd": float(fidelity.std()),
        "precision_f": float(precision.mean()),
        "recall_f": float(recall.mean()),
        "fscore_f": float(fscore.mean()),
        "expected": {
            "fidelity": p * q + (1 - p) * (1 - q),
            "precision_f": p if q > 0 else 0.0,
            "recall_f": q,
            "fscore_f": expected_f,
        },
    }


# -- text form ----------------------------------------------------------------


def _fmt(x: float, digits: int) -> str:
    return format(x, f".{digits}g")


def render_rules(
    rules: RuleSet,
    labels: Sequence[str],
    positive: str = "High",
    default: str = "Default",
    digits: int = 4,
) -> str:
    lines = []
    for r in rules.rules:
        clauses = " and ".join(f"({labels[c.feature]} {c.op} {_fmt(c.threshold, digits)})" for c in r.conditions)
        lines.append(f"if {clauses} {ARROW} Model predicts {positive}")
    lines.append(f"else: Model predicts {default}")
    return "\n".join(lines) + "\n"


_CLAUSE = re.compile(r"\((?P<label>.+?) (?P<op><=|>) (?P<thr>[-+0-9.eEinfa]+)\)")


def parse_rules(text: str, labels: Sequence[str]) -> RuleSet:
    """Inverse of :func:`render_rules` (thresholds at printed precision)."""
    index = {l: i for i, l in enumerate(labels)}
    rules = []
    for line in text.splitlines():
        line = line.strip()
        if not line.startswith("if "):
            continue
        body = line[3:].split(f" {ARROW} ")[0]
        conds = []
        for m in _CLAUSE.finditer(body):
            label = m.group("label")
            if label not in index:
                raise ValueError(f"unknown feature label {label!r}")
            conds.append(Condition(index[label], m.group("op"), float(m.group("thr"))))
        rules.append(Rule(tuple(conds)))
    return RuleSet(rules)


def surrogate_fidelity_in_sample(rules: RuleSet, model, X_train) -> float:
    X_train = np.asarray(X_train, dtype=float)
    return float(np.mean(rules.predict(X_train) == _predictions(model, X_train)))

