"""Local explanations: SEDC counterfactual feature sets and their analytics.

A counterfactual for a predicted-positive instance is a set of features whose
replacement by reference values (training medians by default) pushes the
model score to or below the decision threshold.
"""

from __future__ import annotations

import heapq
import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .features import FeatureRegistry

ScoreFn = Callable[[np.ndarray], np.ndarray]


@dataclass
class ReferenceValues:
    values: np.ndarray
    strategy: str = "median"

    def to_json(self) -> dict:
        return {"strategy": self.strategy, "values": self.values.tolist()}

    @classmethod
    def from_json(cls, d: dict) -> "ReferenceValues":
        return cls(np.array(d["values"], dtype=float), d["strategy"])


def compute_reference_values(X_train, strategy: str = "median") -> ReferenceValues:
    X_train = np.asarray(X_train, dtype=float)
    if X_train.ndim != 2 or len(X_train) == 0:
        raise ValueError("reference values need a non-empty 2-D training matrix")
    if strategy == "median":
        values = np.median(X_train, axis=0)
    elif strategy == "mean":
        values = X_train.mean(axis=0)
    elif strategy == "mode":
        values = np.array([_mode(col) for col in X_train.T])
    else:
        raise ValueError(f"unknown reference strategy {strategy!r}")
    return ReferenceValues(values, strategy)


def _mode(col: np.ndarray) -> float:
    vals, counts = np.unique(col, return_counts=True)
    return float(vals[np.argmax(counts)])  # ties -> smallest value


@dataclass
class CounterfactualExplanation:
    person_id: str | None
    features: tuple[int, ...]  # in the order the search added them
    score: float
    cf_score: float
    original: tuple[float, ...]
    reference: tuple[float, ...]
    evaluations: int

    @property
    def size(self) -> int:
        return len(self.features)

    def directions(self) -> list[str]:
        """'decrease' when the reference is below the original value, else 'increase'."""
        return ["decrease" if r < o else "increase" for o, r in zip(self.original, self.reference)]

    def to_json(self, names: Sequence[str] | None = None) -> dict:
        return {
            "person_id": self.person_id,
            "features": [
                {"name": names[j] if names is not None else j, "index": j, "original": o, "reference": r, "direction": d}
                for j, o, r, d in zip(self.features, self.original, self.reference, self.directions())
            ],
            "score": self.score,
            "cf_score": self.cf_score,
            "evaluations": self.evaluations,
        }

    @classmethod
    def from_json(cls, d: dict) -> "CounterfactualExplanation":
        feats = d["features"]
        return cls(
            d["person_id"],
            tuple(int(f["index"]) for f in feats),
            float(d["score"]),
            float(d["cf_score"]),
            tuple(float(f["original"]) for f in feats),
            tuple(float(f["reference"]) for f in feats),
            int(d["evaluations"]),
        )


@dataclass
class NotExplainable:
    person_id: str | None
    score: float
    best_score: float
    best_features: tuple[int, ...]
    evaluations: int
    reason: str

    def to_json(self) -> dict:
        return {
            "person_id": self.person_id,
            "score": self.score,
            "best_score": self.best_score,
            "best_features": list(self.best_features),
            "evaluations": self.evaluations,
            "reason": self.reason,
        }


def _perturb(x: np.ndarray, ref: np.ndarray, subsets: Sequence[Sequence[int]]) -> np.ndarray:
    X = np.repeat(x[None, :], len(subsets), axis=0)
    for i, s in enumerate(subsets):
        idx = list(s)
        X[i, idx] = ref[idx]
    return X


def prune_explanation(x, features, score_fn: ScoreFn, threshold: float, ref) -> tuple[tuple[int, ...], float, int]:
    """Drop members (scanning in insertion order, repeated to a fixed point)
    while the remaining set still flips. Returns (features, score, evaluations)."""
    x = np.asarray(x, dtype=float)
    feats = list(features)
    evals = 0
    changed = True
    while changed and len(feats) > 1:
        changed = False
        for m in list(feats):
            if len(feats) == 1:
                break
            rest = [f for f in feats if f != m]
            evals += 1
            if score_fn(_perturb(x, ref, [rest]))[0] <= threshold:
                feats = rest
                changed = True
    evals += 1
    final = float(score_fn(_perturb(x, ref, [feats]))[0])
    return tuple(feats), final, evals


def sedc_explain(
    x,
    score_fn: ScoreFn,
    threshold: float,
    refs: ReferenceValues,
    max_size: int = 30,
    max_evals: int = 50_000,
    person_id: str | None = None,
    prune: bool = True,
) -> CounterfactualExplanation | NotExplainable:
    """Best-first search for a feature set whose replacement flips x to the default class.

    The open set starts with every single candidate feature. The subset with
    the lowest score is expanded by one more candidate at a time; the search
    stops at the first evaluated subset scoring <= threshold. Ties go to the
    lexicographically smallest subset.
    """
    x = np.asarray(x, dtype=float)
    ref = np.asarray(refs.values, dtype=float)
    s0 = float(score_fn(x[None, :])[0])
    if not s0 > threshold:
        raise ValueError(f"instance is not predicted positive (score {s0} <= threshold {threshold})")
    candidates = [int(j) for j in np.flatnonzero(x != ref)]
    if not candidates:
        return NotExplainable(person_id, s0, s0, (), 0, "no candidate features")

    evals = 0
    best_score, best_set = s0, ()
    heap: list = []
    seen = set()
    frontier = [(j,) for j in candidates]
    seen.update(frozenset(s) for s in frontier)
    while frontier:
        frontier = frontier[: max(0, max_evals - evals)]
        if not frontier:
            break
        scores = score_fn(_perturb(x, ref, frontier))
        evals += len(frontier)
        keyed = sorted(zip(scores.tolist(), (tuple(sorted(s)) for s in frontier), frontier))
        low_score, _, low_set = keyed[0]
        if low_score < best_score:
            best_score, best_set = low_score, low_set
        if low_score <= threshold:
            feats, cf, extra = (
                prune_explanation(x, low_set, score_fn, threshold, ref) if prune else (low_set, low_score, 0)
            )
            return CounterfactualExplanation(
                person_id, feats, s0, cf, tuple(x[list(feats)]), tuple(ref[list(feats)]), evals + extra
            )
        for item in keyed:
            if len(item[2]) < max_size:
                heapq.heappush(heap, item)
        if not heap:
            break
        _, _, parent = heapq.heappop(heap)
        members = set(parent)
        frontier = []
        for j in candidates:
            if j in members:
                continue
            key = frozenset(parent + (j,))
            if key not in seen:
                seen.add(key)
                frontier.append(parent + (j,))
    reason = "evaluation budget exhausted" if evals >= max_evals else "search space exhausted"
    return NotExplainable(person_id, s0, best_score, best_set, evals, reason)


def model_scorer(model) -> tuple[ScoreFn, float]:
    return model.score, float(model.threshold)


def explain_positives(
    X,
    person_ids: Sequence[str],
    model,
    refs: ReferenceValues,
    max_size: int = 30,
    max_evals: int = 50_000,
) -> list[CounterfactualExplanation | NotExplainable]:
    """Explain every row the model classifies positive, in person_id order."""
    score_fn, t = model_scorer(model)
    X = np.asarray(X, dtype=float)
    scores = score_fn(X)
    out = []
    for i in sorted(np.flatnonzero(scores > t), key=lambda i: person_ids[i]):
        out.append(sedc_explain(X[i], score_fn, t, refs, max_size, max_evals, person_id=person_ids[i]))
    return out


# -- rendering ----------------------------------------------------------------

_OVERALL_PHRASES = {
    "n_tot": ("your number of transactions was {}", "lower", "higher"),
    "a_tot": ("your total spending was {}", "lower", "higher"),
    "a_avg": ("your average transaction amount was {}", "lower", "higher"),
    "a_cv": ("the variability of your spending amount was {}", "lower", "higher"),
    "a_avg_daily": ("your average daily spending was {}", "lower", "higher"),
    "a_cv_daily": ("the variability of your daily spending was {}", "lower", "higher"),
    "C_tot": ("the number of categories you spent in was {}", "lower", "higher"),
    "C_entropy": ("the diversity of your spending across categories was {}", "lower", "higher"),
}


def _join(items: list[str]) -> str:
    return items[0] if len(items) == 1 else ", ".join(items[:-1]) + " and " + items[-1]


def render_counterfactual(expl: CounterfactualExplanation, registry: FeatureRegistry, predicted: str = "High") -> str:
    """Sentence of the form 'If you had spent less frequently in A and B, and more
    money on C, and the variability of your spending amount was lower → then
    you would not have been predicted as <predicted>'."""
    groups: dict[str, list[str]] = {}
    order = ("less frequently in", "more frequently in", "less money on", "more money on")
    other = []
    for j, direction in zip(expl.features, expl.directions()):
        kind = registry.kind(j)
        down = direction == "decrease"
        if kind in ("count", "amount"):
            key = ("less " if down else "more ") + ("frequently in" if kind == "count" else "money on")
            groups.setdefault(key, []).append(registry.category(j))
        else:
            template, lo, hi = _OVERALL_PHRASES[registry.names[j]]
            other.append(template.format(lo if down else hi))
    spent = [f"{k} {_join(groups[k])}" for k in order if k in groups]
    clauses = []
    if spent:
        clauses.append("you had spent " + ", and ".join(spent))
    clauses.extend(other)
    body = ", and ".join(clauses)
    return f"If {body} → then you would not have been predicted as {predicted}"


# -- analytics ----------------------------------------------------------------


def jaccard(a, b) -> float:
    a, b = set(a), set(b)
    union = a | b
    return len(a & b) / len(union) if union else 1.0


def pairwise_similarity(sets: Sequence, max_pairs: int = 200_000, seed: int = 0, bins: int = 10) -> dict:
    """Jaccard similarity over all unordered pairs, or a seeded sample of
    ``max_pairs`` pairs when there are more."""
    sets = [frozenset(s.features if isinstance(s, CounterfactualExplanation) else s) for s in sets]
    n = len(sets)
    if n < 2:
        raise ValueError("pairwise similarity needs at least 2 explanations")
    total = n * (n - 1) // 2
    if total <= max_pairs:
        pairs = itertools.combinations(range(n), 2)
        sampled = False
    else:
        rng = np.random.default_rng(seed)
        i = rng.integers(0, n, max_pairs)
        j = rng.integers(0, n - 1, max_pairs)
        j = np.where(j >= i, j + 1, j)
        pairs = zip(i.tolist(), j.tolist())
        sampled = True
    sims = np.array([jaccard(sets[a], sets[b]) for a, b in pairs])
    hist, edges = np.histogram(sims, bins=bins, range=(0.0, 1.0))
    return {
        "n_pairs": int(len(sims)),
        "total_pairs": total,
        "sampled": sampled,
        "mean": float(sims.mean()),
        "fraction_zero": float(np.mean(sims == 0.0)),
        "histogram": hist.tolist(),
        "bin_edges": edges.tolist(),
    }


def pearson_r(a, b) -> float | None:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    da, db = a - a.mean(), b - b.mean()
    denom = math.sqrt(float(da @ da) * float(db @ db))
    return float(da @ db / denom) if denom > 0 else None


@dataclass
class ExplanationAnalytics:
    n_explained: int
    n_not_explainable: int
    mean_size: float | None
    median_size: float | None
    size_fraction: float | None
    uniqueness: float | None
    similarity: dict | None
    score_size_r: float | None
    mean_size_tp: float | None
    mean_size_fp: float | None
    n_tp: int = 0
    n_fp: int = 0
    degenerate: list = field(default_factory=list)

    def to_json(self) -> dict:
        return dict(self.__dict__)


def explanation_analytics(
    expls: Sequence[CounterfactualExplanation],
    labels: Sequence[int] | None,
    n_features: int,
    n_not_explainable: int = 0,
    max_pairs: int = 200_000,
    seed: int = 0,
) -> ExplanationAnalytics:
    """Size, uniqueness, overlap and confidence-vs-size statistics.

    ``labels`` are the true classes of the explained (predicted positive)
    persons, aligned with ``expls``; they split sizes into TP and FP.
    """
    n = len(expls)
    degenerate = []
    sizes = np.array([e.size for e in expls], dtype=float)
    scores = np.array([e.score for e in expls], dtype=float)
    if n < 2:
        degenerate.append("fewer than 2 explanations")
    counts = Counter(frozenset(e.features) for e in expls)
    uniqueness = sum(1 for e in expls if counts[frozenset(e.features)] == 1) / n if n else None
    r = pearson_r(scores, sizes) if n >= 2 else None
    if n >= 2 and r is None:
        degenerate.append("score_size_r undefined (constant sizes or scores)")
    tp_mean = fp_mean = None
    n_tp = n_fp = 0
    if labels is not None:
        labels = np.asarray(labels)
        if len(labels) != n:
            raise ValueError("labels must align with explanations")
        tp, fp = sizes[labels == 1], sizes[labels == 0]
        n_tp, n_fp = len(tp), len(fp)
        tp_mean = float(tp.mean()) if n_tp else None
        fp_mean = float(fp.mean()) if n_fp else None
    return ExplanationAnalytics(
        n_explained=n,
        n_not_explainable=n_not_explainable,
        mean_size=float(sizes.mean()) if n else None,
        median_size=float(np.median(sizes)) if n else None,
        size_fraction=float(sizes.mean() / n_features) if n else None,
        uniqueness=uniqueness,
        similarity=pairwise_similarity(expls, max_pairs, seed) if n >= 2 else None,
        score_size_r=r,
        mean_size_tp=tp_mean,
        mean_size_fp=fp_mean,
        n_tp=n_tp,
        n_fp=n_fp,
        degenerate=degenerate,
    )
