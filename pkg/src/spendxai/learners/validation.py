"""Stratified K-fold cross-validation, learner dispatch and threshold choice."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .._util import derive_seed
from .forest import ForestModel, fit_forest
from .linear import LinearModel, fit_linear
from .metrics import auc


@dataclass(frozen=True)
class LearnerSpec:
    """What to fit: a forest, or a penalized 'logistic' / 'linear' model."""

    kind: str = "forest"
    n_trees: int = 200
    max_depth: int | None = None
    mtry: int | str | None = "sqrt"
    min_leaf: int = 5
    penalty: str = "l2"
    lam: float | str = 1.0

    def __post_init__(self):
        if self.kind not in ("forest", "logistic", "linear"):
            raise ValueError(f"unknown learner kind {self.kind!r}")

    @property
    def name(self) -> str:
        return "forest" if self.kind == "forest" else f"{self.kind}-{self.penalty}"

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "LearnerSpec":
        return cls(**d)


def fit_learner(spec: LearnerSpec, X, y, seed: int = 0, y_fit=None) -> ForestModel | LinearModel:
    """Fit ``spec``. Linear (identity link) models regress on ``y_fit`` when given."""
    if spec.kind == "forest":
        return fit_forest(
            X, y, n_trees=spec.n_trees, max_depth=spec.max_depth, mtry=spec.mtry, seed=seed, min_leaf=spec.min_leaf
        )
    if spec.kind == "logistic":
        return fit_linear(X, y, penalty=spec.penalty, lam=spec.lam, link="logistic", seed=seed)
    target = y if y_fit is None else y_fit
    return fit_linear(X, target, penalty=spec.penalty, lam=spec.lam, link="identity", seed=seed)


@dataclass
class CVPlan:
    folds: list[np.ndarray]
    seed: int

    @property
    def k(self) -> int:
        return len(self.folds)

    def split(self, i: int) -> tuple[np.ndarray, np.ndarray]:
        test = self.folds[i]
        train = np.sort(np.concatenate([f for j, f in enumerate(self.folds) if j != i]))
        return train, test


def stratified_folds(y, k: int = 5, seed: int = 0) -> CVPlan:
    """Shuffle each class, lay the classes end to end and deal round-robin.

    Fold sizes then differ by at most one and each class is spread evenly.
    """
    y = np.asarray(y)
    n = len(y)
    if k < 2:
        raise ValueError("need at least 2 folds")
    if n < k:
        raise ValueError(f"N={n} is smaller than K={k}")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(y == c)) for c in np.unique(y)])
    assign = np.empty(n, dtype=np.int64)
    assign[order] = np.arange(n) % k
    return CVPlan([np.flatnonzero(assign == i) for i in range(k)], seed)


@dataclass
class CVResult:
    learner: str
    fold_auc: list[float]
    seed: int
    fold_sizes: list[int] = field(default_factory=list)

    @property
    def mean_auc(self) -> float:
        return float(np.mean(self.fold_auc))

    def to_json(self) -> dict:
        return {
            "learner": self.learner,
            "fold_auc": self.fold_auc,
            "mean_auc": self.mean_auc,
            "fold_sizes": self.fold_sizes,
            "seed": str(self.seed),
        }


def cross_validate(X, y, spec: LearnerSpec, k: int = 5, seed: int = 0, y_fit=None) -> CVResult:
    """Per-fold and mean held-out AUC of ``spec`` under stratified K-fold CV."""
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    plan = stratified_folds(y, k, derive_seed(seed, "folds"))
    for i, f in enumerate(plan.folds):
        if len(np.unique(y[f])) < 2:
            raise ValueError(f"fold {i} lacks a class after stratification")
    aucs = []
    for i in range(plan.k):
        train, test = plan.split(i)
        yf = None if y_fit is None else np.asarray(y_fit)[train]
        model = fit_learner(spec, X[train], y[train], seed=derive_seed(seed, "fold", i), y_fit=yf)
        aucs.append(auc(model.score(X[test]), y[test]))
    return CVResult(spec.name, aucs, seed, [len(f) for f in plan.folds])


def choose_threshold(scores, rate: float) -> float:
    """Smallest t with fraction(scores > t) <= rate.

    Candidates are the distinct scores plus the float just below the minimum.
    """
    scores = np.asarray(scores, dtype=float)
    if len(scores) == 0 or scores.min() == scores.max():
        raise ValueError("threshold needs non-constant scores")
    if not 0.0 <= rate <= 1.0:
        raise ValueError("rate must lie in [0, 1]")
    allowed = int(np.floor(rate * len(scores) + 1e-9))
    below = np.nextafter(scores.min(), -np.inf)
    if len(scores) <= allowed:
        return float(below)
    candidates = np.unique(scores)
    srt = np.sort(scores)
    above = len(scores) - np.searchsorted(srt, candidates, side="right")
    return float(candidates[np.argmax(above <= allowed)])
