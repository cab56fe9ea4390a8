"""Random forest of CART trees; the score is the mean leaf positive fraction."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .._util import derive_seed
from .tree import DecisionTree, fit_tree, tree_importances

FOREST_DEFAULTS = {"n_trees": 200, "mtry": "sqrt", "max_depth": None, "min_leaf": 5, "bootstrap": True}


def resolve_mtry(mtry, n_features: int) -> int | None:
    if mtry is None:
        return None
    if mtry == "sqrt":
        return max(1, math.ceil(math.sqrt(n_features)))
    mtry = int(mtry)
    if not 1 <= mtry <= n_features:
        raise ValueError(f"mtry must be in 1..{n_features}, got {mtry}")
    return mtry


@dataclass
class ForestModel:
    trees: list[DecisionTree]
    seeds: list[int]
    mtry: int | None
    threshold: float = 0.5
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        self._packed = None

    @property
    def n_features(self) -> int:
        return self.trees[0].n_features

    def _pack(self):
        if self._packed is None:
            offsets = np.cumsum([0] + [t.n_nodes for t in self.trees[:-1]])
            feat = np.concatenate([t.feature for t in self.trees])
            thr = np.concatenate([t.threshold for t in self.trees])
            left = np.concatenate([np.where(t.left >= 0, t.left + o, -1) for t, o in zip(self.trees, offsets)])
            right = np.concatenate([np.where(t.right >= 0, t.right + o, -1) for t, o in zip(self.trees, offsets)])
            value = np.concatenate([t.value for t in self.trees])
            self._packed = (offsets.astype(np.int64), feat, thr, left, right, value)
        return self._packed

    def tree_scores(self, X) -> np.ndarray:
        """(n_rows, n_trees) matrix of per-tree leaf positive fractions."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        offsets, feat, thr, left, right, value = self._pack()
        node = np.broadcast_to(offsets, (len(X), len(offsets))).copy()
        rows = np.arange(len(X))[:, None]
        while True:
            f = feat[node]
            inner = f >= 0
            if not inner.any():
                break
            go_left = X[rows, np.where(inner, f, 0)] <= thr[node]
            node = np.where(inner, np.where(go_left, left[node], right[node]), node)
        return value[node]

    def score(self, X) -> np.ndarray:
        return self.tree_scores(X).mean(axis=1)

    def classify(self, X) -> np.ndarray:
        return (self.score(X) > self.threshold).astype(np.int64)

    def to_json(self) -> dict:
        return {
            "format": "spendxai.forest",
            "version": 1,
            "mtry": self.mtry,
            "threshold": self.threshold,
            "params": self.params,
            "seeds": [str(s) for s in self.seeds],
            "trees": [t.to_json() for t in self.trees],
        }

    @classmethod
    def from_json(cls, d: dict) -> "ForestModel":
        if d.get("format") != "spendxai.forest":
            raise ValueError("not a forest model document")
        return cls(
            trees=[DecisionTree.from_json(t) for t in d["trees"]],
            seeds=[int(s) for s in d["seeds"]],
            mtry=d["mtry"],
            threshold=float(d["threshold"]),
            params=d.get("params", {}),
        )


def fit_forest(
    X,
    y,
    n_trees: int = 200,
    max_depth: int | None = None,
    mtry="sqrt",
    seed: int = 0,
    min_leaf: int = 5,
    bootstrap: bool = True,
) -> ForestModel:
    """Bagged CART trees with per-split feature subsampling.

    Tree i draws its bootstrap sample and feature subsets from a seed derived
    from (seed, i), so each tree is reproducible on its own.
    """
    if n_trees < 1:
        raise ValueError("n_trees must be >= 1")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    n, m = X.shape
    if n == 0:
        raise ValueError("cannot fit a forest on empty data")
    k = resolve_mtry(mtry, m)
    seeds = [derive_seed(seed, "tree", i) for i in range(n_trees)]
    trees = []
    for s in seeds:
        rng = np.random.default_rng(s)
        idx = rng.integers(0, n, n) if bootstrap else np.arange(n)
        trees.append(fit_tree(X[idx], y[idx], max_depth=max_depth, min_leaf=min_leaf, mtry=k, rng=rng))
    params = {
        "n_trees": n_trees,
        "max_depth": max_depth,
        "mtry": mtry,
        "min_leaf": min_leaf,
        "bootstrap": bootstrap,
        "seed": str(seed),
        "criterion": "gini",
    }
    return ForestModel(trees, seeds, k, params=params)


def feature_importances(model: ForestModel) -> np.ndarray:
    """Mean impurity decrease per feature, averaged over trees, normalized to sum 1.

    Raises ValueError when no tree has a split (all-zero importances).
    """
    imp = np.mean([tree_importances(t) for t in model.trees], axis=0)
    total = imp.sum()
    if total <= 0:
        raise ValueError("degenerate forest: no split reduces impurity")
    return imp / total


def rank_importances(model: ForestModel, names=None, top: int | None = None) -> list[tuple[str | int, float]]:
    imp = feature_importances(model)
    order = sorted(range(len(imp)), key=lambda j: (-imp[j], j))
    if top is not None:
        order = order[:top]
    return [(names[j] if names is not None else j, float(imp[j])) for j in order]
