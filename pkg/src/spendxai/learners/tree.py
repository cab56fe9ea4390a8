"""Binary CART classification trees with Gini splits on numeric thresholds."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class DecisionTree:
    """Flat array representation; node 0 is the root, leaves have feature -1.

    Samples with ``x[feature] <= threshold`` go left.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    n_samples: np.ndarray
    n_pos: np.ndarray
    n_features: int
    max_depth: int | None = None
    min_leaf: int = 1

    @property
    def n_nodes(self) -> int:
        return len(self.feature)

    @property
    def value(self) -> np.ndarray:
        """Positive-class fraction at each node."""
        return self.n_pos / self.n_samples

    @property
    def impurity(self) -> np.ndarray:
        p = self.value
        return 2.0 * p * (1.0 - p)

    def is_leaf(self) -> np.ndarray:
        return self.feature < 0

    def depth(self) -> int:
        depths = np.zeros(self.n_nodes, dtype=np.int64)
        for i in range(self.n_nodes):
            if self.feature[i] >= 0:
                depths[self.left[i]] = depths[self.right[i]] = depths[i] + 1
        return int(depths.max())

    def apply(self, X) -> np.ndarray:
        """Leaf index reached by each row of X."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        node = np.zeros(len(X), dtype=np.int64)
        rows = np.arange(len(X))
        while True:
            f = self.feature[node]
            inner = f >= 0
            if not inner.any():
                return node
            go_left = X[rows, np.where(inner, f, 0)] <= self.threshold[node]
            node = np.where(inner, np.where(go_left, self.left[node], self.right[node]), node)

    def predict_proba(self, X) -> np.ndarray:
        return self.value[self.apply(X)]

    def predict(self, X) -> np.ndarray:
        """Leaf majority; an exact tie goes to the negative (default) class."""
        return (self.predict_proba(X) > 0.5).astype(np.int64)

    def paths(self):
        """Yield (leaf, [(feature, op, threshold), ...]) for every root-to-leaf path."""
        stack = [(0, [])]
        while stack:
            node, conds = stack.pop()
            f = self.feature[node]
            if f < 0:
                yield node, conds
                continue
            t = float(self.threshold[node])
            stack.append((int(self.right[node]), conds + [(int(f), ">", t)]))
            stack.append((int(self.left[node]), conds + [(int(f), "<=", t)]))

    def to_json(self) -> dict:
        return {
            "feature": self.feature.tolist(),
            "threshold": self.threshold.tolist(),
            "left": self.left.tolist(),
            "right": self.right.tolist(),
            "n_samples": self.n_samples.tolist(),
            "n_pos": self.n_pos.tolist(),
            "n_features": self.n_features,
            "max_depth": self.max_depth,
            "min_leaf": self.min_leaf,
        }

    @classmethod
    def from_json(cls, d: dict) -> "DecisionTree":
        return cls(
            feature=np.array(d["feature"], dtype=np.int64),
            threshold=np.array(d["threshold"], dtype=float),
            left=np.array(d["left"], dtype=np.int64),
            right=np.array(d["right"], dtype=np.int64),
            n_samples=np.array(d["n_samples"], dtype=np.int64),
            n_pos=np.array(d["n_pos"], dtype=float),
            n_features=int(d["n_features"]),
            max_depth=d.get("max_depth"),
            min_leaf=int(d.get("min_leaf", 1)),
        )


def best_split(Xn: np.ndarray, yn: np.ndarray, min_leaf: int = 1):
    """Best Gini split of a node over the columns of ``Xn``.

    Returns (column, threshold, weighted child cost) or None when no column
    admits a split with ``min_leaf`` samples on each side. The cost is
    n_L*gini_L/2 + n_R*gini_R/2; ties go to the lowest column, then the
    lowest threshold. Thresholds are midpoints of consecutive distinct values.
    """
    n, m = Xn.shape
    lo, hi = min_leaf - 1, n - min_leaf  # split after sorted position p, p in [lo, hi)
    if hi <= lo or m == 0:
        return None
    order = np.argsort(Xn, axis=0, kind="stable")
    xs = np.take_along_axis(Xn, order, axis=0)
    ys = yn[order]
    pos_left = np.cumsum(ys, axis=0)[lo:hi]
    total = yn.sum()
    n_left = np.arange(lo + 1, hi + 1, dtype=float)[:, None]
    n_right = n - n_left
    pos_right = total - pos_left
    cost = pos_left * (n_left - pos_left) / n_left + pos_right * (n_right - pos_right) / n_right
    valid = xs[lo + 1 : hi + 1] > xs[lo:hi]
    cost = np.where(valid, cost, np.inf)
    k = int(np.argmin(cost.T.ravel()))
    col, p = divmod(k, hi - lo)
    best = cost[p, col]
    if not np.isfinite(best):
        return None
    a, b = xs[lo + p, col], xs[lo + p + 1, col]
    thr = a + (b - a) / 2.0
    if not a <= thr < b:
        thr = a
    return col, float(thr), float(best)


def fit_tree(
    X,
    y,
    max_depth: int | None = None,
    min_leaf: int = 1,
    mtry: int | None = None,
    rng: np.random.Generator | None = None,
) -> DecisionTree:
    """Grow a CART tree greedily by Gini reduction.

    With ``mtry`` set, each node draws ``mtry`` candidate features at random;
    if none of them admits a split the remaining features are tried too.
    Zero-gain splits are allowed (XOR-type structure needs them).
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise ValueError("X must be 2-D with one row per label")
    if len(y) == 0:
        raise ValueError("cannot fit a tree on empty data")
    if not np.isin(y, (0, 1)).all():
        raise ValueError("labels must be binary 0/1")
    if min_leaf < 1:
        raise ValueError("min_leaf must be >= 1")
    n, m = X.shape
    if mtry is not None and not 1 <= mtry <= m:
        raise ValueError(f"mtry must be in 1..{m}")
    if mtry is not None and mtry < m and rng is None:
        raise ValueError("feature subsampling needs an rng")
    yf = y.astype(float)

    feature, threshold, left, right, n_samples, n_pos = [], [], [], [], [], []
    # (sample indices, depth, parent node, is_left)
    stack = [(np.arange(n), 0, -1, False)]
    while stack:
        idx, depth, parent, is_left = stack.pop()
        node = len(feature)
        if parent >= 0:
            (left if is_left else right)[parent] = node
        pos = float(yf[idx].sum())
        feature.append(-1)
        threshold.append(0.0)
        left.append(-1)
        right.append(-1)
        n_samples.append(len(idx))
        n_pos.append(pos)
        if (
            pos == 0
            or pos == len(idx)
            or len(idx) < 2 * min_leaf
            or (max_depth is not None and depth >= max_depth)
        ):
            continue
        split = _split_node(X, yf, idx, min_leaf, mtry, rng)
        if split is None:
            continue
        f, thr = split
        go_left = X[idx, f] <= thr
        feature[node] = f
        threshold[node] = thr
        stack.append((idx[~go_left], depth + 1, node, False))
        stack.append((idx[go_left], depth + 1, node, True))

    return DecisionTree(
        feature=np.array(feature, dtype=np.int64),
        threshold=np.array(threshold, dtype=float),
        left=np.array(left, dtype=np.int64),
        right=np.array(right, dtype=np.int64),
        n_samples=np.array(n_samples, dtype=np.int64),
        n_pos=np.array(n_pos, dtype=float),
        n_features=m,
        max_depth=max_depth,
        min_leaf=min_leaf,
    )


def _split_node(X, yf, idx, min_leaf, mtry, rng):
    m = X.shape[1]
    yn = yf[idx]
    if mtry is None or mtry >= m:
        groups = [np.arange(m)]
    else:
        perm = rng.permutation(m)
        groups = [np.sort(perm[:mtry]), np.sort(perm[mtry:])]
    for feats in groups:
        res = best_split(X[np.ix_(idx, feats)], yn, min_leaf)
        if res is not None:
            col, thr, _ = res
            return int(feats[col]), thr
    return None


def tree_importances(tree: DecisionTree) -> np.ndarray:
    """Per-feature sum of (node sample fraction) x (Gini reduction) over splits."""
    imp = np.zeros(tree.n_features)
    total = tree.n_samples[0]
    gini = tree.impurity
    for i in np.flatnonzero(tree.feature >= 0):
        l, r = tree.left[i], tree.right[i]
        n = tree.n_samples[i]
        child = (tree.n_samples[l] * gini[l] + tree.n_samples[r] * gini[r]) / n
        imp[tree.feature[i]] += n / total * (gini[i] - child)
    return np.maximum(imp, 0.0)
