"""Lasso / ridge penalized linear and logistic regression by coordinate descent.

Objective, on standardized features z = (x - mean) / std:

    sum_i loss(y_i, b + z_i . w) + lam * P(w)

with loss = (y - eta)^2 / 2 (identity link) or the logistic negative
log-likelihood, and P(w) = ||w||_1 (l1) or ||w||^2 / 2 (l2). The intercept
is not penalized. Convergence is declared when the largest KKT violation of
the per-sample averaged gradient drops below ``tol``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

W_FLOOR = 1e-5


class ConvergenceError(RuntimeError):
    def __init__(self, message: str, diagnostics: dict):
        self.diagnostics = diagnostics
        super().__init__(f"{message}: {diagnostics}")


@dataclass
class LinearModel:
    weights: np.ndarray  # on standardized features
    intercept: float
    mean: np.ndarray
    std: np.ndarray
    penalty: str
    lam: float
    link: str
    threshold: float = 0.5
    diagnostics: dict = field(default_factory=dict)

    def linear_predictor(self, X) -> np.ndarray:
        Z = (np.atleast_2d(np.asarray(X, dtype=float)) - self.mean) / self.std
        return self.intercept + Z @ self.weights

    def score(self, X) -> np.ndarray:
        eta = self.linear_predictor(X)
        return expit(eta) if self.link == "logistic" else eta

    def classify(self, X) -> np.ndarray:
        return (self.score(X) > self.threshold).astype(np.int64)

    @property
    def n_nonzero(self) -> int:
        return int(np.count_nonzero(self.weights))

    def to_json(self) -> dict:
        return {
            "format": "spendxai.linear",
            "version": 1,
            "weights": self.weights.tolist(),
            "intercept": self.intercept,
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "penalty": self.penalty,
            "lam": self.lam,
            "link": self.link,
            "threshold": self.threshold,
            "diagnostics": self.diagnostics,
        }

    @classmethod
    def from_json(cls, d: dict) -> "LinearModel":
        if d.get("format") != "spendxai.linear":
            raise ValueError("not a linear model document")
        return cls(
            weights=np.array(d["weights"], dtype=float),
            intercept=float(d["intercept"]),
            mean=np.array(d["mean"], dtype=float),
            std=np.array(d["std"], dtype=float),
            penalty=d["penalty"],
            lam=float(d["lam"]),
            link=d["link"],
            threshold=float(d["threshold"]),
            diagnostics=d.get("diagnostics", {}),
        )


def standardize_params(X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    return mean, np.where(std > 0, std, 1.0)


def _soft(v: float, t: float) -> float:
    return np.sign(v) * max(abs(v) - t, 0.0)


def _kkt_violation(grad: np.ndarray, w: np.ndarray, lam: float, penalty: str, active: np.ndarray) -> float:
    if penalty == "l2":
        v = np.abs(grad + lam * w)
    else:
        v = np.where(w != 0, np.abs(grad + lam * np.sign(w)), np.maximum(np.abs(grad) - lam, 0.0))
    v = np.where(active, v, 0.0)
    return float(v.max()) if len(v) else 0.0


def _cd_pass(Z, r, w, a, lam, penalty, sw=None, coords=None) -> float:
    """One cyclic sweep of (weighted) least-squares coordinate updates; updates r, w in place."""
    biggest = 0.0
    for j in range(len(w)) if coords is None else coords:
        if a[j] == 0:
            continue
        zj = Z[:, j]
        rho = (zj @ r if sw is None else (sw * zj) @ r) + a[j] * w[j]
        new = _soft(rho, lam) / a[j] if penalty == "l1" else rho / (a[j] + lam)
        delta = new - w[j]
        if delta != 0.0:
            r -= delta * zj
            w[j] = new
            biggest = max(biggest, abs(delta))
    return biggest


def _fit_squared(Z, y, lam, penalty, tol, max_iter):
    n = len(y)
    w = np.zeros(Z.shape[1])
    b = float(y.mean())
    r = y - b
    a = (Z**2).sum(axis=0)
    active = a > 0
    viol = np.inf
    for it in range(1, max_iter + 1):
        _cd_pass(Z, r, w, a, lam, penalty)
        support = np.flatnonzero(w)
        for _ in range(100):
            # cheap sweeps over the current support between full passes
            if _cd_pass(Z, r, w, a, lam, penalty, coords=support) < 1e-12:
                break
        shift = r.mean()
        b += shift
        r -= shift
        viol = _kkt_violation(-(Z.T @ r), w, lam, penalty, active) / n
        if viol <= tol:
            return w, b, {"iterations": it, "kkt_violation": viol}
    raise ConvergenceError("coordinate descent did not converge", {"iterations": max_iter, "kkt_violation": viol})


def _logistic_objective(eta, y, w, lam, penalty) -> float:
    nll = np.sum(np.logaddexp(0.0, eta) - y * eta)
    pen = np.abs(w).sum() if penalty == "l1" else 0.5 * (w @ w)
    return float(nll + lam * pen)


def _fit_logistic(Z, y, lam, penalty, tol, max_iter):
    """Proximal Newton: weighted least-squares coordinate descent inside, step halving outside."""
    n = len(y)
    ybar = float(np.clip(y.mean(), 1e-12, 1 - 1e-12))
    w = np.zeros(Z.shape[1])
    b = float(np.log(ybar / (1 - ybar)))
    eta = b + Z @ w
    obj = _logistic_objective(eta, y, w, lam, penalty)
    active = (Z**2).sum(axis=0) > 0
    viol = np.inf
    for it in range(1, max_iter + 1):
        p = expit(eta)
        viol = max(
            _kkt_violation(Z.T @ (p - y), w, lam, penalty, active),
            abs(float(np.sum(p - y))),
        ) / n
        if viol <= tol:
            return w, b, {"iterations": it - 1, "kkt_violation": viol}
        sw = np.maximum(p * (1 - p), W_FLOOR)
        r = (y - p) / sw
        a = (sw[:, None] * Z**2).sum(axis=0)
        w_new, b_new = w.copy(), b
        for _ in range(200):
            biggest = _cd_pass(Z, r, w_new, a, lam, penalty, sw)
            shift = float(sw @ r / sw.sum())
            b_new += shift
            r -= shift
            if max(biggest, abs(shift)) < 1e-10:
                break
        step = 1.0
        while True:
            w_try = w + step * (w_new - w)
            b_try = b + step * (b_new - b)
            eta_try = b_try + Z @ w_try
            obj_try = _logistic_objective(eta_try, y, w_try, lam, penalty)
            if obj_try <= obj + 1e-12 * max(1.0, abs(obj)) or step < 1e-10:
                break
            step /= 2
        if step < 1e-10:
            raise ConvergenceError(
                "line search failed", {"iterations": it, "kkt_violation": viol, "objective": obj}
            )
        w, b, eta, obj = w_try, b_try, eta_try, obj_try
    raise ConvergenceError("proximal Newton did not converge", {"iterations": max_iter, "kkt_violation": viol})


def lambda_max(X, y, link: str = "logistic") -> float:
    """Smallest L1 strength that zeroes every weight (standardized features)."""
    X = np.asarray(X, dtype=float)
    mean, std = standardize_params(X)
    Z = (X - mean) / std
    y = np.asarray(y, dtype=float)
    return float(np.abs(Z.T @ (y - y.mean())).max())


def fit_linear(
    X,
    y,
    penalty: str = "l2",
    lam: float = 1.0,
    link: str = "logistic",
    seed: int = 0,
    tol: float = 1e-6,
    max_iter: int = 1000,
    lam_grid=None,
    inner_folds: int = 3,
) -> LinearModel:
    """Fit a penalized linear (identity link) or logistic model.

    ``lam="cv"`` picks the strength from ``lam_grid`` (default: 10 values
    log-spaced from lambda_max down to lambda_max/1000) by ``inner_folds``-fold
    validation loss, with folds drawn from ``seed``, then refits on all rows.
    """
    if penalty not in ("l1", "l2"):
        raise ValueError(f"penalty must be 'l1' or 'l2', got {penalty!r}")
    if link not in ("identity", "logistic"):
        raise ValueError(f"link must be 'identity' or 'logistic', got {link!r}")
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    if len(X) != len(y) or len(y) == 0:
        raise ValueError("X and y must be non-empty with matching rows")
    if link == "logistic" and not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("logistic link needs 0/1 labels")
    diagnostics = {}
    if isinstance(lam, str):
        if lam != "cv":
            raise ValueError(f"lam must be a number or 'cv', got {lam!r}")
        lam, diagnostics["lam_search"] = _select_lambda(X, y, penalty, link, seed, tol, max_iter, lam_grid, inner_folds)
    lam = float(lam)
    if lam < 0:
        raise ValueError("lam must be non-negative")
    mean, std = standardize_params(X)
    Z = (X - mean) / std
    fitter = _fit_logistic if link == "logistic" else _fit_squared
    w, b, diag = fitter(Z, y, lam, penalty, tol, max_iter)
    diagnostics.update(diag)
    return LinearModel(w, float(b), mean, std, penalty, lam, link, diagnostics=diagnostics)


def _validation_loss(model: LinearModel, X, y) -> float:
    s = model.score(X)
    if model.link == "identity":
        return float(np.mean((y - s) ** 2))
    s = np.clip(s, 1e-12, 1 - 1e-12)
    return float(-np.mean(y * np.log(s) + (1 - y) * np.log(1 - s)))


def _select_lambda(X, y, penalty, link, seed, tol, max_iter, grid, k):
    if grid is None:
        top = lambda_max(X, y, link) or 1.0
        grid = top * np.logspace(0, -3, 10)
    rng = np.random.default_rng(seed)
    folds = np.array_split(rng.permutation(len(y)), k)
    results = []
    for lam in grid:
        losses = []
        for f in folds:
            train = np.setdiff1d(np.arange(len(y)), f)
            if link == "logistic" and len(np.unique(y[train])) < 2:
                continue
            m = fit_linear(X[train], y[train], penalty, float(lam), link, tol=tol, max_iter=max_iter)
            losses.append(_validation_loss(m, X[f], y[f]))
        results.append((float(np.mean(losses)), float(lam)))
    best = min(results, key=lambda t: (t[0], -t[1]))
    return best[1], [{"lam": l, "loss": v} for v, l in results]
