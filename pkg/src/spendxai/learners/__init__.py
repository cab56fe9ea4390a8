from .forest import ForestModel, feature_importances, fit_forest, rank_importances
from .linear import ConvergenceError, LinearModel, fit_linear
from .metrics import auc
from .tree import DecisionTree, fit_tree
from .validation import (
    CVPlan,
    CVResult,
    LearnerSpec,
    choose_threshold,
    cross_validate,
    fit_learner,
    stratified_folds,
)


def load_model(d: dict):
    """Rebuild a model from its JSON document."""
    fmt = d.get("format")
    if fmt == "spendxai.forest":
        return ForestModel.from_json(d)
    if fmt == "spendxai.linear":
        return LinearModel.from_json(d)
    raise ValueError(f"unknown model format {fmt!r}")


__all__ = [
    "CVPlan",
    "CVResult",
    "ConvergenceError",
    "DecisionTree",
    "ForestModel",
    "LearnerSpec",
    "LinearModel",
    "auc",
    "choose_threshold",
    "cross_validate",
    "feature_importances",
    "fit_forest",
    "fit_learner",
    "fit_linear",
    "fit_tree",
    "load_model",
    "rank_importances",
    "stratified_folds",
]
