"""Per-person spending features: overall statistics, category shares, diversity."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from ._util import read_json, write_json
from .ingest import CategoryVocabulary, PersonLedger

OVERALL = ("n_tot", "a_tot", "a_avg", "a_cv", "a_avg_daily", "a_cv_daily")
DIVERSITY = ("C_tot", "C_entropy")

OVERALL_LABELS = {
    "n_tot": "Total transactions",
    "a_tot": "Total amount transactions",
    "a_avg": "Average transaction",
    "a_cv": "Variability transaction",
    "a_avg_daily": "Average daily transaction",
    "a_cv_daily": "Variability daily transaction",
    "C_tot": "Unique categories",
    "C_entropy": "Category entropy",
}


@dataclass(frozen=True)
class FeatureOptions:
    entropy_base: str = "e"  # "e" or a numeric base such as "2"
    entropy_shares: str = "count"  # "count" | "amount"
    daily_days: str = "all"  # "all" calendar days | "active" days only

    def __post_init__(self):
        if self.entropy_shares not in ("count", "amount"):
            raise ValueError(f"entropy_shares must be 'count' or 'amount', got {self.entropy_shares!r}")
        if self.daily_days not in ("all", "active"):
            raise ValueError(f"daily_days must be 'all' or 'active', got {self.daily_days!r}")
        if self.log_base <= 1:
            raise ValueError(f"entropy base must exceed 1, got {self.entropy_base!r}")

    @property
    def log_base(self) -> float:
        return math.e if str(self.entropy_base) == "e" else float(self.entropy_base)


@dataclass
class FeatureRegistry:
    vocabulary: CategoryVocabulary
    options: FeatureOptions = field(default_factory=FeatureOptions)

    def __post_init__(self):
        cats = self.vocabulary.categories
        self.names = (
            list(OVERALL)
            + [f"n_c:{c}" for c in cats]
            + [f"a_c:{c}" for c in cats]
            + list(DIVERSITY)
        )
        self.labels = (
            [OVERALL_LABELS[n] for n in OVERALL]
            + list(cats)
            + [f"{c} ($)" for c in cats]
            + [OVERALL_LABELS[n] for n in DIVERSITY]
        )
        self._index = {n: i for i, n in enumerate(self.names)}
        if len(self._index) != len(self.names):
            raise ValueError("feature names are not unique")

    def __len__(self) -> int:
        return len(self.names)

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown feature {name!r}") from None

    @property
    def n_categories(self) -> int:
        return len(self.vocabulary)

    def count_block(self) -> slice:
        return slice(len(OVERALL), len(OVERALL) + self.n_categories)

    def amount_block(self) -> slice:
        k = len(OVERALL) + self.n_categories
        return slice(k, k + self.n_categories)

    def kind(self, j: int) -> str:
        """One of 'overall', 'count', 'amount', 'diversity'."""
        name = self.names[j]
        if name.startswith("n_c:"):
            return "count"
        if name.startswith("a_c:"):
            return "amount"
        return "diversity" if name in DIVERSITY else "overall"

    def category(self, j: int) -> str | None:
        name = self.names[j]
        return name[4:] if name[:4] in ("n_c:", "a_c:") else None

    def to_json(self) -> dict:
        return {
            "names": self.names,
            "labels": self.labels,
            "categories": list(self.vocabulary.categories),
            "entropy_base": str(self.options.entropy_base),
            "entropy_shares": self.options.entropy_shares,
            "daily_days": self.options.daily_days,
            "std": "population",
        }

    @classmethod
    def from_json(cls, data: dict) -> "FeatureRegistry":
        reg = cls(
            CategoryVocabulary(data["categories"]),
            FeatureOptions(
                entropy_base=data.get("entropy_base", "e"),
                entropy_shares=data.get("entropy_shares", "count"),
                daily_days=data.get("daily_days", "all"),
            ),
        )
        if data.get("names") and data["names"] != reg.names:
            raise ValueError("registry names do not match the stored vocabulary")
        return reg


def _canonical(ledger: PersonLedger) -> list:
    # fixed summation order, so results do not depend on record order
    return sorted(ledger.records, key=lambda r: (r.timestamp, r.category, r.amount))


def _cv(values: np.ndarray) -> float:
    mean = values.mean()
    if mean == 0:
        return 0.0
    return float(values.std() / mean)


def compute_overall_features(ledger: PersonLedger, options: FeatureOptions = FeatureOptions()) -> np.ndarray:
    """n_tot, a_tot, a_avg, a_cv, a_avg_daily, a_cv_daily for one person.

    Standard deviations are population (ddof=0). Daily totals cover every
    calendar day of the window unless ``options.daily_days == "active"``.
    """
    if not ledger.records:
        raise ValueError(f"empty ledger for person {ledger.person_id!r}")
    window = ledger.window
    records = _canonical(ledger)
    amounts = np.array([float(r.amount) for r in records])
    days = np.array([window.day_index(r.timestamp.date()) for r in records])
    n_tot = len(amounts)
    a_tot = float(math.fsum(amounts))
    daily = np.bincount(days, weights=amounts, minlength=window.n_days)
    if options.daily_days == "active":
        daily = daily[np.bincount(days, minlength=window.n_days) > 0]
        a_avg_daily = a_tot / len(daily)
    else:
        a_avg_daily = a_tot / window.n_days
    return np.array([n_tot, a_tot, a_tot / n_tot, _cv(amounts), a_avg_daily, _cv(daily)])


def compute_category_features(
    ledger: PersonLedger,
    vocab: CategoryVocabulary,
    options: FeatureOptions = FeatureOptions(),
) -> np.ndarray:
    """Count shares n_c, amount shares a_c (|V| each), then C_tot and C_entropy."""
    if not ledger.records:
        raise ValueError(f"empty ledger for person {ledger.person_id!r}")
    k = len(vocab)
    idx = np.empty(len(ledger.records), dtype=np.int64)
    amounts = np.empty(len(ledger.records))
    for i, r in enumerate(_canonical(ledger)):
        if r.category not in vocab:
            raise KeyError(f"unknown category {r.category!r} for person {ledger.person_id!r}")
        idx[i] = vocab.index(r.category)
        amounts[i] = float(r.amount)
    counts = np.bincount(idx, minlength=k).astype(float)
    spent = np.bincount(idx, weights=amounts, minlength=k)
    n_c = counts / counts.sum()
    total = spent.sum()
    a_c = spent / total if total > 0 else np.zeros(k)
    c_tot = float(np.count_nonzero(counts))
    p = n_c if options.entropy_shares == "count" else a_c
    p = p[p > 0]
    entropy = float(-np.sum(p * np.log(p)) / math.log(options.log_base)) if len(p) else 0.0
    return np.concatenate([n_c, a_c, [c_tot, entropy if entropy > 0 else 0.0]])


def feature_vector(ledger: PersonLedger, registry: FeatureRegistry) -> np.ndarray:
    return np.concatenate(
        [
            compute_overall_features(ledger, registry.options),
            compute_category_features(ledger, registry.vocabulary, registry.options),
        ]
    )


@dataclass
class FeatureMatrix:
    person_ids: list[str]
    X: np.ndarray
    registry: FeatureRegistry

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=float).reshape(len(self.person_ids), len(self.registry))

    @property
    def shape(self) -> tuple[int, int]:
        return self.X.shape

    def rows(self, person_ids: Sequence[str]) -> np.ndarray:
        pos = {p: i for i, p in enumerate(self.person_ids)}
        return self.X[[pos[p] for p in person_ids]]

    def save(self, path: str | Path) -> Path:
        """Write ``path`` (CSV) plus a ``<stem>.registry.json`` sidecar."""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(["person_id", *self.registry.names])
            for pid, row in zip(self.person_ids, self.X):
                w.writerow([pid, *(repr(float(v)) for v in row)])
        write_json(registry_path(path), self.registry.to_json())
        return path

    @classmethod
    def load(cls, path: str | Path) -> "FeatureMatrix":
        path = Path(path)
        registry = FeatureRegistry.from_json(read_json(registry_path(path)))
        ids, rows = [], []
        with open(path, newline="", encoding="utf-8") as f:
            reader = csv.reader(f)
            header = next(reader)
            if header[1:] != registry.names:
                raise ValueError(f"{path}: column header does not match registry")
            for row in reader:
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
        return cls(ids, np.array(rows, dtype=float).reshape(len(ids), len(registry)), registry)


def registry_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".registry.json")


def build_feature_matrix(
    ledgers: Sequence[PersonLedger],
    vocab: CategoryVocabulary,
    options: FeatureOptions = FeatureOptions(),
) -> FeatureMatrix:
    registry = FeatureRegistry(vocab, options)
    ordered = sorted(ledgers, key=lambda l: l.person_id)
    X = np.zeros((len(ordered), len(registry)))
    for i, ledger in enumerate(ordered):
        X[i] = feature_vector(ledger, registry)
    if not np.all(np.isfinite(X)):
        raise ValueError("non-finite feature values")
    return FeatureMatrix([l.person_id for l in ordered], X, registry)
