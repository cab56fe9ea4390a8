"""Synthetic transaction and survey data with a planted rule, plus brute-force oracles.

Persons whose category shares satisfy the planted conditions are labeled
High on one trait with probability ``signal``; everyone else with
probability ``noise``. Transactions are drawn so that every person passes the
activity filter, and questionnaire items are drawn from a latent trait that
follows the intended label.
"""

from __future__ import annotations

import calendar
import itertools
from dataclasses import asdict, dataclass
from datetime import date, datetime, timedelta, timezone
from decimal import Decimal
from pathlib import Path
from typing import Callable

import numpy as np

from ._util import read_json, rng_for, write_json
from .counterfactuals import ReferenceValues
from .features import FeatureMatrix, build_feature_matrix, compute_category_features
from .ingest import (
    MIN_CATEGORIES,
    MIN_MONTHLY_TX,
    N_ITEMS,
    CategoryVocabulary,
    PersonLedger,
    SurveyTable,
    TransactionRecord,
    Window,
    failed_criteria,
    write_transactions,
)
from .targets import TRAITS, template_scales

CATEGORY_NAMES = (
    "Fast Food",
    "Groceries",
    "Restaurants",
    "Coffee Shops",
    "Gas",
    "Taxi",
    "Public Transportation",
    "Parking",
    "Clothing",
    "Computers & Electronics",
    "Books",
    "Movies & DVDs",
    "Music",
    "Video Games",
    "Sporting Goods",
    "Gym",
    "Pharmacy",
    "Doctor",
    "Hair",
    "Pets",
    "Home Improvement",
    "Furniture",
    "Utilities",
    "Mobile Phone",
    "Internet",
    "Hotel",
    "Air Travel",
    "Alcohol & Bars",
    "Gifts",
    "Charity",
)

MAX_ATTEMPTS = 500


def category_names(n: int) -> list[str]:
    """``n`` category names: realistic ones first, then 'Category NNN'."""
    if n < MIN_CATEGORIES:
        raise ValueError(f"need at least {MIN_CATEGORIES} categories, got {n}")
    names = list(CATEGORY_NAMES[:n])
    names += [f"Category {i:03d}" for i in range(len(names) + 1, n + 1)]
    return names


@dataclass(frozen=True)
class PlantedCondition:
    feature: str  # "n_c:<category>" or "a_c:<category>"
    op: str  # "<=" or ">"
    threshold: float

    @property
    def kind(self) -> str:
        return "count" if self.feature.startswith("n_c:") else "amount"

    @property
    def category(self) -> str:
        return self.feature[4:]


@dataclass
class PlantedRuleSpec:
    """What to generate.

    ``combine="all"`` plants a conjunction: P(High) is ``signal`` when every
    condition holds, else ``noise``. ``combine="graded"`` makes P(High) rise
    linearly from ``noise`` to ``signal`` with the fraction of conditions met.
    """

    conditions: list[PlantedCondition]
    signal: float = 0.95
    noise: float = 0.05
    n_persons: int = 1000
    n_categories: int = 30
    seed: int = 0
    combine: str = "all"
    trait: str = "Neuroticism"
    months: int = 12
    year: int = 2019
    tx_per_month: float = 20.0
    item_noise: float = 0.6

    def __post_init__(self):
        self.conditions = [c if isinstance(c, PlantedCondition) else PlantedCondition(*c) for c in self.conditions]
        self.validate()

    def validate(self) -> None:
        if not (0.0 <= self.noise <= 1.0 and 0.0 <= self.signal <= 1.0):
            raise ValueError("signal and noise must lie in [0, 1]")
        if not self.signal > self.noise:
            raise ValueError(f"signal strength ({self.signal}) must exceed the noise rate ({self.noise})")
        if self.combine not in ("all", "graded"):
            raise ValueError(f"combine must be 'all' or 'graded', got {self.combine!r}")
        if self.trait not in TRAITS:
            raise ValueError(f"unknown trait {self.trait!r}")
        if not 1 <= self.months <= 12:
            raise ValueError("months must be between 1 and 12")
        if self.n_persons < 3:
            raise ValueError("need at least 3 persons")
        if self.tx_per_month < MIN_MONTHLY_TX:
            raise ValueError(f"tx_per_month must be at least {MIN_MONTHLY_TX}")
        if not self.conditions:
            raise ValueError("need at least one planted condition")
        cats = set(category_names(self.n_categories))
        seen = set()
        upper = {"count": 0.0, "amount": 0.0}
        for c in self.conditions:
            if c.feature[:4] not in ("n_c:", "a_c:"):
                raise ValueError(f"planted conditions must use n_c:/a_c: share features, got {c.feature!r}")
            if c.category not in cats:
                raise ValueError(f"category {c.category!r} is not among the {self.n_categories} generated")
            if c.op not in ("<=", ">"):
                raise ValueError(f"comparator must be '<=' or '>', got {c.op!r}")
            if not 0.0 < c.threshold < 1.0:
                raise ValueError(f"share threshold must lie in (0, 1), got {c.threshold}")
            if c.feature in seen:
                raise ValueError(f"contradictory or duplicate conditions on {c.feature!r}")
            seen.add(c.feature)
            upper[c.kind] += _above_range(c.threshold)[1]
        for kind, total in upper.items():
            if total >= 0.85:
                raise ValueError(f"infeasible: {kind} shares demanded by the conditions can exceed 1")

    @property
    def satisfy_probability(self) -> float:
        """Per-condition probability that makes the overall High rate 1/3."""
        r = min(1.0, max(0.0, (1 / 3 - self.noise) / (self.signal - self.noise)))
        return r ** (1 / len(self.conditions)) if self.combine == "all" else r

    def high_probability(self, satisfied: np.ndarray) -> np.ndarray:
        satisfied = np.asarray(satisfied, dtype=bool)
        if self.combine == "all":
            return np.where(satisfied.all(axis=1), self.signal, self.noise)
        return self.noise + (self.signal - self.noise) * satisfied.mean(axis=1)

    @property
    def window(self) -> Window:
        last = calendar.monthrange(self.year, self.months)[1]
        return Window(date(self.year, 1, 1), date(self.year, self.months, last))

    def to_json(self) -> dict:
        d = asdict(self)
        d["conditions"] = [asdict(c) for c in self.conditions]
        d["seed"] = str(self.seed)
        return d

    @classmethod
    def from_json(cls, d: dict) -> "PlantedRuleSpec":
        d = dict(d)
        d["conditions"] = [PlantedCondition(**c) if isinstance(c, dict) else PlantedCondition(*c) for c in d["conditions"]]
        d["seed"] = int(d.get("seed", 0))
        return cls(**d)

    @classmethod
    def load(cls, path: str | Path) -> "PlantedRuleSpec":
        return cls.from_json(read_json(path))


def _margin(thr: float) -> float:
    return max(0.01, 0.2 * thr)


def _above_range(thr: float) -> tuple[float, float]:
    lo = thr + _margin(thr)
    return lo, lo + max(0.1, thr)


def _below_range(thr: float) -> tuple[float, float]:
    hi = thr - _margin(thr)
    return min(0.004, hi / 2), hi


@dataclass
class SynthDataset:
    spec: PlantedRuleSpec
    vocabulary: CategoryVocabulary
    ledgers: list[PersonLedger]
    survey: SurveyTable
    satisfied: np.ndarray  # (n_persons, n_conditions) bool
    intended_high: np.ndarray  # (n_persons,) int

    @property
    def person_ids(self) -> list[str]:
        return [l.person_id for l in self.ledgers]

    def feature_matrix(self) -> FeatureMatrix:
        return build_feature_matrix(self.ledgers, self.vocabulary)

    def records(self):
        for ledger in self.ledgers:
            yield from ledger.records

    def write(self, out_dir: str | Path) -> dict[str, Path]:
        """transactions.csv, survey.csv, vocabulary.json and synth_spec.json."""
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        return {
            "transactions": write_transactions(out / "transactions.csv", self.records()),
            "survey": self.survey.write(out / "survey.csv"),
            "vocabulary": self.vocabulary.save(out / "vocabulary.json"),
            "spec": write_json(out / "synth_spec.json", self.spec.to_json()),
        }


def _share_targets(spec: PlantedRuleSpec, sat: np.ndarray, rng: np.random.Generator, vocab: CategoryVocabulary):
    """Per-category (count share, amount share) targets; None = unconstrained, 0 = absent."""
    region = {}
    for c, s in zip(spec.conditions, sat):
        region[(c.category, c.kind)] = ("above" if (c.op == ">") == bool(s) else "below", c.threshold)
    targets = {}
    for cat in sorted({k[0] for k in region}, key=vocab.index):
        cnt, amt = region.get((cat, "count")), region.get((cat, "amount"))
        need_present = amt is not None and amt[0] == "above"
        if cnt is None:
            count = None if need_present or rng.random() < 0.5 else 0.0
        elif cnt[0] == "above":
            count = rng.uniform(*_above_range(cnt[1]))
        elif not need_present and rng.random() < 0.5:
            count = 0.0
        else:
            count = rng.uniform(*_below_range(cnt[1]))
        if amt is None:
            amount = None
        elif amt[0] == "above":
            amount = rng.uniform(*_above_range(amt[1]))
        elif count == 0.0:
            amount = 0.0
        else:
            amount = rng.uniform(*_below_range(amt[1]))
        targets[vocab.index(cat)] = (count, amount)
    return targets


def _sample_ledger(
    pid: str,
    spec: PlantedRuleSpec,
    vocab: CategoryVocabulary,
    mu: np.ndarray,
    sat: np.ndarray,
    rng: np.random.Generator,
) -> PersonLedger:
    window = spec.window
    months = window.months()
    V = len(vocab)
    cond_idx = [(c, vocab.index(c.category)) for c in spec.conditions]
    for _ in range(MAX_ATTEMPTS):
        targets = _share_targets(spec, sat, rng, vocab)
        monthly = MIN_MONTHLY_TX + rng.poisson(spec.tx_per_month - MIN_MONTHLY_TX, len(months))
        n_tot = int(monthly.sum())
        counts = np.zeros(V, dtype=np.int64)
        for c, (count, amount) in targets.items():
            if count is None:
                counts[c] = max(1, round(rng.uniform(0.01, 0.06) * n_tot))
            else:
                counts[c] = round(count * n_tot)
                if count > 0 and counts[c] == 0 and amount:
                    counts[c] = 1
        rest = n_tot - int(counts.sum())
        pool = np.array([c for c in range(V) if c not in targets])
        k = int(rng.integers(MIN_CATEGORIES, min(len(pool), 15) + 1))
        if rest < k:
            continue
        chosen = rng.choice(pool, k, replace=False)
        counts[chosen] += rng.multinomial(rest, rng.dirichlet(np.full(k, 0.8)))
        cats = np.repeat(np.arange(V), counts)
        rng.shuffle(cats)
        amounts = np.exp(mu[cats] + 0.7 * rng.standard_normal(n_tot))
        fixed = {c: a for c, (_, a) in targets.items() if a is not None}
        if fixed:
            free = ~np.isin(cats, list(fixed))
            scale = amounts[free].sum() / (1.0 - sum(fixed.values()))
            for c, share in fixed.items():
                mask = cats == c
                if mask.any():
                    amounts[mask] *= share * scale / amounts[mask].sum()
        cents = np.maximum(np.round(amounts * 100).astype(np.int64), 1)
        records = []
        pos = 0
        for (y, m), n in zip(months, monthly):
            first = datetime(y, m, 1, tzinfo=timezone.utc)
            n_days = calendar.monthrange(y, m)[1]
            offsets = rng.integers(0, n_days * 86400, n)
            for off in offsets:
                records.append(
                    TransactionRecord(
                        pid,
                        first + timedelta(seconds=int(off)),
                        Decimal(int(cents[pos])).scaleb(-2),
                        vocab.categories[cats[pos]],
                    )
                )
                pos += 1
        ledger = PersonLedger(pid, records, window)
        if failed_criteria(ledger):
            continue
        shares = compute_category_features(ledger, vocab)
        ok = True
        for (c, j), s in zip(cond_idx, sat):
            v = shares[j] if c.kind == "count" else shares[V + j]
            if ((v > c.threshold) if c.op == ">" else (v <= c.threshold)) != bool(s):
                ok = False
                break
        if ok:
            return ledger
    raise RuntimeError(f"could not generate a valid ledger for {pid} in {MAX_ATTEMPTS} attempts")


def _survey_items(spec: PlantedRuleSpec, high: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    n = len(high)
    latent = rng.standard_normal((n, len(TRAITS)))
    t = TRAITS.index(spec.trait)
    latent[:, t] = np.where(high == 1, 1.3, -0.7) + 0.35 * rng.standard_normal(n)
    defs = template_scales()
    items = np.zeros((n, N_ITEMS), dtype=np.int64)
    for k, trait in enumerate(TRAITS):
        scale = defs[trait]
        for item, rev in zip(scale.items, scale.reverse):
            v = np.clip(np.round(3 + latent[:, k] + spec.item_noise * rng.standard_normal(n)), 1, 5).astype(np.int64)
            items[:, item - 1] = 6 - v if rev else v
    return items


def generate_dataset(spec: PlantedRuleSpec) -> SynthDataset:
    """Draw every person from a stream derived from (seed, person index)."""
    vocab = CategoryVocabulary(category_names(spec.n_categories))
    mu = rng_for(spec.seed, "category-amounts").uniform(2.6, 4.2, len(vocab))
    width = max(5, len(str(spec.n_persons)))
    q = spec.satisfy_probability
    m = len(spec.conditions)
    ledgers, sat_rows, highs = [], [], []
    for i in range(spec.n_persons):
        rng = rng_for(spec.seed, "person", i)
        sat = rng.random(m) < q
        high = int(rng.random() < spec.high_probability(sat[None, :])[0])
        pid = f"P{i:0{width}d}"
        ledgers.append(_sample_ledger(pid, spec, vocab, mu, sat, rng))
        sat_rows.append(sat)
        highs.append(high)
    high = np.array(highs, dtype=np.int64)
    items = _survey_items(spec, high, rng_for(spec.seed, "survey"))
    survey = SurveyTable([l.person_id for l in ledgers], items)
    return SynthDataset(spec, vocab, ledgers, survey, np.array(sat_rows, dtype=bool).reshape(-1, m), high)


# -- oracles ------------------------------------------------------------------


def brute_force_counterfactual(
    x,
    score_fn: Callable[[np.ndarray], np.ndarray],
    threshold: float,
    refs: ReferenceValues,
    k_max: int | None = None,
) -> tuple[int, ...] | None:
    """Smallest subset (lexicographically first at that size) whose replacement
    by reference values brings the score to <= threshold, or None."""
    x = np.asarray(x, dtype=float)
    ref = np.asarray(refs.values, dtype=float)
    cands = [int(j) for j in np.flatnonzero(x != ref)]
    k_max = len(cands) if k_max is None else min(k_max, len(cands))
    if len(cands) > 20 and k_max > 4:
        raise ValueError(f"{len(cands)} candidates with k_max={k_max}: exhaustive search is intractable")
    for k in range(1, k_max + 1):
        subsets = list(itertools.combinations(cands, k))
        for start in range(0, len(subsets), 4096):
            batch = subsets[start : start + 4096]
            X = np.repeat(x[None, :], len(batch), axis=0)
            for i, s in enumerate(batch):
                X[i, list(s)] = ref[list(s)]
            hits = np.flatnonzero(score_fn(X) <= threshold)
            if len(hits):
                return batch[hits[0]]
    return None


def brute_force_auc(scores, labels) -> float:
    """Fraction of (positive, negative) pairs ranked correctly, ties 1/2."""
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos, neg = scores[labels == 1], scores[labels != 1]
    if len(pos) == 0 or len(neg) == 0:
        raise ValueError("AUC needs both classes present")
    wins = ties = 0
    for p in pos:
        wins += int(np.sum(p > neg))
        ties += int(np.sum(p == neg))
    return (wins + ties / 2) / (len(pos) * len(neg))
