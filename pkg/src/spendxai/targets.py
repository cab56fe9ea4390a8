"""Questionnaire scoring, reliability, normalization and High/Low discretization."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from ._util import read_json, write_json

PERCENTILE_METHOD = "linear"
# (low, high) percentile levels. "tertile" splits at exactly 1/3 and 2/3 so
# each extreme holds a third of the sample; "literal" uses 33 and 66.
CUTOFFS = {
    "tertile": (Fraction(1, 3), Fraction(2, 3)),
    "literal": (Fraction(33, 100), Fraction(66, 100)),
}
DEFAULT_CUTOFFS = "tertile"

TRAITS = ("Extraversion", "Agreeableness", "Conscientiousness", "Neuroticism", "Openness")
FACETS = {
    "Extraversion": ("Sociability", "Assertiveness", "Energy"),
    "Agreeableness": ("Compassion", "Respectfulness", "Trust"),
    "Conscientiousness": ("Organization", "Productivity", "Responsibility"),
    "Neuroticism": ("Anxiety", "Depression", "Emotional Volatility"),
    "Openness": ("Intellectual Curiosity", "Aesthetic Sensitivity", "Creative Imagination"),
}


class DegenerateScaleError(ValueError):
    pass


@dataclass(frozen=True)
class ScaleDefinition:
    name: str
    items: tuple[int, ...]  # 1-based item numbers
    reverse: tuple[bool, ...]
    kind: str = "trait"  # "trait" | "facet"
    parent: str | None = None

    def __post_init__(self):
        if len(self.items) != len(self.reverse):
            raise ValueError(f"{self.name}: items and reverse flags differ in length")
        if self.kind not in ("trait", "facet"):
            raise ValueError(f"{self.name}: unknown kind {self.kind!r}")
        expected = 6 if self.kind == "trait" else 2
        if len(self.items) != expected:
            raise ValueError(f"{self.name}: a {self.kind} needs {expected} items, got {len(self.items)}")
        if self.kind == "facet" and not self.parent:
            raise ValueError(f"facet {self.name} has no parent trait")

    def to_json(self) -> dict:
        d = {"name": self.name, "kind": self.kind, "items": list(self.items), "reverse": list(self.reverse)}
        if self.parent:
            d["parent"] = self.parent
        return d


class ScaleDefinitions:
    def __init__(self, scales: Sequence[ScaleDefinition]):
        self.scales = list(scales)
        self._by_name = {s.name: s for s in self.scales}
        if len(self._by_name) != len(self.scales):
            raise ValueError("duplicate scale names")
        self._check_facets()

    def _check_facets(self):
        for trait in self.traits:
            facets = [s for s in self.scales if s.kind == "facet" and s.parent == trait.name]
            if not facets:
                continue
            items = [i for f in facets for i in f.items]
            if len(set(items)) != len(items) or set(items) != set(trait.items):
                raise ValueError(f"facets of {trait.name} do not partition its items")
            keyed = {i: r for i, r in zip(trait.items, trait.reverse)}
            for f in facets:
                if any(keyed[i] != r for i, r in zip(f.items, f.reverse)):
                    raise ValueError(f"facet {f.name} disagrees with {trait.name} on reverse keying")
        for s in self.scales:
            if s.kind == "facet" and s.parent not in self._by_name:
                raise ValueError(f"facet {s.name} refers to unknown trait {s.parent!r}")

    @property
    def traits(self) -> list[ScaleDefinition]:
        return [s for s in self.scales if s.kind == "trait"]

    @property
    def names(self) -> list[str]:
        return [s.name for s in self.scales]

    def __getitem__(self, name: str) -> ScaleDefinition:
        return self._by_name[name]

    def __iter__(self):
        return iter(self.scales)

    def to_json(self) -> dict:
        return {"scales": [s.to_json() for s in self.scales]}

    @classmethod
    def from_json(cls, data: dict) -> "ScaleDefinitions":
        return cls(
            [
                ScaleDefinition(
                    name=s["name"],
                    items=tuple(int(i) for i in s["items"]),
                    reverse=tuple(bool(r) for r in s["reverse"]),
                    kind=s.get("kind", "trait"),
                    parent=s.get("parent"),
                )
                for s in data["scales"]
            ]
        )

    @classmethod
    def load(cls, path: str | Path) -> "ScaleDefinitions":
        return cls.from_json(read_json(path))

    def save(self, path: str | Path) -> Path:
        return write_json(path, self.to_json())


def template_scales() -> ScaleDefinitions:
    """A 30-item, 5-trait, 15-facet layout.

    Trait t owns items t+1, t+6, ..., t+26; its f-th facet pairs items
    t+1+5f and t+16+5f, and items 16-30 are treated as reverse-keyed. This
    is a structural template only: supply the published scoring key through
    a JSON config when scoring real questionnaire data.
    """
    scales = []
    for t, trait in enumerate(TRAITS):
        items = tuple(t + 1 + 5 * j for j in range(6))
        scales.append(ScaleDefinition(trait, items, tuple(i > 15 for i in items), "trait"))
    for t, trait in enumerate(TRAITS):
        for f, facet in enumerate(FACETS[trait]):
            items = (t + 1 + 5 * f, t + 16 + 5 * f)
            scales.append(ScaleDefinition(facet, items, (False, True), "facet", trait))
    return ScaleDefinitions(scales)


def keyed_items(items: np.ndarray, scale: ScaleDefinition) -> np.ndarray:
    """Item columns of ``scale`` with reverse-keyed ones mapped v -> 6 - v."""
    items = np.asarray(items)
    if items.ndim != 2:
        raise ValueError("items must be a 2-D (persons x items) table")
    if max(scale.items) > items.shape[1]:
        raise ValueError(f"{scale.name}: item {max(scale.items)} missing from response table")
    cols = items[:, [i - 1 for i in scale.items]].astype(float)
    if np.isnan(cols).any():
        raise ValueError(f"{scale.name}: missing item responses")
    rev = np.array(scale.reverse)
    cols[:, rev] = 6 - cols[:, rev]
    return cols


def score_scales(items: np.ndarray, defs: ScaleDefinitions) -> dict[str, np.ndarray]:
    return {s.name: keyed_items(items, s).mean(axis=1) for s in defs}


def cronbach_alpha(items: np.ndarray) -> float:
    """k/(k-1) * (1 - sum of item variances / variance of the sum score), ddof=1."""
    items = np.asarray(items, dtype=float)
    n, k = items.shape
    if k < 2 or n < 2:
        raise ValueError(f"need at least 2 items and 2 persons, got {k} items and {n} persons")
    total_var = items.sum(axis=1).var(ddof=1)
    if total_var == 0:
        raise DegenerateScaleError("sum scores have zero variance")
    return float(k / (k - 1) * (1 - items.var(axis=0, ddof=1).sum() / total_var))


@dataclass(frozen=True)
class MinMax:
    lo: float
    hi: float

    @classmethod
    def fit(cls, scores) -> "MinMax":
        scores = np.asarray(scores, dtype=float)
        lo, hi = float(scores.min()), float(scores.max())
        if not hi > lo:
            raise ValueError("cannot min-max normalize constant scores")
        return cls(lo, hi)

    def transform(self, scores) -> np.ndarray:
        return (np.asarray(scores, dtype=float) - self.lo) / (self.hi - self.lo)


def minmax_normalize(scores, reference=None) -> np.ndarray:
    """Scale to [0, 1] using the min/max of ``reference`` (defaults to ``scores``)."""
    return MinMax.fit(scores if reference is None else reference).transform(scores)


def percentile_cutoffs(scores, cutoffs: str = DEFAULT_CUTOFFS) -> tuple[float, float]:
    if cutoffs not in CUTOFFS:
        raise ValueError(f"cutoffs must be one of {sorted(CUTOFFS)}, got {cutoffs!r}")
    srt = np.sort(np.asarray(scores, dtype=float))
    return tuple(_linear_quantile(srt, q) for q in CUTOFFS[cutoffs])


def _linear_quantile(srt: np.ndarray, q: Fraction) -> float:
    """Linear interpolation between order statistics at rank q*(n-1), the rank
    computed exactly so that e.g. tertiles land on order statistics."""
    h = q * (len(srt) - 1)
    i = math.floor(h)
    frac = h - i
    if frac == 0:
        return float(srt[i])
    return float(srt[i] + float(frac) * (srt[i + 1] - srt[i]))


def discretize(scores, cutoffs: str = DEFAULT_CUTOFFS) -> tuple[np.ndarray, np.ndarray]:
    """High = strictly above the upper cutoff percentile, Low = strictly below the lower one."""
    scores = np.asarray(scores, dtype=float)
    if len(scores) < 3:
        raise ValueError("need at least 3 scores to discretize")
    lo, hi = percentile_cutoffs(scores, cutoffs)
    return (scores > hi).astype(np.int64), (scores < lo).astype(np.int64)


@dataclass
class TraitTargets:
    scale: str
    person_ids: list[str]
    raw: np.ndarray
    normalized: np.ndarray
    high: np.ndarray
    low: np.ndarray
    p_low: float
    p_high: float

    def labels(self, direction: str) -> np.ndarray:
        if direction not in ("high", "low"):
            raise ValueError(f"direction must be 'high' or 'low', got {direction!r}")
        return self.high if direction == "high" else self.low


def build_targets(person_ids: Sequence[str], scores: np.ndarray, scale: str, cutoffs: str = DEFAULT_CUTOFFS) -> TraitTargets:
    scores = np.asarray(scores, dtype=float)
    high, low = discretize(scores, cutoffs)
    lo, hi = percentile_cutoffs(scores, cutoffs)
    return TraitTargets(scale, list(person_ids), scores, minmax_normalize(scores), high, low, lo, hi)


def build_all_targets(
    person_ids: Sequence[str], items: np.ndarray, defs: ScaleDefinitions, cutoffs: str = DEFAULT_CUTOFFS
) -> dict[str, TraitTargets]:
    return {name: build_targets(person_ids, s, name, cutoffs) for name, s in score_scales(items, defs).items()}


def reliability_report(items: np.ndarray, defs: ScaleDefinitions) -> dict[str, float | None]:
    out = {}
    for s in defs:
        try:
            out[s.name] = cronbach_alpha(keyed_items(items, s))
        except DegenerateScaleError:
            out[s.name] = None
    return out


def write_targets(path: str | Path, targets: dict[str, TraitTargets]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["person_id", "trait", "raw", "normalized", "high", "low"])
        for name, t in targets.items():
            for i, pid in enumerate(t.person_ids):
                w.writerow([pid, name, repr(float(t.raw[i])), repr(float(t.normalized[i])), int(t.high[i]), int(t.low[i])])
    return path


def read_targets(path: str | Path, cutoffs: str = DEFAULT_CUTOFFS) -> dict[str, TraitTargets]:
    rows: dict[str, list] = {}
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.DictReader(f):
            rows.setdefault(row["trait"], []).append(row)
    out = {}
    for name, rs in rows.items():
        raw = np.array([float(r["raw"]) for r in rs])
        lo, hi = percentile_cutoffs(raw, cutoffs)
        out[name] = TraitTargets(
            name,
            [r["person_id"] for r in rs],
            raw,
            np.array([float(r["normalized"]) for r in rs]),
            np.array([int(r["high"]) for r in rs]),
            np.array([int(r["low"]) for r in rs]),
            lo,
            hi,
        )
    return out
