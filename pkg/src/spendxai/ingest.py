"""Transaction and survey CSV loading, validation and the account-activity filter."""

from __future__ import annotations

import calendar
import csv
import logging
from collections import defaultdict
from dataclasses import asdict, dataclass, field
from datetime import date, datetime, timedelta, timezone
from decimal import Decimal, InvalidOperation
from pathlib import Path
from typing import Iterable, Iterator, Sequence

import numpy as np

from ._util import read_json, write_json

log = logging.getLogger(__name__)

TRANSACTION_COLUMNS = ("person_id", "timestamp", "amount", "category")
N_ITEMS = 30
ITEM_COLUMNS = tuple(f"item_{i:02d}" for i in range(1, N_ITEMS + 1))

MIN_MONTHLY_TX = 5
MIN_MONTHLY_SPEND = Decimal("100")
MIN_CATEGORIES = 5


class IngestError(ValueError):
    """Raised for malformed input files; ``row`` is the 1-based CSV line number."""

    def __init__(self, message: str, row: int | None = None):
        self.row = row
        super().__init__(f"row {row}: {message}" if row is not None else message)


@dataclass(frozen=True)
class Window:
    """Inclusive observation window in UTC calendar dates."""

    start: date
    end: date

    def __post_init__(self):
        if self.end < self.start:
            raise ValueError(f"window end {self.end} precedes start {self.start}")

    @classmethod
    def parse(cls, start: str, end: str) -> "Window":
        return cls(date.fromisoformat(start), date.fromisoformat(end))

    @classmethod
    def year(cls, year: int) -> "Window":
        return cls(date(year, 1, 1), date(year, 12, 31))

    @property
    def n_days(self) -> int:
        return (self.end - self.start).days + 1

    def contains(self, d: date) -> bool:
        return self.start <= d <= self.end

    def day_index(self, d: date) -> int:
        return (d - self.start).days

    def is_whole_months(self) -> bool:
        last = calendar.monthrange(self.end.year, self.end.month)[1]
        return self.start.day == 1 and self.end.day == last

    def months(self) -> list[tuple[int, int]]:
        out = []
        y, m = self.start.year, self.start.month
        while (y, m) <= (self.end.year, self.end.month):
            out.append((y, m))
            y, m = (y + 1, 1) if m == 12 else (y, m + 1)
        return out

    def days(self) -> Iterator[date]:
        for i in range(self.n_days):
            yield self.start + timedelta(days=i)

    def to_dict(self) -> dict:
        return {"start": self.start.isoformat(), "end": self.end.isoformat()}


@dataclass(frozen=True)
class TransactionRecord:
    person_id: str
    timestamp: datetime
    amount: Decimal
    category: str


class CategoryVocabulary:
    """Ordered, duplicate-free category names. Feature indices depend on this order."""

    def __init__(self, categories: Iterable[str]):
        cats = tuple(categories)
        index = {}
        for i, c in enumerate(cats):
            if not c:
                raise ValueError("empty category name in vocabulary")
            if c in index:
                raise ValueError(f"duplicate category in vocabulary: {c!r}")
            index[c] = i
        self.categories = cats
        self._index = index

    def __len__(self) -> int:
        return len(self.categories)

    def __iter__(self):
        return iter(self.categories)

    def __contains__(self, name: object) -> bool:
        return name in self._index

    def __eq__(self, other: object) -> bool:
        return isinstance(other, CategoryVocabulary) and self.categories == other.categories

    def __repr__(self) -> str:
        return f"CategoryVocabulary({len(self)} categories)"

    def index(self, name: str) -> int:
        try:
            return self._index[name]
        except KeyError:
            raise KeyError(f"unknown category {name!r}") from None

    def to_json(self) -> dict:
        return {"categories": list(self.categories)}

    def save(self, path: str | Path) -> Path:
        return write_json(path, self.to_json())

    @classmethod
    def load(cls, path: str | Path) -> "CategoryVocabulary":
        data = read_json(path)
        if isinstance(data, dict):
            data = data["categories"]
        return cls(data)


@dataclass
class PersonLedger:
    person_id: str
    records: list[TransactionRecord]
    window: Window

    def __post_init__(self):
        for r in self.records:
            if r.person_id != self.person_id:
                raise ValueError(f"record for {r.person_id!r} in ledger of {self.person_id!r}")
        self.records = sorted(self.records, key=lambda r: (r.timestamp, r.category, r.amount))

    def __len__(self) -> int:
        return len(self.records)


@dataclass
class LoadedTransactions:
    ledgers: list[PersonLedger]
    vocabulary: CategoryVocabulary
    n_rows: int
    n_outside_window: int


def parse_timestamp(raw: str) -> datetime:
    s = raw.strip()
    if s.endswith(("Z", "z")):
        s = s[:-1] + "+00:00"
    ts = datetime.fromisoformat(s)
    if ts.tzinfo is None:
        return ts.replace(tzinfo=timezone.utc)
    return ts.astimezone(timezone.utc)


def _parse_amount(raw: str) -> Decimal:
    amount = Decimal(raw.strip())
    if not amount.is_finite():
        raise InvalidOperation(raw)
    return amount


def load_transactions(
    path: str | Path,
    window: Window,
    vocabulary: CategoryVocabulary | None = None,
) -> LoadedTransactions:
    """Parse a transactions CSV into per-person ledgers.

    Rows whose timestamp falls outside ``window`` are skipped and counted.
    Any malformed row, negative amount, or (with an explicit ``vocabulary``)
    unknown category raises :class:`IngestError` naming the row.
    """
    by_person: dict[str, list[TransactionRecord]] = defaultdict(list)
    seen_categories: dict[str, None] = {}
    n_rows = n_outside = 0
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(TRANSACTION_COLUMNS) - set(reader.fieldnames or ())
        if missing:
            raise IngestError(f"missing columns: {sorted(missing)}", row=1)
        for row in reader:
            n_rows += 1
            line = reader.line_num
            if None in row or any(row.get(c) is None for c in TRANSACTION_COLUMNS):
                raise IngestError("wrong number of fields", row=line)
            pid = row["person_id"].strip()
            category = row["category"].strip()
            if not pid:
                raise IngestError("empty person_id", row=line)
            if not category:
                raise IngestError("empty category", row=line)
            try:
                ts = parse_timestamp(row["timestamp"])
            except ValueError:
                raise IngestError(f"bad timestamp {row['timestamp']!r}", row=line) from None
            try:
                amount = _parse_amount(row["amount"])
            except (InvalidOperation, ValueError):
                raise IngestError(f"bad amount {row['amount']!r}", row=line) from None
            if amount < 0:
                raise IngestError(f"negative amount {row['amount']!r}", row=line)
            if not window.contains(ts.date()):
                n_outside += 1
                continue
            if vocabulary is not None and category not in vocabulary:
                raise IngestError(f"unknown category {category!r}", row=line)
            seen_categories.setdefault(category, None)
            by_person[pid].append(TransactionRecord(pid, ts, amount, category))
    if n_outside:
        log.warning("skipped %d rows outside window %s..%s", n_outside, window.start, window.end)
    vocab = vocabulary if vocabulary is not None else CategoryVocabulary(seen_categories)
    ledgers = [PersonLedger(pid, recs, window) for pid, recs in sorted(by_person.items())]
    return LoadedTransactions(ledgers, vocab, n_rows, n_outside)


def write_transactions(path: str | Path, records: Iterable[TransactionRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(TRANSACTION_COLUMNS)
        for r in records:
            w.writerow([r.person_id, format_timestamp(r.timestamp), str(r.amount), r.category])
    return path


def format_timestamp(ts: datetime) -> str:
    return ts.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


# -- exclusion filter --------------------------------------------------------


@dataclass
class FilterReport:
    excluded_min_tx: int = 0
    excluded_min_spend: int = 0
    excluded_min_categories: int = 0
    retained: int = 0

    def to_json(self) -> dict:
        return asdict(self)


def failed_criteria(ledger: PersonLedger) -> set[str]:
    """Names of the activity criteria ``ledger`` fails (empty set = retained)."""
    window = ledger.window
    if not window.is_whole_months():
        raise ValueError(f"window {window.start}..{window.end} does not span whole calendar months")
    counts = {m: 0 for m in window.months()}
    spend = {m: Decimal(0) for m in window.months()}
    categories = set()
    for r in ledger.records:
        d = r.timestamp.date()
        key = (d.year, d.month)
        counts[key] += 1
        spend[key] += r.amount
        categories.add(r.category)
    failed = set()
    if any(c < MIN_MONTHLY_TX for c in counts.values()):
        failed.add("min_tx")
    if any(s < MIN_MONTHLY_SPEND for s in spend.values()):
        failed.add("min_spend")
    if len(categories) < MIN_CATEGORIES:
        failed.add("min_categories")
    return failed


def apply_exclusion_filter(ledgers: Sequence[PersonLedger]) -> tuple[list[PersonLedger], FilterReport]:
    """Keep persons with at least 5 transactions and $100 in every calendar
    month of the window, and at least 5 distinct categories overall.

    A person failing several criteria is counted under each of them.
    """
    report = FilterReport()
    kept = []
    for ledger in ledgers:
        failed = failed_criteria(ledger)
        report.excluded_min_tx += "min_tx" in failed
        report.excluded_min_spend += "min_spend" in failed
        report.excluded_min_categories += "min_categories" in failed
        if not failed:
            kept.append(ledger)
    report.retained = len(kept)
    return kept, report


# -- survey ------------------------------------------------------------------


@dataclass
class SurveyTable:
    person_ids: list[str]
    items: np.ndarray  # (n_persons, 30) int, values 1..5

    def __post_init__(self):
        self.items = np.asarray(self.items, dtype=np.int64).reshape(len(self.person_ids), N_ITEMS)

    def __len__(self) -> int:
        return len(self.person_ids)

    def subset(self, person_ids: Sequence[str]) -> "SurveyTable":
        pos = {p: i for i, p in enumerate(self.person_ids)}
        idx = [pos[p] for p in person_ids]
        return SurveyTable(list(person_ids), self.items[idx])

    def write(self, path: str | Path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="", encoding="utf-8") as f:
            w = csv.writer(f, lineterminator="\n")
            w.writerow(("person_id",) + ITEM_COLUMNS)
            for pid, row in zip(self.person_ids, self.items):
                w.writerow([pid, *map(int, row)])
        return path


def load_survey(path: str | Path) -> SurveyTable:
    ids: list[str] = []
    rows: list[list[int]] = []
    seen = set()
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = {"person_id", *ITEM_COLUMNS} - set(reader.fieldnames or ())
        if missing:
            raise IngestError(f"missing columns: {sorted(missing)}", row=1)
        for row in reader:
            line = reader.line_num
            pid = (row["person_id"] or "").strip()
            if not pid:
                raise IngestError("empty person_id", row=line)
            if pid in seen:
                raise IngestError(f"duplicate person_id {pid!r}", row=line)
            seen.add(pid)
            values = []
            for col in ITEM_COLUMNS:
                raw = row[col]
                if raw is None or not raw.strip():
                    raise IngestError(f"missing value for {col}", row=line)
                try:
                    v = int(raw)
                except ValueError:
                    raise IngestError(f"non-integer {col}={raw!r}", row=line) from None
                if not 1 <= v <= 5:
                    raise IngestError(f"{col}={v} outside 1..5", row=line)
                values.append(v)
            ids.append(pid)
            rows.append(values)
    return SurveyTable(ids, np.array(rows, dtype=np.int64).reshape(len(ids), N_ITEMS))


@dataclass
class JoinReport:
    survey_only: int = 0
    ledger_only: int = 0
    matched: int = 0
    dropped_ids: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {"survey_only": self.survey_only, "ledger_only": self.ledger_only, "matched": self.matched}


def join_survey(
    survey: SurveyTable, ledgers: Sequence[PersonLedger]
) -> tuple[SurveyTable, list[PersonLedger], JoinReport]:
    """Inner-join survey rows and ledgers on person_id, both sorted by id."""
    ledger_ids = {l.person_id for l in ledgers}
    survey_ids = set(survey.person_ids)
    common = sorted(ledger_ids & survey_ids)
    report = JoinReport(
        survey_only=len(survey_ids - ledger_ids),
        ledger_only=len(ledger_ids - survey_ids),
        matched=len(common),
        dropped_ids={
            "survey_only": sorted(survey_ids - ledger_ids),
            "ledger_only": sorted(ledger_ids - survey_ids),
        },
    )
    if report.survey_only:
        log.warning("dropped %d survey respondents without a retained ledger", report.survey_only)
    if report.ledger_only:
        log.warning("dropped %d ledgers without survey responses", report.ledger_only)
    keep = set(common)
    kept_ledgers = sorted((l for l in ledgers if l.person_id in keep), key=lambda l: l.person_id)
    return survey.subset(common), kept_ledgers, report
