from datetime import date
from decimal import Decimal

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import active_ledger, tx
from spendxai.ingest import (
    CategoryVocabulary,
    FilterReport,
    IngestError,
    PersonLedger,
    SurveyTable,
    Window,
    apply_exclusion_filter,
    failed_criteria,
    join_survey,
    load_survey,
    load_transactions,
    write_transactions,
)

HEADER = "person_id,timestamp,amount,category\n"
YEAR = Window.year(2019)


def write(tmp_path, text, name="tx.csv"):
    p = tmp_path / name
    p.write_text(text, encoding="utf-8")
    return p


def test_three_rows_one_person_sorted(tmp_path):
    p = write(
        tmp_path,
        HEADER
        + "a,2019-03-01T10:00:00Z,5.00,Taxi\n"
        + "a,2019-01-01T10:00:00Z,7.50,Fast Food\n"
        + "a,2019-02-01T10:00:00,1.25,Taxi\n",
    )
    loaded = load_transactions(p, YEAR)
    assert len(loaded.ledgers) == 1
    recs = loaded.ledgers[0].records
    assert [r.timestamp.month for r in recs] == [1, 2, 3]
    assert recs[0].amount == Decimal("7.50")
    assert loaded.vocabulary.categories == ("Taxi", "Fast Food")


def test_negative_amount_names_row(tmp_path):
    p = write(tmp_path, HEADER + "a,2019-01-01T00:00:00Z,5,Taxi\na,2019-01-02T00:00:00Z,-5.00,Taxi\n")
    with pytest.raises(IngestError) as e:
        load_transactions(p, YEAR)
    assert e.value.row == 3
    assert "row 3" in str(e.value)


def test_vocabulary_deduplicates(tmp_path):
    p = write(
        tmp_path,
        HEADER
        + "a,2019-01-01T00:00:00Z,1,Fast Food\n"
        + "b,2019-01-01T00:00:00Z,1,Taxi\n"
        + "b,2019-01-02T00:00:00Z,1,Fast Food\n",
    )
    loaded = load_transactions(p, YEAR)
    assert len(loaded.vocabulary) == 2
    assert [l.person_id for l in loaded.ledgers] == ["a", "b"]


def test_vocabulary_is_a_bijection():
    vocab = CategoryVocabulary(["x", "y", "z"])
    assert sorted(vocab.index(c) for c in vocab) == [0, 1, 2]
    with pytest.raises(ValueError):
        CategoryVocabulary(["x", "x"])


def test_vocabulary_roundtrip(tmp_path):
    vocab = CategoryVocabulary(["b", "a"])
    assert CategoryVocabulary.load(vocab.save(tmp_path / "v.json")) == vocab


def test_explicit_vocabulary_rejects_unknown(tmp_path):
    p = write(tmp_path, HEADER + "a,2019-01-01T00:00:00Z,1,Taxi\na,2019-01-01T00:00:00Z,1,Boats\n")
    with pytest.raises(IngestError, match="Boats") as e:
        load_transactions(p, YEAR, CategoryVocabulary(["Taxi"]))
    assert e.value.row == 3


def test_out_of_window_rows_skipped_and_counted(tmp_path):
    p = write(tmp_path, HEADER + "a,2018-12-31T23:00:00Z,1,Taxi\na,2019-01-01T00:00:00Z,1,Taxi\n")
    loaded = load_transactions(p, YEAR)
    assert loaded.n_outside_window == 1
    assert len(loaded.ledgers[0]) == 1


@pytest.mark.parametrize(
    "row",
    [
        "a,not-a-date,1,Taxi",
        "a,2019-01-01T00:00:00Z,abc,Taxi",
        "a,2019-01-01T00:00:00Z,1,",
        "a,2019-01-01T00:00:00Z,1",
        ",2019-01-01T00:00:00Z,1,Taxi",
    ],
)
def test_malformed_rows_are_hard_errors(tmp_path, row):
    p = write(tmp_path, HEADER + row + "\n")
    with pytest.raises(IngestError) as e:
        load_transactions(p, YEAR)
    assert e.value.row == 2


def test_quoted_category_and_roundtrip(tmp_path):
    p = write(tmp_path, HEADER + 'a,2019-01-01T00:00:00Z,1.10,"Books, Music"\n')
    loaded = load_transactions(p, YEAR)
    out = write_transactions(tmp_path / "out.csv", loaded.ledgers[0].records)
    again = load_transactions(out, YEAR)
    assert again.ledgers[0].records == loaded.ledgers[0].records


# -- filter -------------------------------------------------------------------


def test_active_person_retained():
    kept, report = apply_exclusion_filter([active_ledger(categories=tuple("ABCDEF"), per_month=6)])
    assert len(kept) == 1
    assert report == FilterReport(0, 0, 0, 1)


def test_four_transactions_in_a_month_excluded():
    ledger = active_ledger()
    recs = [r for r in ledger.records if not (r.timestamp.month == 6 and r.timestamp.day <= 2)]
    recs.append(tx("p1", (2019, 6, 20), "200.00", "A"))
    kept, report = apply_exclusion_filter([PersonLedger("p1", recs, YEAR)])
    assert kept == []
    assert report.excluded_min_tx == 1
    assert report.excluded_min_spend == 0


def test_spend_just_below_100_excluded():
    ledger = active_ledger(amount="20.00")
    recs = list(ledger.records)
    i = next(k for k, r in enumerate(recs) if r.timestamp.month == 7)
    recs[i] = tx("p1", (2019, 7, 1), "19.99", recs[i].category)
    assert failed_criteria(PersonLedger("p1", recs, YEAR)) == {"min_spend"}


def test_too_few_categories_excluded():
    assert failed_criteria(active_ledger(categories=("A", "B", "C", "D"))) == {"min_categories"}


def test_multiple_failures_counted_under_each():
    ledger = active_ledger(per_month=4, amount="1.00", categories=("A",))
    _, report = apply_exclusion_filter([ledger])
    assert report.to_json() == {
        "excluded_min_tx": 1,
        "excluded_min_spend": 1,
        "excluded_min_categories": 1,
        "retained": 0,
    }


def test_empty_input_is_empty_report():
    kept, report = apply_exclusion_filter([])
    assert kept == [] and report == FilterReport()


def test_partial_month_window_rejected():
    ledger = active_ledger(window=Window(date(2019, 1, 1), date(2019, 1, 30)))
    with pytest.raises(ValueError, match="whole calendar months"):
        failed_criteria(ledger)


def _rescan(ledger):
    """Brute-force check of the three criteria straight from the records."""
    for y, m in ledger.window.months():
        month = [r for r in ledger.records if (r.timestamp.year, r.timestamp.month) == (y, m)]
        if len(month) < 5 or sum(r.amount for r in month) < 100:
            return False
    return len({r.category for r in ledger.records}) >= 5


ledger_strategy = st.builds(
    lambda pid, rows: PersonLedger(
        pid,
        [tx(pid, (2019, m, d), f"{c}.{cc:02d}", cat) for m, d, c, cc, cat in rows],
        Window.parse("2019-01-01", "2019-03-31"),
    ),
    st.sampled_from(["a", "b", "c"]),
    st.lists(
        st.tuples(
            st.integers(1, 3), st.integers(1, 28), st.integers(0, 60), st.integers(0, 99), st.sampled_from("ABCDEFG")
        ),
        min_size=0,
        max_size=40,
    ),
)


@settings(max_examples=60, deadline=None)
@given(st.lists(ledger_strategy, max_size=5))
def test_filter_idempotent_and_matches_rescan(ledgers):
    kept, _ = apply_exclusion_filter(ledgers)
    again, report = apply_exclusion_filter(kept)
    assert again == kept and report.retained == len(kept)
    assert [l for l in ledgers if _rescan(l)] == kept


# -- survey ------------------------------------------------------------------


def survey_text(rows):
    head = "person_id," + ",".join(f"item_{i:02d}" for i in range(1, 31)) + "\n"
    return head + "".join(pid + "," + ",".join(map(str, vals)) + "\n" for pid, vals in rows)


def test_valid_survey_row(tmp_path):
    p = write(tmp_path, survey_text([("a", [3] * 30)]), "s.csv")
    table = load_survey(p)
    assert table.person_ids == ["a"]
    assert table.items.shape == (1, 30) and (table.items == 3).all()


def test_survey_value_six_rejected(tmp_path):
    p = write(tmp_path, survey_text([("a", [3] * 29 + [6])]), "s.csv")
    with pytest.raises(IngestError, match="item_30"):
        load_survey(p)


def test_survey_duplicate_person_rejected(tmp_path):
    p = write(tmp_path, survey_text([("a", [3] * 30), ("a", [2] * 30)]), "s.csv")
    with pytest.raises(IngestError, match="duplicate"):
        load_survey(p)


def test_survey_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    table = SurveyTable(["x", "y"], rng.integers(1, 6, (2, 30)))
    again = load_survey(table.write(tmp_path / "s.csv"))
    assert again.person_ids == table.person_ids and (again.items == table.items).all()


def test_join_drops_unmatched_both_ways():
    survey = SurveyTable(["a", "b", "z"], np.full((3, 30), 3))
    ledgers = [active_ledger("b"), active_ledger("a"), active_ledger("q")]
    s, l, report = join_survey(survey, ledgers)
    assert s.person_ids == ["a", "b"]
    assert [x.person_id for x in l] == ["a", "b"]
    assert (report.survey_only, report.ledger_only, report.matched) == (1, 1, 2)
