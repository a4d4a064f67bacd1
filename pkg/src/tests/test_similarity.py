"""Jaro-Winkler scores, agreement levels and the γ vector."""

from pathlib import Path

import pyarrow as pa
import pyarrow.csv as pacsv
import pytest

import jailvote
from jailvote.identity import parse_name
from jailvote.similarity import (
    CandidatePair,
    ComparisonFields,
    agreement_vector,
    avg_name_similarity,
    jaro,
    jaro_winkler,
    name_level,
)

JW_GOLDEN = pacsv.read_csv(
    Path(jailvote.__file__).parent / "data" / "golden" / "jaro_winkler.csv",
    convert_options=pacsv.ConvertOptions(column_types={"a": pa.string(), "b": pa.string()}),
).to_pylist()


def _fields(name: str, fips: str = "11217", age=30, gender=None) -> ComparisonFields:
    return ComparisonFields.from_name(fips, age, gender, parse_name(name))


@pytest.mark.parametrize("row", JW_GOLDEN, ids=[f"{r['a']}-{r['b']}" for r in JW_GOLDEN])
def test_jaro_winkler_golden(row):
    score = jaro_winkler(row["a"], row["b"])
    assert score == pytest.approx(row["jaro_winkler"], abs=1e-4)
    assert name_level(score) == row["level"]


def test_level_boundaries_are_strict():
    assert name_level(0.9400001) == 2
    assert name_level(0.94) == 1
    assert name_level(0.8800001) == 1
    assert name_level(0.88) == 0
    assert name_level(0.0) == 0


def test_pairs_landing_on_a_boundary_take_the_lower_level():
    # 4 of 4 and 4 of 5 characters matched, one prefix character: 0.94
    assert jaro_winkler("DION", "DEION") == pytest.approx(0.94, abs=1e-12)
    assert name_level(jaro_winkler("DION", "DEION")) == 1
    # 4 of 5 matched on both sides, one prefix character: 0.88
    assert jaro_winkler("JONES", "JANES") == pytest.approx(0.88, abs=1e-12)
    assert name_level(jaro_winkler("JONES", "JANES")) == 0
    assert len(JW_GOLDEN) >= 20


def test_jaro_winkler_symmetric_and_bounded():
    words = ["MARTHA", "MARHTA", "DOE", "DOUGH", "SMITHJONES", "JANE", "", "J"]
    for a in words:
        for b in words:
            jw = jaro_winkler(a, b)
            assert jw == pytest.approx(jaro_winkler(b, a))
            assert 0.0 <= jaro(a, b) <= jw <= 1.0


def test_worked_pair_gamma_and_average():
    booking = _fields("Jane A Doe", age=30, gender=None)
    voter = _fields("John Adam Doe", age=29, gender="male")
    assert agreement_vector(booking, voter) == (1, 2, 1, 0, 2, 2)
    assert round(avg_name_similarity(booking, voter), 2) == 0.83


def test_missing_fields_score_one():
    booking = _fields("Doe", age=None, gender="unknown")
    voter = _fields("John Adam Doe", fips="11218", gender="male")
    fips, age, gender, first, middle, last = agreement_vector(booking, voter)
    assert (fips, age, gender, first, middle, last) == (0, 1, 1, 1, 1, 2)


@pytest.mark.parametrize("a,b,level", [
    ("Jane A Doe", "Jane Ann Doe", 2),        # initial matches the full middle name
    ("Jane B Doe", "Jane Ann Doe", 0),        # initial does not
    ("Jane Ann Doe", "Jane Anne Doe", 2),     # both full: JW level
    ("Jane A Doe", "Jane A Doe", 2),
])
def test_middle_name_rules(a, b, level):
    assert agreement_vector(_fields(a), _fields(b))[4] == level


def test_age_within_one_year_agrees():
    assert agreement_vector(_fields("Jane Doe", age=30), _fields("Jane Doe", age=31))[1] == 2
    assert agreement_vector(_fields("Jane Doe", age=30), _fields("Jane Doe", age=32))[1] == 0


def test_init_match_flag_threshold():
    assert CandidatePair("B", "V", (1,) * 6, 0.89).init_match_flag == 1
    assert CandidatePair("B", "V", (1,) * 6, 0.88).init_match_flag == 0
