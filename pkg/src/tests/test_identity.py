"""Name parsing and surname Soundex against the shipped golden vectors."""

from pathlib import Path

import pyarrow as pa
import pyarrow.csv as pacsv
import pytest

import jailvote
from jailvote.errors import NameParseError, SoundexError
from jailvote.identity import PersonName, format_name, normalize, parse_name, soundex

GOLDEN = Path(jailvote.__file__).parent / "data" / "golden"


def _golden(name: str, columns: list[str]) -> list[dict]:
    table = pacsv.read_csv(
        GOLDEN / name,
        convert_options=pacsv.ConvertOptions(column_types={c: pa.string() for c in columns}),
    )
    return table.to_pylist()


NAMES = _golden("names.csv", ["raw", "first", "middle", "last", "suffix"])
SOUNDEX = _golden("soundex.csv", ["surname", "code"])


@pytest.mark.parametrize("row", NAMES, ids=[r["raw"].strip() for r in NAMES])
def test_parse_name_golden(row):
    name = parse_name(row["raw"])
    assert (name.first, name.middle, name.last, name.suffix) == (
        row["first"], row["middle"], row["last"], row["suffix"])


@pytest.mark.parametrize("row", SOUNDEX, ids=[r["surname"] for r in SOUNDEX])
def test_soundex_golden(row):
    assert soundex(row["surname"]) == row["code"]


@pytest.mark.parametrize("raw,expected", [
    ("Jane A Doe", ("JANE", "A", "DOE")),
    ("Doe, John Adam", ("JOHN", "ADAM", "DOE")),
    ("MADONNA", ("", "", "MADONNA")),
])
def test_parse_name_documented_examples(raw, expected):
    name = parse_name(raw)
    assert (name.first, name.middle, name.last) == expected


def test_components_are_normalized_not_split():
    name = parse_name(first="josé", middle="a.", last="van dyke-smith")
    assert name == PersonName("JOSE", "A", "VAN DYKESMITH")


@pytest.mark.parametrize("raw", ["", "   ", "...", ", John"])
def test_unparseable_names_raise(raw):
    with pytest.raises(NameParseError, match="unparseable name"):
        if raw.strip():
            parse_name(raw)
        else:
            parse_name(raw, last=raw)


def test_format_then_parse_round_trips():
    for raw in ("John Quincy Doe", "Mary Ann De La Cruz", "Ludwig van Beethoven", "Smith"):
        name = parse_name(raw)
        assert parse_name(format_name(name)) == name


def test_soundex_case_insensitive_and_shaped():
    for surname in ("Robert", "pfister", "Tymczak", "o'brien", "Smith-Jones"):
        code = soundex(surname)
        assert code == soundex(surname.lower()) == soundex(surname.upper())
        assert len(code) == 4 and code[0].isalpha() and code[1:].isdigit()


@pytest.mark.parametrize("surname", ["", "123", "--"])
def test_soundex_without_letters_raises(surname):
    with pytest.raises(SoundexError):
        soundex(surname)


def test_normalize_folds_and_collapses():
    assert normalize("  Zoë   O'Neil-Smith ") == "ZOE ONEILSMITH"
    assert normalize(None) == ""
