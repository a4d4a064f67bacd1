"""Delimited-table storage for pipeline stages.

Every table has one pyarrow schema. Tables are written as RFC-4180 CSV
(UTF-8, ISO-8601 dates, quoting only where needed) and read back with the
same schema, so column types survive the round trip. Writes are atomic.
"""

import hashlib
import logging
from dataclasses import asdict, fields, is_dataclass
from pathlib import Path
from typing import Any, Iterable, TypeVar

import pandas as pd
import pyarrow as pa
import pyarrow.csv as pacsv

from .atomic import atomic_write
from .errors import MissingInputError

logger = logging.getLogger(__name__)

T = TypeVar("T")

# Columns holding a `;`-separated code list (tuple on the Python side).
# A blank cell is a list that was never reported; EMPTY_LIST is a reported
# list with no entries.
_LIST_COLUMNS = {"charges"}
EMPTY_LIST = "none"


# PyArrow schemas for each table
SNAPSHOTS_SCHEMA = pa.schema([
    ("facility_id", pa.string()),
    ("fips", pa.string()),
    ("observed_date", pa.date32()),
    ("name", pa.string()),          # raw full name; components below are optional
    ("first", pa.string()),
    ("middle", pa.string()),
    ("last", pa.string()),
    ("age", pa.int64()),
    ("dob", pa.date32()),
    ("sex", pa.string()),
    ("race", pa.string()),
    ("booking_number", pa.string()),
    ("person_id", pa.string()),
    ("charges", pa.string()),       # `;`-joined codes; blank = not reported, "none" = no charges
])

SPELLS_SCHEMA = pa.schema([
    ("booking_id", pa.string()),
    ("person_key", pa.string()),
    ("facility_id", pa.string()),
    ("fips", pa.string()),
    ("entry_date", pa.date32()),
    ("exit_date", pa.date32()),
    ("length_of_stay_days", pa.int64()),
    ("censored", pa.bool_()),
    ("age_years", pa.int64()),
    ("dob", pa.date32()),
    ("gender", pa.string()),
    ("race", pa.string()),
    ("charge_count", pa.int64()),
    ("charges_reported", pa.bool_()),
    ("top_charge", pa.string()),
    ("charges", pa.string()),
    ("first", pa.string()),
    ("middle", pa.string()),
    ("last", pa.string()),
])

# Raw voter file as delivered (vendor race/party labels).
VOTER_FILE_SCHEMA = pa.schema([
    ("voter_id", pa.string()),
    ("fips", pa.string()),
    ("first", pa.string()),
    ("middle", pa.string()),
    ("last", pa.string()),
    ("age", pa.int64()),
    ("gender", pa.string()),
    ("ethnicity", pa.string()),
    ("ethnicity_reported", pa.bool_()),
    ("party", pa.string()),
    ("registration_date", pa.date32()),
    ("voted_2020", pa.bool_()),
    ("voted_2016", pa.bool_()),
    ("voted_2012", pa.bool_()),
    ("ballot_return_date", pa.date32()),
])

VOTERS_SCHEMA = pa.schema([
    ("voter_id", pa.string()),
    ("state", pa.string()),
    ("fips", pa.string()),
    ("first", pa.string()),
    ("middle", pa.string()),
    ("last", pa.string()),
    ("soundex", pa.string()),
    ("age", pa.int64()),
    ("gender", pa.string()),
    ("race", pa.string()),
    ("race_reported", pa.bool_()),
    ("party", pa.string()),
    ("registration_date", pa.date32()),
    ("voted_2020", pa.bool_()),
    ("voted_2016", pa.bool_()),
    ("voted_2012", pa.bool_()),
    ("ballot_return_date", pa.date32()),
])

LINKED_SCHEMA = pa.schema([
    ("booking_id", pa.string()),
    ("voter_id", pa.string()),
    ("posterior", pa.float64()),
    ("reweighted", pa.float64()),
    # booking side
    ("person_key", pa.string()),
    ("facility_id", pa.string()),
    ("fips", pa.string()),
    ("state", pa.string()),
    ("entry_date", pa.date32()),
    ("exit_date", pa.date32()),
    ("length_of_stay_days", pa.int64()),
    ("booking_age", pa.int64()),
    ("booking_gender", pa.string()),
    ("booking_race", pa.string()),
    ("charge_count", pa.int64()),
    ("charges_reported", pa.bool_()),
    ("top_charge", pa.string()),
    # voter side
    ("voter_age", pa.int64()),
    ("gender", pa.string()),
    ("race", pa.string()),
    ("race_reported", pa.bool_()),
    ("party", pa.string()),
    ("registration_date", pa.date32()),
    ("voted_2020", pa.bool_()),
    ("voted_2016", pa.bool_()),
    ("voted_2012", pa.bool_()),
    ("ballot_return_date", pa.date32()),
])

EXCLUSIONS_SCHEMA = pa.schema([
    ("step", pa.int64()),
    ("rule", pa.string()),
    ("description", pa.string()),
    ("removed", pa.int64()),
    ("remaining", pa.int64()),
])

BLOCK_STATS_SCHEMA = pa.schema([
    ("state", pa.string()),
    ("n_blocks", pa.int64()),
    ("max_block_pairs", pa.int64()),
    ("n_pairs", pa.int64()),
    ("n_bookings", pa.int64()),
    ("unknown_age_bookings", pa.int64()),
])

RESULTS_SCHEMA = pa.schema([
    ("table", pa.string()),
    ("spec_id", pa.string()),
    ("sample", pa.string()),
    ("threshold", pa.float64()),
    ("control_days", pa.int64()),
    ("treatment_days", pa.int64()),
    ("outcome", pa.string()),
    ("term", pa.string()),
    ("covariates", pa.bool_()),
    ("coef", pa.float64()),
    ("se", pa.float64()),
    ("t", pa.float64()),
    ("p", pa.float64()),
    ("df", pa.int64()),
    ("stars", pa.string()),
    ("n_obs", pa.int64()),
    ("n_clusters_1", pa.int64()),
    ("n_clusters_2", pa.int64()),
    ("mean_control_outcome", pa.float64()),
])

PCURVE_SCHEMA = pa.schema([
    ("threshold", pa.float64()),
    ("control_days", pa.int64()),
    ("treatment_days", pa.int64()),
    ("joint_f", pa.float64()),
    ("joint_p", pa.float64()),
    ("n_obs", pa.int64()),
    ("admissible", pa.bool_()),
])

WINDOWS_SCHEMA = pa.schema([
    ("threshold", pa.float64()),
    ("control_days", pa.int64()),
    ("treatment_days", pa.int64()),
    ("balanced", pa.bool_()),
    ("joint_p", pa.float64()),
])

SUMMARY_SCHEMA = pa.schema([
    ("control_days", pa.int64()),
    ("treatment_days", pa.int64()),
    ("variable", pa.string()),
    ("treatment_mean", pa.float64()),
    ("control_mean", pa.float64()),
    ("treatment_n", pa.int64()),
    ("control_n", pa.int64()),
])

BALLOT_RETURN_SCHEMA = pa.schema([
    ("date", pa.date32()),
    ("returns", pa.int64()),
    ("cumulative_share", pa.float64()),
])

TRUTH_LINKS_SCHEMA = pa.schema([
    ("booking_number", pa.string()),
    ("voter_id", pa.string()),
    ("state", pa.string()),
])

TRUTH_EFFECTS_SCHEMA = pa.schema([
    ("parameter", pa.string()),
    ("value", pa.float64()),
])


def write_table(table: pa.Table, path: Path) -> None:
    """Write a table as CSV, atomically."""
    options = pacsv.WriteOptions(include_header=True, quoting_style="needed")

    def _write(tmp: str) -> None:
        pacsv.write_csv(table, tmp, write_options=options)

    atomic_write(path, _write)
    logger.debug("wrote %d rows to %s", table.num_rows, path)


def read_table(path: Path, schema: pa.Schema) -> pa.Table:
    """Read a CSV written by `write_table` (or by hand) with `schema` types.

    Columns missing from the file come back as all-null.
    """
    if not path.exists():
        raise MissingInputError(f"missing input table: {path}")
    convert = pacsv.ConvertOptions(
        column_types={f.name: f.type for f in schema},
        strings_can_be_null=True,
        include_columns=[f.name for f in schema],
        include_missing_columns=True,
        true_values=["true", "True", "TRUE", "1"],
        false_values=["false", "False", "FALSE", "0"],
    )
    table = pacsv.read_csv(path, convert_options=convert)
    return table.select([f.name for f in schema]).cast(schema)


def decode_list(value: str | None) -> tuple[str, ...] | None:
    """`;`-joined cell → tuple; blank → None, EMPTY_LIST → ()."""
    if value is None or not value.strip():
        return None
    if value.strip() == EMPTY_LIST:
        return ()
    return tuple(c.strip() for c in value.split(";") if c.strip())


def records_to_table(records: Iterable[Any], schema: pa.Schema) -> pa.Table:
    """Dataclass instances (or dicts) → table; list columns are `;`-joined."""
    rows = []
    for rec in records:
        row = asdict(rec) if is_dataclass(rec) else dict(rec)
        for col in _LIST_COLUMNS & row.keys():
            if row[col] is not None:
                row[col] = ";".join(row[col]) or EMPTY_LIST
        rows.append({f.name: row.get(f.name) for f in schema})
    return pa.Table.from_pylist(rows, schema=schema)


def table_to_records(table: pa.Table, cls: type[T]) -> list[T]:
    """Table → dataclass instances, keeping only the fields `cls` declares."""
    names = {f.name for f in fields(cls)}
    out = []
    for row in table.to_pylist():
        kwargs = {k: v for k, v in row.items() if k in names}
        for col in _LIST_COLUMNS & kwargs.keys():
            kwargs[col] = decode_list(kwargs[col])
        out.append(cls(**kwargs))
    return out


def write_records(records: Iterable[Any], schema: pa.Schema, path: Path) -> None:
    write_table(records_to_table(records, schema), path)


def read_records(path: Path, schema: pa.Schema, cls: type[T]) -> list[T]:
    return table_to_records(read_table(path, schema), cls)


def write_frame(df: pd.DataFrame, schema: pa.Schema, path: Path) -> None:
    """Write a DataFrame, conformed to `schema` (extra columns dropped)."""
    table = pa.Table.from_pandas(
        df.reindex(columns=[f.name for f in schema]), schema=schema, preserve_index=False,
    )
    write_table(table, path)


def read_frame(path: Path, schema: pa.Schema) -> pd.DataFrame:
    return read_table(path, schema).to_pandas()


def file_sha256(path: Path) -> str:
    """Content hash used by the run ledger."""
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
