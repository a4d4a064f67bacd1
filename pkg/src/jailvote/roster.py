"""Daily jail-roster snapshots → booking spells.

A spell is a maximal run of consecutive observed days for one person in one
facility. Person identity within a facility resolves by booking number,
else person id, else parsed name plus date of birth (or age).
"""

import json
import logging
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Iterable

import pyarrow as pa
import pyarrow.csv as pacsv

from .errors import JailVoteError, RosterRecordError
from .identity import PersonName, format_name, parse_name
from .storage import SNAPSHOTS_SCHEMA, decode_list
from .worker import run_pool

logger = logging.getLogger(__name__)

# Most to least severe.
CHARGE_SEVERITY = ("violent", "property", "drug", "public_order", "dui", "criminal_traffic")
_SEVERITY_RANK = {c: i for i, c in enumerate(CHARGE_SEVERITY)}

UNKNOWN = "unknown"

_GENDER_TABLE = {
    "M": "male", "MALE": "male", "MA": "male", "MAN": "male",
    "F": "female", "FEMALE": "female", "FEM": "female", "FE": "female", "WOMAN": "female",
}

_RACE_TABLE = {
    "W": "white", "WHITE": "white", "CAUCASIAN": "white", "WHITE NON HISPANIC": "white",
    "B": "Black", "BLACK": "Black", "AFRICAN AMERICAN": "Black",
    "BLACK OR AFRICAN AMERICAN": "Black",
    "A": "other", "ASIAN": "other", "H": "other", "HISPANIC": "other", "LATINO": "other",
    "I": "other", "NATIVE AMERICAN": "other", "AMERICAN INDIAN": "other",
    "PACIFIC ISLANDER": "other", "MULTIRACIAL": "other", "O": "other", "OTHER": "other",
}


@dataclass
class RosterSnapshot:
    facility_id: str
    fips: str
    observed_date: date
    name: str | None = None
    first: str | None = None
    middle: str | None = None
    last: str | None = None
    age: int | None = None
    dob: date | None = None
    sex: str | None = None
    race: str | None = None
    booking_number: str | None = None
    person_id: str | None = None
    # None = the roster reported no charge information at all
    charges: tuple[str, ...] | None = None

    def __post_init__(self):
        fips = str(self.fips or "")
        if len(fips) != 5 or not fips.isdigit():
            raise RosterRecordError(f"fips must be exactly 5 digits, got {self.fips!r}")
        if not isinstance(self.observed_date, date):
            raise RosterRecordError(f"observed_date is not a date: {self.observed_date!r}")
        if self.charges is not None:
            bad = [c for c in self.charges if c not in _SEVERITY_RANK]
            if bad:
                raise RosterRecordError(f"unknown charge codes {bad}")


@dataclass
class BookingSpell:
    booking_id: str
    person_key: str
    facility_id: str
    fips: str
    entry_date: date
    exit_date: date | None
    length_of_stay_days: int
    censored: bool = False
    age_years: int | None = None
    dob: date | None = None
    gender: str = UNKNOWN
    race: str = UNKNOWN
    charge_count: int = 0
    charges_reported: bool = False
    top_charge: str = UNKNOWN
    charges: tuple[str, ...] | None = None
    first: str = ""
    middle: str = ""
    last: str = ""

    @property
    def name(self) -> PersonName:
        return PersonName(self.first or "", self.middle or "", self.last or "")


@dataclass
class RejectedRecord:
    source: str
    line: int
    reason: str
    record: dict = field(default_factory=dict)


def top_charge(charges: Iterable[str]) -> str:
    """Most severe category present; unknown when empty."""
    ranks = [_SEVERITY_RANK[c] for c in charges if c in _SEVERITY_RANK]
    return CHARGE_SEVERITY[min(ranks)] if ranks else UNKNOWN


def standardize_gender(raw: str | None) -> str:
    """male/female/unknown; trans and non-binary map to unknown for matching."""
    key = " ".join((raw or "").strip().upper().replace("-", " ").split())
    return _GENDER_TABLE.get(key, UNKNOWN)


def standardize_race(raw: str | None) -> str:
    """white/Black/other/unknown from roster race labels."""
    key = " ".join((raw or "").strip().upper().replace("-", " ").split())
    return _RACE_TABLE.get(key, UNKNOWN)


def age_on(dob: date, day: date) -> int:
    """Whole years between `dob` and `day`."""
    return day.year - dob.year - ((day.month, day.day) < (dob.month, dob.day))


# -- readers -----------------------------------------------------------------

def _parse_date(value, what: str) -> date | None:
    if value is None or (isinstance(value, str) and not value.strip()):
        return None
    if isinstance(value, date):
        return value
    try:
        return date.fromisoformat(str(value).strip())
    except ValueError:
        raise RosterRecordError(f"malformed {what}: {value!r}") from None


def _parse_int(value, what: str) -> int | None:
    if value is None or (isinstance(value, str) and not value.strip()):
        return None
    try:
        return int(str(value).strip())
    except ValueError:
        raise RosterRecordError(f"malformed {what}: {value!r}") from None


def _clean(value) -> str | None:
    if value is None:
        return None
    text = str(value).strip()
    return text or None


def snapshot_from_row(row: dict) -> RosterSnapshot:
    """Validate one raw record (all values as text) into a snapshot."""
    observed = _parse_date(row.get("observed_date"), "observed_date")
    if observed is None:
        raise RosterRecordError("missing observed_date")
    charges_raw = row.get("charges")
    if isinstance(charges_raw, list):
        charges = tuple(str(c).strip() for c in charges_raw if str(c).strip())
    else:
        charges = decode_list(None if charges_raw is None else str(charges_raw))
    return RosterSnapshot(
        facility_id=_clean(row.get("facility_id")) or "",
        fips=_clean(row.get("fips")) or "",
        observed_date=observed,
        name=_clean(row.get("name")),
        first=_clean(row.get("first")),
        middle=_clean(row.get("middle")),
        last=_clean(row.get("last")),
        age=_parse_int(row.get("age"), "age"),
        dob=_parse_date(row.get("dob"), "dob"),
        sex=_clean(row.get("sex")),
        race=_clean(row.get("race")),
        booking_number=_clean(row.get("booking_number")),
        person_id=_clean(row.get("person_id")),
        charges=charges,
    )


def read_snapshots(path: Path) -> tuple[list[RosterSnapshot], list[RejectedRecord]]:
    """Read a `.csv` or `.jsonl` snapshot file; bad rows are rejected, not fatal."""
    if path.suffix.lower() in (".jsonl", ".ndjson"):
        rows = []
        for i, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                rows.append((i, json.loads(line)))
            except json.JSONDecodeError as e:
                rows.append((i, {"_error": f"invalid JSON: {e.msg}"}))
    else:
        # everything as text so one malformed cell rejects one row, not the file
        table = pacsv.read_csv(
            path,
            convert_options=pacsv.ConvertOptions(
                column_types={name: pa.string() for name in SNAPSHOTS_SCHEMA.names},
                strings_can_be_null=True,
            ),
        )
        rows = list(enumerate(table.to_pylist(), start=2))

    snapshots: list[RosterSnapshot] = []
    rejects: list[RejectedRecord] = []
    for line, row in rows:
        try:
            if "_error" in row:
                raise RosterRecordError(row["_error"])
            snapshots.append(snapshot_from_row(row))
        except RosterRecordError as e:
            rejects.append(RejectedRecord(str(path), line, str(e), _jsonable(row)))
    if rejects:
        logger.warning("%s: rejected %d of %d records", path, len(rejects), len(rows))
    return snapshots, rejects


def _jsonable(row: dict) -> dict:
    return {k: (v.isoformat() if isinstance(v, date) else v) for k, v in row.items()}


# -- spell reconstruction ----------------------------------------------------

@dataclass
class _Observation:
    day: date
    name: PersonName
    age: int | None
    dob: date | None
    gender: str
    race: str
    charges: tuple[str, ...] | None


def person_key(snap: RosterSnapshot, name: PersonName) -> str:
    """Identity within a facility: booking number → person id → name + dob/age."""
    if snap.booking_number:
        return f"{snap.facility_id}:bn:{snap.booking_number}"
    if snap.person_id:
        return f"{snap.facility_id}:pid:{snap.person_id}"
    born = snap.dob.isoformat() if snap.dob else f"age{snap.age}" if snap.age is not None else "na"
    return f"{snap.facility_id}:nm:{format_name(name)}|{born}"


def _majority(values: list, unknown):
    """Most common value; a tie for first place gives `unknown`."""
    known = [v for v in values if v is not None and v != UNKNOWN]
    if not known:
        return unknown
    ranked = Counter(known).most_common()
    if len(ranked) > 1 and ranked[0][1] == ranked[1][1]:
        return unknown
    return ranked[0][0]


def _build_spell(key: str, facility: str, fips: str, obs: list[_Observation],
                 facility_end: date) -> BookingSpell:
    entry, exit = obs[0].day, obs[-1].day
    names = Counter(format_name(o.name) for o in obs)
    best = max(names.values())
    # name ties fall back to the earliest spelling
    name = next(o.name for o in obs if names[format_name(o.name)] == best)
    reported = [o.charges for o in obs if o.charges is not None]
    charges = max(reported, key=len) if reported else None
    return BookingSpell(
        booking_id=f"{key}:{entry.isoformat()}",
        person_key=key,
        facility_id=facility,
        fips=fips,
        entry_date=entry,
        exit_date=exit,
        length_of_stay_days=(exit - entry).days + 1,
        censored=exit >= facility_end,
        age_years=_majority([o.age for o in obs], None),
        dob=_majority([o.dob for o in obs], None),
        gender=_majority([o.gender for o in obs], UNKNOWN),
        race=_majority([o.race for o in obs], UNKNOWN),
        charge_count=len(charges) if charges else 0,
        charges_reported=charges is not None,
        top_charge=top_charge(charges or ()),
        charges=charges,
        first=name.first,
        middle=name.middle,
        last=name.last,
    )


def _facility_spells(snaps: list[RosterSnapshot], gap_tolerance: int,
                     rejects: list[RejectedRecord]) -> list[BookingSpell]:
    facility = snaps[0].facility_id
    facility_end = max(s.observed_date for s in snaps)
    by_person: dict[str, list[_Observation]] = defaultdict(list)
    fips_of: dict[str, str] = {}
    for snap in snaps:
        try:
            name = parse_name(snap.name, first=snap.first, middle=snap.middle, last=snap.last)
        except JailVoteError as e:
            rejects.append(RejectedRecord(facility, 0, str(e), _jsonable(snap.__dict__)))
            continue
        key = person_key(snap, name)
        fips_of.setdefault(key, snap.fips)
        age = snap.age
        if snap.dob is not None:
            age = age_on(snap.dob, snap.observed_date)
        if age is not None and not 0 <= age <= 120:
            age = None
        by_person[key].append(_Observation(
            day=snap.observed_date, name=name, age=age,
            dob=snap.dob,
            gender=standardize_gender(snap.sex), race=standardize_race(snap.race),
            charges=snap.charges,
        ))

    spells = []
    for key in sorted(by_person):
        obs = sorted(by_person[key], key=lambda o: o.day)
        run = [obs[0]]
        for o in obs[1:]:
            gap = (o.day - run[-1].day).days - 1
            if gap > gap_tolerance:
                spells.append(_build_spell(key, facility, fips_of[key], run, facility_end))
                run = [o]
            else:
                run.append(o)
        spells.append(_build_spell(key, facility, fips_of[key], run, facility_end))
    return spells


def rosters_to_spells(
    snapshots: Iterable[RosterSnapshot],
    gap_tolerance: int = 0,
    threads: int = 1,
    rejects: list[RejectedRecord] | None = None,
) -> list[BookingSpell]:
    """Reconstruct spells per facility.

    `gap_tolerance` unobserved days may fall inside one spell (0 = any gap
    closes it). Rows whose name cannot be parsed are appended to `rejects`.
    Output is sorted by (facility, person_key, entry_date).
    """
    by_facility: dict[str, list[RosterSnapshot]] = defaultdict(list)
    for snap in snapshots:
        by_facility[snap.facility_id].append(snap)
    facilities = sorted(by_facility)
    sink: list[list[RejectedRecord]] = [[] for _ in facilities]

    def _one(i: int) -> list[BookingSpell]:
        return _facility_spells(by_facility[facilities[i]], gap_tolerance, sink[i])

    per_facility = run_pool(list(range(len(facilities))), _one, threads)
    if rejects is not None:
        for batch in sink:
            rejects.extend(batch)
    spells = [s for batch in per_facility for s in batch]
    spells.sort(key=lambda s: (s.facility_id, s.person_key, s.entry_date))
    logger.info("reconstructed %d spells from %d facilities", len(spells), len(facilities))
    return spells


def expand_spells(spells: Iterable[BookingSpell]) -> list[RosterSnapshot]:
    """Daily snapshots that reconstruct `spells` (inverse of rosters_to_spells)."""
    out = []
    for spell in spells:
        kind, ident = spell.person_key[len(spell.facility_id) + 1:].split(":", 1)
        exit = spell.exit_date or spell.entry_date
        day = spell.entry_date
        while day <= exit:
            snap = RosterSnapshot(
                facility_id=spell.facility_id,
                fips=spell.fips,
                observed_date=day,
                first=spell.first or None,
                middle=spell.middle or None,
                last=spell.last,
                age=spell.age_years,
                dob=spell.dob,
                sex="" if spell.gender == UNKNOWN else spell.gender,
                race="" if spell.race == UNKNOWN else spell.race,
                charges=spell.charges,
            )
            if kind == "bn":
                snap.booking_number = ident
            elif kind == "pid":
                snap.person_id = ident
            out.append(snap)
            day += timedelta(days=1)
    return out


def in_study_pool(spells: Iterable[BookingSpell], start: date, end: date) -> list[BookingSpell]:
    """Spells whose entry date lies in [start, end]."""
    return [s for s in spells if start <= s.entry_date <= end]
