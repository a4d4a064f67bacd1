"""Voter-file records and vendor label standardization."""

import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path

from .errors import JailVoteError
from .identity import PersonName, parse_name, soundex
from .roster import RejectedRecord, UNKNOWN, standardize_gender
from .storage import VOTER_FILE_SCHEMA, read_table
from .voting_calendar import state_for_fips

logger = logging.getLogger(__name__)

_VOTER_RACE_TABLE = {
    "EUROPEAN": "white",
    "LIKELY AFRICAN AMERICAN": "Black",
    "AFRICAN AMERICAN": "Black",
    "EAST AND SOUTH ASIAN": "other",
    "HISPANIC AND PORTUGUESE": "other",
    "OTHER": "other",
}

_PARTY_TABLE = {
    "D": "Dem", "DEM": "Dem", "DEMOCRAT": "Dem", "DEMOCRATIC": "Dem",
    "R": "Rep", "REP": "Rep", "REPUBLICAN": "Rep",
}


@dataclass
class VoterRecord:
    voter_id: str
    state: str
    fips: str
    first: str
    middle: str
    last: str
    soundex: str
    age: int | None
    gender: str
    race: str
    race_reported: bool
    party: str
    registration_date: date | None
    voted_2020: bool
    voted_2016: bool
    voted_2012: bool
    ballot_return_date: date | None = None

    @property
    def name(self) -> PersonName:
        return PersonName(self.first or "", self.middle or "", self.last or "")


def _label_key(label: str | None) -> str:
    return " ".join((label or "").strip().upper().replace("-", " ").split())


def standardize_voter_race(label: str | None) -> str:
    """white/Black/other from vendor ethnicity labels; blank → unknown."""
    key = _label_key(label)
    if not key:
        return UNKNOWN
    return _VOTER_RACE_TABLE.get(key, "other")


def standardize_party(label: str | None) -> str:
    """Dem/Rep/other; blank → unknown."""
    key = _label_key(label)
    if not key:
        return UNKNOWN
    return _PARTY_TABLE.get(key, "other")


def voter_from_row(row: dict) -> VoterRecord:
    name = parse_name(first=row.get("first"), middle=row.get("middle"), last=row.get("last"))
    fips = str(row["fips"])
    return VoterRecord(
        voter_id=str(row["voter_id"]),
        state=state_for_fips(fips),
        fips=fips,
        first=name.first,
        middle=name.middle,
        last=name.last,
        soundex=soundex(name.last),
        age=row.get("age"),
        gender=standardize_gender(row.get("gender")),
        race=standardize_voter_race(row.get("ethnicity")),
        race_reported=bool(row.get("ethnicity_reported")),
        party=standardize_party(row.get("party")),
        registration_date=row.get("registration_date"),
        voted_2020=bool(row.get("voted_2020")),
        voted_2016=bool(row.get("voted_2016")),
        voted_2012=bool(row.get("voted_2012")),
        ballot_return_date=row.get("ballot_return_date"),
    )


def read_voter_file(path: Path) -> tuple[list[VoterRecord], list[RejectedRecord]]:
    """Standardize a raw voter file; unusable rows are rejected with a reason."""
    voters, rejects = [], []
    for line, row in enumerate(read_table(path, VOTER_FILE_SCHEMA).to_pylist(), start=2):
        try:
            voters.append(voter_from_row(row))
        except JailVoteError as e:
            rejects.append(RejectedRecord(
                str(path), line, str(e),
                {k: (v.isoformat() if isinstance(v, date) else v) for k, v in row.items()},
            ))
    if rejects:
        logger.warning("%s: rejected %d voter rows", path, len(rejects))
    voters.sort(key=lambda v: v.voter_id)
    return voters, rejects
