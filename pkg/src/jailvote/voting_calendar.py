"""Per-state 2020 voting windows and treatment exposure.

The window of a state runs from its earliest voting day (the earlier of
mail-ballot mailing and in-person early voting) through Election Day. Day
counts come from the shipped table, not from the calendar span: NC's
inclusive span is 61 days but the table carries 60, hence the cap on the
proportion.
"""

import logging
from dataclasses import dataclass
from datetime import date
from pathlib import Path
from typing import Protocol

import pyarrow as pa
import pyarrow.csv as pacsv

from .config import ELECTION_DAY
from .errors import CalendarError, ConfigError

logger = logging.getLogger(__name__)

DEFAULT_CALENDAR = Path(__file__).parent / "data" / "voting_calendar.csv"

CALENDAR_SCHEMA = pa.schema([
    ("state", pa.string()),
    ("first_voting_day", pa.date32()),
    ("n_voting_days", pa.int64()),
])

STATE_FIPS = {
    "01": "AL", "02": "AK", "04": "AZ", "05": "AR", "06": "CA", "08": "CO",
    "09": "CT", "10": "DE", "11": "DC", "12": "FL", "13": "GA", "15": "HI",
    "16": "ID", "17": "IL", "18": "IN", "19": "IA", "20": "KS", "21": "KY",
    "22": "LA", "23": "ME", "24": "MD", "25": "MA", "26": "MI", "27": "MN",
    "28": "MS", "29": "MO", "30": "MT", "31": "NE", "32": "NV", "33": "NH",
    "34": "NJ", "35": "NM", "36": "NY", "37": "NC", "38": "ND", "39": "OH",
    "40": "OK", "41": "OR", "42": "PA", "44": "RI", "45": "SC", "46": "SD",
    "47": "TN", "48": "TX", "49": "UT", "50": "VT", "51": "VA", "53": "WA",
    "54": "WV", "55": "WI", "56": "WY",
}
FIPS_BY_STATE = {state: code for code, state in STATE_FIPS.items()}


class HasStay(Protocol):
    fips: str
    entry_date: date
    exit_date: date | None


def state_for_fips(fips: str) -> str:
    """Two-letter state of a 5-digit county FIPS code."""
    try:
        return STATE_FIPS[str(fips)[:2]]
    except KeyError:
        raise CalendarError(f"unknown state for fips {fips!r}") from None


@dataclass(frozen=True)
class StateWindow:
    state: str
    first_voting_day: date
    n_voting_days: int
    election_day: date = ELECTION_DAY

    def overlap_days(self, entry: date, exit: date | None) -> int:
        """Inclusive day count of [entry, exit] ∩ [first_voting_day, election_day].

        An open exit counts as confined through Election Day.
        """
        start = max(entry, self.first_voting_day)
        end = self.election_day if exit is None else min(exit, self.election_day)
        return max(0, (end - start).days + 1)


class VotingCalendar:
    """State → voting window lookup."""

    def __init__(self, windows: dict[str, StateWindow]):
        self.windows = windows

    @classmethod
    def load(cls, path: Path | None = None, election_day: date = ELECTION_DAY) -> "VotingCalendar":
        path = path or DEFAULT_CALENDAR
        table = pacsv.read_csv(
            path,
            convert_options=pacsv.ConvertOptions(
                column_types={f.name: f.type for f in CALENDAR_SCHEMA},
                include_columns=CALENDAR_SCHEMA.names,
            ),
        )
        windows = {}
        for row in table.to_pylist():
            w = StateWindow(
                state=row["state"].strip().upper(),
                first_voting_day=row["first_voting_day"],
                n_voting_days=row["n_voting_days"],
                election_day=election_day,
            )
            if w.first_voting_day > w.election_day or w.n_voting_days < 1:
                raise ConfigError(f"invalid calendar row for {w.state} in {path}")
            windows[w.state] = w
        logger.debug("loaded voting calendar for %d states from %s", len(windows), path)
        return cls(windows)

    def window(self, state: str) -> StateWindow:
        try:
            return self.windows[state]
        except KeyError:
            raise CalendarError(f"unknown state {state!r}") from None

    def window_for_fips(self, fips: str) -> StateWindow:
        return self.window(state_for_fips(fips))

    @property
    def max_voting_days(self) -> int:
        return max(w.n_voting_days for w in self.windows.values())


def confined_during_voting(spell: HasStay, calendar: VotingCalendar) -> bool:
    """True iff the stay intersects the state's voting window."""
    return calendar.window_for_fips(spell.fips).overlap_days(spell.entry_date, spell.exit_date) > 0


def proportion_confined(spell: HasStay, calendar: VotingCalendar) -> float:
    """Share of the state's voting days spent confined, capped at 1."""
    window = calendar.window_for_fips(spell.fips)
    days = window.overlap_days(spell.entry_date, spell.exit_date)
    return min(1.0, days / window.n_voting_days)
