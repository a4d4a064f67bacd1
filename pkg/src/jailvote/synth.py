"""Synthetic rosters, voter files and planted effects for end-to-end tests.

True-linked bookings copy their identity from a voter record through a
per-character typo model and field missingness. 2020 turnout of booked
voters follows a linear probability model carrying the planted effects plus
jail and ISO-week shocks, so planted coefficients are the estimands of the
turnout regressions. Every state draws from its own derived seed.
"""

import logging
import string
from dataclasses import dataclass, field
from datetime import date, timedelta
from functools import lru_cache
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
import pyarrow as pa
import pyarrow.csv as pacsv

from .blocking import Block, PairUniverse
from .config import CONTROL_WINDOWS, ELECTION_DAY, PLACEBO_ELECTION_DAYS, SynthConfig, derive_seed
from .errors import InstanceTooLargeError, JailVoteError, SynthConfigError
from .linkage import FSParameters, best_matches, posterior_array
from .roster import CHARGE_SEVERITY, BookingSpell, RosterSnapshot
from .storage import (
    LINKED_SCHEMA,
    SNAPSHOTS_SCHEMA,
    TRUTH_EFFECTS_SCHEMA,
    TRUTH_LINKS_SCHEMA,
    VOTER_FILE_SCHEMA,
    write_records,
)
from .voters import VoterRecord
from .voting_calendar import FIPS_BY_STATE, StateWindow, VotingCalendar, state_for_fips
from .worker import run_pool

__all__ = [
    "SynthConfig", "SynthData", "NamePools", "generate", "simulate_linked",
    "turnout_probability", "add_typos", "all_pairs_blocks", "brute_force_link",
    "MAX_BRUTE_BOOKINGS", "MAX_BRUTE_VOTERS",
]

logger = logging.getLogger(__name__)

DATA_DIR = Path(__file__).parent / "data"

MAX_BRUTE_BOOKINGS = 500
MAX_BRUTE_VOTERS = 5000

RACES = ("white", "Black", "other")
RACE_SHARES = (0.60, 0.25, 0.15)
PARTIES = ("Dem", "Rep", "other")
PARTY_SHARES = (0.38, 0.34, 0.28)

# vendor and roster spellings of the standardized categories
_VENDOR_RACE = {"white": ("European",), "Black": ("Likely African-American",),
                "other": ("Hispanic and Portuguese", "East and South Asian")}
_VENDOR_PARTY = {"Dem": ("Democratic",), "Rep": ("Republican",),
                 "other": ("Non-Partisan", "Libertarian", "Green")}
_ROSTER_RACE = {"white": ("W", "White"), "Black": ("B", "Black"), "other": ("H", "A", "Hispanic")}
_ROSTER_SEX = {"male": ("M", "Male"), "female": ("F", "Female")}

CHARGE_SHARES = (0.20, 0.25, 0.20, 0.20, 0.08, 0.07)

JAIL_EFFECT_SD = 0.03
WEEK_EFFECT_SD = 0.02
MEAN_STAY_DAYS = 12.0
MATCHED_HOME_COUNTY = 0.8
LATE_REGISTRATION_RATE = 0.02
MAIL_RETURN_RATE = 0.7
REGISTRATION_START = date(2000, 1, 1)
_LETTERS = np.array(list(string.ascii_uppercase))
_RACE_CDF = np.cumsum(RACE_SHARES)
_PARTY_CDF = np.cumsum(PARTY_SHARES)


def _pick(rng: np.random.Generator, cdf: np.ndarray) -> int:
    """Index drawn from a cumulative distribution."""
    return min(int(np.searchsorted(cdf, rng.random(), side="right")), len(cdf) - 1)


@dataclass
class NamePools:
    """First names by gender and surnames with cumulative frequency weights."""
    first: dict[str, tuple[np.ndarray, np.ndarray]]
    last: tuple[np.ndarray, np.ndarray]

    @classmethod
    def load(cls, data_dir: Path = DATA_DIR) -> "NamePools":
        return _load_pools(data_dir)

    def draw_first(self, rng: np.random.Generator, gender: str) -> str:
        names, cdf = self.first[gender]
        return str(names[_pick(rng, cdf)])

    def draw_last(self, rng: np.random.Generator) -> str:
        names, cdf = self.last
        return str(names[_pick(rng, cdf)])


@lru_cache(maxsize=4)
def _load_pools(data_dir: Path) -> NamePools:
    first = pacsv.read_csv(
        data_dir / "first_names.csv",
        convert_options=pacsv.ConvertOptions(
            column_types={"name": pa.string(), "gender": pa.string(), "weight": pa.float64()}),
    ).to_pandas()
    last = pacsv.read_csv(
        data_dir / "last_names.csv",
        convert_options=pacsv.ConvertOptions(
            column_types={"name": pa.string(), "weight": pa.float64()}),
    ).to_pandas()

    def _pool(df: pd.DataFrame) -> tuple[np.ndarray, np.ndarray]:
        w = df["weight"].to_numpy(dtype=float)
        return df["name"].to_numpy(dtype=object), np.cumsum(w) / w.sum()

    return NamePools(
        first={g: _pool(first[first["gender"] == g]) for g in ("male", "female")},
        last=_pool(last),
    )


@dataclass
class SynthData:
    snapshots: list[RosterSnapshot]
    voter_rows: list[dict]
    truth_links: list[dict]
    truth_effects: list[dict] = field(default_factory=list)

    def write(self, out: Path) -> dict[str, Path]:
        """raw/ holds the pipeline inputs, truth/ the sidecar answers."""
        paths = {
            "rosters": out / "raw" / "rosters.csv",
            "voter_file": out / "raw" / "voter_file.csv",
            "truth_links": out / "truth" / "links.csv",
            "truth_effects": out / "truth" / "effects.csv",
        }
        write_records(self.snapshots, SNAPSHOTS_SCHEMA, paths["rosters"])
        write_records(self.voter_rows, VOTER_FILE_SCHEMA, paths["voter_file"])
        write_records(self.truth_links, TRUTH_LINKS_SCHEMA, paths["truth_links"])
        write_records(self.truth_effects, TRUTH_EFFECTS_SCHEMA, paths["truth_effects"])
        return paths


# -- noise -------------------------------------------------------------------

def add_typos(name: str, rng: np.random.Generator, substitution: float,
              transposition: float, deletion: float) -> str:
    """Per-character deletion, transposition with the next letter, or substitution."""
    if not name or substitution + transposition + deletion == 0:
        return name
    chars = list(name)
    out: list[str] = []
    i = 0
    while i < len(chars):
        r = rng.random()
        if r < deletion and len(chars) > 2:
            i += 1
        elif r < deletion + transposition and i + 1 < len(chars):
            out.extend((chars[i + 1], chars[i]))
            i += 2
        elif r < deletion + transposition + substitution and chars[i].isalpha():
            choices = _LETTERS[_LETTERS != chars[i]]
            out.append(str(choices[rng.integers(len(choices))]))
            i += 1
        else:
            out.append(chars[i])
            i += 1
    return "".join(out) or name


def _shock(seed: int, kind: str, key: str, sd: float) -> float:
    rng = np.random.Generator(np.random.Philox(derive_seed(seed, "synth", kind, key)))
    return float(rng.normal(0.0, sd))


def turnout_probability(config: SynthConfig, race: str, party: str, age: float,
                        jail_effect: float = 0.0, week_effect: float = 0.0,
                        confined: float = 0.0, proportion: float = 0.0) -> float:
    """Linear probability of voting in 2020, clipped to [0, 1]."""
    p = (config.base_turnout
         + config.race_turnout.get(race, 0.0)
         + config.party_turnout.get(party, 0.0)
         + config.age_turnout_slope * (age - 45.0)
         + jail_effect + week_effect
         + config.ate_binary * confined
         + config.slope_proportion * proportion
         + (config.black_extra_slope * proportion if race == "Black" else 0.0))
    return min(1.0, max(0.0, p))


def _prior_probability(config: SynthConfig, year: int, race: str, party: str, age: float) -> float:
    p = (config.prior_turnout.get(year, config.base_turnout)
         + config.race_turnout.get(race, 0.0)
         + config.party_turnout.get(party, 0.0)
         + config.age_turnout_slope * (age - 45.0))
    return min(1.0, max(0.0, p))


def _iso_week(day: date) -> str:
    year, week, _ = day.isocalendar()
    return f"{year}-W{week:02d}"


def _exposure(window: StateWindow, entry: date, exit: date | None) -> tuple[float, float]:
    days = window.overlap_days(entry, exit)
    return float(days > 0), min(1.0, days / window.n_voting_days)


# -- generation --------------------------------------------------------------

def _split(total: int, parts: int) -> list[int]:
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]


def _county_fips(state: str, county: int) -> str:
    return f"{FIPS_BY_STATE[state]}{2 * county + 1:03d}"


def _facility_id(state: str, county: int) -> str:
    return f"{state}-{county + 1:02d}"


@dataclass
class _Person:
    first: str
    middle: str
    last: str
    age: int
    gender: str
    race: str


@dataclass
class _Booking:
    booking_number: str
    county: int
    entry: date
    exit: date
    charges: tuple[str, ...]
    person: _Person | None = None
    voter_index: int | None = None


def _draw_voters(state: str, n: int, config: SynthConfig, pools: NamePools,
                 window: StateWindow, rng: np.random.Generator) -> list[dict]:
    reg_days = (ELECTION_DAY - timedelta(days=21) - REGISTRATION_START).days
    reporting = state in config.race_reporting_states
    rows = []
    for i in range(n):
        gender = "male" if rng.random() < 0.5 else "female"
        u = rng.random()
        if u < 0.6:
            middle = pools.draw_first(rng, gender)
        elif u < 0.85:
            middle = str(_LETTERS[rng.integers(26)])
        else:
            middle = ""
        race = RACES[_pick(rng, _RACE_CDF)]
        party = PARTIES[_pick(rng, _PARTY_CDF)]
        if rng.random() < LATE_REGISTRATION_RATE:
            registration = ELECTION_DAY + timedelta(days=int(rng.integers(1, 58)))
        else:
            registration = REGISTRATION_START + timedelta(days=int(rng.integers(reg_days)))
        age = int(rng.integers(19, 86))
        row = {
            "voter_id": f"{state}{i:07d}",
            "county": int(rng.integers(config.facilities_per_state)),
            "first": pools.draw_first(rng, gender),
            "middle": middle,
            "last": pools.draw_last(rng),
            "age": age,
            "gender": gender,
            "race": race,
            "party": party,
            "ethnicity": _VENDOR_RACE[race][rng.integers(len(_VENDOR_RACE[race]))],
            "ethnicity_reported": reporting,
            "party_label": _VENDOR_PARTY[party][rng.integers(len(_VENDOR_PARTY[party]))],
            "registration_date": registration,
        }
        for year, day in PLACEBO_ELECTION_DAYS.items():
            row[f"voted_{year}"] = bool(
                registration <= day
                and rng.random() < _prior_probability(config, year, race, party, age))
        _set_2020_turnout(row, config, rng, window, 0.0, 0.0, 0.0, 0.0)
        rows.append(row)
    return rows


def _set_2020_turnout(row: dict, config: SynthConfig, rng: np.random.Generator,
                      window: StateWindow, jail: float, week: float,
                      confined: float, proportion: float) -> None:
    p = turnout_probability(config, row["race"], row["party"], row["age"],
                            jail, week, confined, proportion)
    voted = row["registration_date"] <= ELECTION_DAY and rng.random() < p
    row["voted_2020"] = bool(voted)
    row["ballot_return_date"] = None
    if voted and rng.random() < MAIL_RETURN_RATE:
        span = (window.election_day - window.first_voting_day).days + 1
        row["ballot_return_date"] = window.first_voting_day + timedelta(days=int(rng.integers(span)))


def _copy_identity(voter: dict, rng: np.random.Generator, config: SynthConfig) -> _Person:
    typo = (config.typo_substitution, config.typo_transposition, config.typo_deletion)
    # the voter file states age on Election Day; most bookings precede it
    age = voter["age"] - (1 if rng.random() < 0.25 else 0)
    return _Person(
        first=add_typos(voter["first"], rng, *typo),
        middle=add_typos(voter["middle"], rng, *typo) if len(voter["middle"]) > 1 else voter["middle"],
        last=add_typos(voter["last"], rng, *typo),
        age=age, gender=voter["gender"], race=voter["race"],
    )


def _new_person(rng: np.random.Generator, pools: NamePools) -> _Person:
    gender = "male" if rng.random() < 0.75 else "female"
    return _Person(
        first=pools.draw_first(rng, gender),
        middle=pools.draw_first(rng, gender) if rng.random() < 0.6 else "",
        last=pools.draw_last(rng),
        age=int(rng.integers(16, 70)),
        gender=gender,
        race=RACES[_pick(rng, _RACE_CDF)],
    )


def _draw_charges(entry: date, config: SynthConfig, rng: np.random.Generator) -> tuple[str, ...]:
    k = 1 + int(rng.poisson(0.8))
    if config.drift_days is not None and entry < ELECTION_DAY - timedelta(days=config.drift_days):
        k += config.drift_charges
    idx = rng.choice(len(CHARGE_SEVERITY), size=k, p=CHARGE_SHARES)
    return tuple(CHARGE_SEVERITY[i] for i in idx)


def _draw_stay(entry: date, config: SynthConfig, rng: np.random.Generator) -> date:
    days = 1 + int(rng.exponential(MEAN_STAY_DAYS))
    return min(entry + timedelta(days=days - 1), config.observe_end)


def _registration_shift(config: SynthConfig, window: StateWindow, entry: date, exit: date) -> float:
    return config.registration_effect * _exposure(window, entry, exit)[1]


@dataclass
class _StateOutput:
    snapshots: list[RosterSnapshot]
    voter_rows: list[dict]
    truth_links: list[dict]


def _generate_state(state: str, n_voters: int, n_bookings: int, n_matched: int | None,
                    config: SynthConfig, pools: NamePools, window: StateWindow) -> _StateOutput:
    rng = np.random.Generator(np.random.Philox(derive_seed(config.seed, "synth", state)))
    voters = _draw_voters(state, n_voters, config, pools, window, rng)
    eligible = [i for i, v in enumerate(voters) if v["registration_date"] <= ELECTION_DAY]

    pool_days = (config.pool_end - config.pool_start).days + 1
    bookings: list[_Booking] = []
    for k in range(n_bookings):
        entry = config.pool_start + timedelta(days=int(rng.integers(pool_days)))
        bookings.append(_Booking(
            booking_number=f"{state}{k:07d}",
            county=int(rng.integers(config.facilities_per_state)),
            entry=entry,
            exit=_draw_stay(entry, config, rng),
            charges=_draw_charges(entry, config, rng),
        ))

    # which bookings are true links
    if n_matched is not None:
        matched = set(rng.choice(n_bookings, size=n_matched, replace=False).tolist()) if n_matched else set()
    else:
        matched = {
            k for k, b in enumerate(bookings)
            if rng.random() < min(1.0, max(0.0, config.true_match_rate
                                           + _registration_shift(config, window, b.entry, b.exit)))
        }
    if len(matched) > len(eligible):
        raise SynthConfigError(
            f"{state}: {len(matched)} true links need as many registered voters, "
            f"the voter file has {len(eligible)}")
    chosen = rng.choice(len(eligible), size=len(matched), replace=False) if matched else []
    voter_of = {k: eligible[int(j)] for k, j in zip(sorted(matched), chosen)}

    for k, b in enumerate(bookings):
        if k in voter_of:
            voter = voters[voter_of[k]]
            b.voter_index = voter_of[k]
            b.person = _copy_identity(voter, rng, config)
            if rng.random() < MATCHED_HOME_COUNTY:
                b.county = voter["county"]
        else:
            b.person = _new_person(rng, pools)

    # repeat bookings of the same person
    repeats = []
    if config.repeat_booking_rate > 0:
        for b in bookings:
            if rng.random() >= config.repeat_booking_rate:
                continue
            entry = b.exit + timedelta(days=30 + int(rng.integers(60)))
            if entry > config.pool_end:
                continue
            person = b.person
            if b.voter_index is not None:
                person = _copy_identity(voters[b.voter_index], rng, config)
            repeats.append(_Booking(
                booking_number=f"{b.booking_number}R", county=b.county, entry=entry,
                exit=_draw_stay(entry, config, rng), person=person,
                charges=_draw_charges(entry, config, rng), voter_index=b.voter_index,
            ))
    bookings.extend(repeats)

    # planted turnout for booked voters, from their first booking
    first_booking: dict[int, _Booking] = {}
    for b in sorted(bookings, key=lambda b: b.entry):
        if b.voter_index is not None:
            first_booking.setdefault(b.voter_index, b)
    for vi in sorted(first_booking):
        b = first_booking[vi]
        confined, proportion = _exposure(window, b.entry, b.exit)
        facility = _facility_id(state, b.county)
        _set_2020_turnout(
            voters[vi], config, rng, window,
            _shock(config.seed, "jail", facility, JAIL_EFFECT_SD),
            _shock(config.seed, "week", _iso_week(b.entry), WEEK_EFFECT_SD),
            confined, proportion,
        )

    snapshots = _expand(state, bookings, config, rng)
    truth = [{"booking_number": b.booking_number, "voter_id": voters[b.voter_index]["voter_id"],
              "state": state} for b in bookings if b.voter_index is not None]
    return _StateOutput(snapshots, [_voter_file_row(state, v) for v in voters], truth)


def _booking_fields(person: _Person, config: SynthConfig, rng: np.random.Generator) -> dict:
    """What the roster publishes for a person, after missingness."""
    fields_ = {
        "first": None if rng.random() < config.missing_first else person.first,
        "middle": None if (not person.middle or rng.random() < config.missing_middle) else person.middle,
        "last": person.last,
        "age": None if rng.random() < config.missing_age else person.age,
        "sex": None,
        "race": None,
    }
    if rng.random() >= config.missing_gender:
        labels = _ROSTER_SEX[person.gender]
        fields_["sex"] = labels[rng.integers(len(labels))]
    labels = _ROSTER_RACE[person.race]
    fields_["race"] = labels[rng.integers(len(labels))]
    return fields_


def _expand(state: str, bookings: list[_Booking], config: SynthConfig,
            rng: np.random.Generator) -> list[RosterSnapshot]:
    outages: dict[int, set[date]] = {}
    if config.outage_rate > 0:
        days = (config.observe_end - config.pool_start).days + 1
        for county in range(config.facilities_per_state):
            down = np.flatnonzero(rng.random(days) < config.outage_rate)
            outages[county] = {config.pool_start + timedelta(days=int(d)) for d in down}

    snapshots = []
    for b in bookings:
        published = _booking_fields(b.person, config, rng)
        facility = _facility_id(state, b.county)
        fips = _county_fips(state, b.county)
        down = outages.get(b.county, set())
        day = b.entry
        while day <= b.exit:
            if day not in down:
                snapshots.append(RosterSnapshot(
                    facility_id=facility, fips=fips, observed_date=day,
                    booking_number=b.booking_number, charges=b.charges, **published,
                ))
            day += timedelta(days=1)
    return snapshots


def _voter_file_row(state: str, v: dict) -> dict:
    return {
        "voter_id": v["voter_id"],
        "fips": _county_fips(state, v["county"]),
        "first": v["first"],
        "middle": v["middle"] or None,
        "last": v["last"],
        "age": v["age"],
        "gender": v["gender"],
        "ethnicity": v["ethnicity"],
        "ethnicity_reported": v["ethnicity_reported"],
        "party": v["party_label"],
        "registration_date": v["registration_date"],
        "voted_2020": v["voted_2020"],
        "voted_2016": v["voted_2016"],
        "voted_2012": v["voted_2012"],
        "ballot_return_date": v["ballot_return_date"],
    }


def _validate(config: SynthConfig, calendar: VotingCalendar) -> None:
    if not config.states:
        raise SynthConfigError("at least one state is required")
    if config.n_voters < 0 or config.n_bookings < 0:
        raise SynthConfigError("population sizes must be non-negative")
    if config.facilities_per_state < 1:
        raise SynthConfigError("facilities_per_state must be at least 1")
    if config.pool_end < config.pool_start or config.observe_end < config.pool_end:
        raise SynthConfigError("need pool_start <= pool_end <= observe_end")
    for state in config.states:
        if state not in FIPS_BY_STATE:
            raise SynthConfigError(f"unknown state {state!r}")
        calendar.window(state)


def _truth_effects(config: SynthConfig, n_links: int) -> list[dict]:
    return [
        {"parameter": "ate_binary", "value": config.ate_binary},
        {"parameter": "slope_proportion", "value": config.slope_proportion},
        {"parameter": "black_extra_slope", "value": config.black_extra_slope},
        {"parameter": "registration_effect", "value": config.registration_effect},
        {"parameter": "true_match_rate", "value": config.true_match_rate},
        {"parameter": "n_true_links", "value": float(n_links)},
        {"parameter": "seed", "value": float(config.seed)},
    ]


def generate(config: SynthConfig, threads: int = 1,
             calendar: VotingCalendar | None = None) -> SynthData:
    """Rosters, voter file and truth sidecars; deterministic per seed."""
    calendar = calendar or VotingCalendar.load()
    _validate(config, calendar)
    pools = NamePools.load()
    states = list(config.states)
    voter_counts = _split(config.n_voters, len(states))
    booking_counts = _split(config.n_bookings, len(states))

    if config.registration_effect == 0:
        total_links = round(config.true_match_rate * config.n_bookings)
        if total_links > config.n_bookings:
            raise SynthConfigError(
                f"{total_links} true links requested for {config.n_bookings} bookings")
        link_counts: list[int | None] = list(_split_proportional(total_links, booking_counts))
    else:
        link_counts = [None] * len(states)

    parts = run_pool(
        list(range(len(states))),
        lambda i: _generate_state(states[i], voter_counts[i], booking_counts[i], link_counts[i],
                                  config, pools, calendar.window(states[i])),
        threads,
    )
    snapshots = [s for p in parts for s in p.snapshots]
    snapshots.sort(key=lambda s: (s.facility_id, s.observed_date, s.booking_number))
    voter_rows = sorted((r for p in parts for r in p.voter_rows), key=lambda r: r["voter_id"])
    truth = sorted((t for p in parts for t in p.truth_links), key=lambda t: t["booking_number"])
    logger.info("synthetic data: %d snapshots, %d voters, %d true links",
                len(snapshots), len(voter_rows), len(truth))
    return SynthData(snapshots, voter_rows, truth, _truth_effects(config, len(truth)))


def _split_proportional(total: int, weights: Sequence[int]) -> list[int]:
    """Largest-remainder split of `total` in proportion to `weights`."""
    denom = sum(weights)
    if denom == 0:
        return [0] * len(weights)
    exact = [total * w / denom for w in weights]
    out = [int(x) for x in exact]
    order = sorted(range(len(weights)), key=lambda i: (-(exact[i] - out[i]), i))
    for i in order[: total - sum(out)]:
        out[i] += 1
    return out


# -- linked-sample simulator ---------------------------------------------------

def simulate_linked(config: SynthConfig, n_linked: int,
                    calendar: VotingCalendar | None = None) -> pd.DataFrame:
    """Linked records drawn directly, skipping rosters and linkage.

    Entries span the longest voting window before Election Day through the
    longest control window after it. Outcomes follow the same planted model
    as `generate`; the frame has the linked-sample columns.
    """
    calendar = calendar or VotingCalendar.load()
    _validate(config, calendar)
    rng = np.random.Generator(np.random.Philox(derive_seed(config.seed, "synth", "linked")))
    first = ELECTION_DAY - timedelta(days=calendar.max_voting_days + 5)
    span = (ELECTION_DAY + timedelta(days=max(CONTROL_WINDOWS)) - first).days + 1
    rows = []
    for i in range(n_linked):
        state = config.states[int(rng.integers(len(config.states)))]
        window = calendar.window(state)
        county = int(rng.integers(config.facilities_per_state))
        facility = _facility_id(state, county)
        entry = first + timedelta(days=int(rng.integers(span)))
        exit = entry + timedelta(days=int(rng.exponential(MEAN_STAY_DAYS)))
        age = int(rng.integers(19, 80))
        gender = "male" if rng.random() < 0.75 else "female"
        race = RACES[_pick(rng, _RACE_CDF)]
        party = PARTIES[_pick(rng, _PARTY_CDF)]
        charges = _draw_charges(entry, config, rng)
        registration = REGISTRATION_START + timedelta(days=int(rng.integers(7000)))
        confined, proportion = _exposure(window, entry, exit)
        p = turnout_probability(
            config, race, party, age,
            _shock(config.seed, "jail", facility, JAIL_EFFECT_SD),
            _shock(config.seed, "week", _iso_week(entry), WEEK_EFFECT_SD),
            confined, proportion,
        )
        voted = {f"voted_{y}": bool(registration <= d and
                                    rng.random() < _prior_probability(config, y, race, party, age))
                 for y, d in PLACEBO_ELECTION_DAYS.items()}
        rows.append({
            "booking_id": f"{facility}:bn:S{i:07d}:{entry.isoformat()}",
            "voter_id": f"{state}{i:07d}",
            "posterior": 1.0, "reweighted": 1.0,
            "person_key": f"{facility}:bn:S{i:07d}",
            "facility_id": facility, "fips": _county_fips(state, county), "state": state,
            "entry_date": entry, "exit_date": exit,
            "length_of_stay_days": (exit - entry).days + 1,
            "booking_age": age, "booking_gender": gender,
            "booking_race": race, "charge_count": len(charges), "charges_reported": True,
            "top_charge": min(charges, key=CHARGE_SEVERITY.index),
            "voter_age": age, "gender": gender, "race": race,
            "race_reported": state in config.race_reporting_states, "party": party,
            "registration_date": registration,
            "voted_2020": bool(rng.random() < p),
            "ballot_return_date": None,
            **voted,
        })
    return pd.DataFrame(rows, columns=LINKED_SCHEMA.names)


# -- brute-force oracle ---------------------------------------------------------

def all_pairs_blocks(spells: Sequence[BookingSpell], voters: Sequence[VoterRecord]) -> list[Block]:
    """One block per state holding every in-state booking and voter."""
    bookings: dict[str, list[str]] = {}
    for s in spells:
        try:
            state = state_for_fips(s.fips)
        except JailVoteError:
            continue
        bookings.setdefault(state, []).append(s.booking_id)
    by_state: dict[str, list[str]] = {}
    for v in voters:
        by_state.setdefault(v.state, []).append(v.voter_id)
    return [Block(state, None, "*", sorted(bookings[state]), sorted(by_state.get(state, [])))
            for state in sorted(bookings)]


def brute_force_link(spells: Sequence[BookingSpell], voters: Sequence[VoterRecord],
                     params: FSParameters) -> pd.DataFrame:
    """Best-match table (booking_id, voter_id, posterior) over all in-state
    pairs, without blocking; ties are kept."""
    if len(spells) > MAX_BRUTE_BOOKINGS or len(voters) > MAX_BRUTE_VOTERS:
        raise InstanceTooLargeError(
            f"brute force is limited to {MAX_BRUTE_BOOKINGS} bookings x {MAX_BRUTE_VOTERS} "
            f"voters, got {len(spells)} x {len(voters)}")
    empty = pd.DataFrame({"booking_id": pd.Series(dtype=object),
                          "voter_id": pd.Series(dtype=object),
                          "posterior": pd.Series(dtype=float)})
    if not spells:
        return empty
    universe = PairUniverse(all_pairs_blocks(spells, voters), spells, voters)
    if len(universe) == 0:
        return empty
    best = best_matches(universe.booking_idx, universe.voter_idx,
                        posterior_array(universe.gamma, params))
    return pd.DataFrame({
        "booking_id": [universe.booking_ids[int(b)] for b in best["b"]],
        "voter_id": [universe.voter_ids[int(v)] for v in best["v"]],
        "posterior": best["score"].to_numpy(),
    })
