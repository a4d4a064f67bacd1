"""String similarity and the per-pair agreement (γ) vector."""

from dataclasses import dataclass
from functools import lru_cache

import jellyfish

from .identity import PersonName, format_name

GAMMA_FIELDS = ("fips", "age", "gender", "first", "middle", "last")
GAMMA_LEVELS = (2, 3, 3, 3, 3, 3)

# Strict lower bounds of the agreement levels.
HIGH_AGREEMENT = 0.94
MID_AGREEMENT = 0.88

WINKLER_SCALE = 0.1
WINKLER_MAX_PREFIX = 4


@lru_cache(maxsize=1 << 18)
def jaro(a: str, b: str) -> float:
    """Jaro similarity; both empty → 1, exactly one empty → 0."""
    if not a and not b:
        return 1.0
    if not a or not b:
        return 0.0
    return jellyfish.jaro_similarity(a, b)


@lru_cache(maxsize=1 << 18)
def jaro_winkler(a: str, b: str) -> float:
    """Jaro plus the Winkler prefix bonus, applied at every Jaro level."""
    j = jaro(a, b)
    prefix = 0
    for ca, cb in zip(a[:WINKLER_MAX_PREFIX], b[:WINKLER_MAX_PREFIX]):
        if ca != cb:
            break
        prefix += 1
    return j + prefix * WINKLER_SCALE * (1.0 - j)


def name_level(score: float) -> int:
    """Ternary code of a JW score: 2 above 0.94, 1 above 0.88, else 0."""
    # a score that is a boundary in exact arithmetic stays on it
    score = round(score, 9)
    if score > HIGH_AGREEMENT:
        return 2
    if score > MID_AGREEMENT:
        return 1
    return 0


@dataclass(frozen=True)
class ComparisonFields:
    """The six fields one side of a pair contributes to γ."""
    fips: str
    age: int | None
    gender: str | None
    first: str
    middle: str
    last: str

    @classmethod
    def from_name(cls, fips: str, age: int | None, gender: str | None, name: PersonName):
        return cls(fips=fips, age=age, gender=gender,
                   first=name.first, middle=name.middle, last=name.last)

    @property
    def full(self) -> str:
        return format_name(PersonName(self.first, self.middle, self.last))


@dataclass(frozen=True)
class CandidatePair:
    booking_id: str
    voter_id: str
    gamma: tuple[int, ...]
    avg_name_jw: float

    @property
    def init_match_flag(self) -> int:
        return int(self.avg_name_jw > MID_AGREEMENT)


def _middle_level(a: str, b: str) -> int:
    if not a or not b:
        return 1
    if (len(a) == 1) != (len(b) == 1):
        return 2 if a[0] == b[0] else 0
    return name_level(jaro_winkler(a, b))


def _known(value) -> bool:
    return value is not None and value != "unknown"


def agreement_vector(booking: ComparisonFields, voter: ComparisonFields) -> tuple[int, ...]:
    """γ = (fips, age, gender, first, middle, last)."""
    fips = int(booking.fips == voter.fips)

    if booking.age is None or voter.age is None:
        age = 1
    else:
        age = 2 if abs(booking.age - voter.age) <= 1 else 0

    if not (_known(booking.gender) and _known(voter.gender)):
        gender = 1
    else:
        gender = 2 if booking.gender == voter.gender else 0

    first = 1 if not booking.first or not voter.first else name_level(
        jaro_winkler(booking.first, voter.first))
    last = 1 if not booking.last or not voter.last else name_level(
        jaro_winkler(booking.last, voter.last))
    middle = _middle_level(booking.middle, voter.middle)
    return (fips, age, gender, first, middle, last)


def avg_name_similarity(booking: ComparisonFields, voter: ComparisonFields) -> float:
    """Mean JW of first, last and full name.

    A first name missing on one side scores 0; missing on both sides it is
    left out of the mean.
    """
    scores = [jaro_winkler(booking.last, voter.last), jaro_winkler(booking.full, voter.full)]
    if booking.first or voter.first:
        scores.append(jaro_winkler(booking.first, voter.first))
    return sum(scores) / len(scores)
