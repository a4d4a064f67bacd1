"""Rule-based name parsing and surname Soundex.

Names are ASCII-folded, uppercased and punctuation-stripped before they are
split into components. Hyphens and apostrophes join ("O'BRIEN" → "OBRIEN",
"SMITH-JONES" → "SMITHJONES"); any other punctuation separates tokens.
"""

import logging
import re
import unicodedata
from dataclasses import dataclass

import jellyfish

from .errors import NameParseError, SoundexError

logger = logging.getLogger(__name__)

SUFFIXES = frozenset({"JR", "SR", "II", "III", "IV", "V"})

# Attach to the following token when they precede the final surname token.
PARTICLES = frozenset({
    "VAN", "VON", "DE", "DEL", "DELA", "DER", "DI", "DA", "DOS", "DU",
    "LA", "LE", "ST", "SAN", "MAC",
})

_JOINERS = re.compile(r"['’`-]")
_SEPARATORS = re.compile(r"[^A-Z ]+")
_SOUNDEX_RE = re.compile(r"^[A-Z][0-9]{3}$")


@dataclass(frozen=True)
class PersonName:
    first: str
    middle: str
    last: str
    suffix: str = ""

    @property
    def full(self) -> str:
        return format_name(self)

    @property
    def middle_is_initial(self) -> bool:
        return len(self.middle) == 1

    @property
    def surname_soundex(self) -> str:
        return soundex(self.last)


def normalize(text: str | None) -> str:
    """ASCII-fold, uppercase, join on hyphen/apostrophe, collapse whitespace."""
    if not text:
        return ""
    folded = unicodedata.normalize("NFKD", text).encode("ascii", "ignore").decode("ascii")
    folded = _JOINERS.sub("", folded.upper())
    folded = _SEPARATORS.sub(" ", folded)
    return " ".join(folded.split())


def _split_suffix(tokens: list[str]) -> tuple[list[str], str]:
    """Strip trailing suffix tokens, never the only remaining token."""
    suffix = []
    while len(tokens) > 1 and tokens[-1] in SUFFIXES:
        suffix.insert(0, tokens.pop())
    return tokens, " ".join(suffix)


def _surname_start(tokens: list[str]) -> int:
    """Index where the surname begins: the last token plus any particles
    directly before it, keeping at least one token for the given name."""
    start = len(tokens) - 1
    while start > 1 and tokens[start - 1] in PARTICLES:
        start -= 1
    return start


def parse_name(
    raw: str | None = None,
    *,
    first: str | None = None,
    middle: str | None = None,
    last: str | None = None,
) -> PersonName:
    """Parse a raw name, or normalize given components.

    Raw forms: "Last, First Middle" and "First Middle Last". A lone token is
    the surname. When components are given instead of `raw`, a last name is
    required.
    """
    if raw is not None and raw.strip():
        if "," in raw:
            surname_part, given_part = raw.split(",", 1)
            last_tokens, suffix = _split_suffix(normalize(surname_part).split())
            given_tokens, given_suffix = _split_suffix(normalize(given_part).split())
            # "Doe, John Jr" carries the suffix on the given side
            if not given_suffix and len(given_tokens) == 1 and given_tokens[0] in SUFFIXES:
                given_suffix, given_tokens = given_tokens[0], []
            suffix = suffix or given_suffix
            if not last_tokens:
                raise NameParseError(f"unparseable name: {raw!r}")
            return PersonName(
                first=given_tokens[0] if given_tokens else "",
                middle=" ".join(given_tokens[1:]),
                last=" ".join(last_tokens),
                suffix=suffix,
            )

        tokens, suffix = _split_suffix(normalize(raw).split())
        if not tokens:
            raise NameParseError(f"unparseable name: {raw!r}")
        if len(tokens) == 1:
            return PersonName(first="", middle="", last=tokens[0], suffix=suffix)
        start = _surname_start(tokens)
        return PersonName(
            first=tokens[0],
            middle=" ".join(tokens[1:start]),
            last=" ".join(tokens[start:]),
            suffix=suffix,
        )

    last_tokens, suffix = _split_suffix(normalize(last).split())
    if not last_tokens:
        raise NameParseError("unparseable name: no surname")
    return PersonName(
        first=normalize(first),
        middle=normalize(middle),
        last=" ".join(last_tokens),
        suffix=suffix,
    )


def format_name(name: PersonName) -> str:
    """'FIRST MIDDLE LAST' with empty components skipped; suffix dropped."""
    return " ".join(p for p in (name.first, name.middle, name.last) if p)


def soundex(surname: str) -> str:
    """American Soundex of a surname (H/W do not separate equal codes).

    Non-letters are removed first, so hyphenated and multi-part surnames are
    coded on their concatenation.
    """
    letters = re.sub(r"[^A-Z]", "", normalize(surname))
    if not letters:
        raise SoundexError(f"no letters in surname {surname!r}")
    code = jellyfish.soundex(letters)
    if not _SOUNDEX_RE.match(code):
        raise SoundexError(f"unexpected soundex {code!r} for {surname!r}")
    return code
