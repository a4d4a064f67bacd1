"""Within-state candidate blocks on booking age and surname Soundex.

A block holds the bookings of one (state, booking age, Soundex) key and the
in-state voters sharing that Soundex whose age is within ±2 years of the
booking age. Bookings of unknown age block against every in-state voter
with the same Soundex. No pair ever crosses a state line.
"""

import logging
from collections import defaultdict
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .errors import JailVoteError
from .identity import soundex
from .roster import BookingSpell
from .similarity import CandidatePair, ComparisonFields, agreement_vector, avg_name_similarity
from .voters import VoterRecord
from .voting_calendar import state_for_fips
from .worker import run_pool

logger = logging.getLogger(__name__)

AGE_BAND = 2


@dataclass
class Block:
    state: str
    age_center: int | None
    soundex_code: str
    booking_ids: list[str]
    voter_ids: list[str]

    @property
    def n_pairs(self) -> int:
        return len(self.booking_ids) * len(self.voter_ids)


def booking_fields(spell: BookingSpell) -> ComparisonFields:
    return ComparisonFields(
        fips=spell.fips, age=spell.age_years, gender=spell.gender,
        first=spell.first or "", middle=spell.middle or "", last=spell.last or "",
    )


def voter_fields(voter: VoterRecord) -> ComparisonFields:
    return ComparisonFields(
        fips=voter.fips, age=voter.age, gender=voter.gender,
        first=voter.first or "", middle=voter.middle or "", last=voter.last or "",
    )


def _state_blocks(state: str, bookings: list[tuple[int | None, str, str]],
                  voters: list[VoterRecord]) -> list[Block]:
    by_code_age: dict[str, dict[int | None, list[str]]] = defaultdict(lambda: defaultdict(list))
    for v in voters:
        by_code_age[v.soundex][v.age].append(v.voter_id)

    keys: dict[tuple[int | None, str], list[str]] = defaultdict(list)
    for age, code, booking_id in bookings:
        keys[(age, code)].append(booking_id)

    blocks = []
    for (age, code), booking_ids in keys.items():
        ages = by_code_age.get(code, {})
        if age is None:
            voter_ids = [vid for a in ages for vid in ages[a]]
        else:
            voter_ids = [vid for a in range(age - AGE_BAND, age + AGE_BAND + 1)
                         for vid in ages.get(a, ())]
        blocks.append(Block(state, age, code, sorted(booking_ids), sorted(voter_ids)))
    return blocks


def _block_order(block: Block) -> tuple:
    return (block.state, -1 if block.age_center is None else block.age_center, block.soundex_code)


def build_blocks(spells: Sequence[BookingSpell], voters: Sequence[VoterRecord],
                 threads: int = 1) -> list[Block]:
    """Blocks sorted by (state, age, Soundex); unknown age sorts first."""
    bookings_by_state: dict[str, list] = defaultdict(list)
    for spell in spells:
        try:
            state = state_for_fips(spell.fips)
            code = soundex(spell.last)
        except JailVoteError as e:
            logger.warning("booking %s not blocked: %s", spell.booking_id, e)
            continue
        bookings_by_state[state].append((spell.age_years, code, spell.booking_id))

    voters_by_state: dict[str, list[VoterRecord]] = defaultdict(list)
    for v in voters:
        voters_by_state[v.state].append(v)

    states = sorted(bookings_by_state)
    per_state = run_pool(
        states,
        lambda s: _state_blocks(s, bookings_by_state[s], voters_by_state.get(s, [])),
        threads,
    )
    blocks = sorted((b for batch in per_state for b in batch), key=_block_order)
    logger.info("built %d blocks over %d states", len(blocks), len(states))
    return blocks


class PairUniverse:
    """Every (booking, voter) pair implied by the blocks, with γ and the
    average name similarity computed once.

    Pairs whose average name similarity exceeds `init_threshold` seed the
    EM start as matches.
    """

    def __init__(self, blocks: Sequence[Block], spells: Sequence[BookingSpell],
                 voters: Sequence[VoterRecord], threads: int = 1,
                 init_threshold: float = 0.88):
        self.blocks = list(blocks)
        self.spells = {s.booking_id: s for s in spells}
        self.voters = {v.voter_id: v for v in voters}
        self.booking_ids = sorted({b for blk in self.blocks for b in blk.booking_ids})
        self.voter_ids = sorted({v for blk in self.blocks for v in blk.voter_ids})
        b_index = {b: i for i, b in enumerate(self.booking_ids)}
        v_index = {v: i for i, v in enumerate(self.voter_ids)}
        b_fields = {b: booking_fields(self.spells[b]) for b in self.booking_ids}
        v_fields = {v: voter_fields(self.voters[v]) for v in self.voter_ids}

        def _score(block: Block):
            n = block.n_pairs
            bi = np.empty(n, dtype=np.int64)
            vi = np.empty(n, dtype=np.int64)
            gamma = np.empty((n, 6), dtype=np.int8)
            avg = np.empty(n, dtype=np.float64)
            k = 0
            for b in block.booking_ids:
                bf = b_fields[b]
                for v in block.voter_ids:
                    vf = v_fields[v]
                    bi[k], vi[k] = b_index[b], v_index[v]
                    gamma[k] = agreement_vector(bf, vf)
                    avg[k] = avg_name_similarity(bf, vf)
                    k += 1
            return bi, vi, gamma, avg

        parts = run_pool(self.blocks, _score, threads,
                         description="Scoring pairs" if len(self.blocks) > 1000 else None)
        if parts:
            self.booking_idx = np.concatenate([p[0] for p in parts])
            self.voter_idx = np.concatenate([p[1] for p in parts])
            self.gamma = np.concatenate([p[2] for p in parts])
            self.avg_name_jw = np.concatenate([p[3] for p in parts])
        else:
            self.booking_idx = np.empty(0, dtype=np.int64)
            self.voter_idx = np.empty(0, dtype=np.int64)
            self.gamma = np.empty((0, 6), dtype=np.int8)
            self.avg_name_jw = np.empty(0, dtype=np.float64)
        self.init_match_flag = (self.avg_name_jw > init_threshold).astype(np.int8)
        logger.info("pair universe: %d pairs", len(self))

    def __len__(self) -> int:
        return int(self.gamma.shape[0])

    def pair(self, i: int) -> CandidatePair:
        return CandidatePair(
            booking_id=self.booking_ids[self.booking_idx[i]],
            voter_id=self.voter_ids[self.voter_idx[i]],
            gamma=tuple(int(g) for g in self.gamma[i]),
            avg_name_jw=float(self.avg_name_jw[i]),
        )


def sample_indices(universe_size: int, n: int, seed: int) -> np.ndarray:
    """Uniform sample without replacement from range(universe_size), sorted.

    n at or above the universe size returns the whole universe.
    """
    if n <= 0:
        raise ValueError("sample size must be positive")
    if n >= universe_size:
        return np.arange(universe_size)
    rng = np.random.Generator(np.random.Philox(seed))
    return np.sort(rng.choice(universe_size, size=n, replace=False))


def sample_pairs(universe: PairUniverse, n: int, seed: int) -> list[CandidatePair]:
    return [universe.pair(int(i)) for i in sample_indices(len(universe), n, seed)]


def block_stats(blocks: Sequence[Block]) -> list[dict]:
    """Per-state block statistics plus an ALL row."""
    rows: dict[str, dict] = {}
    for blk in list(blocks):
        for key in (blk.state, "ALL"):
            r = rows.setdefault(key, {"state": key, "n_blocks": 0, "max_block_pairs": 0,
                                      "n_pairs": 0, "n_bookings": 0, "unknown_age_bookings": 0})
            r["n_blocks"] += 1
            r["max_block_pairs"] = max(r["max_block_pairs"], blk.n_pairs)
            r["n_pairs"] += blk.n_pairs
            r["n_bookings"] += len(blk.booking_ids)
            if blk.age_center is None:
                r["unknown_age_bookings"] += len(blk.booking_ids)
    return [rows[k] for k in sorted(k for k in rows if k != "ALL")] + (
        [rows["ALL"]] if "ALL" in rows else [])
