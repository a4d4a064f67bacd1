"""Within-state blocking, the pair universe and uniform pair sampling."""

import sys
from itertools import product
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))
from synth_data import spell, voter  # noqa: E402

from jailvote.blocking import (
    PairUniverse,
    block_stats,
    build_blocks,
    sample_indices,
    sample_pairs,
)

TX = "48001"


def _tx_voters():
    return [voter(f"V{age}", name="John Doe", fips=TX, age=age) for age in range(26, 35)]


def test_age_band_block():
    blocks = build_blocks([spell("B1", name="Jane Doe", fips=TX, age=30)], _tx_voters())
    assert len(blocks) == 1
    blk = blocks[0]
    assert (blk.state, blk.age_center, blk.soundex_code) == ("TX", 30, "D000")
    # 28..32 inclusive
    assert blk.voter_ids == ["V28", "V29", "V30", "V31", "V32"]


def test_unknown_age_blocks_against_all_ages():
    voters = _tx_voters() + [voter("VNA", name="Jo Doe", fips=TX, age=None)]
    (blk,) = build_blocks([spell("B1", name="Jane Doe", fips=TX, age=None)], voters)
    assert blk.age_center is None
    assert len(blk.voter_ids) == len(voters)


def test_no_cross_state_or_cross_soundex_pairs():
    voters = [
        voter("WY1", name="Jane Doe", fips="56001"),
        voter("AL1", name="Jane Smith", fips="01001"),
    ]
    (blk,) = build_blocks([spell("B1", name="Jane Doe", fips="01001")], voters)
    assert blk.state == "AL"
    assert blk.voter_ids == []
    assert block_stats([blk])[0]["n_pairs"] == 0


def test_bookings_sharing_a_key_share_a_block():
    spells = [spell("B1", name="Jane Doe", fips=TX), spell("B2", name="Al Day", fips=TX),
              spell("B3", name="Jane Doe", fips=TX, age=50)]
    blocks = build_blocks(spells, _tx_voters())
    assert [(b.age_center, b.booking_ids) for b in blocks] == [(30, ["B1", "B2"]), (50, ["B3"])]


def test_blocks_sorted_and_thread_invariant():
    spells = [spell(f"B{i}", name=n, fips=f, age=a) for i, (n, f, a) in enumerate(product(
        ["Jane Doe", "Ann Lee", "Bo Smith"], ["37001", "53033", TX], [None, 25, 40]))]
    voters = [voter(f"V{i}", name=n, fips=f, age=a) for i, (n, f, a) in enumerate(product(
        ["Jan Doe", "Anne Lee", "Bob Smyth"], ["37001", "53033", TX], [24, 26, 41]))]
    one = build_blocks(spells, voters, threads=1)
    many = build_blocks(spells, voters, threads=4)
    assert one == many
    keys = [(b.state, -1 if b.age_center is None else b.age_center, b.soundex_code) for b in one]
    assert keys == sorted(keys)


def _records():
    spells = [spell("B1", name="Jane Doe", fips=TX), spell("B2", name="Jane Lee", fips=TX),
              spell("B3", name="Jane Lee", fips="37001")]
    voters = _tx_voters()[:4] + [voter(f"L{i}", name="Jane Lee", fips=TX, age=30 + i) for i in range(2)] \
        + [voter(f"N{i}", name="Jane Lee", fips="37001", age=29 + i) for i in range(4)]
    return spells, voters


def _universe(**kwargs):
    spells, voters = _records()
    blocks = build_blocks(spells, voters)
    return PairUniverse(blocks, spells, voters, **kwargs), blocks


def test_universe_enumerates_every_block_pair():
    universe, blocks = _universe()
    # 3 blocks: B1 × V28..V29 (2 of V26..V29 within ±2), B2 × L0..L1, B3 × N0..N3
    assert len(blocks) == 3
    assert len(universe) == sum(b.n_pairs for b in blocks) == 2 + 2 + 4
    members = {(b, v) for blk in blocks for b, v in product(blk.booking_ids, blk.voter_ids)}
    pairs = [universe.pair(i) for i in range(len(universe))]
    assert {(p.booking_id, p.voter_id) for p in pairs} == members
    exact = next(p for p in pairs if p.booking_id == "B3" and p.voter_id == "N1")
    assert exact.gamma == (1, 2, 2, 2, 1, 2)
    assert exact.init_match_flag == 1


def test_init_threshold_sets_the_seed_flags():
    default, _ = _universe()
    assert default.init_match_flag.tolist() == (default.avg_name_jw > 0.88).tolist()
    assert default.init_match_flag.any()
    strict, _ = _universe(init_threshold=1.0)
    assert not strict.init_match_flag.any()
    loose, _ = _universe(init_threshold=0.5)
    assert loose.init_match_flag.sum() >= default.init_match_flag.sum()


def test_sample_pairs_deterministic_and_distinct():
    universe, blocks = _universe()
    a = sample_pairs(universe, 5, seed=3)
    b = sample_pairs(universe, 5, seed=3)
    assert a == b
    assert len({(p.booking_id, p.voter_id) for p in a}) == 5
    members = {(bk, v) for blk in blocks for bk, v in product(blk.booking_ids, blk.voter_ids)}
    assert all((p.booking_id, p.voter_id) in members for p in a)


def test_sample_at_or_above_universe_returns_everything():
    universe, _ = _universe()
    full = sample_pairs(universe, len(universe), seed=0)
    assert [(p.booking_id, p.voter_id) for p in full] == \
        [(universe.pair(i).booking_id, universe.pair(i).voter_id) for i in range(len(universe))]
    assert len(sample_pairs(universe, 10 * len(universe), seed=0)) == len(universe)


def test_sample_indices_contract():
    idx = sample_indices(1000, 50, seed=9)
    assert len(np.unique(idx)) == 50
    assert np.all(np.diff(idx) > 0)
    assert np.array_equal(idx, sample_indices(1000, 50, seed=9))
    assert not np.array_equal(idx, sample_indices(1000, 50, seed=10))
    with pytest.raises(ValueError):
        sample_indices(10, 0, seed=0)


def test_block_stats_rows():
    _, blocks = _universe()
    stats = block_stats(blocks)
    assert [r["state"] for r in stats] == ["NC", "TX", "ALL"]
    total = stats[-1]
    assert total["n_blocks"] == 3
    assert total["n_pairs"] == 8
    assert total["max_block_pairs"] == 4
    assert total["unknown_age_bookings"] == 0
