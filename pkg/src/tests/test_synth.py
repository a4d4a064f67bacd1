"""Synthetic data generation and the brute-force linkage oracle."""

import sys
from itertools import product
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))
from synth_data import params, planted_params, small_synth, spell, voter  # noqa: E402

from jailvote.blocking import PairUniverse, build_blocks
from jailvote.errors import ConfigError, InstanceTooLargeError, SynthConfigError
from jailvote.linkage import best_matches, posterior_array
from jailvote.roster import rosters_to_spells
from jailvote.synth import add_typos, brute_force_link, generate, turnout_probability
from jailvote.voters import voter_from_row


@pytest.fixture(scope="module")
def data():
    return generate(small_synth())


def test_generation_is_seed_deterministic(data):
    again = generate(small_synth())
    assert again.snapshots == data.snapshots
    assert again.voter_rows == data.voter_rows
    assert again.truth_links == data.truth_links
    other = generate(small_synth(seed=8))
    assert other.voter_rows != data.voter_rows


def test_generation_thread_invariant(data):
    assert generate(small_synth(), threads=4).snapshots == data.snapshots


def test_truth_count_matches_rate(data):
    assert len(data.truth_links) == round(0.4 * 150)
    effects = {e["parameter"]: e["value"] for e in data.truth_effects}
    assert effects["n_true_links"] == len(data.truth_links)
    assert effects["ate_binary"] == -0.03
    # every true link points at a registered voter in the booking's state
    voters = {v["voter_id"]: v for v in data.voter_rows}
    for t in data.truth_links:
        assert t["voter_id"].startswith(t["state"])
        assert t["booking_number"].startswith(t["state"])
        assert voters[t["voter_id"]]["registration_date"].year <= 2020


def test_write_lays_out_raw_and_truth(tmp_path, data):
    paths = data.write(tmp_path)
    assert paths["rosters"] == tmp_path / "raw" / "rosters.csv"
    assert all(p.exists() for p in paths.values())
    assert paths["truth_links"].read_text(encoding="utf-8").startswith("booking_number,voter_id,state")


@pytest.mark.parametrize("overrides,match", [
    ({"states": ()}, "state"),
    ({"states": ("ZZ",)}, "unknown state"),
    ({"n_bookings": -1}, "non-negative"),
    ({"facilities_per_state": 0}, "facilities"),
    ({"n_voters": 10, "true_match_rate": 1.0}, "registered voters"),
])
def test_infeasible_configs(overrides, match):
    with pytest.raises(SynthConfigError, match=match):
        generate(small_synth(**overrides))


def test_rates_outside_unit_interval_rejected():
    with pytest.raises(ConfigError, match="true_match_rate"):
        small_synth(true_match_rate=1.5)


def test_no_true_links():
    assert generate(small_synth(true_match_rate=0.0)).truth_links == []


def test_true_pairs_survive_blocking_without_typos():
    cfg = small_synth(typo_substitution=0.0, typo_transposition=0.0, typo_deletion=0.0,
                      missing_age=0.0, missing_gender=0.0, missing_middle=0.0)
    data = generate(cfg)
    spells = rosters_to_spells(data.snapshots)
    voters = [voter_from_row(r) for r in data.voter_rows]
    blocks = build_blocks(spells, voters)
    in_block = {(s.split(":")[2], v) for blk in blocks
                for s, v in product(blk.booking_ids, blk.voter_ids)}
    truth = {(t["booking_number"], t["voter_id"]) for t in data.truth_links}
    assert truth and truth <= in_block


def test_add_typos():
    rng = np.random.default_rng(0)
    assert add_typos("MARTHA", rng, 0.0, 0.0, 0.0) == "MARTHA"
    noisy = [add_typos("MARTHA", rng, 0.3, 0.0, 0.0) for _ in range(20)]
    assert any(n != "MARTHA" for n in noisy)
    assert all(len(n) == 6 for n in noisy)
    assert add_typos("", rng, 1.0, 1.0, 1.0) == ""


def test_turnout_probability_is_clipped_linear(data):
    cfg = small_synth(ate_binary=-0.05, slope_proportion=-0.02)
    base = turnout_probability(cfg, "white", "Dem", 45.0)
    treated = turnout_probability(cfg, "white", "Dem", 45.0, confined=1.0, proportion=0.5)
    assert treated - base == pytest.approx(-0.06)
    assert turnout_probability(small_synth(base_turnout=5.0), "white", "Dem", 45.0) == 1.0


# -- brute-force oracle --------------------------------------------------------

def _blocked_best(spells, voters, p):
    universe = PairUniverse(build_blocks(spells, voters), spells, voters)
    best = best_matches(universe.booking_idx, universe.voter_idx,
                        posterior_array(universe.gamma, p))
    return {(universe.booking_ids[int(b)], universe.voter_ids[int(v)])
            for b, v in zip(best["b"], best["v"])}


def test_blocked_matches_brute_force_when_true_pairs_are_blockable():
    # every booking is a true link and nothing keeps a true pair out of its block
    cfg = small_synth(n_voters=2000, n_bookings=200, true_match_rate=1.0,
                      typo_substitution=0.0, typo_transposition=0.0, typo_deletion=0.0,
                      missing_age=0.0, missing_gender=0.0, missing_middle=0.0)
    data = generate(cfg)
    spells = rosters_to_spells(data.snapshots)
    voters = [voter_from_row(r) for r in data.voter_rows]
    assert len(spells) == 200 and len(voters) == 2000
    p = planted_params()
    brute = brute_force_link(spells, voters, p)
    brute_pairs = set(zip(brute["booking_id"], brute["voter_id"]))
    assert {b for b, _ in brute_pairs} == {s.booking_id for s in spells}
    assert _blocked_best(spells, voters, p) == brute_pairs


def test_age_gap_of_three_is_a_blocking_loss():
    spells = [spell("B1", name="Jane A Doe", age=30)]
    voters = [voter("V1", name="Jane A Doe", age=33)]
    brute = brute_force_link(spells, voters, params())
    assert list(zip(brute["booking_id"], brute["voter_id"])) == [("B1", "V1")]
    assert _blocked_best(spells, voters, params()) == set()


def test_brute_force_empty_and_too_large():
    empty = brute_force_link([], [voter()], params())
    assert empty.empty
    assert list(empty.columns) == ["booking_id", "voter_id", "posterior"]
    with pytest.raises(InstanceTooLargeError):
        brute_force_link([spell(f"B{i}") for i in range(501)], [], params())
