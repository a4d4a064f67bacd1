"""Fellegi-Sunter EM, posterior scoring, term-frequency re-weighting and
the exclusion ledger."""

import sys
from dataclasses import replace
from datetime import date
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).resolve().parent))
from synth_data import (  # noqa: E402
    PLANT_M,
    day,
    params,
    planted_gamma,
    small_synth,
    spell,
    voter,
)

from jailvote.blocking import PairUniverse, build_blocks
from jailvote.config import LinkageConfig
from jailvote.errors import EMError, InitializationError
from jailvote.linkage import (
    FSParameters,
    NameFrequencies,
    best_matches,
    em_fit,
    em_fit_arrays,
    em_from_init,
    floor_probs,
    initialize_from_arrays,
    initialize_params,
    link,
    posterior,
    posterior_array,
    tf_reweight,
)
from jailvote.roster import rosters_to_spells
from jailvote.similarity import CandidatePair
from jailvote.synth import generate
from jailvote.voters import voter_from_row

NO_TF = NameFrequencies([])


# -- EM ----------------------------------------------------------------------

def _flags(gamma: np.ndarray) -> np.ndarray:
    # crude initial guess: both name fields agree exactly
    return ((gamma[:, 3] == 2) & (gamma[:, 5] == 2)).astype(np.int8)


def test_em_recovers_planted_parameters():
    gamma, is_match = planted_gamma(40_000, lam=0.1, seed=1)
    cfg = LinkageConfig(resamples=1, sample_size=10 ** 6)
    fitted = em_fit_arrays(gamma, _flags(gamma), cfg, seed=0)
    assert fitted.lambda_ == pytest.approx(is_match.mean(), abs=0.01)
    for k in range(1, 6):
        assert fitted.m[k][2] == pytest.approx(PLANT_M[2], abs=0.02)
    fitted.validate()


def test_em_log_likelihood_never_decreases():
    gamma, _ = planted_gamma(5_000, lam=0.2, seed=2)
    run = em_from_init(gamma, initialize_from_arrays(gamma, _flags(gamma)))
    trace = np.array(run.loglik)
    assert run.converged
    assert np.all(np.diff(trace) >= -1e-9 * np.abs(trace[:-1]))


def test_em_resamples_are_deterministic_and_thread_invariant():
    gamma, _ = planted_gamma(6_000, lam=0.1, seed=3)
    cfg = LinkageConfig(resamples=4, sample_size=2_000)
    a = em_fit_arrays(gamma, _flags(gamma), cfg, seed=5, threads=1)
    b = em_fit_arrays(gamma, _flags(gamma), cfg, seed=5, threads=3)
    assert a.lambda_ == b.lambda_
    for k in range(6):
        np.testing.assert_array_equal(a.m[k], b.m[k])
        np.testing.assert_array_equal(a.u[k], b.u[k])
    assert len(a.loglik) == 4


def test_initialization_from_flags():
    worked = CandidatePair("B1", "V1", (1, 2, 1, 0, 2, 2), 0.83)
    flagged = CandidatePair("B2", "V2", (1, 2, 2, 2, 2, 2), 0.99)
    init = initialize_params([worked, flagged])
    assert init.lambda_ == 0.5
    # flagged pair agrees on gender at level 2; floors keep every level positive
    assert init.m[2][2] == pytest.approx(1 - 2e-6)
    assert init.u[2][1] == pytest.approx(1 - 2e-6)
    init.validate()


@pytest.mark.parametrize("flag", [0, 1])
def test_degenerate_initialization_raises(flag):
    gamma = np.ones((10, 6), dtype=np.int64)
    with pytest.raises(InitializationError):
        initialize_from_arrays(gamma, np.full(10, flag))


def test_empty_universe_raises():
    with pytest.raises(InitializationError):
        em_fit_arrays(np.empty((0, 6), dtype=np.int64), np.empty(0), LinkageConfig(), seed=0)


def test_floor_probs_keeps_simplex():
    p = floor_probs(np.array([0.0, 0.0, 5.0]))
    assert p.sum() == pytest.approx(1.0, abs=1e-15)
    assert p.min() >= 1e-6
    np.testing.assert_allclose(floor_probs(np.zeros(3)), np.full(3, 1 / 3))


def test_validate_rejects_out_of_range_lambda():
    with pytest.raises(EMError, match="lambda"):
        replace(params(), lambda_=0.0).validate()


def test_parameters_round_trip_through_json(tmp_path):
    gamma, _ = planted_gamma(3_000, lam=0.1, seed=4)
    fitted = em_fit_arrays(gamma, _flags(gamma), LinkageConfig(resamples=1), seed=0)
    path = tmp_path / "em_params.json"
    fitted.save(path)
    loaded = FSParameters.load(path)
    assert loaded.lambda_ == fitted.lambda_
    for k in range(6):
        np.testing.assert_array_equal(loaded.m[k], fitted.m[k])
    assert loaded.converged == fitted.converged


# -- scoring -----------------------------------------------------------------

def test_posterior_all_agree():
    expected = 0.01 * 0.9 ** 6 / (0.01 * 0.9 ** 6 + 0.99 * 0.1 ** 6)
    assert posterior((1, 2, 2, 2, 2, 2), params()) == pytest.approx(expected, rel=1e-12)
    assert expected == pytest.approx(0.999814, abs=1e-6)


def test_posterior_equals_lambda_when_m_equals_u():
    p = params(lam=0.5, m_agree=0.5, u_agree=0.5)
    gamma = np.array([[0, 0, 0, 0, 0, 0], [1, 2, 1, 0, 2, 2], [1, 2, 2, 2, 2, 2]])
    np.testing.assert_allclose(posterior_array(gamma, p), 0.5)


def test_posterior_monotone_in_agreement():
    p = params()
    lower = posterior((1, 2, 2, 0, 2, 2), p)
    higher = posterior((1, 2, 2, 1, 2, 2), p)
    best = posterior((1, 2, 2, 2, 2, 2), p)
    # symmetric plant: levels 0 and 1 share the same ratio
    assert lower == pytest.approx(higher)
    assert higher < best


def test_tf_rare_surname_beats_common():
    freqs = NameFrequencies.from_table({"SMITH": 0.9, "ZELENKA": 0.1}, "NC", "last")
    gamma = (1, 2, 2, 0, 1, 2)
    base = posterior(gamma, params(lam=0.02))
    smith = tf_reweight(base, gamma, "NC", "JANE", "SMITH", freqs)
    zelenka = tf_reweight(base, gamma, "NC", "JANE", "ZELENKA", freqs)
    assert zelenka > smith
    assert smith < base
    # rare names are capped at the unweighted posterior
    assert zelenka == base


def test_tf_leaves_disagreeing_fields_alone():
    freqs = NameFrequencies.from_table({"SMITH": 0.9, "ZELENKA": 0.1}, "NC", "last")
    assert tf_reweight(0.7, (1, 2, 2, 2, 2, 1), "NC", "JANE", "SMITH", freqs) == 0.7
    assert tf_reweight(0.7, (1, 2, 2, 2, 2, 2), "WA", "JANE", "SMITH", freqs) == 0.7


def test_tf_mean_frequency_is_neutral():
    voters = [voter(f"V{i}", name=n) for i, n in enumerate(["Ann Lee", "Bo Kim", "Cy Diaz"])]
    freqs = NameFrequencies(voters)
    assert freqs.factor("NC", "last", "LEE") == 1.0
    assert tf_reweight(0.8, (1, 2, 2, 2, 2, 2), "NC", "ANN", "LEE", freqs) == pytest.approx(0.8)


def test_tf_reference_is_the_chance_agreement_rate():
    freqs = NameFrequencies.from_table({"SMITH": 0.5, "LEE": 0.25, "KIM": 0.25}, "NC", "last")
    assert freqs.factor("NC", "last", "SMITH") == pytest.approx(0.375 / 0.5)
    assert freqs.factor("NC", "last", "LEE") == 1.0


def test_tf_common_surname_lowers_without_vetoing():
    # one surname holds a tenth of the file, 900 others share the rest
    table = {"SMITH": 0.1, **{f"N{i:03d}": 0.001 for i in range(900)}}
    freqs = NameFrequencies.from_table(table, "NC", "last")
    assert freqs.factor("NC", "last", "SMITH") == pytest.approx(0.0109 / 0.1)
    gamma = (1, 1, 2, 2, 2, 2)
    assert tf_reweight(0.99, gamma, "NC", "JANE", "SMITH", freqs) > 0.9


def test_best_matches_keeps_ties():
    b = np.array([0, 0, 0, 1, 1])
    v = np.array([0, 1, 2, 0, 1])
    s = np.array([0.9, 0.9 + 1e-15, 0.2, 0.4, 0.6])
    best = best_matches(b, v, s)
    assert list(zip(best["b"], best["v"])) == [(0, 0), (0, 1), (1, 1)]


# -- exclusion ledger --------------------------------------------------------

def _cfg(threshold: float = 0.75) -> LinkageConfig:
    return LinkageConfig(threshold=threshold, election_day=date(2020, 11, 3))


def _link(spells, voters, threshold=0.75, p=None):
    universe = PairUniverse(build_blocks(spells, voters), spells, voters)
    return link(universe, p or params(lam=0.02), _cfg(threshold), NO_TF)


def test_each_exclusion_rule_fires_in_order():
    spells = [
        spell("OK", name="Ann B Able", age=40),
        spell("LOW", name="Ben C Baker", age=None, gender="unknown"),
        spell("MULTI", name="Cal D Carter", age=40),
        spell("O1", name="Dee E Dixon", age=40, entry=day(11, 1), exit=day(11, 10)),
        spell("O2", name="Dee E Dixon", age=40, entry=day(11, 5), exit=day(11, 8)),
        spell("KID", name="Eve F Evans", age=17),
        spell("LATE", name="Fay G Foster", age=40),
    ]
    voters = [
        voter("V_OK", name="Ann B Able", age=40),
        voter("V_LOW", name="Ben C Baker", age=40),
        voter("V_M1", name="Cal D Carter", age=40),
        voter("V_M2", name="Cal D Carter", age=40),
        voter("V_O", name="Dee E Dixon", age=40),
        voter("V_KID", name="Eve F Evans", age=17),
        voter("V_LATE", name="Fay G Foster", age=40, registered=date(2020, 11, 10)),
    ]
    linked, report = _link(spells, voters)
    assert [(r.booking_id, r.voter_id) for r in linked] == [("OK", "V_OK")]
    assert report.best_match_pairs == 8
    assert report.pre_threshold_removed == 0
    assert report.counts == {
        "below_threshold": 1,
        "multiple_voters": 2,
        "overlapping_bookings": 2,
        "underage": 1,
        "registered_after_election": 1,
    }
    assert report.retained == 1
    rows = report.rows()
    assert [r["rule"] for r in rows] == [
        "best_match", "pre_threshold", "below_threshold", "multiple_voters",
        "overlapping_bookings", "underage", "registered_after_election"]
    assert rows[-1]["remaining"] == 1


def test_disjoint_bookings_of_one_voter_are_kept():
    spells = [
        spell("D1", name="Dee E Dixon", entry=day(11, 1), exit=day(11, 3)),
        spell("D2", name="Dee E Dixon", entry=day(11, 10), exit=day(11, 12)),
    ]
    linked, report = _link(spells, [voter("V_O", name="Dee E Dixon")])
    assert sorted(r.booking_id for r in linked) == ["D1", "D2"]
    assert report.counts["overlapping_bookings"] == 0


def test_touching_spells_overlap():
    spells = [
        spell("D1", name="Dee E Dixon", entry=day(11, 1), exit=day(11, 5)),
        spell("D2", name="Dee E Dixon", entry=day(11, 5), exit=day(11, 6)),
    ]
    linked, report = _link(spells, [voter("V_O", name="Dee E Dixon")])
    assert linked == []
    assert report.counts["overlapping_bookings"] == 2


def test_weak_best_match_removed_before_threshold():
    # missing age, gender and a wrong first name: posterior under 0.5
    spells = [spell("W", name="Zed C Baker", age=None, gender="unknown")]
    linked, report = _link(spells, [voter("V", name="Ben C Baker", age=40)])
    assert linked == []
    assert report.pre_threshold_removed == 1
    assert report.counts["below_threshold"] == 0


def test_linked_record_merges_both_sides():
    (rec,), _ = _link([spell("OK", name="Ann B Able", age=40, charges=("dui", "violent"))],
                      [voter("V", name="Ann B Able", age=41, voted_2020=False)])
    assert rec.state == "NC"
    assert rec.booking_age == 40 and rec.voter_age == 41
    assert rec.top_charge == "violent" and rec.charge_count == 2
    assert rec.voted_2020 is False
    assert rec.reweighted == rec.posterior > 0.99


def test_stricter_threshold_links_a_subset():
    data = generate(small_synth(true_match_rate=0.6))
    spells = rosters_to_spells(data.snapshots)
    voters = [voter_from_row(r) for r in data.voter_rows]
    universe = PairUniverse(build_blocks(spells, voters), spells, voters)
    cfg = LinkageConfig(resamples=2, sample_size=20_000)
    fitted = em_fit(universe, cfg, seed=7)
    loose, _ = link(universe, fitted, replace(cfg, threshold=0.75))
    strict, _ = link(universe, fitted, replace(cfg, threshold=0.95))
    pairs = {(r.booking_id, r.voter_id) for r in loose}
    assert loose
    assert {(r.booking_id, r.voter_id) for r in strict} <= pairs
