"""Fellegi-Sunter linkage: EM parameter estimation, posterior scoring,
term-frequency re-weighting and the exclusion ledger.

Fields are conditionally independent given match status. EM runs on the
distinct γ patterns weighted by their counts, in log space.
"""

import json
import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from datetime import date
from pathlib import Path
from typing import Sequence

import numpy as np
import pandas as pd
from scipy.special import expit, logit

from .atomic import atomic_write_json
from .blocking import PairUniverse, sample_indices
from .config import LinkageConfig, derive_seed
from .errors import EMError, InitializationError
from .roster import BookingSpell
from .similarity import GAMMA_FIELDS, GAMMA_LEVELS, CandidatePair
from .voters import VoterRecord
from .voting_calendar import state_for_fips
from .worker import run_pool

logger = logging.getLogger(__name__)

EPS = 1e-6
# relative log-likelihood slack for the monotonicity check
_LL_SLACK = 1e-9
# λ outside (LAMBDA_MIN, 1 - LAMBDA_MIN) counts as collapsed
LAMBDA_MIN = 1e-9
# ties at the per-booking maximum are compared at this many decimals
TIE_DECIMALS = 12

MATCH_NAME_FIELDS = {"first": 3, "last": 5}


def floor_probs(p: np.ndarray, eps: float = EPS) -> np.ndarray:
    """Raise entries to `eps`, taking the excess off the largest entry."""
    p = np.asarray(p, dtype=np.float64)
    total = p.sum()
    p = p / total if total > 0 else np.full_like(p, 1.0 / len(p))
    out = np.maximum(p, eps)
    out[int(np.argmax(out))] -= out.sum() - 1.0
    return out


@dataclass
class FSParameters:
    lambda_: float
    m: list[np.ndarray]
    u: list[np.ndarray]
    loglik: list[list[float]] = field(default_factory=list)
    converged: list[bool] = field(default_factory=list)

    def validate(self) -> None:
        if not 0.0 < self.lambda_ < 1.0:
            raise EMError(f"lambda out of range: {self.lambda_}")
        for k, name in enumerate(GAMMA_FIELDS):
            for side, probs in (("m", self.m[k]), ("u", self.u[k])):
                if abs(probs.sum() - 1.0) > 1e-12 or probs.min() < EPS * (1 - 1e-9):
                    raise EMError(f"invalid {side}[{name}]: {probs}")

    def log_ratio(self) -> list[np.ndarray]:
        """Per field and level: log m - log u."""
        return [np.log(self.m[k]) - np.log(self.u[k]) for k in range(len(self.m))]

    def to_dict(self) -> dict:
        return {
            "fields": list(GAMMA_FIELDS),
            "lambda": self.lambda_,
            "m": {f: self.m[k].tolist() for k, f in enumerate(GAMMA_FIELDS)},
            "u": {f: self.u[k].tolist() for k, f in enumerate(GAMMA_FIELDS)},
            "resamples": [
                {"loglik": trace, "iterations": len(trace), "converged": conv}
                for trace, conv in zip(self.loglik, self.converged)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FSParameters":
        return cls(
            lambda_=float(data["lambda"]),
            m=[np.asarray(data["m"][f], dtype=np.float64) for f in GAMMA_FIELDS],
            u=[np.asarray(data["u"][f], dtype=np.float64) for f in GAMMA_FIELDS],
            loglik=[r["loglik"] for r in data.get("resamples", [])],
            converged=[r["converged"] for r in data.get("resamples", [])],
        )

    def save(self, path: Path) -> None:
        atomic_write_json(path, self.to_dict())

    @classmethod
    def load(cls, path: Path) -> "FSParameters":
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))


# -- initialization and EM ---------------------------------------------------

def _level_counts(gamma: np.ndarray, weights: np.ndarray) -> list[np.ndarray]:
    return [
        np.bincount(gamma[:, k], weights=weights, minlength=GAMMA_LEVELS[k]).astype(np.float64)
        for k in range(len(GAMMA_LEVELS))
    ]


def initialize_from_arrays(gamma: np.ndarray, flags: np.ndarray) -> FSParameters:
    """λ = mean flag; m, u = level frequencies among flagged / unflagged pairs."""
    gamma = np.asarray(gamma, dtype=np.int64)
    flags = np.asarray(flags, dtype=np.float64)
    n_flagged = flags.sum()
    if n_flagged == 0 or n_flagged == len(flags):
        raise InitializationError("initialization degenerate: sample is all flagged or none")
    m = [floor_probs(c) for c in _level_counts(gamma, flags)]
    u = [floor_probs(c) for c in _level_counts(gamma, 1.0 - flags)]
    return FSParameters(lambda_=float(n_flagged / len(flags)), m=m, u=u)


def initialize_params(sample: Sequence[CandidatePair]) -> FSParameters:
    gamma = np.array([p.gamma for p in sample], dtype=np.int64).reshape(-1, len(GAMMA_FIELDS))
    flags = np.array([p.init_match_flag for p in sample], dtype=np.float64)
    return initialize_from_arrays(gamma, flags)


def _log_tables(params: FSParameters) -> tuple[list[np.ndarray], list[np.ndarray]]:
    tiny = np.finfo(np.float64).tiny
    log_m = [np.log(np.maximum(p, tiny)) for p in params.m]
    log_u = [np.log(np.maximum(p, tiny)) for p in params.u]
    return log_m, log_u


def _log_joint(patterns: np.ndarray, params: FSParameters) -> tuple[np.ndarray, np.ndarray]:
    """log λΠm and log (1-λ)Πu per pattern."""
    log_m, log_u = _log_tables(params)
    lm = np.full(len(patterns), math.log(params.lambda_))
    lu = np.full(len(patterns), math.log1p(-params.lambda_))
    for k in range(patterns.shape[1]):
        lm += log_m[k][patterns[:, k]]
        lu += log_u[k][patterns[:, k]]
    return lm, lu


@dataclass
class EMRun:
    params: FSParameters
    loglik: list[float]
    converged: bool


def em_from_init(gamma: np.ndarray, init: FSParameters, tol: float = 1e-8,
                 max_iter: int = 500) -> EMRun:
    """Standard FS-EM from `init` until the relative log-likelihood change
    drops below `tol` or `max_iter` iterations."""
    patterns, counts = np.unique(np.asarray(gamma, dtype=np.int64), axis=0, return_counts=True)
    counts = counts.astype(np.float64)
    n = counts.sum()
    params = FSParameters(init.lambda_, [p.copy() for p in init.m], [p.copy() for p in init.u])
    trace: list[float] = []
    converged = False

    for _ in range(max_iter):
        lm, lu = _log_joint(patterns, params)
        log_den = np.logaddexp(lm, lu)
        ll = float(np.dot(counts, log_den))
        if trace and ll < trace[-1] - _LL_SLACK * max(1.0, abs(trace[-1])):
            raise EMError(f"EM log-likelihood decreased: {trace[-1]!r} -> {ll!r}")
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) < tol * max(1.0, abs(trace[-1])):
            converged = True
            break

        w = np.exp(lm - log_den)
        cw = counts * w
        lam = cw.sum() / n
        if not LAMBDA_MIN < lam < 1.0 - LAMBDA_MIN:
            raise EMError(f"EM degenerate: lambda collapsed to {lam:.3g}")
        m, u = [], []
        for k in range(patterns.shape[1]):
            mk = np.bincount(patterns[:, k], weights=cw, minlength=GAMMA_LEVELS[k])
            uk = np.bincount(patterns[:, k], weights=counts - cw, minlength=GAMMA_LEVELS[k])
            m.append(mk / mk.sum())
            u.append(uk / uk.sum())
        params = FSParameters(float(lam), m, u)

    if not converged:
        logger.warning("EM did not converge in %d iterations; using last iterate", max_iter)
    final = FSParameters(
        params.lambda_,
        [floor_probs(p) for p in params.m],
        [floor_probs(p) for p in params.u],
    )
    return EMRun(final, trace, converged)


def em_fit_arrays(
    gamma: np.ndarray,
    flags: np.ndarray,
    config: LinkageConfig,
    seed: int,
    threads: int = 1,
) -> FSParameters:
    """Resampled EM over a γ array; parameters averaged over resamples in order."""
    gamma = np.asarray(gamma, dtype=np.int64)
    flags = np.asarray(flags)
    n = len(gamma)
    if n == 0:
        raise InitializationError("initialization degenerate: no candidate pairs")

    full = config.sample_size >= n

    def _one(r: int) -> EMRun:
        idx = sample_indices(n, config.sample_size, derive_seed(seed, "em", r))
        init = initialize_from_arrays(gamma[idx], flags[idx])
        return em_from_init(gamma[idx], init, config.em_tol, config.em_max_iter)

    if full:
        # every resample would be the whole universe
        runs = [_one(0)] * config.resamples
    else:
        runs = run_pool(list(range(config.resamples)), _one, threads,
                        description=f"EM ({config.resamples} resamples)")

    k_fields = len(GAMMA_FIELDS)
    lam = float(np.mean([r.params.lambda_ for r in runs]))
    m = [floor_probs(np.mean([r.params.m[k] for r in runs], axis=0)) for k in range(k_fields)]
    u = [floor_probs(np.mean([r.params.u[k] for r in runs], axis=0)) for k in range(k_fields)]
    params = FSParameters(lam, m, u,
                          loglik=[r.loglik for r in runs],
                          converged=[r.converged for r in runs])
    logger.info("EM: lambda=%.5f over %d resample(s) of %d pairs",
                lam, config.resamples, min(n, config.sample_size))
    return params


def em_fit(universe: PairUniverse, config: LinkageConfig, seed: int, threads: int = 1) -> FSParameters:
    return em_fit_arrays(universe.gamma, universe.init_match_flag, config, seed, threads)


# -- scoring -----------------------------------------------------------------

def posterior_array(gamma: np.ndarray, params: FSParameters) -> np.ndarray:
    gamma = np.asarray(gamma, dtype=np.int64).reshape(-1, len(GAMMA_FIELDS))
    lm, lu = _log_joint(gamma, params)
    return np.exp(lm - np.logaddexp(lm, lu))


def posterior(gamma: Sequence[int], params: FSParameters) -> float:
    """λΠm / (λΠm + (1-λ)Πu) for one γ vector."""
    return float(posterior_array(np.asarray([gamma]), params)[0])


def _agreement_rate(freqs: dict[str, float]) -> float:
    return sum(f * f for f in freqs.values()) / sum(freqs.values())


class NameFrequencies:
    """Voter-side relative frequencies of first and last names per state.

    The reference frequency is the chance that two voters drawn at random
    share a name, sum(f^2). An agreeing name as common as that is neutral.
    """

    def __init__(self, voters: Sequence[VoterRecord]):
        counts: dict[tuple[str, str], Counter] = defaultdict(Counter)
        for v in voters:
            if v.first:
                counts[(v.state, "first")][v.first] += 1
            if v.last:
                counts[(v.state, "last")][v.last] += 1
        self._freq: dict[tuple[str, str], dict[str, float]] = {}
        self._mean: dict[tuple[str, str], float] = {}
        self._min: dict[tuple[str, str], float] = {}
        for key, c in counts.items():
            total = sum(c.values())
            freqs = {name: n / total for name, n in c.items()}
            self._freq[key] = freqs
            self._mean[key] = _agreement_rate(freqs)
            self._min[key] = min(freqs.values())

    @classmethod
    def from_table(cls, table: dict[str, float], state: str, field_name: str) -> "NameFrequencies":
        """Direct table (relative frequencies) for one state and field."""
        obj = cls([])
        key = (state, field_name)
        obj._freq[key] = dict(table)
        obj._mean[key] = _agreement_rate(table)
        obj._min[key] = min(table.values())
        return obj

    def factor(self, state: str, field_name: str, name: str) -> float:
        """Likelihood-ratio scale min(1, f̄/f) for an agreeing name."""
        key = (state, field_name)
        if key not in self._freq:
            return 1.0
        f = self._freq[key].get(name, self._min[key])
        return min(1.0, self._mean[key] / f)


def tf_reweight(posterior_value: float, gamma: Sequence[int], state: str,
                first: str, last: str, freqs: NameFrequencies) -> float:
    """Scale each exactly agreeing (level 2) name field's likelihood ratio by
    its frequency factor and recompute the posterior in log-odds."""
    shift = 0.0
    for field_name, k in MATCH_NAME_FIELDS.items():
        if gamma[k] == 2:
            name = first if field_name == "first" else last
            shift += math.log(freqs.factor(state, field_name, name))
    if shift == 0.0:
        return float(posterior_value)
    return float(expit(logit(posterior_value) + shift))


@dataclass
class ScoredMatch:
    booking_id: str
    voter_id: str
    gamma: tuple[int, ...]
    posterior: float
    reweighted: float


@dataclass
class LinkedRecord:
    booking_id: str
    voter_id: str
    posterior: float
    reweighted: float
    person_key: str
    facility_id: str
    fips: str
    state: str
    entry_date: date
    exit_date: date | None
    length_of_stay_days: int
    booking_age: int | None
    booking_gender: str
    booking_race: str
    charge_count: int
    charges_reported: bool
    top_charge: str
    voter_age: int | None
    gender: str
    race: str
    race_reported: bool
    party: str
    registration_date: date | None
    voted_2020: bool
    voted_2016: bool
    voted_2012: bool
    ballot_return_date: date | None


EXCLUSION_RULES = (
    ("below_threshold", "re-weighted match probability below threshold"),
    ("multiple_voters", "booking matched to more than one unique voter id"),
    ("overlapping_bookings", "voter id matched to temporally overlapping bookings"),
    ("underage", "booking-reported age below 18"),
    ("registered_after_election", "voter registration date after Election Day"),
)


@dataclass
class ExclusionReport:
    threshold: float
    best_match_pairs: int = 0
    pre_threshold_removed: int = 0
    counts: dict[str, int] = field(default_factory=dict)
    retained: int = 0

    def rows(self) -> list[dict]:
        remaining = self.best_match_pairs
        out = [{"step": 0, "rule": "best_match", "description":
                "highest-scoring voter(s) per booking", "removed": 0, "remaining": remaining}]
        remaining -= self.pre_threshold_removed
        out.append({"step": 0, "rule": "pre_threshold", "description":
                    "best-match probability below 0.5",
                    "removed": self.pre_threshold_removed, "remaining": remaining})
        for step, (rule, text) in enumerate(EXCLUSION_RULES, start=1):
            remaining -= self.counts.get(rule, 0)
            out.append({"step": step, "rule": rule, "description": text,
                        "removed": self.counts.get(rule, 0), "remaining": remaining})
        return out


def best_matches(booking_idx: np.ndarray, voter_idx: np.ndarray, scores: np.ndarray) -> pd.DataFrame:
    """Rows at each booking's maximum score (ties kept), sorted."""
    df = pd.DataFrame({"b": booking_idx, "v": voter_idx, "score": scores})
    if df.empty:
        return df
    df["key"] = df["score"].round(TIE_DECIMALS)
    top = df.groupby("b")["key"].transform("max")
    best = df[df["key"] == top].drop(columns="key")
    return best.sort_values(["b", "v"], kind="mergesort").reset_index(drop=True)


def _overlapping(spans: list[tuple[int, date, date]]) -> set[int]:
    """Row ids whose inclusive [entry, exit] intersects another span's."""
    hit = set()
    spans = sorted(spans, key=lambda s: (s[1], s[2]))
    for i, (ri, ei, xi) in enumerate(spans):
        for rj, ej, xj in spans[i + 1:]:
            if ej > xi:
                break
            hit.update((ri, rj))
    return hit


def link(
    universe: PairUniverse,
    params: FSParameters,
    config: LinkageConfig,
    freqs: NameFrequencies | None = None,
) -> tuple[list[LinkedRecord], ExclusionReport]:
    """Score every block pair, keep each booking's best match(es) at or above
    0.5, re-weight, then apply the five exclusion rules in order.

    Ambiguity (rules 2 and 3) is judged among all best matches that clear
    the 0.5 pre-threshold, so a stricter threshold yields a subset of a
    looser one.
    """
    if freqs is None:
        freqs = NameFrequencies(list(universe.voters.values()))
    post = posterior_array(universe.gamma, params)
    best = best_matches(universe.booking_idx, universe.voter_idx, post)
    report = ExclusionReport(threshold=config.threshold, best_match_pairs=len(best))
    if best.empty:
        return [], report

    keep = best["score"] >= config.pre_threshold
    report.pre_threshold_removed = int((~keep).sum())
    best = best[keep].reset_index(drop=True)

    # pair row lookup for γ
    pair_row = {(int(b), int(v)): i for i, (b, v) in
                enumerate(zip(universe.booking_idx, universe.voter_idx))}
    scored: list[ScoredMatch] = []
    for b, v, score in zip(best["b"], best["v"], best["score"]):
        booking_id = universe.booking_ids[int(b)]
        voter = universe.voters[universe.voter_ids[int(v)]]
        gamma = tuple(int(g) for g in universe.gamma[pair_row[(int(b), int(v))]])
        rw = tf_reweight(float(score), gamma, voter.state, voter.first, voter.last, freqs)
        scored.append(ScoredMatch(booking_id, voter.voter_id, gamma, float(score), rw))

    # ambiguity flags on the pre-threshold set
    voters_of: dict[str, set[str]] = defaultdict(set)
    for s in scored:
        voters_of[s.booking_id].add(s.voter_id)
    multi = {b for b, vs in voters_of.items() if len(vs) > 1}
    spans_of: dict[str, list[tuple[int, date, date]]] = defaultdict(list)
    for i, s in enumerate(scored):
        if s.booking_id in multi:
            continue
        spell = universe.spells[s.booking_id]
        spans_of[s.voter_id].append((i, spell.entry_date, spell.exit_date or spell.entry_date))
    overlap = set()
    for spans in spans_of.values():
        if len(spans) > 1:
            overlap |= _overlapping(spans)

    rows = list(enumerate(scored))
    counts = {}

    def _apply(rule: str, drop) -> None:
        nonlocal rows
        kept = [(i, s) for i, s in rows if not drop(i, s)]
        counts[rule] = len(rows) - len(kept)
        rows = kept

    _apply("below_threshold", lambda i, s: s.reweighted < config.threshold)
    _apply("multiple_voters", lambda i, s: s.booking_id in multi)
    _apply("overlapping_bookings", lambda i, s: i in overlap)
    _apply("underage", lambda i, s: (universe.spells[s.booking_id].age_years is not None
                                     and universe.spells[s.booking_id].age_years < 18))
    _apply("registered_after_election", lambda i, s: (
        universe.voters[s.voter_id].registration_date is not None
        and universe.voters[s.voter_id].registration_date > config.election_day))
    report.counts = counts
    report.retained = len(rows)

    linked = [merge_record(s, universe.spells[s.booking_id], universe.voters[s.voter_id])
              for _, s in rows]
    linked.sort(key=lambda r: r.booking_id)
    logger.info("linked %d bookings at threshold %.2f", len(linked), config.threshold)
    return linked, report


def merge_record(match: ScoredMatch, spell: BookingSpell, voter: VoterRecord) -> LinkedRecord:
    return LinkedRecord(
        booking_id=spell.booking_id,
        voter_id=voter.voter_id,
        posterior=match.posterior,
        reweighted=match.reweighted,
        person_key=spell.person_key,
        facility_id=spell.facility_id,
        fips=spell.fips,
        state=state_for_fips(spell.fips),
        entry_date=spell.entry_date,
        exit_date=spell.exit_date,
        length_of_stay_days=spell.length_of_stay_days,
        booking_age=spell.age_years,
        booking_gender=spell.gender,
        booking_race=spell.race,
        charge_count=spell.charge_count,
        charges_reported=spell.charges_reported,
        top_charge=spell.top_charge,
        voter_age=voter.age,
        gender=voter.gender,
        race=voter.race,
        race_reported=voter.race_reported,
        party=voter.party,
        registration_date=voter.registration_date,
        voted_2020=voter.voted_2020,
        voted_2016=voter.voted_2016,
        voted_2012=voter.voted_2012,
        ballot_return_date=voter.ballot_return_date,
    )
