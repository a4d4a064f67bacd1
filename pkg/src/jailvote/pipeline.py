"""Pipeline stages: each reads its inputs from the workspace, writes its
outputs atomically and records itself in the run ledger.

Stages never print; they return a StageSummary for the CLI to render.
A stage whose upstream output is absent raises MissingInputError naming
what is missing.
"""

import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Sequence

import pandas as pd

from .atomic import atomic_write_json
from .blocking import PairUniverse, block_stats, build_blocks
from .config import CONTROL_WINDOWS, PLACEBO_ELECTION_DAYS, THRESHOLDS, Config, derive_seed
from .errors import EmptySampleError, MissingInputError
from .ledger import RunLedger
from .linkage import FSParameters, em_fit
from .linkage import link as link_records
from .report import render
from .roster import BookingSpell, in_study_pool, read_snapshots, rosters_to_spells
from .storage import (
    BALLOT_RETURN_SCHEMA,
    BLOCK_STATS_SCHEMA,
    EXCLUSIONS_SCHEMA,
    LINKED_SCHEMA,
    PCURVE_SCHEMA,
    RESULTS_SCHEMA,
    SNAPSHOTS_SCHEMA,
    SPELLS_SCHEMA,
    SUMMARY_SCHEMA,
    VOTERS_SCHEMA,
    WINDOWS_SCHEMA,
    read_frame,
    read_records,
    write_frame,
    write_records,
)
from .study import (
    BOOKING_COVARIATES,
    balance_for_design,
    balance_rows,
    balanced_designs,
    ballot_return_curve,
    build_analysis_frame,
    build_booking_frame,
    estimate_effects,
    heterogeneity as heterogeneity_test,
    placebo_test,
    registration_and_unconditional,
    summary_statistics,
    window_rows,
    window_search,
)
from .synth import generate
from .voters import VoterRecord, read_voter_file
from .voting_calendar import VotingCalendar
from .workspace import Workspace, threshold_tag

logger = logging.getLogger(__name__)


@dataclass
class StageSummary:
    stage: str
    outputs: list[Path] = field(default_factory=list)
    counts: dict[str, object] = field(default_factory=dict)


def _require(path: Path, what: str, stage: str) -> Path:
    if not path.exists():
        raise MissingInputError(f"missing {what}: {path} (run `jailvote {stage}` first)")
    return path


def _calendar(cfg: Config) -> VotingCalendar:
    return VotingCalendar.load(cfg.study.calendar_path, cfg.linkage.election_day)


def _record(cfg: Config, ws: Workspace, stage: str, inputs: list[Path],
            outputs: list[Path], params: dict | None = None) -> None:
    RunLedger(ws.root).record(stage, cfg.seed, cfg.source, inputs, outputs, params)


def _spells(ws: Workspace) -> list[BookingSpell]:
    return read_records(_require(ws.spells, "booking spells", "ingest"), SPELLS_SCHEMA, BookingSpell)


def _voters(ws: Workspace) -> list[VoterRecord]:
    return read_records(_require(ws.voters, "voter records", "ingest"), VOTERS_SCHEMA, VoterRecord)


def _universe(cfg: Config, ws: Workspace) -> PairUniverse:
    spells, voters = _spells(ws), _voters(ws)
    blocks = build_blocks(spells, voters, cfg.threads)
    return PairUniverse(blocks, spells, voters, cfg.threads, cfg.linkage.init_threshold)


def _linked_frame(ws: Workspace, threshold: float) -> pd.DataFrame:
    return read_frame(_require(ws.linked(threshold), "linked sample", "link"), LINKED_SCHEMA)


def _analysis_frame(cfg: Config, ws: Workspace, threshold: float) -> pd.DataFrame:
    return build_analysis_frame(_linked_frame(ws, threshold), _calendar(cfg))


def _designs(ws: Workspace, threshold: float, control_days: int | None,
             name: str = "windows"):
    path = _require(ws.per_threshold(name, threshold), "window search", "windows")
    designs = balanced_designs(read_frame(path, WINDOWS_SCHEMA), threshold, control_days)
    if not designs:
        which = f"control window {control_days}d" if control_days else "any control window"
        raise EmptySampleError(
            f"no balanced treatment window for {which} at threshold {threshold:.2f}")
    return designs


# -- linkage stages ----------------------------------------------------------

def ingest(cfg: Config, ws: Workspace, rosters: Path | None = None,
           voter_file: Path | None = None) -> StageSummary:
    """Roster snapshots → booking spells; voter file → standardized voters."""
    rosters = _require(rosters or ws.raw_rosters, "roster snapshots", "synth")
    voter_file = _require(voter_file or ws.raw_voter_file, "voter file", "synth")

    snaps, rejects = read_snapshots(rosters)
    spells = rosters_to_spells(snaps, cfg.ingest.gap_tolerance, cfg.threads, rejects)
    pool = in_study_pool(spells, cfg.ingest.pool_start, cfg.ingest.pool_end)
    voters, voter_rejects = read_voter_file(voter_file)
    rejects.extend(voter_rejects)

    write_records(snaps, SNAPSHOTS_SCHEMA, ws.snapshots)
    write_records(pool, SPELLS_SCHEMA, ws.spells)
    write_records(voters, VOTERS_SCHEMA, ws.voters)
    atomic_write_json(ws.rejects, [asdict(r) for r in rejects])
    curve = ballot_return_curve(read_frame(ws.voters, VOTERS_SCHEMA))
    write_frame(curve, BALLOT_RETURN_SCHEMA, ws.ballot_return)

    outputs = [ws.snapshots, ws.spells, ws.voters, ws.rejects, ws.ballot_return]
    _record(cfg, ws, "ingest", [rosters, voter_file], outputs, {
        "gap_tolerance": cfg.ingest.gap_tolerance,
        "pool_start": cfg.ingest.pool_start.isoformat(),
        "pool_end": cfg.ingest.pool_end.isoformat(),
    })
    return StageSummary("ingest", outputs, {
        "snapshots": len(snaps), "spells": len(spells), "spells_in_pool": len(pool),
        "voters": len(voters), "rejected": len(rejects),
    })


def block(cfg: Config, ws: Workspace) -> StageSummary:
    spells, voters = _spells(ws), _voters(ws)
    stats = block_stats(build_blocks(spells, voters, cfg.threads))
    write_records(stats, BLOCK_STATS_SCHEMA, ws.block_stats)
    _record(cfg, ws, "block", [ws.spells, ws.voters], [ws.block_stats])
    total = stats[-1] if stats else {}
    return StageSummary("block", [ws.block_stats], {
        "blocks": total.get("n_blocks", 0), "pairs": total.get("n_pairs", 0),
        "max_block_pairs": total.get("max_block_pairs", 0),
    })


def fit(cfg: Config, ws: Workspace, universe: PairUniverse | None = None) -> StageSummary:
    """Resampled EM for the Fellegi-Sunter parameters."""
    if universe is None:
        universe = _universe(cfg, ws)
    params = em_fit(universe, cfg.linkage, derive_seed(cfg.seed, "fit"), cfg.threads)
    params.save(ws.fs_params)
    _record(cfg, ws, "fit", [ws.spells, ws.voters], [ws.fs_params], {
        "resamples": cfg.linkage.resamples, "sample_size": cfg.linkage.sample_size,
        "em_tol": cfg.linkage.em_tol, "em_max_iter": cfg.linkage.em_max_iter,
    })
    return StageSummary("fit", [ws.fs_params], {
        "pairs": len(universe), "lambda": params.lambda_,
        "converged": sum(params.converged),
    })


def link(cfg: Config, ws: Workspace, threshold: float,
         universe: PairUniverse | None = None) -> StageSummary:
    params = FSParameters.load(_require(ws.fs_params, "fitted parameters", "fit"))
    if universe is None:
        universe = _universe(cfg, ws)
    records, excluded = link_records(universe, params, replace(cfg.linkage, threshold=threshold))
    outputs = [ws.linked(threshold), ws.exclusions(threshold)]
    write_records(records, LINKED_SCHEMA, outputs[0])
    write_records(excluded.rows(), EXCLUSIONS_SCHEMA, outputs[1])
    _record(cfg, ws, f"link:{threshold_tag(threshold)}",
            [ws.spells, ws.voters, ws.fs_params], outputs, {"threshold": threshold})
    return StageSummary("link", outputs, {
        "best_matches": excluded.best_match_pairs, "linked": excluded.retained,
        **{f"removed_{rule}": n for rule, n in excluded.counts.items()},
    })


# -- study stages ------------------------------------------------------------

def _search(cfg: Config, frame: pd.DataFrame, threshold: float,
            control_days: int | None, **kwargs):
    calendar = _calendar(cfg)
    controls = (control_days,) if control_days else CONTROL_WINDOWS
    return [
        window_search(frame, c, calendar, replace(cfg.study, control_days=c), threshold,
                      cfg.threads, **kwargs)
        for c in controls
    ]


def windows(cfg: Config, ws: Workspace, threshold: float,
            control_days: int | None = None) -> StageSummary:
    """Largest balanced treatment window per control window, and the p-curve."""
    frame = _analysis_frame(cfg, ws, threshold)
    results = _search(cfg, frame, threshold, control_days)
    pcurve = ws.per_threshold("pcurve", threshold)
    table = ws.per_threshold("windows", threshold)
    write_records([pt for r in results for pt in r.pcurve], PCURVE_SCHEMA, pcurve)
    write_records(window_rows(results, threshold), WINDOWS_SCHEMA, table)
    _record(cfg, ws, f"windows:{threshold_tag(threshold)}", [ws.linked(threshold)],
            [pcurve, table], {"balance_alpha": cfg.study.balance_alpha,
                              "control_days": control_days})
    return StageSummary("windows", [pcurve, table], {
        f"T(control {r.control_days}d)": r.treatment_days
        for r in results
    })


def balance(cfg: Config, ws: Workspace, threshold: float,
            control_days: int | None = None) -> StageSummary:
    frame = _analysis_frame(cfg, ws, threshold)
    rows = []
    for design in _designs(ws, threshold, control_days):
        rows.extend(balance_rows(balance_for_design(frame, design, cfg.study), design))
    out = ws.per_threshold("balance", threshold)
    write_records(rows, RESULTS_SCHEMA, out)
    _record(cfg, ws, f"balance:{threshold_tag(threshold)}",
            [ws.linked(threshold), ws.per_threshold("windows", threshold)], [out])
    return StageSummary("balance", [out], {"rows": len(rows)})


def estimate(cfg: Config, ws: Workspace, threshold: float,
             control_days: int | None = None) -> StageSummary:
    """Turnout effects and descriptive statistics for every balanced design."""
    frame = _analysis_frame(cfg, ws, threshold)
    rows, summaries = [], []
    for design in _designs(ws, threshold, control_days):
        rows.extend(e.row() for e in estimate_effects(frame, design))
        summaries.append(summary_statistics(frame, design))
    turnout = ws.per_threshold("turnout", threshold)
    summary = ws.per_threshold("summary", threshold)
    write_records(rows, RESULTS_SCHEMA, turnout)
    write_frame(pd.concat(summaries, ignore_index=True), SUMMARY_SCHEMA, summary)
    _record(cfg, ws, f"estimate:{threshold_tag(threshold)}",
            [ws.linked(threshold), ws.per_threshold("windows", threshold)], [turnout, summary])
    return StageSummary("estimate", [turnout, summary], {"estimates": len(rows)})


def placebo(cfg: Config, ws: Workspace, threshold: float,
            control_days: int | None = None) -> StageSummary:
    frame = _analysis_frame(cfg, ws, threshold)
    rows = []
    for design in _designs(ws, threshold, control_days):
        for year in sorted(PLACEBO_ELECTION_DAYS, reverse=True):
            try:
                rows.extend(e.row() for e in placebo_test(frame, design, year))
            except EmptySampleError as e:
                logger.warning("placebo %d skipped for %s: %s", year, design.label, e)
    out = ws.per_threshold("placebo", threshold)
    write_records(rows, RESULTS_SCHEMA, out)
    _record(cfg, ws, f"placebo:{threshold_tag(threshold)}",
            [ws.linked(threshold), ws.per_threshold("windows", threshold)], [out])
    return StageSummary("placebo", [out], {"estimates": len(rows)})


def heterogeneity(cfg: Config, ws: Workspace, threshold: float,
                  control_days: int | None = None) -> StageSummary:
    """Black/white interaction models, all states and race-reporting states."""
    frame = _analysis_frame(cfg, ws, threshold)
    tables: dict[str, list[dict]] = {"race": [], "race_reporting": []}
    for design in _designs(ws, threshold, control_days):
        for name, reported_only in (("race", False), ("race_reporting", True)):
            try:
                result = heterogeneity_test(frame, design, race_reported_only=reported_only)
            except EmptySampleError as e:
                logger.warning("%s skipped for %s: %s", name, design.label, e)
                continue
            tables[name].extend(e.row() for e in result.estimates)
            for cell in result.race_summary:
                logger.info("%s %s: %s n=%d control turnout %.3f", name, design.label,
                            cell["race"], cell["n"], cell["control_turnout"])
    outputs = []
    for name, rows in tables.items():
        path = ws.per_threshold(name, threshold)
        write_records(rows, RESULTS_SCHEMA, path)
        outputs.append(path)
    _record(cfg, ws, f"heterogeneity:{threshold_tag(threshold)}",
            [ws.linked(threshold), ws.per_threshold("windows", threshold)], outputs)
    return StageSummary("heterogeneity", outputs,
                        {name: len(rows) for name, rows in tables.items()})


def all_booked(cfg: Config, ws: Workspace, threshold: float,
               control_days: int | None = None) -> StageSummary:
    """Registration and unconditional turnout over every booked individual,
    with its own window search on booking-side covariates."""
    spells = read_frame(_require(ws.spells, "booking spells", "ingest"), SPELLS_SCHEMA)
    frame = build_booking_frame(spells, _linked_frame(ws, threshold), _calendar(cfg),
                                cfg.linkage.election_day)
    results = _search(cfg, frame, threshold, control_days,
                      covariates=BOOKING_COVARIATES, sample_kind="all_individuals")
    searched = ws.per_threshold("booked_windows", threshold)
    write_records(window_rows(results, threshold), WINDOWS_SCHEMA, searched)

    tables: dict[str, list[dict]] = {"registration": [], "unconditional": []}
    for design in _designs(ws, threshold, control_days, name="booked_windows"):
        for e in registration_and_unconditional(frame, design):
            tables[e.table].append(e.row())
    outputs = [searched]
    for name, rows in tables.items():
        path = ws.per_threshold(name, threshold)
        write_records(rows, RESULTS_SCHEMA, path)
        outputs.append(path)
    _record(cfg, ws, f"appendix-b:{threshold_tag(threshold)}",
            [ws.spells, ws.linked(threshold)], outputs)
    return StageSummary("appendix-b", outputs, {
        "bookings": len(frame), **{name: len(rows) for name, rows in tables.items()},
    })


# -- synthesis and reporting -------------------------------------------------

def synth(cfg: Config, ws: Workspace) -> StageSummary:
    """Synthetic rosters, voter file and truth sidecars into the workspace."""
    data = generate(cfg.synth, cfg.threads, _calendar(cfg))
    paths = data.write(ws.root)
    outputs = list(paths.values())
    _record(cfg, ws, "synth", [], outputs, {
        "n_voters": cfg.synth.n_voters, "n_bookings": cfg.synth.n_bookings,
        "states": list(cfg.synth.states), "synth_seed": cfg.synth.seed,
    })
    return StageSummary("synth", outputs, {
        "snapshots": len(data.snapshots), "voters": len(data.voter_rows),
        "true_links": len(data.truth_links),
    })


def report(cfg: Config, ws: Workspace) -> StageSummary:
    out = render(ws.root, cfg.study)
    outputs = [p for p in (out.report, out.table_manifest, out.pcurve_html) if p is not None]
    _record(cfg, ws, "report", [], outputs)
    return StageSummary("report", outputs)


STUDY_STAGES = (windows, balance, estimate, placebo, heterogeneity, all_booked)


def run(cfg: Config, ws: Workspace, thresholds: Sequence[float] = THRESHOLDS,
        control_days: int | None = None) -> list[StageSummary]:
    """Every stage after synthesis, in order, over an existing workspace."""
    summaries = [ingest(cfg, ws), block(cfg, ws)]
    universe = _universe(cfg, ws)
    summaries.append(fit(cfg, ws, universe))
    for threshold in thresholds:
        summaries.append(link(cfg, ws, threshold, universe))
        for stage in STUDY_STAGES:
            summaries.append(stage(cfg, ws, threshold, control_days))
    summaries.append(report(cfg, ws))
    return summaries
