"""CLI commands through click's CliRunner: determinism, the error contract
and a small end-to-end chain over a synthetic workspace."""

import hashlib
import json
from pathlib import Path

import pandas as pd
import pytest
from click.testing import CliRunner

from jailvote import __version__
from jailvote.blocking import build_blocks
from jailvote.cli import main
from jailvote.ledger import RunLedger
from jailvote.roster import BookingSpell
from jailvote.storage import SPELLS_SCHEMA, VOTERS_SCHEMA, read_records
from jailvote.voters import VoterRecord
from jailvote.workspace import Workspace


def _config(tmp_path: Path, **extra) -> Path:
    path = tmp_path / "jailvote.yaml"
    lines = ["synth_n_voters: 1500", "synth_n_bookings: 150", "synth_states: NC,WA",
             "synth_facilities_per_state: 3"]
    lines += [f"{k}: {v}" for k, v in extra.items()]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return path


def _hashes(root: Path) -> dict[str, str]:
    return {
        p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
        for p in sorted(root.rglob("*.csv"))
    }


def _error_line(output: str) -> dict:
    line = next(ln for ln in output.splitlines() if ln.startswith('{"error"'))
    return json.loads(line)


def _blocked_pairs(ws: Workspace) -> set[tuple[str, str]]:
    spells = read_records(ws.spells, SPELLS_SCHEMA, BookingSpell)
    voters = read_records(ws.voters, VOTERS_SCHEMA, VoterRecord)
    return {(b.split(":")[2], v) for blk in build_blocks(spells, voters)
            for b in blk.booking_ids for v in blk.voter_ids}


def test_version():
    result = CliRunner().invoke(main, ["--version"])
    assert result.exit_code == 0
    assert f"jailvote, version {__version__}" in result.output


def test_synth_is_deterministic(tmp_path):
    cfg = _config(tmp_path)
    runner = CliRunner()
    first, second = tmp_path / "a", tmp_path / "b"
    for out in (first, second):
        result = runner.invoke(main, ["-c", str(cfg), "--seed", "7", "synth", "--out", str(out)])
        assert result.exit_code == 0, result.output

    hashes = _hashes(first)
    assert {"raw/rosters.csv", "raw/voter_file.csv", "truth/links.csv"} <= set(hashes)
    assert hashes == _hashes(second)
    assert (first / "manifest.jsonl").read_bytes() == (second / "manifest.jsonl").read_bytes()


def test_thread_count_does_not_change_synth(tmp_path):
    cfg = _config(tmp_path)
    runner = CliRunner()
    for threads, out in (("1", tmp_path / "one"), ("4", tmp_path / "four")):
        result = runner.invoke(main, ["-c", str(cfg), "--seed", "3", "--threads", threads,
                                      "synth", "-o", str(out)])
        assert result.exit_code == 0, result.output
    assert _hashes(tmp_path / "one") == _hashes(tmp_path / "four")


def test_study_stage_without_link_fails_cleanly(tmp_path):
    cfg = _config(tmp_path)
    result = CliRunner().invoke(main, ["-c", str(cfg), "estimate", "-o", str(tmp_path / "ws")])
    assert result.exit_code == 1
    err = _error_line(result.output)
    assert err["error"] == "missing_input"
    assert err["command"] == "estimate"
    assert "missing linked sample" in err["message"]
    assert "jailvote link" in err["message"]


@pytest.mark.parametrize("name", ["appendix-b", "all-booked"])
def test_all_booked_stage_is_reachable_by_both_names(tmp_path, name):
    runner = CliRunner()
    assert runner.invoke(main, [name, "--help"]).exit_code == 0
    cfg = _config(tmp_path)
    result = runner.invoke(main, ["-c", str(cfg), name, "-o", str(tmp_path / "ws")])
    assert result.exit_code == 1
    err = _error_line(result.output)
    assert err["error"] == "missing_input"
    assert err["command"] == name


def test_ingest_without_inputs_names_synth(tmp_path):
    cfg = _config(tmp_path)
    result = CliRunner().invoke(main, ["-c", str(cfg), "ingest", "-o", str(tmp_path / "ws")])
    assert result.exit_code == 1
    assert "jailvote synth" in _error_line(result.output)["message"]


def test_bad_config_value_is_reported(tmp_path):
    cfg = _config(tmp_path, synth_true_match_rate=1.5)
    result = CliRunner().invoke(main, ["-c", str(cfg), "synth", "-o", str(tmp_path / "ws")])
    assert result.exit_code == 1
    err = _error_line(result.output)
    assert err["error"] == "config_invalid"
    assert err["command"] == "main"


def test_threshold_choice_is_restricted(tmp_path):
    cfg = _config(tmp_path)
    result = CliRunner().invoke(main, ["-c", str(cfg), "link", "--threshold", "0.5",
                                       "-o", str(tmp_path / "ws")])
    assert result.exit_code == 2


@pytest.mark.slow
def test_synth_to_link_recovers_true_pairs(tmp_path):
    cfg = _config(tmp_path, synth_n_voters=20000, synth_n_bookings=2000,
                  synth_true_match_rate=0.5, synth_facilities_per_state=6)
    out = tmp_path / "ws"
    runner = CliRunner()
    for command in ("synth", "ingest", "block", "fit", "link", "windows", "report"):
        result = runner.invoke(main, ["-c", str(cfg), "--seed", "11", command, "-o", str(out)])
        assert result.exit_code == 0, f"{command}: {result.output}"

    ws = Workspace(out)
    linked = pd.read_csv(ws.linked(0.75), dtype=str)
    truth = pd.read_csv(ws.truth_links, dtype=str)
    found = {(b.split(":")[2], v) for b, v in zip(linked["booking_id"], linked["voter_id"])}
    planted = set(zip(truth["booking_number"], truth["voter_id"]))
    hits = len(found & planted)
    assert hits / len(found) >= 0.95
    assert hits / len(planted) >= 0.85
    # recall over the planted pairs that share a block
    reachable = _blocked_pairs(ws) & planted
    assert len(found & reachable) / len(reachable) >= 0.90

    stages = RunLedger(out).stages
    assert stages[:4] == ["synth", "ingest", "block", "fit"]
    assert "link:p075" in stages and "windows:p075" in stages
    assert ws.report.exists() and ws.table_manifest.exists()
    assert "Linked sample construction" in ws.report.read_text(encoding="utf-8")
