"""Atomic JSON writes and the run ledger built on them."""

import json

from jailvote.atomic import atomic_write_json
from jailvote.ledger import RunLedger


def test_atomic_write_json_is_valid_and_clean(tmp_path):
    path = tmp_path / "params.json"
    atomic_write_json(path, {"b": 1, "a": [1.5, None]})

    data = json.loads(path.read_text(encoding="utf-8"))
    assert data == {"a": [1.5, None], "b": 1}
    leftovers = [p.name for p in tmp_path.iterdir() if p.name != "params.json"]
    assert leftovers == []


def test_ledger_records_hashes_and_replaces_stage(tmp_path):
    out = tmp_path / "spells.csv"
    out.write_text("x\n1\n", encoding="utf-8")
    ledger = RunLedger(tmp_path)
    first = ledger.record("ingest", 7, None, [], [out], {"gap_tolerance": 0})
    assert list(first.outputs) == ["spells.csv"]
    assert len(first.outputs["spells.csv"]) == 64

    out.write_text("x\n2\n", encoding="utf-8")
    ledger.record("fit", 7, None, [out], [])
    second = ledger.record("ingest", 7, None, [], [out])

    reloaded = RunLedger(tmp_path)
    assert reloaded.stages == ["ingest", "fit"]          # replaced in place
    assert reloaded.entry("ingest").outputs == second.outputs
    assert second.outputs != first.outputs


def test_identical_rerun_gives_identical_manifest(tmp_path):
    out = tmp_path / "a.csv"
    out.write_text("1\n", encoding="utf-8")
    RunLedger(tmp_path).record("synth", 7, None, [], [out], {"n": 1})
    before = (tmp_path / "manifest.jsonl").read_bytes()
    RunLedger(tmp_path).record("synth", 7, None, [], [out], {"n": 1})
    assert (tmp_path / "manifest.jsonl").read_bytes() == before


def test_unreadable_manifest_line_is_skipped(tmp_path):
    (tmp_path / "manifest.jsonl").write_text("not json\n", encoding="utf-8")
    ledger = RunLedger(tmp_path)
    assert ledger.stages == []
