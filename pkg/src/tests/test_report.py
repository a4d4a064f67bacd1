"""WorkspaceSession views and the rendered report over hand-written stage outputs."""

from datetime import date
from pathlib import Path

import pandas as pd
import pytest

from jailvote.report import TABLE_MANIFEST_SCHEMA, TITLES, markdown_table, render
from jailvote.session import WorkspaceSession
from jailvote.storage import (
    BALLOT_RETURN_SCHEMA,
    BLOCK_STATS_SCHEMA,
    EXCLUSIONS_SCHEMA,
    PCURVE_SCHEMA,
    RESULTS_SCHEMA,
    WINDOWS_SCHEMA,
    read_frame,
    write_records,
)
from jailvote.workspace import Workspace, threshold_tag


def _effect(threshold: float, control: int, term: str, coef: float, covariates: bool = True):
    return {
        "table": "turnout", "spec_id": f"c{control}:{term}", "sample": "linked",
        "threshold": threshold, "control_days": control, "treatment_days": 21,
        "outcome": "voted_2020", "term": term, "covariates": covariates,
        "coef": coef, "se": 0.01, "t": coef / 0.01, "p": 0.001, "df": 40, "stars": "***",
        "n_obs": 5000, "n_clusters_1": 41, "n_clusters_2": 30, "mean_control_outcome": 0.2,
    }


@pytest.fixture
def ws(tmp_path):
    ws = Workspace(tmp_path)
    write_records([
        {"state": "NC", "n_blocks": 10, "max_block_pairs": 40, "n_pairs": 200,
         "n_bookings": 50, "unknown_age_bookings": 3},
        {"state": "ALL", "n_blocks": 10, "max_block_pairs": 40, "n_pairs": 200,
         "n_bookings": 50, "unknown_age_bookings": 3},
    ], BLOCK_STATS_SCHEMA, ws.block_stats)
    write_records([
        {"step": 0, "rule": "below_threshold", "description": "posterior below threshold",
         "removed": 120, "remaining": 80},
    ], EXCLUSIONS_SCHEMA, ws.exclusions(0.75))
    write_records([
        {"threshold": 0.75, "control_days": c, "treatment_days": t, "joint_f": 1.0,
         "joint_p": 0.5, "n_obs": 400, "admissible": True}
        for c in (14, 28) for t in (1, 2, 3)
    ], PCURVE_SCHEMA, ws.per_threshold("pcurve", 0.75))
    write_records([
        {"threshold": 0.75, "control_days": 14, "treatment_days": 21, "balanced": True,
         "joint_p": 0.4},
        {"threshold": 0.75, "control_days": 28, "treatment_days": None, "balanced": False,
         "joint_p": None},
    ], WINDOWS_SCHEMA, ws.per_threshold("windows", 0.75))
    write_records([
        _effect(0.75, 14, "treated", -0.04),
        _effect(0.75, 14, "treated", -0.05, covariates=False),
        _effect(0.75, 14, "proportion", -0.06),
    ], RESULTS_SCHEMA, ws.per_threshold("turnout", 0.75))
    write_records([_effect(0.95, 14, "treated", -0.03)], RESULTS_SCHEMA,
                  ws.per_threshold("turnout", 0.95))
    write_records([
        {"date": date(2020, 10, d), "returns": 10, "cumulative_share": d / 31}
        for d in range(1, 32)
    ], BALLOT_RETURN_SCHEMA, ws.ballot_return)
    return ws


def test_threshold_tag():
    assert threshold_tag(0.75) == "p075"
    assert threshold_tag(0.95) == "p095"
    assert Workspace(Path("w")).linked(0.95).name == "linked_p095.csv"


def test_session_registers_present_tables_only(ws):
    with WorkspaceSession(ws.root) as s:
        for name in ("block_stats", "exclusions", "pcurve", "windows", "turnout",
                     "ballot_return"):
            assert s.has(name)
        assert not s.has("placebo")
        assert s.results("placebo", 0.75).empty


def test_per_threshold_files_are_unioned(ws):
    with WorkspaceSession(ws.root) as s:
        counts = s.q("SELECT threshold, COUNT(*) AS n FROM turnout GROUP BY 1 ORDER BY 1")
        assert counts["threshold"].tolist() == [0.75, 0.95]
        assert counts["n"].tolist() == [3, 1]
        # files without a threshold column get one
        excl = s.q("SELECT threshold FROM exclusions")
        assert excl["threshold"].tolist() == [0.75]


def test_headline_keeps_adjusted_rows(ws):
    with WorkspaceSession(ws.root) as s:
        head = s.headline(0.75)
    assert sorted(head["term"]) == ["proportion", "treated"]
    treated = head[head["term"] == "treated"].iloc[0]
    assert treated["coef"] == pytest.approx(-0.04)
    assert treated["relative_effect"] == pytest.approx(-0.2)


def test_markdown_table_formats_missing_values():
    df = pd.DataFrame({"a": [1.23456, float("nan")], "b": ["x", None]})
    text = markdown_table(df, ["a", "b"])
    assert text.splitlines()[2] == "| 1.235 | x |"
    assert text.splitlines()[3] == "|  |  |"
    assert markdown_table(df.iloc[:0], ["a"]) == "_no rows_\n"


def test_render_writes_report_manifest_and_figure(ws):
    out = render(ws.root)
    text = out.report.read_text(encoding="utf-8")
    assert "## Blocking" in text
    assert "# Linked records with match probability ≥ 0.75" in text
    assert "# Linked records with match probability ≥ 0.95" in text
    assert TITLES["turnout"] in text
    assert "## Early ballot return" in text

    manifest = pd.read_csv(out.table_manifest)
    assert set(manifest["file"]) == {
        "exclusions_p075.csv", "windows_p075.csv", "pcurve_p075.csv",
        "turnout_p075.csv", "turnout_p095.csv",
    }
    html = out.pcurve_html.read_text(encoding="utf-8")
    assert "balance-pcurve" in html


def test_render_on_empty_workspace(tmp_path):
    out = render(tmp_path)
    assert out.pcurve_html is None
    assert out.report.read_text(encoding="utf-8").startswith("# Jail incarceration")
    assert read_frame(out.table_manifest, TABLE_MANIFEST_SCHEMA).empty
