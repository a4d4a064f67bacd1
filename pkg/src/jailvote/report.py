"""Render study outputs into report.md, table_manifest.csv and the p-curve figure."""

import logging
import math
from dataclasses import dataclass
from pathlib import Path

import pandas as pd
import plotly.graph_objects as go
import pyarrow as pa

from .atomic import atomic_write_text
from .config import THRESHOLDS, StudyConfig
from .session import WorkspaceSession
from .storage import write_frame
from .workspace import Workspace, threshold_tag

logger = logging.getLogger(__name__)

PCURVE_DIV_ID = "balance-pcurve"

TABLE_MANIFEST_SCHEMA = pa.schema([
    ("file", pa.string()),
    ("title", pa.string()),
    ("threshold", pa.float64()),
])

# result table → report title
TITLES = {
    "exclusions": "Linked sample construction",
    "pcurve": "Balance tests across treatment windows (joint F p-values)",
    "windows": "Largest balanced treatment window per control window",
    "booked_windows": "Largest balanced treatment window, all booked individuals",
    "balance": "Balance tests",
    "summary": "Summary statistics",
    "turnout": "The effect of incarceration on voting from jail",
    "placebo": "Placebo tests",
    "race": "Racial disparities in the effect of incarceration on voting from jail",
    "race_reporting": "Racial disparities, race-reporting states only",
    "registration": "The effect of incarceration on registration (all booked individuals)",
    "unconditional": "The effect of incarceration on turnout unconditional on registration",
}


@dataclass
class ReportOutputs:
    report: Path
    table_manifest: Path
    pcurve_html: Path | None


def _fmt(value, digits: int = 3) -> str:
    if value is None or (isinstance(value, float) and math.isnan(value)):
        return ""
    if isinstance(value, float):
        return f"{value:.{digits}f}"
    return str(value)


def markdown_table(df: pd.DataFrame, columns: list[str], digits: int = 3) -> str:
    if df.empty:
        return "_no rows_\n"
    lines = ["| " + " | ".join(columns) + " |", "|" + "---|" * len(columns)]
    for row in df[columns].itertuples(index=False):
        lines.append("| " + " | ".join(_fmt(v, digits) for v in row) + " |")
    return "\n".join(lines) + "\n"


_EFFECT_COLUMNS = ["control_days", "treatment_days", "outcome", "term", "covariates",
                   "coef", "se", "stars", "n_obs", "mean_control_outcome"]


def _section(title: str, body: str) -> str:
    return f"## {title}\n\n{body}\n"


def pcurve_figure(pcurve: pd.DataFrame, alpha: float) -> go.Figure:
    fig = go.Figure()
    for (threshold, control), grp in pcurve.groupby(["threshold", "control_days"], sort=True):
        grp = grp.sort_values("treatment_days")
        fig.add_trace(go.Scatter(
            x=grp["treatment_days"].tolist(), y=grp["joint_p"].tolist(),
            mode="lines+markers", name=f"{threshold_tag(threshold)} control {control}d",
        ))
    fig.add_hline(y=alpha, line_dash="dash", line_color="red")
    fig.update_layout(
        title="Balance tests (joint F p-values)",
        xaxis_title="Treatment window (days before Election Day)",
        yaxis_title="Joint p-value", yaxis_range=[0, 1], template="plotly_white",
    )
    return fig


def render(workdir: Path, study: StudyConfig | None = None) -> ReportOutputs:
    """Write the report files for whatever stage outputs the workspace holds."""
    study = study or StudyConfig()
    ws = Workspace(workdir)
    sections = ["# Jail incarceration and 2020 turnout\n"]
    manifest_rows = []

    with WorkspaceSession(workdir) as s:
        if s.has("block_stats"):
            stats = s.q("SELECT * FROM block_stats ORDER BY state = 'ALL', state")
            sections.append(_section("Blocking", markdown_table(
                stats, ["state", "n_blocks", "max_block_pairs", "n_pairs", "n_bookings",
                        "unknown_age_bookings"])))

        for threshold in THRESHOLDS:
            parts = []
            if s.has("exclusions"):
                df = s.q("SELECT * FROM exclusions WHERE threshold = ? ORDER BY step, rule",
                         [threshold])
                if not df.empty:
                    parts.append(_section(TITLES["exclusions"], markdown_table(
                        df, ["step", "rule", "description", "removed", "remaining"])))
                    manifest_rows.append((ws.exclusions(threshold), "exclusions", threshold))
            if s.has("windows"):
                df = s.q("SELECT * FROM windows WHERE threshold = ? ORDER BY control_days",
                         [threshold])
                if not df.empty:
                    parts.append(_section(TITLES["windows"], markdown_table(
                        df, ["control_days", "treatment_days", "balanced", "joint_p"])))
                    manifest_rows.append((ws.per_threshold("windows", threshold), "windows", threshold))
                    manifest_rows.append((ws.per_threshold("pcurve", threshold), "pcurve", threshold))
            if s.has("booked_windows"):
                df = s.q("""SELECT * FROM booked_windows WHERE threshold = ?
                            ORDER BY control_days""", [threshold])
                if not df.empty:
                    parts.append(_section(TITLES["booked_windows"], markdown_table(
                        df, ["control_days", "treatment_days", "balanced", "joint_p"])))
                    manifest_rows.append((ws.per_threshold("booked_windows", threshold),
                                          "booked_windows", threshold))
            if s.has("summary"):
                df = s.q("""SELECT * FROM summary WHERE threshold = ?
                            ORDER BY control_days, treatment_days""", [threshold])
                if not df.empty:
                    parts.append(_section(TITLES["summary"], markdown_table(
                        df, ["control_days", "treatment_days", "variable", "treatment_mean",
                             "control_mean", "treatment_n", "control_n"])))
                    manifest_rows.append((ws.per_threshold("summary", threshold), "summary", threshold))
            for table in ("balance", "turnout", "placebo", "race", "race_reporting",
                          "registration", "unconditional"):
                df = s.results(table, threshold)
                if df.empty:
                    continue
                parts.append(_section(TITLES[table], markdown_table(df, _EFFECT_COLUMNS)))
                manifest_rows.append((ws.per_threshold(table, threshold), table, threshold))
            if parts:
                sections.append(f"# Linked records with match probability ≥ {threshold:.2f}\n")
                sections.extend(parts)

        if s.has("ballot_return"):
            curve = s.q("SELECT * FROM ballot_return ORDER BY date")
            if not curve.empty:
                sections.append(_section("Early ballot return", markdown_table(
                    curve.tail(30), ["date", "returns", "cumulative_share"])))

        pcurve_path = None
        if s.has("pcurve"):
            pcurve = s.q("SELECT * FROM pcurve ORDER BY threshold, control_days, treatment_days")
            html = pcurve_figure(pcurve, study.balance_alpha).to_html(
                include_plotlyjs="cdn", full_html=True, div_id=PCURVE_DIV_ID)
            atomic_write_text(ws.pcurve_html, html)
            pcurve_path = ws.pcurve_html

    atomic_write_text(ws.report, "\n".join(sections))
    manifest = pd.DataFrame(
        [{"file": p.name, "title": TITLES[name], "threshold": t} for p, name, t in manifest_rows],
        columns=TABLE_MANIFEST_SCHEMA.names,
    )
    write_frame(manifest, TABLE_MANIFEST_SCHEMA, ws.table_manifest)
    logger.info("report written to %s (%d tables)", ws.report, len(manifest))
    return ReportOutputs(ws.report, ws.table_manifest, pcurve_path)
