"""WorkspaceSession: a read-only DuckDB session over a workspace's stage outputs.

One object owns the :memory: connection and registers every result table
present in the workspace under a fixed view name. Tables are read through
their pyarrow schemas so types match what the stages wrote. This layer
never writes.
"""

from __future__ import annotations

import logging
from pathlib import Path

import duckdb
import pandas as pd
import pyarrow as pa

from .config import THRESHOLDS
from .storage import (
    BALLOT_RETURN_SCHEMA,
    BLOCK_STATS_SCHEMA,
    EXCLUSIONS_SCHEMA,
    PCURVE_SCHEMA,
    RESULTS_SCHEMA,
    SUMMARY_SCHEMA,
    WINDOWS_SCHEMA,
    read_table,
)
from .workspace import Workspace

logger = logging.getLogger(__name__)

# view name → schema; per-threshold files are unioned with their threshold
RESULT_TABLES = ("balance", "turnout", "placebo", "race", "race_reporting",
                 "registration", "unconditional")
_PER_THRESHOLD = {
    **{name: RESULTS_SCHEMA for name in RESULT_TABLES},
    "pcurve": PCURVE_SCHEMA,
    "windows": WINDOWS_SCHEMA,
    "booked_windows": WINDOWS_SCHEMA,
    "summary": SUMMARY_SCHEMA,
    "exclusions": EXCLUSIONS_SCHEMA,
}
_SINGLE = {"block_stats": BLOCK_STATS_SCHEMA, "ballot_return": BALLOT_RETURN_SCHEMA}


class WorkspaceSession:
    def __init__(self, workdir: Path) -> None:
        self.workspace = Workspace(Path(workdir))
        self.conn = duckdb.connect(":memory:")
        self.registered: list[str] = []
        self._register()

    def _register(self) -> None:
        for name, schema in _PER_THRESHOLD.items():
            parts = []
            for threshold in THRESHOLDS:
                path = self.workspace.per_threshold(name, threshold)
                if path.exists():
                    table = read_table(path, schema)
                    if "threshold" not in table.column_names:
                        table = table.append_column(
                            "threshold", pa.array([threshold] * table.num_rows, pa.float64()))
                    parts.append(table)
            if parts:
                self.conn.register(name, pa.concat_tables(parts))
                self.registered.append(name)
        for name, schema in _SINGLE.items():
            path = self.workspace.root / f"{name}.csv"
            if path.exists():
                self.conn.register(name, read_table(path, schema))
                self.registered.append(name)
        logger.debug("registered views: %s", ", ".join(self.registered) or "none")

    def q(self, sql: str, params: list | None = None) -> pd.DataFrame:
        """Run raw SQL (bound params) and return a DataFrame."""
        return self.conn.execute(sql, params or []).fetchdf()

    def has(self, name: str) -> bool:
        return name in self.registered

    def results(self, table: str, threshold: float) -> pd.DataFrame:
        """Rows of one result table at one threshold, in design order."""
        if not self.has(table):
            return pd.DataFrame(columns=RESULTS_SCHEMA.names)
        return self.q(
            f"""
            SELECT * FROM {table}
            WHERE threshold = ?
            ORDER BY control_days, treatment_days, spec_id, term
            """,
            [threshold],
        )

    def headline(self, threshold: float) -> pd.DataFrame:
        """Covariate-adjusted turnout effects, one row per design and treatment."""
        if not self.has("turnout"):
            return pd.DataFrame()
        return self.q(
            """
            SELECT control_days, treatment_days, term, coef, se, p, stars, n_obs,
                   mean_control_outcome,
                   coef / NULLIF(mean_control_outcome, 0) AS relative_effect
            FROM turnout
            WHERE threshold = ? AND covariates
            ORDER BY term, control_days
            """,
            [threshold],
        )

    def close(self) -> None:
        self.conn.close()

    def __enter__(self) -> "WorkspaceSession":
        return self

    def __exit__(self, *exc) -> None:
        self.close()
