"""Stage file layout of a workspace directory.

    raw/rosters.csv, raw/voter_file.csv      pipeline inputs (synth writes them)
    truth/links.csv, truth/effects.csv       synthetic answers, never read by stages
    snapshots.csv, spells.csv, voters.csv    ingest
    ingest_rejects.json, ballot_return.csv   ingest
    block_stats.csv                          block
    fs_params.json                           fit
    linked_p075.csv, exclusions_p075.csv     link (one pair per threshold)
    pcurve_p075.csv, windows_p075.csv        windows
    balance_p075.csv                         balance
    turnout_p075.csv, summary_p075.csv       estimate
    placebo_p075.csv                         placebo
    race_p075.csv, race_reporting_p075.csv   heterogeneity
    booked_windows_p075.csv                  appendix-b
    registration_p075.csv, unconditional_p075.csv   appendix-b
    report.md, table_manifest.csv, balance_pcurve.html   report
    manifest.jsonl                           run ledger
"""

from dataclasses import dataclass
from pathlib import Path


def threshold_tag(threshold: float) -> str:
    """0.75 → 'p075', 0.95 → 'p095'."""
    return f"p{round(threshold * 100):03d}"


@dataclass(frozen=True)
class Workspace:
    root: Path

    @property
    def raw_rosters(self) -> Path:
        return self.root / "raw" / "rosters.csv"

    @property
    def raw_voter_file(self) -> Path:
        return self.root / "raw" / "voter_file.csv"

    @property
    def truth_links(self) -> Path:
        return self.root / "truth" / "links.csv"

    @property
    def truth_effects(self) -> Path:
        return self.root / "truth" / "effects.csv"

    @property
    def snapshots(self) -> Path:
        return self.root / "snapshots.csv"

    @property
    def spells(self) -> Path:
        return self.root / "spells.csv"

    @property
    def voters(self) -> Path:
        return self.root / "voters.csv"

    @property
    def rejects(self) -> Path:
        return self.root / "ingest_rejects.json"

    @property
    def ballot_return(self) -> Path:
        return self.root / "ballot_return.csv"

    @property
    def block_stats(self) -> Path:
        return self.root / "block_stats.csv"

    @property
    def fs_params(self) -> Path:
        return self.root / "fs_params.json"

    @property
    def manifest(self) -> Path:
        return self.root / "manifest.jsonl"

    @property
    def report(self) -> Path:
        return self.root / "report.md"

    @property
    def table_manifest(self) -> Path:
        return self.root / "table_manifest.csv"

    @property
    def pcurve_html(self) -> Path:
        return self.root / "balance_pcurve.html"

    def per_threshold(self, name: str, threshold: float) -> Path:
        """`{name}_{tag}.csv`, e.g. linked_p075.csv."""
        return self.root / f"{name}_{threshold_tag(threshold)}.csv"

    def linked(self, threshold: float) -> Path:
        return self.per_threshold("linked", threshold)

    def exclusions(self, threshold: float) -> Path:
        return self.per_threshold("exclusions", threshold)
