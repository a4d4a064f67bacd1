"""CLI interface for jailvote."""

import json
import logging
import sys
from functools import wraps
from pathlib import Path

import click
from rich.console import Console
from rich.logging import RichHandler
from rich.table import Table

from . import __version__, pipeline
from .config import CONTROL_WINDOWS, THRESHOLDS, Config
from .errors import JailVoteError
from .pipeline import StageSummary
from .session import WorkspaceSession
from .workspace import Workspace

console = Console()

_THRESHOLD_CHOICES = [f"{t:.2f}" for t in THRESHOLDS]


def _setup_logging(verbose: bool) -> None:
    """RichHandler on the package logger; safe to call once per invocation."""
    log = logging.getLogger("jailvote")
    log.setLevel(logging.DEBUG if verbose else logging.INFO)
    if not any(isinstance(h, RichHandler) for h in log.handlers):
        log.addHandler(RichHandler(console=console, show_path=False, markup=False))


def _fail(command: str, error: BaseException) -> None:
    code = error.code if isinstance(error, JailVoteError) else "internal"
    console.print(f"[red]Error:[/red] {error}")
    click.echo(json.dumps({"error": code, "message": str(error), "command": command}), err=True)
    sys.exit(1)


def stage_command(name: str):
    """Run the wrapped command, turning any exception into the error contract."""

    def decorator(fn):
        @wraps(fn)
        def wrapper(*args, **kwargs):
            try:
                return fn(*args, **kwargs)
            except SystemExit:
                raise
            except Exception as e:
                if logging.getLogger("jailvote").isEnabledFor(logging.DEBUG):
                    console.print_exception()
                _fail(name, e)
        return wrapper

    return decorator


def _workspace(ctx, out: Path | None) -> tuple[Config, Workspace]:
    cfg: Config = ctx.obj["config"]
    if out is not None:
        cfg = cfg.override(workdir=out)
    cfg.ensure_directories()
    return cfg, Workspace(cfg.workdir)


def _threshold(ctx, value: str | None) -> float:
    return float(value) if value is not None else ctx.obj["config"].linkage.threshold


def _print_summary(summary: StageSummary, root: Path) -> None:
    for key, value in summary.counts.items():
        shown = "-" if value is None else (f"{value:.4g}" if isinstance(value, float) else value)
        console.print(f"  {key}: [cyan]{shown}[/cyan]")
    for path in summary.outputs:
        try:
            shown = path.relative_to(root)
        except ValueError:
            shown = path
        console.print(f"  [green]✓[/green] {shown}")


def _header(title: str, cfg: Config) -> None:
    console.print(f"\n[bold]jailvote - {title}[/bold]")
    console.print(f"  Workspace: {cfg.workdir}")
    if cfg.source:
        console.print(f"  Config: {cfg.source}")
    console.print()


out_option = click.option("--out", "-o", type=click.Path(file_okay=False, path_type=Path),
                          help="Workspace directory (default: config workdir)")
threshold_option = click.option("--threshold", type=click.Choice(_THRESHOLD_CHOICES),
                                help="Linkage probability threshold")
control_option = click.option("--control-days", type=click.Choice([str(c) for c in CONTROL_WINDOWS]),
                              help="Restrict to one control window (default: all balanced)")


@click.group()
@click.version_option(version=__version__, prog_name="jailvote")
@click.option("--config", "-c", type=click.Path(path_type=Path), help="Config file path")
@click.option("--seed", type=int, help="Run seed (overrides config)")
@click.option("--threads", type=click.IntRange(min=1), help="Worker threads (default: all cores)")
@click.option("--verbose", "-v", is_flag=True, help="Debug logging")
@click.pass_context
def main(ctx, config: Path | None, seed: int | None, threads: int | None, verbose: bool):
    """jailvote - jail roster to voter file linkage and turnout study."""
    _setup_logging(verbose)
    ctx.ensure_object(dict)
    try:
        cfg = Config.load(config).override(seed=seed, threads=threads)
    except JailVoteError as e:
        _fail("main", e)
    ctx.obj["config"] = cfg


@main.command()
@out_option
@click.option("--rosters", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Roster snapshots (.csv or .jsonl; default: raw/rosters.csv)")
@click.option("--voter-file", type=click.Path(exists=True, dir_okay=False, path_type=Path),
              help="Voter file CSV (default: raw/voter_file.csv)")
@click.pass_context
@stage_command("ingest")
def ingest(ctx, out: Path | None, rosters: Path | None, voter_file: Path | None):
    """Reconstruct booking spells and standardize the voter file."""
    cfg, ws = _workspace(ctx, out)
    _header("Ingest", cfg)
    summary = pipeline.ingest(cfg, ws, rosters, voter_file)
    _print_summary(summary, ws.root)
    if summary.counts.get("rejected"):
        console.print(f"  [yellow]{summary.counts['rejected']} record(s) rejected; "
                      f"see {ws.rejects.name}[/yellow]")


@main.command()
@out_option
@click.pass_context
@stage_command("block")
def block(ctx, out: Path | None):
    """Block bookings and voters by state, age band and surname Soundex."""
    cfg, ws = _workspace(ctx, out)
    _header("Block", cfg)
    _print_summary(pipeline.block(cfg, ws), ws.root)


@main.command()
@out_option
@click.pass_context
@stage_command("fit")
def fit(ctx, out: Path | None):
    """Fit the record-linkage model by resampled EM."""
    cfg, ws = _workspace(ctx, out)
    _header("Fit", cfg)
    _print_summary(pipeline.fit(cfg, ws), ws.root)


@main.command()
@out_option
@threshold_option
@click.pass_context
@stage_command("link")
def link(ctx, out: Path | None, threshold: str | None):
    """Link bookings to voters and apply the exclusion rules."""
    cfg, ws = _workspace(ctx, out)
    _header("Link", cfg)
    _print_summary(pipeline.link(cfg, ws, _threshold(ctx, threshold)), ws.root)


def _study_command(name: str, stage, help_text: str):
    @main.command(name=name, help=help_text)
    @out_option
    @threshold_option
    @control_option
    @click.pass_context
    @stage_command(name)
    def command(ctx, out: Path | None, threshold: str | None, control_days: str | None):
        cfg, ws = _workspace(ctx, out)
        _header(name.capitalize(), cfg)
        summary = stage(cfg, ws, _threshold(ctx, threshold),
                        int(control_days) if control_days else None)
        _print_summary(summary, ws.root)

    return command


_study_command("balance", pipeline.balance, "Balance tests for every balanced design.")
_study_command("estimate", pipeline.estimate, "Turnout effects and summary statistics.")
_study_command("placebo", pipeline.placebo, "Placebo tests on 2016 and 2012 turnout.")
_study_command("heterogeneity", pipeline.heterogeneity, "Black/white heterogeneity models.")
_study_command("appendix-b", pipeline.all_booked,
               "Registration and unconditional turnout over all booked individuals.")
_study_command("all-booked", pipeline.all_booked, "Same as appendix-b.")


@main.command()
@out_option
@threshold_option
@control_option
@click.pass_context
@stage_command("windows")
def windows(ctx, out: Path | None, threshold: str | None, control_days: str | None):
    """Search the largest balanced treatment window per control window."""
    cfg, ws = _workspace(ctx, out)
    _header("Windows", cfg)
    t = _threshold(ctx, threshold)
    summary = pipeline.windows(cfg, ws, t, int(control_days) if control_days else None)

    table = Table(title=f"Treatment windows (threshold {t:.2f})")
    table.add_column("Control days", justify="right")
    table.add_column("Treatment days", justify="right")
    with WorkspaceSession(ws.root) as s:
        rows = s.q("SELECT * FROM windows WHERE threshold = ? ORDER BY control_days", [t])
    for row in rows.itertuples(index=False):
        shown = str(int(row.treatment_days)) if row.balanced else "[yellow]none[/yellow]"
        table.add_row(str(row.control_days), shown)
    console.print(table)
    for path in summary.outputs:
        console.print(f"  [green]✓[/green] {path.name}")


@main.command()
@out_option
@click.pass_context
@stage_command("synth")
def synth(ctx, out: Path | None):
    """Generate synthetic rosters and a voter file with truth sidecars."""
    cfg, ws = _workspace(ctx, out)
    _header("Synth", cfg)
    _print_summary(pipeline.synth(cfg, ws), ws.root)


@main.command()
@out_option
@click.pass_context
@stage_command("report")
def report(ctx, out: Path | None):
    """Render report.md, table_manifest.csv and the balance p-curve."""
    cfg, ws = _workspace(ctx, out)
    _header("Report", cfg)
    _print_summary(pipeline.report(cfg, ws), ws.root)

    with WorkspaceSession(ws.root) as s:
        for t in THRESHOLDS:
            headline = s.headline(t)
            if headline.empty:
                continue
            table = Table(title=f"Covariate-adjusted turnout effects (threshold {t:.2f})")
            for col in ("Control", "T", "Treatment", "Coef", "SE", "Control mean"):
                table.add_column(col, justify="right" if col != "Treatment" else "left")
            for row in headline.itertuples(index=False):
                table.add_row(str(row.control_days), str(row.treatment_days), row.term,
                              f"{row.coef:.4f}{row.stars}", f"{row.se:.4f}",
                              f"{row.mean_control_outcome:.3f}")
            console.print(table)


@main.command()
@out_option
@threshold_option
@control_option
@click.pass_context
@stage_command("run")
def run(ctx, out: Path | None, threshold: str | None, control_days: str | None):
    """Chain ingest through report over an existing workspace.

    Without --threshold both thresholds are linked and studied.
    """
    cfg, ws = _workspace(ctx, out)
    _header("Run", cfg)
    thresholds = (float(threshold),) if threshold else THRESHOLDS
    for summary in pipeline.run(cfg, ws, thresholds, int(control_days) if control_days else None):
        console.print(f"[bold]{summary.stage}[/bold]")
        _print_summary(summary, ws.root)
    console.print(f"\n[green]✓[/green] Report: {ws.report}")


if __name__ == "__main__":
    main()
