"""
Command-line entry point: fit, evolve, sweep, baseline, export.

Exit codes: 0 on success, 2 on configuration / validation / model-format
errors, 1 on any other failure.

Environment (a .env file is honoured):
    STYLESEARCH_LOG_LEVEL   logging level, default INFO
    STYLESEARCH_WORKERS     threads for fitness evaluation and sweep runs, default 1
"""

import functools
import logging
import os
from pathlib import Path
from typing import Annotated, Optional

import coloredlogs
import typer
from dotenv import load_dotenv
from rich.console import Console
from rich.table import Table

from config import RunConfig, load_run_config, with_overrides
from exceptions import ConfigurationError, ModelFormatError, StyleSearchError, ValidationError
from pipeline import cmd_baseline, cmd_evolve, cmd_export, cmd_fit, cmd_sweep
from rng import MAX_SEED

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"
USAGE_ERRORS = (ConfigurationError, ValidationError, ModelFormatError)

app = typer.Typer(
    help="GMM-guided evolutionary search of a generator's latent space.",
    add_completion=False,
    no_args_is_help=True,
)
console = Console()

ConfigOption = Annotated[Path, typer.Option("--config", "-c", help="Run configuration file (key = value)")]
ModelOption = Annotated[Path, typer.Option("--model", "-m", help="Style model file written by 'fit'")]
TargetOption = Annotated[Optional[int], typer.Option("--target", "-t", min=0, help="Target style; default largest")]
OutOption = Annotated[Optional[Path], typer.Option("--out", "-o", help="Output directory (overrides config)")]
SeedOption = Annotated[Optional[int], typer.Option("--seed", min=0, max=MAX_SEED, help="Master seed (overrides config)")]


def workers_from_env() -> int:
    raw = os.getenv("STYLESEARCH_WORKERS", "1")
    try:
        workers = int(raw)
    except ValueError as err:
        raise ConfigurationError(f"STYLESEARCH_WORKERS must be an integer, got {raw!r}") from err
    if workers < 1:
        raise ConfigurationError(f"STYLESEARCH_WORKERS must be >= 1, got {workers}")
    return workers


def handle_errors(func):
    """Turn pipeline errors into a logged message and the matching exit code."""
    @functools.wraps(func)
    def wrapper(*args, **kwargs):
        try:
            return func(*args, **kwargs)
        except USAGE_ERRORS as err:
            logger.error(str(err))
            raise typer.Exit(code=2)
        except StyleSearchError as err:
            logger.error(str(err))
            raise typer.Exit(code=1)
    return wrapper


def _run_config(config: Path, seed: Optional[int], out: Optional[Path]) -> RunConfig:
    return with_overrides(load_run_config(config), seed=seed, output_dir=out)


def _show_clusters(summary) -> None:
    table = Table(title="Style clusters")
    for column in ("component", "size", "mean p", "median p"):
        table.add_column(column, justify="right")
    for row in summary.itertuples(index=False):
        table.add_row(
            str(row.component), str(row.size),
            f"{row.mean_posterior:.4f}", f"{row.median_posterior:.4f}",
        )
    console.print(table)


def _show_sweep(summary) -> None:
    table = Table(title="Mean best fitness per cell")
    for column in ("p_cx", "p_mut", "N_pop", "N_ts", "mean best"):
        table.add_column(column, justify="right")
    for row in summary.itertuples(index=False):
        table.add_row(
            f"{row.p_cx:g}", f"{row.p_mut:g}", str(row.n_pop), str(row.n_ts),
            f"{row.mean_best_fitness:.4f}",
        )
    console.print(table)


@app.command()
@handle_errors
def fit(config: ConfigOption, out: OutOption = None, seed: SeedOption = None):
    """Build the synthetic dataset and fit the style model."""
    outcome = cmd_fit(_run_config(config, seed, out))
    _show_clusters(outcome.summary)
    typer.echo(f"model: {outcome.model_path}")


@app.command()
@handle_errors
def evolve(config: ConfigOption, model: ModelOption, target: TargetOption = None,
           out: OutOption = None, seed: SeedOption = None):
    """Evolve latent vectors toward a target style."""
    outcome = cmd_evolve(_run_config(config, seed, out), model, target, workers=workers_from_env())
    typer.echo(f"target {outcome.target}: best fitness {outcome.result.best_fitness:.17g}")


@app.command()
@handle_errors
def sweep(
    config: ConfigOption,
    model: Annotated[Optional[Path], typer.Option("--model", "-m", help="Reuse a fitted style model")] = None,
    out: OutOption = None,
    seed: SeedOption = None,
):
    """Run the GA parameter grid over the selected styles."""
    outcome = cmd_sweep(_run_config(config, seed, out), model, workers=workers_from_env())
    _show_sweep(outcome.summary)
    typer.echo(f"sweep: {outcome.csv_path} ({len(outcome.rows)} rows)")


@app.command()
@handle_errors
def baseline(config: ConfigOption, model: ModelOption, target: TargetOption = None,
             out: OutOption = None, seed: SeedOption = None):
    """Fittest of N_pop x N_gen random latents, for comparison with evolve."""
    outcome = cmd_baseline(_run_config(config, seed, out), model, target, workers=workers_from_env())
    typer.echo(
        f"target {outcome.target}: baseline best fitness {outcome.best_fitness:.17g} "
        f"(budget {outcome.budget})"
    )


@app.command()
@handle_errors
def export(
    model: ModelOption,
    target: TargetOption = None,
    count: Annotated[Optional[int], typer.Option("--count", "-n", min=1, help="Designs to export (default export_count)")] = None,
    config: Annotated[Optional[Path], typer.Option("--config", "-c", help="Config supplying output_dir and export_count")] = None,
    out: OutOption = None,
):
    """Export the training designs with the highest posterior for a style."""
    cfg = load_run_config(config) if config is not None else RunConfig()
    outcome = cmd_export(
        model, target,
        count if count is not None else cfg.export_count,
        out if out is not None else cfg.output_dir,
    )
    for path, p in zip(outcome.pgm_paths, outcome.ranking["posterior"]):
        typer.echo(f"{path}  p={p:.6f}")


def main():
    load_dotenv()
    coloredlogs.install(
        level=os.getenv("STYLESEARCH_LOG_LEVEL", "INFO").upper(),
        fmt=LOG_FORMAT,
    )
    app()


if __name__ == "__main__":
    main()
