"""Main CLI entry point for the EER toolkit."""

import sys
from dataclasses import fields
from pathlib import Path
from typing import Any, Dict, List, Optional

import click

from . import __version__
from .checkpoint import CheckpointWriter, load_checkpoint
from .config import RunConfig, load_run_config, save_run_config
from .data import generate_induction_batch
from .dynamics import (
    column_form,
    phase_summary,
    sample_initial_condition,
    simulate_trajectory,
    write_trajectory_csv,
)
from .entropy import certify_trajectory, contraction_certificate
from .errors import EERError
from .formatter import Formatter
from .landscape import compute_landscape, write_landscape_csv
from .metrics import MetricsWriter
from .model import ModelWeights, looped_forward
from .plotting import plot_csv
from .tensor import seeded_rng
from .training import EERConfig, evaluate, initial_weights, train

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERICAL = 2

FORMAT_CHOICE = click.Choice(Formatter.FORMATS)


class EERGroup(click.Group):
    """Command group that reports usage and config errors with exit code 1."""

    def main(self, *args, standalone_mode: bool = True, **kwargs):
        if not standalone_mode:
            return super().main(*args, standalone_mode=False, **kwargs)
        try:
            rv = super().main(*args, standalone_mode=False, **kwargs)
        except click.UsageError as e:
            e.show()
            sys.exit(EXIT_USAGE)
        except click.ClickException as e:
            e.show()
            sys.exit(e.exit_code)
        except click.Abort:
            click.echo("Aborted!", err=True)
            sys.exit(EXIT_USAGE)
        sys.exit(rv if isinstance(rv, int) else EXIT_OK)


def get_run_config(config_path: Optional[str], seed: Optional[int] = None) -> RunConfig:
    """Load the run configuration, or the defaults when no file is given.

    Raises:
        click.Abort: If the file cannot be parsed or validated
    """
    try:
        run_config = load_run_config(config_path) if config_path else RunConfig()
    except EERError as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()
    return run_config.with_seed(seed)


def config_from_echo(echo: Dict[str, Any]) -> EERConfig:
    """Rebuild the training configuration stored in a checkpoint header."""
    known = {f.name for f in fields(EERConfig)}
    return EERConfig(**{key: value for key, value in echo.items() if key in known})


def load_weights(checkpoint_path: str, config_path: Optional[str]):
    """Weights of a checkpoint and the configuration to run them with.

    An explicit ``--config`` wins; otherwise the checkpoint's own echo is used
    and its dims are not cross-checked.
    """
    if config_path:
        eer = get_run_config(config_path).eer
        checkpoint = load_checkpoint(checkpoint_path, (eer.d, eer.d_ff, eer.vocab))
        return checkpoint.weights, eer
    checkpoint = load_checkpoint(checkpoint_path)
    return checkpoint.weights, config_from_echo(checkpoint.config)


@click.group(cls=EERGroup)
@click.version_option(version=__version__, prog_name="eer")
def cli():
    """EER CLI - energy-entropy regularized training for looped Transformers."""
    pass


@cli.command("train")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Run configuration file")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Output directory")
@click.option("--seed", type=int, help="Override the configured seed")
@click.option("--quiet", is_flag=True, help="Suppress progress lines")
@click.pass_context
def train_command(
    ctx: click.Context, config_path: Optional[str], out_dir: str, seed: Optional[int], quiet: bool
):
    """Train a model; writes metrics.csv, checkpoints/ and config.cfg."""
    run_config = get_run_config(config_path, seed)
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        save_run_config(out / "config.cfg", run_config)
        checkpoints = CheckpointWriter(out / "checkpoints", run_config.eer.to_dict())
        with MetricsWriter(out / "metrics.csv") as metrics:
            result = train(run_config.eer, metrics, checkpoints, quiet=quiet)
    except EERError as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()

    if result.aborted:
        click.echo(f"Error: numerical abort at {result.abort_reason}", err=True)
        if checkpoints.last_path is not None:
            click.echo(f"Last checkpoint: {checkpoints.last_path}", err=True)
        ctx.exit(EXIT_NUMERICAL)
    click.echo(f"Trained {result.steps} steps; metrics in {out / 'metrics.csv'}")


@cli.command("eval")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True, help="Checkpoint file")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Run configuration file")
@click.option("--lengths", help="Comma-separated sequence lengths (default: configured eval_lengths)")
@click.option("--samples", type=int, help="Sequences per length (default: configured eval_samples)")
@click.option("--t-eval", type=int, help="Loop iterations (default: configured t_eval)")
@click.option("--seed", type=int, default=0, show_default=True, help="Evaluation seed")
@click.option("--format", type=FORMAT_CHOICE, default="table", help="Output format (json, table, plain)")
def eval_command(
    checkpoint: str,
    config_path: Optional[str],
    lengths: Optional[str],
    samples: Optional[int],
    t_eval: Optional[int],
    seed: int,
    format: str,
):
    """Report accuracy per sequence length."""
    try:
        weights, eer = load_weights(checkpoint, config_path)
        if lengths:
            try:
                chosen = [int(item) for item in lengths.split(",") if item.strip()]
            except ValueError:
                raise click.BadParameter(f"'{lengths}' is not a list of integers", param_hint="--lengths")
        else:
            chosen = list(eer.eval_lengths)
        accuracy = evaluate(
            weights,
            chosen,
            samples or eer.eval_samples,
            t_eval or eer.t_eval,
            seed,
            eer,
        )
    except EERError as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()

    rows = [{"length": length, "accuracy": value} for length, value in accuracy.items()]
    click.echo(Formatter.format_output(rows, format))


def certificate_report(
    weights: ModelWeights, maps: List, q: float, k: int, worst_case: bool
) -> Dict[str, Any]:
    """Final-map k-step certificate plus per-iteration bounds and their product."""
    final = contraction_certificate(weights, maps[-1], q, k, worst_case=worst_case)
    trajectory = certify_trajectory(weights, maps, q, worst_case=worst_case)
    report = final.as_dict()
    report["product_bound"] = trajectory.product_bound
    report["trajectory_contractive"] = trajectory.contractive
    report["iterations"] = [
        {"iteration": i + 1, "attn_term": c.attn_term, "per_step_bound": c.per_step_bound}
        for i, c in enumerate(trajectory.per_iteration)
    ]
    return report


@cli.command("check-contraction")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True, help="Checkpoint file")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Run configuration file")
@click.option("--length", type=int, default=16, show_default=True, help="Length of the sampled sequence")
@click.option("--q", type=float, default=1.5, show_default=True, help="Tsallis index in (1, 2]")
@click.option("--k", type=int, help="Loop count (default: configured t_eval)")
@click.option("--seed", type=int, default=0, show_default=True, help="Sequence sampling seed")
@click.option("--update", type=click.Choice(["block", "map"]), default="block", help="Loop update form")
@click.option("--worst-case", is_flag=True, help="Use the one-hot envelope for the attention term")
@click.option("--format", type=FORMAT_CHOICE, default="plain", help="Output format (json, table, plain)")
def check_contraction(
    checkpoint: str,
    config_path: Optional[str],
    length: int,
    q: float,
    k: Optional[int],
    seed: int,
    update: str,
    worst_case: bool,
    format: str,
):
    """Certify whether the loop map contracts on a sampled sequence."""
    try:
        weights, eer = load_weights(checkpoint, config_path)
        loops = k or eer.t_eval
        rng = seeded_rng(seed)
        batch = generate_induction_batch(rng, weights.vocab, 1, length, "full-sequence")
        trace = looped_forward(
            batch,
            weights,
            loops,
            temperature=eer.tau,
            gate=eer.gate_for(length),
            q=eer.q,
            pe_scale=eer.pe_scale,
            update=update,
        )
        maps = [attn.data for attn in trace.attn_per_iter]
        report = {"length": length, "update": update}
        report.update(certificate_report(weights, maps, q, loops, worst_case))
    except EERError as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()

    click.echo(Formatter.format_output(report, format))


@cli.command("simulate")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Run configuration file")
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True, help="Output directory")
@click.option("--seed", type=int, help="Override the configured seed")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), help="Use trained weights")
@click.option("--format", type=FORMAT_CHOICE, default="plain", help="Output format (json, table, plain)")
def simulate(
    config_path: Optional[str],
    out_dir: str,
    seed: Optional[int],
    checkpoint: Optional[str],
    format: str,
):
    """Integrate the latent dynamics; writes trajectory.csv and trajectory.svg."""
    run_config = get_run_config(config_path, seed)
    try:
        if checkpoint:
            weights = load_checkpoint(checkpoint).weights
        else:
            weights = initial_weights(run_config.eer)
        params = run_config.dynamics
        x, z0, v0 = sample_initial_condition(
            seeded_rng(run_config.eer.seed), weights, params, run_config.eer.pe_scale
        )
        trajectory = simulate_trajectory(z0, x, column_form(weights), params, v0)
        out = Path(out_dir)
        csv_path = write_trajectory_csv(out / "trajectory.csv", trajectory)
        svg_path = plot_csv(csv_path, out / "trajectory.svg")
    except EERError as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()

    summary = phase_summary(trajectory).as_dict()
    summary["trajectory_csv"] = str(csv_path)
    summary["chart"] = str(svg_path)
    click.echo(Formatter.format_output(summary, format))


@cli.command("landscape")
@click.option("--checkpoint", type=click.Path(exists=True, dir_okay=False), required=True, help="Checkpoint file")
@click.option("--config", "config_path", type=click.Path(exists=True, dir_okay=False), help="Run configuration file")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True, help="Output CSV file")
@click.option("--seed", type=int, default=0, show_default=True, help="Direction and batch seed")
@click.option("--resolution", type=int, default=11, show_default=True, help="Odd number of points per axis")
@click.option("--extent", type=float, default=1.0, show_default=True, help="Half-width of each axis")
@click.option("--length", type=int, help="Sequence length (default: train_len_min)")
@click.option("--batch-size", type=int, default=8, show_default=True, help="Sequences in the fixed batch")
def landscape(
    checkpoint: str,
    config_path: Optional[str],
    out_path: str,
    seed: int,
    resolution: int,
    extent: float,
    length: Optional[int],
    batch_size: int,
):
    """Export total and cross-entropy losses on a plane through the checkpoint."""
    try:
        weights, eer = load_weights(checkpoint, config_path)
        batch = generate_induction_batch(
            seeded_rng(seed), weights.vocab, batch_size, length or eer.train_len_min, eer.task_mode
        )
        grid = compute_landscape(weights, batch, eer, seed, extent, resolution)
        path = write_landscape_csv(out_path, grid)
    except EERError as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()

    center_total, center_ce = grid.center()
    click.echo(f"Wrote {grid.resolution}x{grid.resolution} grid to {path}")
    click.echo(f"Center: total_loss={center_total!r} ce_loss={center_ce!r}")


@cli.command("plot")
@click.argument("csv_path", type=click.Path(exists=True, dir_okay=False))
@click.argument("output", type=click.Path(dir_okay=False))
@click.option("--columns", help="Comma-separated columns to draw")
def plot(csv_path: str, output: str, columns: Optional[str]):
    """Draw a metrics or trajectory CSV as an SVG line chart."""
    chosen = [name.strip() for name in columns.split(",") if name.strip()] if columns else None
    try:
        path = plot_csv(csv_path, output, chosen)
    except EERError as e:
        click.echo(f"Error: {e}", err=True)
        raise click.Abort()
    click.echo(f"Wrote {path}")


def main():
    """Main entry point for the CLI."""
    cli()


if __name__ == "__main__":
    main()
