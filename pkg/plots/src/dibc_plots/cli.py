"""dibc-plots: batch figures from a completed run's artifacts."""

import sys

import click

from . import figures
from .io import ArtifactError


def _render(fn, *args, **kwargs):
    try:
        out = fn(*args, **kwargs)
    except (ArtifactError, OSError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(3)
    click.echo(f"wrote {out}")


@click.group()
def main():
    """Render figure analogues from dibc CSV/JSON artifacts."""


@main.command()
@click.option("--points", "points_path", type=click.Path(exists=True), required=True)
@click.option("--labels", "labels_path", type=click.Path(exists=True), default=None,
              help="c_star.csv style (row, cluster) table.")
@click.option("--label-col", default=None, help="Label column inside the points file.")
@click.option("--sample-frac", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def clusters(points_path, labels_path, label_col, sample_frac, seed, out):
    """Cluster scatter plot, optionally subsampled."""
    _render(
        figures.plot_clusters, points_path, labels_path=labels_path,
        label_column=label_col, sample_frac=sample_frac, seed=seed, out=out,
    )


@main.command()
@click.option("--points", "points_path", type=click.Path(exists=True), required=True)
@click.option("--sample-frac", type=float, default=1.0, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def predictive(points_path, sample_frac, seed, out):
    """Posterior predictive scatter from a predict output file."""
    _render(
        figures.plot_predictive, points_path, sample_frac=sample_frac,
        seed=seed, out=out,
    )


@main.command("accuracy-delta")
@click.argument("diagnostics", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), required=True)
def accuracy_delta(diagnostics, out):
    """Violin plot of per-worker accuracy change through refinement."""
    _render(figures.plot_accuracy_delta, list(diagnostics), out=out)


@main.command("metrics-vs-workers")
@click.option("--run", "runs", nargs=2, multiple=True, required=True,
              metavar="DIAGNOSTICS METRICS",
              help="Pair of diagnostics.json and metrics.json for one run.")
@click.option("--out", type=click.Path(), required=True)
def metrics_vs_workers(runs, out):
    """Accuracy/ARI/F-measure against the worker count."""
    _render(figures.plot_metrics_vs_workers, list(runs), out=out)


@main.command()
@click.argument("diagnostics", nargs=-1, required=True, type=click.Path(exists=True))
@click.option("--out", type=click.Path(), required=True)
def timings(diagnostics, out):
    """Per-step wall-time bars against the worker count."""
    _render(figures.plot_timings, list(diagnostics), out=out)


if __name__ == "__main__":
    main()
