"""Command-line surface: generate, fit, evaluate, classify, predict.

Artifacts are machine readable: CSV for point/label tables, JSON for
manifests, metrics and diagnostics, and a versioned binary container for
parameter draws.  Exit codes: 0 ok, 2 config, 3 IO, 4 numerical,
5 transport.  The DIBC_SEED environment variable overrides --seed.
"""

import csv
import json
import os
import sys

import click
import numpy as np

from . import __version__, data as data_ops, metrics as metric_ops, params as param_ops
from ._rng import PREDICT, stream
from .errors import (
    ConfigError,
    FileFormatError,
    NumericalError,
    ParameterError,
    TransportError,
)
from .runtime import PipelineConfig, run_pipeline

EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_NUMERICAL = 4
EXIT_TRANSPORT = 5


def _exit_code(exc):
    if isinstance(exc, (ConfigError, ParameterError)):
        return EXIT_CONFIG
    if isinstance(exc, (FileFormatError, OSError)):
        return EXIT_IO
    if isinstance(exc, NumericalError):
        return EXIT_NUMERICAL
    if isinstance(exc, TransportError):
        return EXIT_TRANSPORT
    cause = exc.__cause__
    if cause is not None and cause is not exc:
        return _exit_code(cause)
    return 1


def _fail(exc):
    click.echo(f"error: {exc}", err=True)
    sys.exit(_exit_code(exc))


def _seed_option(seed):
    env = os.environ.get("DIBC_SEED")
    return int(env) if env else seed


@click.group()
@click.version_option(__version__)
def main():
    """Distributed Bayesian clustering tools."""


@main.command()
@click.option("--n", type=int, required=True, help="Number of rows to simulate.")
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def generate(n, seed, out):
    """Write a synthetic benchmark data set with true cluster labels."""
    seed = _seed_option(seed)
    try:
        if n < 1:
            raise ConfigError("--n must be >= 1")
        points, labels = data_ops.generate_synthetic(n, seed)
        _write_points_csv(out, points, labels=labels)
    except Exception as exc:  # noqa: BLE001 - single exit path
        _fail(exc)
    click.echo(f"wrote {n} rows to {out}")


def _write_points_csv(path, points, labels=None, cluster=None):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        header = [f"x{j + 1}" for j in range(points.shape[1])]
        if labels is not None:
            header.append("label")
        if cluster is not None:
            header.append("cluster")
        writer.writerow(header)
        for i in range(points.shape[0]):
            row = [f"{v:.17g}" for v in points[i]]
            if labels is not None:
                row.append(int(labels[i]))
            if cluster is not None:
                row.append(int(cluster[i]))
            writer.writerow(row)


@main.command()
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--columns", default=None, help="Comma-separated feature columns "
              "(default: every x* column).")
@click.option("--label-col", default=None, help="Optional true-label column.")
@click.option("--log-cols", default="", help="Columns to log-transform.")
@click.option("--workers", type=int, default=1, show_default=True)
@click.option("--k", type=int, default=10, show_default=True,
              help="Overfitted upper bound on the number of clusters.")
@click.option("--l", "l_sub", type=int, default=3, show_default=True,
              help="Subcomponents per cluster.")
@click.option("--iters", type=int, default=1000, show_default=True)
@click.option("--burn-in", type=int, default=500, show_default=True)
@click.option("--refine-samples", type=int, default=100, show_default=True)
@click.option("--candidates", type=int, default=20, show_default=True)
@click.option("--param-iters", type=int, default=2000, show_default=True)
@click.option("--param-burn-in", type=int, default=500, show_default=True)
@click.option("--phi-b", type=float, default=0.5, show_default=True)
@click.option("--phi-w", type=float, default=0.1, show_default=True)
@click.option("--loss", type=click.Choice(["vi", "binder"]), default="vi",
              show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--transport", type=click.Choice(["inproc", "tcp"]),
              default="inproc", show_default=True)
@click.option("--out-dir", type=click.Path(), required=True)
def fit(data_path, columns, label_col, log_cols, workers, k, l_sub, iters,
        burn_in, refine_samples, candidates, param_iters, param_burn_in,
        phi_b, phi_w, loss, seed, transport, out_dir):
    """Run the full pipeline and write c_star.csv, draws.bin,
    manifest.json and diagnostics.json."""
    seed = _seed_option(seed)
    try:
        cols, log_list, points, labels = _load_features(
            data_path, columns, label_col, log_cols
        )
        cfg = PipelineConfig(
            n_workers=workers,
            n_clusters=k,
            n_subcomponents=l_sub,
            n_iters=iters,
            burn_in=burn_in,
            n_refine_samples=refine_samples,
            n_candidates=candidates,
            param_iters=param_iters,
            param_burn_in=param_burn_in,
            phi_b=phi_b,
            phi_w=phi_w,
            seed=seed,
            transport=transport,
            loss=loss,
        ).validate()
        result = run_pipeline(cfg, points, true_labels=labels)
        os.makedirs(out_dir, exist_ok=True)
        _write_labels_csv(os.path.join(out_dir, "c_star.csv"), result.c_star)
        header = param_ops.save_draws(
            result.draws, os.path.join(out_dir, "draws.bin")
        )
        manifest = {
            "command": "fit",
            "data": os.path.abspath(data_path),
            "columns": cols,
            "label_column": label_col,
            "log_columns": log_list,
            "config": result.diagnostics["config"],
            "seed": seed,
            "draws_header": header,
            "n_clusters": result.n_clusters,
            "t_star": result.t_star,
        }
        with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        with open(os.path.join(out_dir, "diagnostics.json"), "w") as fh:
            json.dump(result.diagnostics, fh, indent=2, sort_keys=True)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    click.echo(
        f"estimated {result.n_clusters} clusters; artifacts in {out_dir}"
    )


def _load_features(data_path, columns, label_col, log_cols):
    with open(data_path, newline="") as fh:
        fieldnames = next(csv.reader(fh), None)
    if fieldnames is None:
        raise FileFormatError(f"{data_path}: empty file")
    if columns:
        cols = [c.strip() for c in columns.split(",") if c.strip()]
    else:
        cols = [c for c in fieldnames if c.startswith("x")]
        if not cols:
            raise ConfigError(
                "no feature columns found; pass --columns explicitly"
            )
    log_list = [c.strip() for c in log_cols.split(",") if c.strip()]
    points, labels = data_ops.load_csv(
        data_path, cols, label_column=label_col, log_columns=log_list
    )
    return cols, log_list, points, labels


def _write_labels_csv(path, labels, header=("row", "cluster")):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for i, label in enumerate(labels):
            writer.writerow([i, int(label)])


def _read_labels_csv(path, column):
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise FileFormatError(f"{path}: missing column {column!r}")
        values = []
        for row in reader:
            raw = (row.get(column) or "").strip()
            try:
                values.append(int(float(raw)))
            except ValueError:
                raise FileFormatError(
                    f"{path}:{reader.line_num}: non-integer value {raw!r}"
                ) from None
    return np.asarray(values, dtype=np.int64)


@main.command()
@click.option("--pred", type=click.Path(exists=True), required=True)
@click.option("--pred-col", default="cluster", show_default=True)
@click.option("--truth", type=click.Path(exists=True), required=True)
@click.option("--truth-col", default="label", show_default=True)
@click.option("--out", type=click.Path(), default=None)
def evaluate(pred, pred_col, truth, truth_col, out):
    """Score a predicted partition against true labels (accuracy, ARI,
    F-measure); unlabeled rows (-1) are excluded."""
    try:
        pred_labels = _read_labels_csv(pred, pred_col)
        true_labels = _read_labels_csv(truth, truth_col)
        if pred_labels.shape != true_labels.shape:
            raise ConfigError(
                f"length mismatch: {pred_labels.size} predictions vs "
                f"{true_labels.size} truths"
            )
        keep = true_labels >= 0
        report = metric_ops.compute_metrics(true_labels[keep], pred_labels[keep])
        blob = json.dumps(report.to_dict(), indent=2, sort_keys=True)
        if out:
            with open(out, "w") as fh:
                fh.write(blob + "\n")
        else:
            click.echo(blob)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)


@main.command()
@click.option("--draws", "draws_path", type=click.Path(exists=True), required=True)
@click.option("--data", "data_path", type=click.Path(exists=True), required=True)
@click.option("--columns", default=None)
@click.option("--log-cols", default="")
@click.option("--out", type=click.Path(), required=True)
def classify(draws_path, data_path, columns, log_cols, out):
    """Bayes-classify new points under stored parameter draws."""
    try:
        draws = param_ops.load_draws(draws_path)
        _, _, points, _ = _load_features(data_path, columns, None, log_cols)
        labels, probs = param_ops.classify(points, draws)
        with open(out, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["row", "cluster"]
                + [f"p{k + 1}" for k in range(probs.shape[1])]
            )
            for i in range(labels.shape[0]):
                writer.writerow(
                    [i, int(labels[i])] + [f"{p:.17g}" for p in probs[i]]
                )
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    click.echo(f"classified {labels.shape[0]} rows into {out}")


@main.command()
@click.option("--draws", "draws_path", type=click.Path(exists=True), required=True)
@click.option("--n", type=int, required=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--out", type=click.Path(), required=True)
def predict(draws_path, n, seed, out):
    """Simulate from the posterior predictive distribution."""
    seed = _seed_option(seed)
    try:
        if n < 0:
            raise ConfigError("--n must be >= 0")
        draws = param_ops.load_draws(draws_path)
        rng = stream(seed, PREDICT)
        points, tags = param_ops.posterior_predictive_sample(draws, n, rng)
        _write_points_csv(out, points, cluster=tags)
    except Exception as exc:  # noqa: BLE001
        _fail(exc)
    click.echo(f"simulated {n} rows into {out}")


if __name__ == "__main__":
    main()
