"""Figure renderers over run artifacts: cluster scatters, accuracy-delta
violins, metric-vs-workers curves, per-step timing bars and posterior
predictive scatters."""

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

from .io import (
    ArtifactError,
    read_diagnostics,
    read_labels_csv,
    read_metrics,
    read_points_csv,
    subsample_rows,
)

STEP_ORDER = ("local", "refine", "estimate", "params")


def plot_clusters(points_path, labels_path=None, label_column=None,
                  sample_frac=1.0, seed=0, out="clusters.png", title=None):
    """Scatter of (optionally subsampled) points colored by cluster label."""
    points, inline = read_points_csv(points_path, label_column=label_column)
    if labels_path is not None:
        labels = read_labels_csv(labels_path)
        if labels.shape[0] != points.shape[0]:
            raise ArtifactError(
                f"{labels_path}: {labels.shape[0]} labels for "
                f"{points.shape[0]} points"
            )
    elif inline is not None:
        labels = inline
    else:
        labels = np.ones(points.shape[0], dtype=int)
    rows = subsample_rows(points.shape[0], sample_frac, seed)
    pts = points[rows]
    lbl = labels[rows]
    fig, ax = plt.subplots(figsize=(6, 5))
    for value in np.unique(lbl):
        mask = lbl == value
        ax.scatter(pts[mask, 0], pts[mask, 1], s=6, label=f"cluster {value}")
    ax.set_xlabel("x1")
    ax.set_ylabel("x2")
    ax.legend(markerscale=2, fontsize=8)
    if title:
        ax.set_title(title)
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_predictive(points_path, out="predictive.png", sample_frac=1.0, seed=0):
    """Posterior predictive scatter (points carry a cluster column)."""
    return plot_clusters(
        points_path, label_column="cluster", sample_frac=sample_frac,
        seed=seed, out=out, title="posterior predictive draws",
    )


def plot_accuracy_delta(diagnostics_paths, out="accuracy_delta.png"):
    """Violin of per-worker accuracy change through refinement, one violin
    per diagnostics file."""
    series = []
    names = []
    for path in diagnostics_paths:
        diag = read_diagnostics(path)
        per_worker = diag.get("per_worker_accuracy")
        if not per_worker:
            raise ArtifactError(
                f"{path}: no per-worker accuracy (run with labeled data)"
            )
        deltas = [
            rec["after"] - rec["before"] for rec in per_worker.values()
        ]
        series.append(deltas)
        names.append(f"R={diag['config']['n_workers']}")
    fig, ax = plt.subplots(figsize=(1.5 + 1.2 * len(series), 4))
    ax.violinplot(series, showmedians=True)
    ax.axhline(0.0, color="grey", lw=0.8, ls=":")
    ax.set_xticks(range(1, len(series) + 1), names)
    ax.set_ylabel("accuracy after - before refinement")
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out


def _workers_of(diag):
    return int(diag["config"]["n_workers"])


def plot_metrics_vs_workers(run_pairs, out="metrics_vs_workers.png"):
    """Metric curves against the worker count.

    ``run_pairs`` is a list of (diagnostics.json, metrics.json) paths, one
    pair per completed run.
    """
    rows = []
    for diag_path, metrics_path in run_pairs:
        diag = read_diagnostics(diag_path)
        metrics = read_metrics(metrics_path)
        rows.append((_workers_of(diag), metrics))
    if not rows:
        raise ArtifactError("no runs supplied")
    rows.sort(key=lambda pair: pair[0])
    workers = [r for r, _ in rows]
    fig, ax = plt.subplots(figsize=(6, 4))
    for key, style in (("accuracy", "o-"), ("ari", "s-"), ("f_measure", "^-")):
        ax.plot(workers, [m[key] for _, m in rows], style, label=key)
    ax.set_xlabel("workers")
    ax.set_ylabel("score")
    ax.set_ylim(0, 1.05)
    ax.legend()
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out


def plot_timings(diagnostics_paths, out="timings.png"):
    """Per-step wall time bars against the worker count."""
    diags = [read_diagnostics(p) for p in diagnostics_paths]
    if not diags:
        raise ArtifactError("no diagnostics supplied")
    diags.sort(key=_workers_of)
    workers = [_workers_of(d) for d in diags]
    fig, axes = plt.subplots(1, len(STEP_ORDER) + 1, figsize=(14, 3.2), sharex=True)
    positions = np.arange(len(diags))
    for ax, step in zip(axes, STEP_ORDER):
        ax.bar(positions, [d["step_seconds"].get(step, 0.0) for d in diags])
        ax.set_title(step, fontsize=9)
        ax.set_xticks(positions, [str(w) for w in workers])
        ax.set_xlabel("workers")
    totals = [sum(d["step_seconds"].values()) for d in diags]
    axes[-1].bar(positions, totals, color="darkred")
    axes[-1].set_title("total", fontsize=9)
    axes[-1].set_xticks(positions, [str(w) for w in workers])
    axes[-1].set_xlabel("workers")
    axes[0].set_ylabel("seconds")
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out
