"""Readers for the clustering CLI's artifact files.

This package never recomputes statistics: it is a pure view over the CSV
and JSON artifacts a completed run wrote to disk.
"""

import csv
import json

import numpy as np


class ArtifactError(ValueError):
    """An artifact file is missing, empty or malformed."""


def read_points_csv(path, label_column=None):
    """Read a points table (columns x1..xd, optionally a label column).

    Returns (points, labels-or-None).
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise ArtifactError(f"{path}: empty file")
        cols = [c for c in reader.fieldnames if c.startswith("x")]
        if not cols:
            raise ArtifactError(f"{path}: no coordinate columns (x1, x2, ...)")
        if label_column is not None and label_column not in reader.fieldnames:
            raise ArtifactError(f"{path}: missing column {label_column!r}")
        points = []
        labels = []
        for row in reader:
            try:
                points.append([float(row[c]) for c in cols])
            except (TypeError, ValueError):
                raise ArtifactError(
                    f"{path}:{reader.line_num}: non-numeric coordinates"
                ) from None
            if label_column is not None:
                labels.append(int(float(row[label_column])))
    if not points:
        raise ArtifactError(f"{path}: no data rows")
    pts = np.asarray(points)
    return pts, (np.asarray(labels) if label_column else None)


def read_labels_csv(path, column="cluster"):
    """Read a (row, cluster) table ordered by row index."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or column not in reader.fieldnames:
            raise ArtifactError(f"{path}: missing column {column!r}")
        pairs = []
        for row in reader:
            try:
                pairs.append((int(row["row"]), int(row[column])))
            except (KeyError, TypeError, ValueError):
                raise ArtifactError(
                    f"{path}:{reader.line_num}: malformed label row"
                ) from None
    if not pairs:
        raise ArtifactError(f"{path}: no label rows")
    pairs.sort()
    return np.asarray([label for _, label in pairs])


def read_diagnostics(path):
    """Read one diagnostics.json; errors name the file."""
    try:
        with open(path) as fh:
            diag = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: malformed JSON ({exc})") from exc
    if "config" not in diag or "step_seconds" not in diag:
        raise ArtifactError(f"{path}: not a diagnostics file")
    return diag


def read_metrics(path):
    try:
        with open(path) as fh:
            metrics = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ArtifactError(f"{path}: malformed JSON ({exc})") from exc
    missing = {"accuracy", "ari", "f_measure"} - set(metrics)
    if missing:
        raise ArtifactError(f"{path}: missing metric keys {sorted(missing)}")
    return metrics


def subsample_rows(n, fraction, seed=0):
    """Deterministic row subset used by the scatter plots."""
    if not 0 < fraction <= 1:
        raise ArtifactError(f"sample fraction must be in (0, 1], got {fraction}")
    keep = max(1, int(round(n * fraction)))
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(int(seed))))
    return np.sort(rng.permutation(n)[:keep])
