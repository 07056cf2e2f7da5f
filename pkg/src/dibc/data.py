"""Synthetic benchmark generator and CSV ingestion."""

import csv
import math

import numpy as np

from ._rng import stream
from .errors import FileFormatError, ParameterError

# Eight-component planar Gaussian mixture forming four clusters of varying
# shapes (a triangle, two crosses/Ls and one ellipse).
SYNTH_MEANS = np.array(
    [
        [6.0, 1.5],
        [4.0, 6.0],
        [8.0, 6.0],
        [22.5, 1.5],
        [20.0, 8.0],
        [22.0, 31.0],
        [22.0, 31.0],
        [6.5, 29.0],
    ]
)
SYNTH_COVS = np.array(
    [
        [[4.84, 0.0], [0.0, 2.89]],
        [[3.61, 5.05], [5.05, 14.44]],
        [[3.61, -5.05], [-5.05, 14.44]],
        [[12.25, 0.0], [0.0, 3.24]],
        [[3.24, 0.0], [0.0, 12.25]],
        [[14.44, 0.0], [0.0, 2.25]],
        [[2.25, 0.0], [0.0, 17.64]],
        [[2.25, 4.20], [4.20, 16.00]],
    ]
)
SYNTH_CLUSTER_OF_COMPONENT = np.array([1, 1, 1, 2, 2, 3, 3, 4])
SYNTH_CLUSTER_WEIGHTS = np.array([0.25, 0.25, 0.25, 0.25])
SYNTH_SUBCOMPONENT_WEIGHTS = (
    np.array([1 / 3, 1 / 3, 1 / 3]),
    np.array([0.5, 0.5]),
    np.array([0.5, 0.5]),
    np.array([1.0]),
)


def synth_component_weights():
    weights = np.empty(8)
    comp = 0
    for k, sub in enumerate(SYNTH_SUBCOMPONENT_WEIGHTS):
        for w in sub:
            weights[comp] = SYNTH_CLUSTER_WEIGHTS[k] * w
            comp += 1
    return weights


def generate_synthetic(n, seed=0):
    """Draw n points from the benchmark mixture; labels are cluster ids."""
    if n < 1:
        raise ParameterError("n must be >= 1")
    rng = stream(seed, 0)
    weights = synth_component_weights()
    comps = rng.choice(8, size=n, p=weights)
    chols = np.linalg.cholesky(SYNTH_COVS)
    noise = rng.standard_normal((n, 2))
    points = SYNTH_MEANS[comps] + np.einsum("nij,nj->ni", chols[comps], noise)
    labels = SYNTH_CLUSTER_OF_COMPONENT[comps].astype(np.int64)
    return points, labels


def load_csv(path, columns, label_column=None, log_columns=()):
    """Parse a numeric CSV into (points, labels).

    ``columns`` are the feature column names; columns listed in
    ``log_columns`` are log-transformed (values must be positive).  Rows
    with a missing label get -1 (unlabeled: used in fitting, excluded from
    metrics).  Malformed rows raise with their line number.
    """
    log_columns = set(log_columns)
    unknown = log_columns - set(columns)
    if unknown:
        raise ParameterError(f"log_columns not in columns: {sorted(unknown)}")
    points = []
    labels = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise FileFormatError(f"{path}: empty file")
        missing = [c for c in columns if c not in reader.fieldnames]
        if missing:
            raise FileFormatError(f"{path}: missing columns {missing}")
        if label_column is not None and label_column not in reader.fieldnames:
            raise FileFormatError(f"{path}: missing label column {label_column!r}")
        for row in reader:
            line = reader.line_num
            values = []
            for col in columns:
                raw = (row.get(col) or "").strip()
                try:
                    value = float(raw)
                except ValueError:
                    raise FileFormatError(
                        f"{path}:{line}: non-numeric value {raw!r} in column {col!r}"
                    ) from None
                if not math.isfinite(value):
                    raise FileFormatError(
                        f"{path}:{line}: non-finite value in column {col!r}"
                    )
                if col in log_columns:
                    if value <= 0:
                        raise FileFormatError(
                            f"{path}:{line}: non-positive value {value} under "
                            f"log transform in column {col!r}"
                        )
                    value = math.log(value)
                values.append(value)
            points.append(values)
            if label_column is not None:
                raw = (row.get(label_column) or "").strip()
                if raw == "":
                    labels.append(-1)
                else:
                    try:
                        labels.append(int(float(raw)))
                    except ValueError:
                        raise FileFormatError(
                            f"{path}:{line}: non-integer label {raw!r}"
                        ) from None
    if not points:
        raise FileFormatError(f"{path}: no data rows")
    points = np.asarray(points, dtype=np.float64)
    label_arr = np.asarray(labels, dtype=np.int64) if label_column else None
    return points, label_arr
