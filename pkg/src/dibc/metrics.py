"""Clustering validation metrics with optimal label mapping.

Accuracy is computed on optimally mapped labels (rectangular assignment
maximizing matches; surplus predicted clusters become "unknown1",
"unknown2", ...).  Precision, recall, F-measure and the adjusted Rand
index are pair-based: a true positive is a pair of rows co-clustered in
both partitions, which makes them invariant to label permutations.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import ParameterError


@dataclass
class MetricsReport:
    accuracy: float
    ari: float
    f_measure: float
    precision: float
    recall: float
    label_map: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "accuracy": self.accuracy,
            "ari": self.ari,
            "f_measure": self.f_measure,
            "precision": self.precision,
            "recall": self.recall,
            "label_map": {str(k): str(v) for k, v in self.label_map.items()},
        }


def contingency_matrix(truth, pred):
    t_vals, t_idx = np.unique(truth, return_inverse=True)
    p_vals, p_idx = np.unique(pred, return_inverse=True)
    table = np.zeros((t_vals.size, p_vals.size), dtype=np.int64)
    np.add.at(table, (t_idx, p_idx), 1)
    return t_vals, p_vals, table


def optimal_label_map(truth, pred):
    """Mapping of predicted labels that maximizes matches with the truth.

    Returns (label_map, mapped) where label_map sends each predicted label
    to a true label or "unknown<i>" and ``mapped`` is the predicted vector
    with matched labels replaced (unknowns get fresh labels that never
    equal a true one).
    """
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.size == 0:
        raise ParameterError("cannot map labels of empty partitions")
    t_vals, p_vals, table = contingency_matrix(truth, pred)
    rows, cols = linear_sum_assignment(-table)
    label_map = {}
    for i, j in zip(rows, cols):
        label_map[p_vals[j]] = t_vals[i]
    unknown = 0
    for j, p in enumerate(p_vals):
        if p not in label_map:
            unknown += 1
            label_map[p] = f"unknown{unknown}"
    # unknowns get labels outside the truth's range
    spare = int(np.max(t_vals)) + 1
    numeric = {}
    for p, target in label_map.items():
        if isinstance(target, str):
            numeric[p] = spare
            spare += 1
        else:
            numeric[p] = int(target)
    mapped = np.array([numeric[p] for p in pred], dtype=np.int64)
    return label_map, mapped


def pair_confusion(truth, pred):
    """(TP, FP, FN, TN) over all n(n-1)/2 row pairs, from the contingency."""
    _, _, table = contingency_matrix(truth, pred)
    n = int(table.sum())
    comb2 = lambda x: x * (x - 1) // 2
    tp = int(np.sum(comb2(table)))
    row_pairs = int(np.sum(comb2(table.sum(axis=1))))
    col_pairs = int(np.sum(comb2(table.sum(axis=0))))
    fp = col_pairs - tp  # co-clustered in pred only
    fn = row_pairs - tp  # co-clustered in truth only
    tn = comb2(n) - tp - fp - fn
    return tp, fp, fn, tn


def adjusted_rand_index(truth, pred):
    tp, fp, fn, tn = pair_confusion(truth, pred)
    total = tp + fp + fn + tn
    if total == 0:
        return 1.0
    expected = (tp + fn) * (tp + fp) / total
    max_index = 0.5 * ((tp + fn) + (tp + fp))
    if max_index == expected:
        return 1.0
    return (tp - expected) / (max_index - expected)


def compute_metrics(truth, pred):
    """Accuracy (on optimally mapped labels), pair-based precision/recall/F
    and adjusted Rand index."""
    truth = np.asarray(truth)
    pred = np.asarray(pred)
    if truth.shape != pred.shape:
        raise ParameterError("label vectors must have equal length")
    if truth.size == 0:
        raise ParameterError("cannot score empty partitions")
    label_map, mapped = optimal_label_map(truth, pred)
    accuracy = float(np.mean(mapped == truth))
    tp, fp, fn, _ = pair_confusion(truth, pred)
    precision = tp / (tp + fp) if tp + fp > 0 else 1.0
    recall = tp / (tp + fn) if tp + fn > 0 else 1.0
    if precision + recall > 0:
        f_measure = 2.0 * precision * recall / (precision + recall)
    else:
        f_measure = 0.0
    return MetricsReport(
        accuracy=accuracy,
        ari=float(adjusted_rand_index(truth, pred)),
        f_measure=float(f_measure),
        precision=float(precision),
        recall=float(recall),
        label_map=label_map,
    )
