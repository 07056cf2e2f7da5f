"""Global clustering estimation: pick, among candidate partitions, the
minimizer of the estimated posterior expected variation-of-information
loss, computed from distributed joint counts.

Workers count, for each candidate t' and refined sample t, how many of
their rows fall in each (sample-cluster, candidate-cluster) pair; the
master sums those sparse tables and scores each candidate.  Scores are
offset by a candidate-independent constant (the average sample entropy),
so only differences between candidates are meaningful.
"""

from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ParameterError


def contingency(a, b):
    """Sparse joint counts {(label_a, label_b): n} of two partitions."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise ParameterError("partitions must have equal length")
    pairs, counts = np.unique(np.stack([a, b], axis=1), axis=0, return_counts=True)
    return {
        (int(i), int(j)): int(n) for (i, j), n in zip(pairs, counts)
    }


def label_sizes(labels):
    vals, counts = np.unique(np.asarray(labels), return_counts=True)
    return {int(v): int(n) for v, n in zip(vals, counts)}


def _plogp(counts, n):
    counts = np.asarray(list(counts), dtype=np.float64)
    counts = counts[counts > 0]
    p = counts / n
    return float(np.sum(p * np.log(p)))


def vi_distance(c, c_hat):
    """Variation of information between two partitions of the same rows."""
    c = np.asarray(c)
    c_hat = np.asarray(c_hat)
    if c.shape != c_hat.shape:
        raise ParameterError("partitions must have equal length")
    n = c.shape[0]
    joint = contingency(c, c_hat)
    term_rows = _plogp(label_sizes(c).values(), n)
    term_cols = _plogp(label_sizes(c_hat).values(), n)
    term_joint = _plogp(joint.values(), n)
    return term_rows + term_cols - 2.0 * term_joint


@dataclass
class JointCounts:
    """Counts backing one candidate's score.

    ``n_plus[j]`` is the candidate's cluster-j size; ``n_joint[t][(i, j)]``
    the joint count between refined sample t and the candidate.
    """

    n_plus: Counter = field(default_factory=Counter)
    n_joint: dict = field(default_factory=dict)

    def merge(self, other):
        self.n_plus.update(other.n_plus)
        for t, table in other.n_joint.items():
            self.n_joint.setdefault(t, Counter()).update(table)
        return self

    def validate(self, n_total):
        if sum(self.n_plus.values()) != n_total:
            raise ParameterError("candidate sizes do not sum to N")
        for t, table in self.n_joint.items():
            if sum(table.values()) != n_total:
                raise ParameterError(f"joint counts for sample {t} do not sum to N")
        return self

    @property
    def n_entries(self):
        return len(self.n_plus) + sum(len(t) for t in self.n_joint.values())


def expected_vi_score(counts, n_total, n_samples):
    """Estimated posterior expected VI of one candidate (offset version)."""
    if len(counts.n_joint) != n_samples:
        raise ParameterError(
            f"expected joint tables for {n_samples} samples, "
            f"got {len(counts.n_joint)}"
        )
    first = _plogp(counts.n_plus.values(), n_total)
    second = 0.0
    for table in counts.n_joint.values():
        second += _plogp(table.values(), n_total)
    return first - 2.0 * second / n_samples


def expected_binder_score(counts, n_total, n_samples):
    """Estimated expected Binder loss (offset version), normalized by N^2."""
    sq = lambda table: sum(v * v for v in table.values())
    first = 0.5 * sq(counts.n_plus)
    second = sum(sq(table) for table in counts.n_joint.values()) / n_samples
    return (first - second) / (n_total * n_total)


LOSSES = {"vi": expected_vi_score, "binder": expected_binder_score}


def worker_counts(refined_c, candidate_tags, sample_tags):
    """Per-candidate JointCounts from one worker's refined samples.

    ``refined_c`` maps sample tag -> that worker's refined cluster labels.
    """
    out = {}
    for t_prime in candidate_tags:
        cand = refined_c[t_prime]
        jc = JointCounts()
        jc.n_plus.update(label_sizes(cand))
        for t in sample_tags:
            jc.n_joint[t] = Counter(contingency(refined_c[t], cand))
        out[t_prime] = jc
    return out


def merge_counts(per_worker_counts):
    """Sum per-candidate JointCounts across workers (integer-exact)."""
    merged = {}
    for worker_counts_map in per_worker_counts:
        for t_prime, jc in worker_counts_map.items():
            if t_prime not in merged:
                merged[t_prime] = JointCounts()
            merged[t_prime].merge(jc)
    return merged


def select_candidate(scores):
    """Argmin candidate tag; ties broken toward the smaller tag."""
    if not scores:
        raise ConfigError("no candidate scores to select from")
    best = min(sorted(scores), key=lambda t: scores[t])
    return best


def choose_candidate_tags(sample_tags, n_candidates, rng):
    """Uniform subset of sample tags used as clustering candidates."""
    if n_candidates > len(sample_tags):
        raise ConfigError(
            f"requested {n_candidates} candidates from {len(sample_tags)} samples"
        )
    picked = rng.choice(len(sample_tags), size=n_candidates, replace=False)
    return sorted(sample_tags[i] for i in picked)
