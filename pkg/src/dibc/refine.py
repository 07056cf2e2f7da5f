"""Global cluster refinement: align items across workers via a collapsed
Gibbs pass over a reference-anchored finite Gaussian mixture.

An *item* is a nonempty subcomponent of one worker's allocation sample,
summarized by (count, mean, second moment).  One randomly chosen worker is
the reference; its items define the groups.  A single collapsed Gibbs pass
reassigns every item to a group using only those summaries plus, for the
likelihood term, per-row t densities evaluated on the item's owning worker.
Mapped back through the reference dictionary, group moves merge and split
clusters across workers.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import gammaln, logsumexp

from .errors import ParameterError
from .samplers import log_categorical_sample, mvt_logpdf, spd_cholesky


@dataclass
class ItemStats:
    """Summary of one nonempty subcomponent.

    ``within_index`` is L*(k-1)+l for cluster k, subcomponent l.  The
    second moment is the *mean* outer product sum(y y')/count.
    ``member_indices`` stays on the owning worker and is None on
    master-side copies.
    """

    worker: int
    within_index: int
    count: int
    mean: np.ndarray
    second_moment: np.ndarray
    member_indices: np.ndarray | None = None

    def summary(self):
        return ItemStats(
            self.worker, self.within_index, self.count,
            self.mean, self.second_moment, None,
        )


@dataclass(frozen=True)
class RefinementPrior:
    """Conjugate prior of the grouping mixture: Dirichlet concentration
    alpha0, inverse-Wishart df nu0 and scale S0 (group means are centered
    at zero with covariance equal to the group covariance)."""

    alpha0: float
    nu0: float
    S0: np.ndarray

    def validate(self):
        d = self.S0.shape[0]
        if self.alpha0 <= 0:
            raise ParameterError("alpha0 must be > 0")
        if self.nu0 <= d - 1:
            raise ParameterError(f"nu0 must exceed d-1={d - 1}")
        spd_cholesky(self.S0)
        return self


def default_refinement_prior(data_cov):
    data_cov = np.asarray(data_cov, dtype=np.float64)
    return RefinementPrior(alpha0=1.0, nu0=data_cov.shape[0] + 2.0, S0=data_cov)


@dataclass
class GroupState:
    """Group labels of all items plus the reference dictionary.

    ``z[b]`` is the 1-based group of item b in sweep order (reference
    items first, then the rest sorted by (worker, within_index)).
    ``ref_items`` maps group h (1..H) to the reference item's
    within_index, ascending; ``ref_group_of`` is its inverse.
    """

    z: np.ndarray
    reference: int
    ref_items: np.ndarray

    @property
    def n_groups(self):
        return self.ref_items.shape[0]

    def group_of_ref_item(self, within_index):
        return int(np.searchsorted(self.ref_items, within_index)) + 1

    def updated_label(self, b):
        """Reference within_index the item is aligned to (z-tilde)."""
        return int(self.ref_items[self.z[b] - 1])


def extract_items(alloc, shard, n_clusters, n_subcomponents):
    """One ItemStats per nonempty (cluster, subcomponent) of the shard."""
    pts = shard.points
    n, d = pts.shape
    cells = n_clusters * n_subcomponents
    cell_of = (alloc.c.astype(np.int64) - 1) * n_subcomponents + (alloc.s - 1)
    counts = np.bincount(cell_of, minlength=cells)
    items = []
    order = np.argsort(cell_of, kind="stable")
    boundaries = np.searchsorted(cell_of[order], np.arange(cells))
    for cell in np.flatnonzero(counts):
        members = order[boundaries[cell]: boundaries[cell] + counts[cell]]
        rows = pts[members]
        mean = rows.mean(axis=0)
        second = rows.T @ rows / counts[cell]
        items.append(
            ItemStats(
                worker=shard.worker_id,
                within_index=int(cell) + 1,
                count=int(counts[cell]),
                mean=mean,
                second_moment=0.5 * (second + second.T),
                member_indices=members.astype(np.int64),
            )
        )
    return items


def order_items(items_by_worker, reference):
    """Canonical sweep order: reference items first, then by worker id."""
    ordered = sorted(items_by_worker[reference], key=lambda it: it.within_index)
    for worker in sorted(items_by_worker):
        if worker == reference:
            continue
        ordered.extend(
            sorted(items_by_worker[worker], key=lambda it: it.within_index)
        )
    return ordered


def init_groups(items, reference):
    """Assign every item to the group of its nearest reference item.

    ``items`` must already be in canonical sweep order.  Ties go to the
    smaller reference within_index.
    """
    ref_means = [it.mean for it in items if it.worker == reference]
    ref_idx = np.array(
        [it.within_index for it in items if it.worker == reference], dtype=np.int64
    )
    if ref_idx.size == 0:
        raise ParameterError(f"reference worker {reference} has no items")
    ref_mat = np.vstack(ref_means)
    z = np.empty(len(items), dtype=np.int32)
    for b, item in enumerate(items):
        d2 = np.sum((ref_mat - item.mean) ** 2, axis=1)
        z[b] = int(np.argmin(d2)) + 1  # argmin takes the first (smallest j) on ties
    return GroupState(z=z, reference=reference, ref_items=ref_idx)


class GroupAccumulator:
    """Running (size, weighted mean, weighted second moment) per group."""

    def __init__(self, items, state):
        d = items[0].mean.shape[0]
        h = state.n_groups
        self.counts = np.zeros(h, dtype=np.int64)
        self.mean_sums = np.zeros((h, d))
        self.moment_sums = np.zeros((h, d, d))
        for b, item in enumerate(items):
            self.add(state.z[b], item)

    def add(self, h, item):
        i = h - 1
        self.counts[i] += item.count
        self.mean_sums[i] += item.count * item.mean
        self.moment_sums[i] += item.count * item.second_moment

    def remove(self, h, item):
        i = h - 1
        self.counts[i] -= item.count
        self.mean_sums[i] -= item.count * item.mean
        self.moment_sums[i] -= item.count * item.second_moment

    def excluding(self, item, current_h):
        """(size, mean, second moment) of every group with the item removed
        from its current group."""
        counts = self.counts.copy()
        mean_sums = self.mean_sums.copy()
        moment_sums = self.moment_sums.copy()
        i = current_h - 1
        counts[i] -= item.count
        mean_sums[i] -= item.count * item.mean
        moment_sums[i] -= item.count * item.second_moment
        with np.errstate(invalid="ignore", divide="ignore"):
            means = np.where(
                counts[:, None] > 0, mean_sums / counts[:, None], 0.0
            )
            moments = np.where(
                counts[:, None, None] > 0,
                moment_sums / counts[:, None, None],
                0.0,
            )
        return counts, means, moments


def group_prior_logprob(item_count, group_size_excl, alpha0, n_groups, n_total):
    """Log prior probability of assigning an item to a group.

    ``group_size_excl`` is the group's observation count with the item
    removed; ``n_total`` the observation count over all items.
    """
    if item_count == 0:
        return 0.0
    return float(
        gammaln(n_total + n_groups * alpha0 - item_count)
        + gammaln(group_size_excl + item_count + alpha0)
        - gammaln(n_total + n_groups * alpha0)
        - gammaln(group_size_excl + alpha0)
    )


def posterior_predictive_params(size, mean, second_moment, prior):
    """Student-t parameters (loc, scale, df) of a group's predictive density.

    Empty groups reduce to the prior predictive (kappa=1, m=0, S=S0).
    """
    d = prior.S0.shape[0]
    kappa = 1.0 + size
    nu = prior.nu0 + size
    loc = size * mean / kappa
    s_mat = prior.S0 + size * second_moment - kappa * np.outer(loc, loc)
    df = nu - d + 1.0
    scale = (kappa + 1.0) / (kappa * df) * s_mat
    return loc, 0.5 * (scale + scale.T), df


def group_marginal_loglik(rows, size, mean, second_moment, prior):
    """Joint log density of an item's rows under one group's predictive t."""
    loc, scale, df = posterior_predictive_params(size, mean, second_moment, prior)
    return float(np.sum(mvt_logpdf(rows, loc, scale, df)))


def loglik_from_stats(rows, counts, means, moments, prior):
    """Likelihood term against every group; runs on the owning worker."""
    h = counts.shape[0]
    out = np.empty(h)
    for i in range(h):
        out[i] = group_marginal_loglik(
            rows, float(counts[i]), means[i], moments[i], prior
        )
    return out


def refine_sweep(items, state, prior, loglik_fn, rng, capture=None):
    """One collapsed Gibbs pass over all items in canonical order.

    ``loglik_fn(b, counts, means, moments)`` must return the likelihood
    term of item b against every group; the runtime routes it to the
    item's owning worker.  Returns the updated state.  Group draws are
    strictly sequential; only the per-group likelihood evaluations for the
    current item may run in parallel on the owner.
    """
    n_total = int(sum(item.count for item in items))
    accum = GroupAccumulator(items, state)
    h_count = state.n_groups
    z = state.z.copy()
    for b, item in enumerate(items):
        counts, means, moments = accum.excluding(item, z[b])
        logprior = np.array(
            [
                group_prior_logprob(
                    item.count, int(counts[i]), prior.alpha0, h_count, n_total
                )
                for i in range(h_count)
            ]
        )
        loglik = np.asarray(loglik_fn(b, counts, means, moments))
        scores = logprior + loglik
        new_h = log_categorical_sample(scores, rng) + 1
        if capture is not None:
            capture.append(
                {"b": b, "log_probs": scores - logsumexp(scores), "drawn": new_h}
            )
        if new_h != z[b]:
            accum.remove(z[b], item)
            accum.add(new_h, item)
        z[b] = new_h
    return GroupState(z=z, reference=state.reference, ref_items=state.ref_items)


def apply_labels(z_tilde_by_within, alloc, n_subcomponents):
    """Map updated item labels back to per-row cluster/subcomponent labels.

    ``z_tilde_by_within`` maps a shard's item within_index to the reference
    within_index it was aligned to.  Cluster label is ceil(z~/L); the
    subcomponent label is the natural inverse ((z~-1) mod L) + 1.
    """
    from .model import AllocationState

    ell = n_subcomponents
    c_new = np.empty_like(alloc.c)
    s_new = np.empty_like(alloc.s)
    cell_of = (alloc.c.astype(np.int64) - 1) * ell + alloc.s  # = within_index
    for within, z_tilde in z_tilde_by_within.items():
        rows = cell_of == within
        c_new[rows] = (z_tilde + ell - 1) // ell
        s_new[rows] = (z_tilde - 1) % ell + 1
    return AllocationState(c_new, s_new)
