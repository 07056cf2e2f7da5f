"""Per-worker block conditional Gibbs sampler with data augmentation.

One sweep updates, in order: the cluster weights given the allocation
counts, the cluster allocation of every row, the subcomponent allocation
of every row within its cluster, the subcomponent weights, precisions and
means, and finally the cluster-level random hyperparameters (scaling
factors, precision rates and centers).  Empty clusters and subcomponents
fall back to prior draws automatically; components are never deleted.
"""

import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import updates
from .errors import ConfigError, LocalChainError, NumericalError
from .model import AllocationState, ModelParams, Shard, component_logliks
from .samplers import chol_inv, gumbel_argmax, sample_gig


@dataclass(frozen=True)
class LocalChainConfig:
    """Chain length, burn-in and allocation-recording schedule.

    Post-burn-in iterations with ``(i - burn_in) % thin == 0`` are eligible
    for recording; of those, every ``record_allocations_every``-th is kept.
    The default recording stride keeps (up to) 100 samples.
    """

    n_iters: int = 1000
    burn_in: int = 500
    thin: int = 1
    record_allocations_every: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.burn_in >= self.n_iters:
            raise ConfigError("burn_in must be smaller than n_iters")
        if self.thin < 1:
            raise ConfigError("thin must be >= 1")

    @property
    def n_eligible(self):
        return (self.n_iters - self.burn_in) // self.thin

    @property
    def record_every(self):
        if self.record_allocations_every is not None:
            if self.record_allocations_every < 1:
                raise ConfigError("record_allocations_every must be >= 1")
            return self.record_allocations_every
        return max(1, self.n_eligible // 100)

    @property
    def n_recorded(self):
        return self.n_eligible // self.record_every


@dataclass
class LocalTrace:
    """Recorded allocation samples (with iteration tags) and final params."""

    iterations: list = field(default_factory=list)
    allocation_samples: list = field(default_factory=list)
    last_params: ModelParams | None = None

    def __len__(self):
        return len(self.allocation_samples)


def kmeanspp_seeds(points, n_seeds, rng):
    """k-means++ D^2 seeding; returns seed rows (no Lloyd iterations)."""
    n = points.shape[0]
    seeds = np.empty((min(n_seeds, n), points.shape[1]))
    first = int(rng.integers(n))
    seeds[0] = points[first]
    d2 = np.sum((points - seeds[0]) ** 2, axis=1)
    for j in range(1, seeds.shape[0]):
        total = d2.sum()
        if total <= 0:
            seeds[j:] = points[int(rng.integers(n))]
            break
        probs = d2 / total
        idx = int(rng.choice(n, p=probs))
        seeds[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - seeds[j]) ** 2, axis=1))
    return seeds


def _connectivity_groups(centroids, n_clusters):
    """Group cell centroids by single-linkage, cutting at the largest
    relative jump in merge heights (never more than n_clusters groups).

    The sampler sheds surplus occupied clusters far more easily than it
    merges well-fitted ones, so the cut errs toward more groups: only
    cuts leaving at most n_clusters groups are candidates.
    """
    from scipy.cluster.hierarchy import fcluster, linkage

    n_cells = centroids.shape[0]
    if n_cells <= 2 or n_cells <= n_clusters <= 2:
        return np.arange(1, n_cells + 1)
    link = linkage(centroids, method="single")
    heights = link[:, 2]
    scale = max(float(heights[-1]), 1e-12)
    candidates = []
    for i in range(len(heights) - 1):
        groups_after = n_cells - (i + 1)
        if groups_after > n_clusters:
            continue
        ratio = heights[i + 1] / max(heights[i], 1e-9 * scale)
        candidates.append((groups_after, ratio))
    if not candidates:
        return np.arange(1, n_cells + 1)
    best_ratio = max(r for _, r in candidates)
    # a stuck chain recovers from an extra group but not from a missing
    # one, so near-ties resolve toward the finer cut
    best_groups = max(g for g, r in candidates if r >= 0.7 * best_ratio)
    return fcluster(link, t=max(best_groups, 1), criterion="maxclust")


def init_allocations(shard, n_clusters, n_subcomponents, rng):
    """Initial allocations from K*L-target k-means++ seeding.

    Points go to their nearest of K*L seeds; the seed cells are grouped
    into clusters by single-linkage connectivity of the cell centroids;
    subcomponent labels come from a second k-means++ seeding within each
    cluster.
    """
    pts = shard.points
    n_cells = min(n_clusters * n_subcomponents, shard.n)
    seeds = kmeanspp_seeds(pts, n_cells, rng)
    centroids = seeds
    for _ in range(3):  # a few Lloyd passes stabilize the cell structure
        d2 = np.sum((pts[:, None, :] - centroids[None, :, :]) ** 2, axis=2)
        cell = np.argmin(d2, axis=1)
        centroids = np.vstack(
            [
                pts[cell == j].mean(axis=0) if np.any(cell == j) else centroids[j]
                for j in range(centroids.shape[0])
            ]
        )
    groups = _connectivity_groups(centroids, n_clusters)
    c = groups[cell].astype(np.int32)
    s = np.ones(pts.shape[0], dtype=np.int32)
    for k in np.unique(c):
        members = np.flatnonzero(c == k)
        sub_seeds = kmeanspp_seeds(pts[members], n_subcomponents, rng)
        sub_d2 = np.sum(
            (pts[members][:, None, :] - sub_seeds[None, :, :]) ** 2, axis=2
        )
        s[members] = np.argmin(sub_d2, axis=1) + 1
    return AllocationState(c, s)


def init_params(shard, alloc, hp, n_clusters, n_subcomponents):
    """Moment-based starting values given initial allocations."""
    k, ell, d = n_clusters, n_subcomponents, shard.dim
    counts, sums, outers = cell_moments(shard.points, alloc, k, ell)
    data_cov = np.cov(shard.points, rowvar=False, ddof=1).reshape(d, d)
    cluster_counts = counts.sum(axis=1)
    eta = (cluster_counts + 1.0) / (cluster_counts + 1.0).sum()
    omega = (counts + 1.0) / (counts + 1.0).sum(axis=1, keepdims=True)
    mu = np.empty((k, ell, d))
    sigma = np.empty((k, ell, d, d))
    b0 = np.empty((k, d))
    shard_mean = shard.points.mean(axis=0)
    for kk in range(k):
        nk = cluster_counts[kk]
        b0[kk] = sums[kk].sum(axis=0) / nk if nk > 0 else shard_mean
        for ll in range(ell):
            n = counts[kk, ll]
            if n > 0:
                m = sums[kk, ll] / n
                cov = outers[kk, ll] / n - np.outer(m, m)
                cov = 0.5 * (cov + cov.T) + 1e-6 * np.trace(data_cov) / d * np.eye(d)
                mu[kk, ll] = m
                sigma[kk, ll] = cov
            else:
                mu[kk, ll] = b0[kk]
                sigma[kk, ll] = data_cov
    c0_rate = hp.g0 * chol_inv(hp.G0)  # prior mean of C0k is g0 G0^{-1}
    return ModelParams(
        eta=eta,
        omega=omega,
        mu=mu,
        sigma=sigma,
        b0=b0,
        C0=np.tile(c0_rate, (k, 1, 1)),
        lam=np.ones((k, d)),
    )


def classify_rows(points, params, rng):
    """Draw (cluster, subcomponent) labels for rows under fixed parameters."""
    cell_ll = component_logliks(points, params)
    with np.errstate(divide="ignore"):
        log_omega = np.log(params.omega)
        log_eta = np.log(params.eta)
    cluster_scores = (
        logsumexp(cell_ll + log_omega[None, :, :], axis=2) + log_eta[None, :]
    )
    c = gumbel_argmax(cluster_scores, rng, axis=1).astype(np.int32) + 1
    sub_scores = cell_ll[np.arange(points.shape[0]), c - 1, :] + log_omega[c - 1, :]
    s = gumbel_argmax(sub_scores, rng, axis=1).astype(np.int32) + 1
    return AllocationState(c, s)


def allocation_log_score(points, params, alloc, hp):
    """Complete-data log score of a chain state.

    Sum of the per-row log likelihood at the state's parameters plus the
    collapsed Dirichlet-multinomial mass of the cluster and subcomponent
    allocations.  The collapsed weight terms make states with fewer
    occupied clusters score higher unless the likelihood pays for the
    extra structure, so the score ranks competing pilot states the way
    the posterior does without any dependence on drawn weights.
    """
    from scipy.special import gammaln

    k, ell = params.omega.shape
    cell_ll = component_logliks(points, params)
    rows = np.arange(points.shape[0])
    loglik = float(np.sum(cell_ll[rows, alloc.c - 1, alloc.s - 1]))
    n_k = np.bincount(alloc.c - 1, minlength=k)
    score = loglik + float(
        gammaln(k * hp.e0)
        - gammaln(points.shape[0] + k * hp.e0)
        + np.sum(gammaln(n_k + hp.e0) - gammaln(hp.e0))
    )
    for kk in range(k):
        members = alloc.c == kk + 1
        if not np.any(members):
            continue
        n_kl = np.bincount(alloc.s[members] - 1, minlength=ell)
        score += float(
            gammaln(ell * hp.d0)
            - gammaln(members.sum() + ell * hp.d0)
            + np.sum(gammaln(n_kl + hp.d0) - gammaln(hp.d0))
        )
    return score


WARM_START_STAGES = ((500, 400), (2000, 250))
WARM_START_RESTARTS = 4


def warm_start(shard, hp, n_clusters, n_subcomponents, rng,
               stages=WARM_START_STAGES, n_restarts=WARM_START_RESTARTS):
    """Coarse-to-fine warm start for the local chain.

    Short pilot chains on growing subsamples let surplus clusters merge
    while the per-cluster point counts are small (the full-scale sampler
    crosses those barriers far too slowly); each stage promotes the fitted
    parameters and classifies the next subsample under them.  The first
    stage is restarted a few times and the best state kept by
    :func:`allocation_log_score`.  Returns the initial (alloc, params)
    for the full shard.
    """
    pts = shard.points
    perm = rng.permutation(shard.n)
    params = None
    first = True
    for n_sub, sweeps in stages:
        if n_sub >= shard.n:
            break
        sub = Shard(worker_id=shard.worker_id, points=pts[perm[:n_sub]])
        if first:
            first = False
            best = None
            for seed in rng.integers(2**63, size=n_restarts):
                pilot_rng = np.random.default_rng(int(seed))
                alloc = init_allocations(sub, n_clusters, n_subcomponents, pilot_rng)
                trial = init_params(sub, alloc, hp, n_clusters, n_subcomponents)
                for _ in range(sweeps):
                    trial, alloc = gibbs_sweep(sub, trial, alloc, hp, pilot_rng)
                score = allocation_log_score(sub.points, trial, alloc, hp)
                if best is None or score > best[0]:
                    best = (score, trial)
            params = best[1]
        else:
            alloc = classify_rows(sub.points, params, rng)
            for _ in range(sweeps):
                params, alloc = gibbs_sweep(sub, params, alloc, hp, rng)
    if params is None:
        alloc = init_allocations(shard, n_clusters, n_subcomponents, rng)
        return alloc, init_params(shard, alloc, hp, n_clusters, n_subcomponents)
    return classify_rows(pts, params, rng), params


def cell_moments(points, alloc, n_clusters, n_subcomponents):
    """Counts, data sums and outer-product sums per (cluster, subcomponent)."""
    n, d = points.shape
    cells = n_clusters * n_subcomponents
    cell_of = (alloc.c.astype(np.int64) - 1) * n_subcomponents + (alloc.s - 1)
    counts = np.bincount(cell_of, minlength=cells).reshape(
        n_clusters, n_subcomponents
    )
    sums = np.empty((cells, d))
    for j in range(d):
        sums[:, j] = np.bincount(cell_of, weights=points[:, j], minlength=cells)
    outers = np.empty((cells, d, d))
    for i in range(d):
        for j in range(i, d):
            col = np.bincount(
                cell_of, weights=points[:, i] * points[:, j], minlength=cells
            )
            outers[:, i, j] = col
            outers[:, j, i] = col
    return (
        counts,
        sums.reshape(n_clusters, n_subcomponents, d),
        outers.reshape(n_clusters, n_subcomponents, d, d),
    )


def gibbs_sweep(shard, params, alloc, hp, rng, capture=None):
    """One full sweep of the block conditional sampler.

    Returns a new (params, alloc) pair; the inputs are not mutated.  When
    ``capture`` is a dict it receives the parameters of every conditional
    drawn during the sweep (used by correctness tests).
    """
    pts = shard.points
    k, ell, d = params.mu.shape

    # cluster weights given current allocation counts
    cluster_counts = np.bincount(alloc.c - 1, minlength=k)
    alpha = updates.eta_conditional(cluster_counts, hp)
    eta = updates.draw_dirichlet(alpha, rng)
    if capture is not None:
        capture["eta_alpha"] = alpha

    # cluster classification: marginalize subcomponents within each cluster
    cell_ll = component_logliks(pts, params)
    with np.errstate(divide="ignore"):
        log_omega = np.log(params.omega)
        log_eta = np.log(eta)
    cluster_ll = logsumexp(cell_ll + log_omega[None, :, :], axis=2)
    cluster_scores = cluster_ll + log_eta[None, :]
    if capture is not None:
        capture["cluster_probs"] = np.exp(
            cluster_scores - logsumexp(cluster_scores, axis=1, keepdims=True)
        )
    c = gumbel_argmax(cluster_scores, rng, axis=1).astype(np.int32) + 1

    # subcomponent classification within the newly drawn clusters
    sub_scores = cell_ll[np.arange(pts.shape[0]), c - 1, :] + log_omega[c - 1, :]
    if capture is not None:
        capture["sub_probs"] = np.exp(
            sub_scores - logsumexp(sub_scores, axis=1, keepdims=True)
        )
    s = gumbel_argmax(sub_scores, rng, axis=1).astype(np.int32) + 1
    new_alloc = AllocationState(c, s)

    counts, sums, outers = cell_moments(pts, new_alloc, k, ell)
    omega = np.empty_like(params.omega)
    mu = np.empty_like(params.mu)
    sigma = np.empty_like(params.sigma)
    sigma_inv = np.empty_like(params.sigma)
    b0 = params.b0.copy()
    c0 = params.C0.copy()
    lam = params.lam.copy()
    b0_prior_inv = chol_inv(hp.B0)
    m0_prec = chol_inv(hp.M0)

    for kk in range(k):
        d_alpha = updates.omega_conditional(counts[kk], hp)
        omega[kk] = updates.draw_dirichlet(d_alpha, rng)
        if capture is not None:
            capture.setdefault("omega_cond", {})[kk + 1] = d_alpha
        btilde_inv = updates.btilde_inverse(lam[kk], hp, b0_prior_inv)
        for ll in range(ell):
            try:
                df, rate = updates.sigma_inv_conditional(
                    counts[kk, ll], sums[kk, ll], outers[kk, ll],
                    params.mu[kk, ll], c0[kk], hp,
                )
                sigma_inv[kk, ll] = updates.draw_wishart_rate(df, rate, rng)
                sigma[kk, ll] = chol_inv(sigma_inv[kk, ll])
                mean, cov = updates.mu_conditional(
                    counts[kk, ll], sums[kk, ll], sigma_inv[kk, ll],
                    b0[kk], btilde_inv,
                )
                mu[kk, ll] = updates.draw_mvn(mean, cov, rng)
            except NumericalError as err:
                raise err.with_context(cluster=kk + 1, subcomponent=ll + 1)
            if capture is not None:
                capture.setdefault("sigma_cond", {})[(kk + 1, ll + 1)] = (df, rate)
                capture.setdefault("sigma_inv_draw", {})[(kk + 1, ll + 1)] = (
                    sigma_inv[kk, ll].copy()
                )
                capture.setdefault("mu_cond", {})[(kk + 1, ll + 1)] = (mean, cov)

        try:
            p_gig, a_gig, b_gig = updates.lambda_conditional(mu[kk], b0[kk], hp)
            lam[kk] = np.array([sample_gig(p_gig, a_gig, bj, rng) for bj in b_gig])
            df_c, rate_c = updates.c0_conditional(sigma_inv[kk], hp)
            c0[kk] = updates.draw_wishart_rate(df_c, rate_c, rng)
            btilde_inv = updates.btilde_inverse(lam[kk], hp, b0_prior_inv)
            mean_b, cov_b = updates.b0_conditional(mu[kk], btilde_inv, hp, m0_prec)
            b0[kk] = updates.draw_mvn(mean_b, cov_b, rng)
        except NumericalError as err:
            raise err.with_context(cluster=kk + 1)
        if capture is not None:
            capture.setdefault("lambda_cond", {})[kk + 1] = (p_gig, a_gig, b_gig)
            capture.setdefault("c0_cond", {})[kk + 1] = (df_c, rate_c)
            capture.setdefault("b0_cond", {})[kk + 1] = (mean_b, cov_b)

    new_params = ModelParams(
        eta=eta, omega=omega, mu=mu, sigma=sigma, b0=b0, C0=c0, lam=lam
    )
    return new_params, new_alloc


def run_local_chain(shard, hp, cfg, n_clusters, n_subcomponents, rng=None):
    """Run one local chain and record post-burn-in allocation samples."""
    from ._rng import worker_stream

    if rng is None:
        rng = worker_stream(cfg.seed, shard.worker_id)
    if shard.n < n_clusters:
        warnings.warn(
            f"shard {shard.worker_id} has fewer rows ({shard.n}) than "
            f"clusters ({n_clusters})",
            stacklevel=2,
        )
    alloc, params = warm_start(shard, hp, n_clusters, n_subcomponents, rng)
    trace = LocalTrace()
    record_every = cfg.record_every
    eligible = 0
    for it in range(1, cfg.n_iters + 1):
        try:
            params, alloc = gibbs_sweep(shard, params, alloc, hp, rng)
        except NumericalError as err:
            err.with_context(iteration=it, worker=shard.worker_id)
            raise LocalChainError(
                f"sweep {it} failed on worker {shard.worker_id}: {err}",
                last_trace=trace,
                iteration=it,
            ) from err
        if it > cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
            eligible += 1
            if eligible % record_every == 0:
                trace.iterations.append(it)
                trace.allocation_samples.append(alloc.copy())
    trace.last_params = params
    return trace
