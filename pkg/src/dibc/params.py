"""Master-side parameter sampling conditional on the chosen global
clustering, plus posterior predictive simulation and Bayes classification.

Once cluster and subcomponent assignments are frozen, the per-cell counts,
data sums and outer-product sums are fixed, so the chain runs entirely on
the master from one round of aggregated statistics.  Only clusters that
are nonempty under the chosen estimate are retained, which also pins the
cluster labels of the parameter draws.
"""

import json
import struct
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import updates
from ._rng import PARAMS, stream
from .errors import FileFormatError, NumericalError, ParameterError
from .model import ModelParams
from .samplers import chol_inv, gaussian_logpdf, sample_gig, spd_cholesky


@dataclass
class FixedSuffStats:
    """Per-(cluster, subcomponent) counts, data sums and outer sums."""

    counts: np.ndarray  # (k, L) int64
    sums: np.ndarray    # (k, L, d)
    outers: np.ndarray  # (k, L, d, d)

    @property
    def n_clusters(self):
        return self.counts.shape[0]

    @property
    def n_subcomponents(self):
        return self.counts.shape[1]

    @property
    def dim(self):
        return self.sums.shape[2]

    @property
    def cluster_counts(self):
        return self.counts.sum(axis=1)

    @property
    def n_total(self):
        return int(self.counts.sum())

    def validate(self, n_total=None):
        if n_total is not None and self.n_total != n_total:
            raise ParameterError("cell counts do not sum to N")
        return self


def merge_suff_stats(per_worker):
    """Exact sum of per-worker tables, in worker-id order.

    Summing in a canonical order makes the result independent of upload
    arrival order.
    """
    items = sorted(per_worker.items())
    counts = sum(s.counts for _, s in items)
    sums = sum(s.sums for _, s in items)
    outers = sum(s.outers for _, s in items)
    return FixedSuffStats(counts=counts, sums=sums, outers=outers)


def suff_stats_from_alloc(points, alloc, n_clusters, n_subcomponents):
    from .local import cell_moments

    counts, sums, outers = cell_moments(points, alloc, n_clusters, n_subcomponents)
    return FixedSuffStats(counts=counts.astype(np.int64), sums=sums, outers=outers)


@dataclass
class PosteriorDraws:
    """Stored post-burn-in parameter draws, restricted to retained clusters."""

    eta: np.ndarray    # (T, k)
    omega: np.ndarray  # (T, k, L)
    mu: np.ndarray     # (T, k, L, d)
    sigma: np.ndarray  # (T, k, L, d, d)
    b0: np.ndarray     # (T, k, d)
    C0: np.ndarray     # (T, k, d, d)
    lam: np.ndarray    # (T, k, d)
    seed: int = 0
    cell_counts: np.ndarray | None = None

    @property
    def n_draws(self):
        return self.eta.shape[0]

    @property
    def n_clusters(self):
        return self.eta.shape[1]

    @property
    def n_subcomponents(self):
        return self.omega.shape[2]

    @property
    def dim(self):
        return self.mu.shape[3]


def run_param_chain(stats, hp, n_iters=2000, burn_in=500, rng=None, seed=0):
    """Gibbs chain over model parameters with allocations frozen.

    Follows the master-side listing: the scaling-factor update uses the
    previous iteration's means and centers, every other conditional uses
    the current state.
    """
    if rng is None:
        rng = stream(seed, PARAMS)
    if burn_in >= n_iters:
        raise ParameterError("burn_in must be smaller than n_iters")
    k, ell, d = stats.n_clusters, stats.n_subcomponents, stats.dim
    counts = stats.counts.astype(np.float64)
    cluster_counts = stats.cluster_counts.astype(np.float64)

    b0_prior_inv = chol_inv(hp.B0)
    m0_prec = chol_inv(hp.M0)
    c0_prior_rate = hp.g0 * chol_inv(hp.G0)

    # neutral starting state: cell means where occupied, prior centers else
    mu = np.empty((k, ell, d))
    b0 = np.tile(hp.m0, (k, 1))
    for kk in range(k):
        nk = cluster_counts[kk]
        if nk > 0:
            b0[kk] = stats.sums[kk].sum(axis=0) / nk
        for ll in range(ell):
            n = counts[kk, ll]
            mu[kk, ll] = stats.sums[kk, ll] / n if n > 0 else b0[kk]
    lam = np.ones((k, d))
    c0 = np.tile(c0_prior_rate, (k, 1, 1))

    kept = n_iters - burn_in
    out = PosteriorDraws(
        eta=np.empty((kept, k)),
        omega=np.empty((kept, k, ell)),
        mu=np.empty((kept, k, ell, d)),
        sigma=np.empty((kept, k, ell, d, d)),
        b0=np.empty((kept, k, d)),
        C0=np.empty((kept, k, d, d)),
        lam=np.empty((kept, k, d)),
        seed=seed,
        cell_counts=stats.counts.copy(),
    )
    sigma = np.empty((k, ell, d, d))
    sigma_inv = np.empty((k, ell, d, d))
    omega = np.empty((k, ell))
    for it in range(1, n_iters + 1):
        prev_mu = mu.copy()
        prev_b0 = b0.copy()
        try:
            eta = updates.draw_dirichlet(
                updates.eta_conditional(cluster_counts, hp), rng
            )
            for kk in range(k):
                omega[kk] = updates.draw_dirichlet(
                    updates.omega_conditional(counts[kk], hp), rng
                )
                btilde_inv = updates.btilde_inverse(lam[kk], hp, b0_prior_inv)
                for ll in range(ell):
                    df, rate = updates.sigma_inv_conditional(
                        counts[kk, ll], stats.sums[kk, ll], stats.outers[kk, ll],
                        prev_mu[kk, ll], c0[kk], hp,
                    )
                    sigma_inv[kk, ll] = updates.draw_wishart_rate(df, rate, rng)
                    sigma[kk, ll] = chol_inv(sigma_inv[kk, ll])
                    mean, cov = updates.mu_conditional(
                        counts[kk, ll], stats.sums[kk, ll], sigma_inv[kk, ll],
                        prev_b0[kk], btilde_inv,
                    )
                    mu[kk, ll] = updates.draw_mvn(mean, cov, rng)
                # scaling factors condition on the previous iteration's
                # means and centers, per the master-side listing
                p_gig, a_gig, b_gig = updates.lambda_conditional(
                    prev_mu[kk], prev_b0[kk], hp
                )
                lam[kk] = np.array(
                    [sample_gig(p_gig, a_gig, bj, rng) for bj in b_gig]
                )
                df_c, rate_c = updates.c0_conditional(sigma_inv[kk], hp)
                c0[kk] = updates.draw_wishart_rate(df_c, rate_c, rng)
                btilde_inv = updates.btilde_inverse(lam[kk], hp, b0_prior_inv)
                mean_b, cov_b = updates.b0_conditional(
                    mu[kk], btilde_inv, hp, m0_prec
                )
                b0[kk] = updates.draw_mvn(mean_b, cov_b, rng)
        except NumericalError as err:
            raise err.with_context(iteration=it)
        if it > burn_in:
            i = it - burn_in - 1
            out.eta[i] = eta
            out.omega[i] = omega
            out.mu[i] = mu
            out.sigma[i] = sigma
            out.b0[i] = b0
            out.C0[i] = c0
            out.lam[i] = lam
    return out


def draw_params(draws, t):
    """One stored draw as a ModelParams value."""
    return ModelParams(
        eta=draws.eta[t], omega=draws.omega[t], mu=draws.mu[t],
        sigma=draws.sigma[t], b0=draws.b0[t], C0=draws.C0[t], lam=draws.lam[t],
    )


def posterior_predictive_sample(draws, m, rng):
    """Simulate m points from the posterior predictive; returns (points,
    cluster tags)."""
    if draws.n_draws == 0:
        raise ParameterError("no stored draws")
    d = draws.dim
    points = np.empty((m, d))
    tags = np.empty(m, dtype=np.int32)
    if m == 0:
        return points, tags
    which = rng.integers(draws.n_draws, size=m)
    for i in range(m):
        t = which[i]
        weights = draws.eta[t][:, None] * draws.omega[t]
        flat = weights.ravel()
        cell = rng.choice(flat.size, p=flat / flat.sum())
        kk, ll = divmod(cell, draws.n_subcomponents)
        chol = spd_cholesky(draws.sigma[t, kk, ll])
        points[i] = draws.mu[t, kk, ll] + chol @ rng.standard_normal(d)
        tags[i] = kk + 1
    return points, tags


def cluster_membership_logscores(points, draws):
    """(n, k) log of the draw-averaged unnormalized membership weights."""
    points = np.atleast_2d(np.asarray(points, dtype=np.float64))
    n = points.shape[0]
    k, ell = draws.n_clusters, draws.n_subcomponents
    acc = np.full((n, k), -np.inf)
    for t in range(draws.n_draws):
        with np.errstate(divide="ignore"):
            logw = np.log(draws.eta[t])[:, None] + np.log(draws.omega[t])
        cell = np.empty((n, k, ell))
        for kk in range(k):
            for ll in range(ell):
                chol = spd_cholesky(draws.sigma[t, kk, ll])
                cell[:, kk, ll] = gaussian_logpdf(
                    points, draws.mu[t, kk, ll], chol
                )
        ll_t = logsumexp(cell + logw[None, :, :], axis=2)
        acc = np.logaddexp(acc, ll_t)
    return acc - np.log(draws.n_draws)


def classify(points, draws):
    """Bayes classification of new points.

    Returns (labels, probs) where probs rows are the normalized
    draw-averaged membership probabilities and labels the argmax
    (ties toward the smaller cluster index).
    """
    scores = cluster_membership_logscores(points, draws)
    log_norm = logsumexp(scores, axis=1, keepdims=True)
    probs = np.exp(scores - log_norm)
    labels = np.argmax(probs, axis=1).astype(np.int32) + 1
    return labels, probs


# --- serialization ---------------------------------------------------------

_MAGIC = b"DIBCDRWS"
_VERSION = 1
_FIELDS = ("eta", "omega", "mu", "sigma", "b0", "C0", "lam")


def save_draws(draws, path):
    """Versioned binary container: magic, version, JSON header, then the
    draw arrays as little-endian float64 in a fixed order."""
    header = {
        "version": _VERSION,
        "seed": int(draws.seed),
        "n_draws": draws.n_draws,
        "n_clusters": draws.n_clusters,
        "n_subcomponents": draws.n_subcomponents,
        "dim": draws.dim,
        "fields": list(_FIELDS),
        "shapes": {f: list(getattr(draws, f).shape) for f in _FIELDS},
        "cell_counts": (
            draws.cell_counts.tolist() if draws.cell_counts is not None else None
        ),
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<IQ", _VERSION, len(blob)))
        fh.write(blob)
        for name in _FIELDS:
            arr = np.ascontiguousarray(getattr(draws, name), dtype="<f8")
            fh.write(arr.tobytes())
    return header


def load_draws(path):
    with open(path, "rb") as fh:
        magic = fh.read(len(_MAGIC))
        if magic != _MAGIC:
            raise FileFormatError(f"{path}: not a draws file (bad magic)")
        version, hlen = struct.unpack("<IQ", fh.read(12))
        if version != _VERSION:
            raise FileFormatError(f"{path}: unsupported version {version}")
        header = json.loads(fh.read(hlen).decode("utf-8"))
        arrays = {}
        for name in header["fields"]:
            shape = tuple(header["shapes"][name])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(8 * count)
            if len(buf) != 8 * count:
                raise FileFormatError(f"{path}: truncated array {name}")
            arrays[name] = np.frombuffer(buf, dtype="<f8").reshape(shape).copy()
    cc = header.get("cell_counts")
    return PosteriorDraws(
        seed=header["seed"],
        cell_counts=None if cc is None else np.asarray(cc, dtype=np.int64),
        **arrays,
    )
