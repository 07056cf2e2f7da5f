"""Model types for the mixture of Gaussian mixtures and prior elicitation.

The generative model is a K-component mixture whose component densities are
themselves L-component Gaussian mixtures.  Cluster-level hyperparameters
(b0k, C0k, Lambda_k) are random with fixed hyperpriors; subcomponent means
and precisions are drawn conditionally on them.

Wishart convention used throughout the model: a precision matrix with
conditional ``W_d(df, C)`` is parameterized by its *rate* matrix C (inverse
scale), so conjugate updates add scatter matrices to C directly.  The
kernel-level samplers in :mod:`dibc.samplers` use the scale convention;
:func:`dibc.samplers.sample_wishart_from_rate` bridges the two.
"""

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .errors import ParameterError
from .samplers import gaussian_logpdf, spd_cholesky

DEFAULT_E0 = 0.01
DEFAULT_D0 = 4.0
DEFAULT_NU = 10.0


@dataclass(frozen=True)
class Hyperparams:
    """Fixed prior constants.

    ``G0`` is the rate matrix of the Wishart prior on C0k, and C0k is in
    turn the rate matrix of the Wishart prior on the subcomponent
    precisions.  ``B0`` scales the shrinkage of subcomponent means toward
    the cluster center, ``m0``/``M0`` locate the cluster centers, and
    ``nu`` is the shared shape/rate of the Gamma prior on the local
    scaling factors lambda_kj.
    """

    e0: float
    d0: float
    c0: float
    g0: float
    G0: np.ndarray
    B0: np.ndarray
    m0: np.ndarray
    M0: np.ndarray
    nu: float

    @property
    def dim(self):
        return self.m0.shape[0]

    def validate(self, n_subcomponents=None, sparsity_dim="theta"):
        d = self.dim
        for name in ("e0", "d0", "nu"):
            if getattr(self, name) <= 0:
                raise ParameterError(f"{name} must be > 0")
        if self.c0 <= d - 1:
            raise ParameterError(f"c0 must exceed d-1={d - 1}")
        if self.g0 <= d - 1:
            raise ParameterError(f"g0 must exceed d-1={d - 1}")
        for name in ("G0", "B0", "M0"):
            spd_cholesky(getattr(self, name))
        if n_subcomponents is not None:
            bound = sparsity_bound(d, n_subcomponents, sparsity_dim)
            if self.e0 >= bound:
                warnings.warn(
                    f"e0={self.e0} is not below {bound:.3g}; empty clusters "
                    "are not guaranteed to be emptied asymptotically",
                    stacklevel=2,
                )
        return self


def sparsity_bound(d, n_subcomponents, sparsity_dim="theta"):
    """Upper bound on e0 for the weight-sparsity property to hold.

    ``sparsity_dim='theta'`` counts the full dimension of the
    cluster-specific parameters (weights, means and covariances of the L
    subcomponents); ``'data'`` uses the data dimension instead.
    """
    if sparsity_dim == "data":
        return d / 2.0
    if sparsity_dim != "theta":
        raise ParameterError(f"unknown sparsity_dim {sparsity_dim!r}")
    n_theta = (n_subcomponents - 1) + n_subcomponents * d
    n_theta += n_subcomponents * d * (d + 1) // 2
    return n_theta / 2.0


def elicit_priors(data_mean, data_cov, phi_b=0.5, phi_w=0.1, n_clusters=None,
                  n_subcomponents=None):
    """Derive fixed hyperparameters from data moments.

    ``phi_b`` is the share of total variance attributed to cluster centers
    and ``phi_w`` the share attributed to subcomponent means within a
    cluster; the remainder, (1-phi_w)(1-phi_b), is matched by the prior
    mean of the subcomponent covariances.
    """
    if not 0 < phi_b < 1:
        raise ParameterError(f"phi_b must be in (0, 1), got {phi_b}")
    if not 0 < phi_w < 1:
        raise ParameterError(f"phi_w must be in (0, 1), got {phi_w}")
    data_mean = np.asarray(data_mean, dtype=np.float64)
    data_cov = np.asarray(data_cov, dtype=np.float64)
    spd_cholesky(data_cov)
    d = data_mean.shape[0]
    c0 = float(d + 2)
    g0 = float(d + 2)
    target = (1.0 - phi_w) * (1.0 - phi_b) * data_cov
    # E[Sigma_kl] = E[C0k] / (c0 - d - 1) = g0 G0^{-1} / (c0 - d - 1);
    # solving for the rate matrix G0 makes the prior mean hit the target.
    target_chol = spd_cholesky(target)
    inv_target = np.linalg.solve(target_chol.T, np.linalg.solve(target_chol, np.eye(d)))
    g0_rate = g0 / (c0 - d - 1.0) * inv_target
    hp = Hyperparams(
        e0=DEFAULT_E0,
        d0=DEFAULT_D0,
        c0=c0,
        g0=g0,
        G0=0.5 * (g0_rate + g0_rate.T),
        B0=phi_w * (1.0 - phi_b) * data_cov,
        m0=data_mean,
        M0=10.0 * data_cov,
        nu=DEFAULT_NU,
    )
    return hp.validate(n_subcomponents=n_subcomponents)


@dataclass
class ModelParams:
    """Mixture weights, subcomponent parameters and random hyperparameters.

    Shapes: eta (K,), omega (K, L), mu (K, L, d), sigma (K, L, d, d),
    b0 (K, d), C0 (K, d, d) rate matrices, lam (K, d) positive.
    """

    eta: np.ndarray
    omega: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    b0: np.ndarray
    C0: np.ndarray
    lam: np.ndarray

    @property
    def n_clusters(self):
        return self.eta.shape[0]

    @property
    def n_subcomponents(self):
        return self.omega.shape[1]

    @property
    def dim(self):
        return self.mu.shape[2]

    def validate(self):
        k, ell, d = self.mu.shape
        if self.eta.shape != (k,) or self.omega.shape != (k, ell):
            raise ParameterError("weight shapes are inconsistent")
        if not np.all(self.lam > 0):
            raise ParameterError("lambda entries must be positive")
        for kk in range(k):
            for ll in range(ell):
                spd_cholesky(self.sigma[kk, ll])
        return self


@dataclass
class Shard:
    """One worker's slice of the data.

    ``true_labels`` (when present, -1 marking unlabeled rows) never
    influence sampling; they feed only evaluation metrics.  ``origin``
    carries each row's index in the full data set so global results can be
    reassembled in input order.
    """

    worker_id: int
    points: np.ndarray
    true_labels: np.ndarray | None = None
    origin: np.ndarray | None = None

    def __post_init__(self):
        self.points = np.asarray(self.points, dtype=np.float64)
        if self.points.ndim != 2 or self.points.shape[0] < 1:
            raise ParameterError("shard needs at least one row of points")
        if self.origin is None:
            self.origin = np.arange(self.points.shape[0], dtype=np.int64)

    @property
    def n(self):
        return self.points.shape[0]

    @property
    def dim(self):
        return self.points.shape[1]


@dataclass
class AllocationState:
    """Per-row cluster labels (1..K) and subcomponent labels (1..L)."""

    c: np.ndarray
    s: np.ndarray

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=np.int32)
        self.s = np.asarray(self.s, dtype=np.int32)
        if self.c.shape != self.s.shape:
            raise ParameterError("allocation vectors must share a length")

    def copy(self):
        return AllocationState(self.c.copy(), self.s.copy())


def component_logliks(points, params):
    """(n, K, L) matrix of subcomponent Gaussian log densities."""
    n = points.shape[0]
    k, ell = params.omega.shape
    out = np.empty((n, k, ell))
    for kk in range(k):
        for ll in range(ell):
            chol = spd_cholesky(params.sigma[kk, ll])
            out[:, kk, ll] = gaussian_logpdf(points, params.mu[kk, ll], chol)
    return out


def mixture_logdensity(y, params):
    """Log mixture density log sum_k sum_l eta_k omega_kl N(y | mu, Sigma).

    Accepts a single point (d,) or a batch (n, d).
    """
    y = np.asarray(y, dtype=np.float64)
    single = y.ndim == 1
    pts = np.atleast_2d(y)
    cell = component_logliks(pts, params)
    with np.errstate(divide="ignore"):
        logw = np.log(params.eta)[:, None] + np.log(params.omega)
    out = logsumexp(cell + logw[None, :, :], axis=(1, 2))
    return float(out[0]) if single else out
