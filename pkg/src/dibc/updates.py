"""Conjugate conditional updates shared by the local and master samplers.

Each ``*_conditional`` function returns the parameters of one full
conditional distribution given per-cell sufficient statistics (counts,
data sums and sums of outer products); the ``draw_*`` helpers sample from
them.  Keeping the parameter computation separate lets tests compare the
conditionals against independently coded closed forms.
"""

import numpy as np

from .samplers import (
    chol_inv,
    sample_dirichlet,
    sample_gig,
    sample_mvn,
    sample_wishart_from_rate,
)


def eta_conditional(cluster_counts, hp):
    """Dirichlet concentrations for the cluster weights."""
    return hp.e0 + np.asarray(cluster_counts, dtype=np.float64)


def omega_conditional(subcomponent_counts, hp):
    """Dirichlet concentrations for one cluster's subcomponent weights."""
    return hp.d0 + np.asarray(subcomponent_counts, dtype=np.float64)


def sigma_inv_conditional(count, data_sum, outer_sum, mu, c0k_rate, hp):
    """Wishart (df, rate) for one subcomponent precision.

    The rate adds the scatter around the current mean mu to the
    cluster-level rate C0k; the scatter is assembled from raw moment sums
    and symmetrized.
    """
    mu = np.asarray(mu, dtype=np.float64)
    scatter = (
        outer_sum
        - np.outer(mu, data_sum)
        - np.outer(data_sum, mu)
        + count * np.outer(mu, mu)
    )
    rate = c0k_rate + scatter
    return hp.c0 + count, 0.5 * (rate + rate.T)


def mu_conditional(count, data_sum, sigma_inv, b0k, btilde_inv):
    """Normal (mean, cov) for one subcomponent mean."""
    prec = btilde_inv + count * sigma_inv
    cov = chol_inv(prec)
    mean = cov @ (btilde_inv @ b0k + sigma_inv @ data_sum)
    return mean, 0.5 * (cov + cov.T)


def lambda_conditional(mu_k, b0k, hp):
    """GIG (p, a, b_j per dimension) for one cluster's scaling factors."""
    n_sub = mu_k.shape[0]
    p = -n_sub / 2.0 + hp.nu
    a = 2.0 * hp.nu
    dev = mu_k - b0k
    b = np.sum(dev**2, axis=0) / np.diag(hp.B0)
    return p, a, b


def c0_conditional(sigma_inv_k, hp):
    """Wishart (df, rate) for one cluster's precision rate matrix C0k."""
    n_sub = sigma_inv_k.shape[0]
    df = hp.g0 + n_sub * hp.c0
    rate = hp.G0 + sigma_inv_k.sum(axis=0)
    return df, 0.5 * (rate + rate.T)


def b0_conditional(mu_k, btilde_inv, hp, m0_prec=None):
    """Normal (mean, cov) for one cluster center b0k."""
    if m0_prec is None:
        m0_prec = chol_inv(hp.M0)
    n_sub = mu_k.shape[0]
    cov = chol_inv(m0_prec + n_sub * btilde_inv)
    mean = cov @ (m0_prec @ hp.m0 + btilde_inv @ mu_k.sum(axis=0))
    return mean, 0.5 * (cov + cov.T)


def btilde_inverse(lam_k, hp, b0_inv=None):
    """Inverse of diag(sqrt(lam)) B0 diag(sqrt(lam))."""
    if b0_inv is None:
        b0_inv = chol_inv(hp.B0)
    inv_root = 1.0 / np.sqrt(lam_k)
    return b0_inv * np.outer(inv_root, inv_root)


def draw_lambda(mu_k, b0k, hp, rng):
    p, a, b = lambda_conditional(mu_k, b0k, hp)
    return np.array([sample_gig(p, a, bj, rng) for bj in b])


def draw_dirichlet(alpha, rng):
    return sample_dirichlet(alpha, rng)


def draw_wishart_rate(df, rate, rng):
    return sample_wishart_from_rate(df, rate, rng)


def draw_mvn(mean, cov, rng):
    return sample_mvn(mean, cov, rng)
