"""Numerically robust samplers and log densities used by every sampling stage.

All density work is done in log space.  Cholesky is the only factorization
used for SPD matrices: a failed factorization is retried once with a small
diagonal jitter and is a hard :class:`~dibc.errors.NumericalError` after that.
Every sampler is a pure function of its parameters and the supplied
``numpy.random.Generator``.
"""

import math

import numpy as np
from scipy.special import gammaln

from .errors import NumericalError, ParameterError

_SYM_TOL = 1e-10
_JITTER = 1e-10

__all__ = [
    "spd_cholesky",
    "chol_inv",
    "chol_logdet",
    "sample_dirichlet",
    "sample_wishart",
    "sample_wishart_from_rate",
    "sample_mvn",
    "sample_gig",
    "mvt_logpdf",
    "gaussian_logpdf",
    "log_categorical_sample",
    "gumbel_argmax",
]


def _condition_diagnostics(a):
    diag = np.diag(a)
    return {
        "shape": a.shape,
        "trace": float(np.trace(a)),
        "min_diag": float(diag.min()),
        "max_diag": float(diag.max()),
        "max_asym": float(np.max(np.abs(a - a.T))),
    }


def spd_cholesky(a, check_sym=True):
    """Lower Cholesky factor of a symmetric positive definite matrix.

    Retries once with ``1e-10 * trace/d`` added to the diagonal; a second
    failure raises :class:`NumericalError` carrying condition diagnostics.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ParameterError(f"expected a square matrix, got shape {a.shape}")
    if check_sym:
        scale = max(np.max(np.abs(a)), 1.0)
        if np.max(np.abs(a - a.T)) > _SYM_TOL * scale:
            raise NumericalError(
                "matrix is not symmetric", _condition_diagnostics(a)
            )
    try:
        return np.linalg.cholesky(a)
    except np.linalg.LinAlgError:
        pass
    d = a.shape[0]
    jitter = _JITTER * np.trace(a) / d
    try:
        return np.linalg.cholesky(a + jitter * np.eye(d))
    except np.linalg.LinAlgError as exc:
        diag = _condition_diagnostics(a)
        diag["jitter"] = jitter
        raise NumericalError("Cholesky factorization failed", diag) from exc


def chol_inv(a):
    """Inverse of an SPD matrix via its Cholesky factor."""
    chol = spd_cholesky(a)
    x = np.linalg.solve(chol, np.eye(chol.shape[0]))
    return x.T @ x


def chol_logdet(chol):
    """log determinant of A given its lower Cholesky factor."""
    return 2.0 * float(np.sum(np.log(np.diag(chol))))


def sample_dirichlet(alpha, rng):
    """Draw one point of the simplex from Dir(alpha)."""
    alpha = np.asarray(alpha, dtype=np.float64)
    if alpha.ndim != 1 or alpha.size == 0:
        raise ParameterError("alpha must be a non-empty vector")
    if not np.all(alpha > 0):
        raise ParameterError("all Dirichlet concentrations must be > 0")
    return rng.dirichlet(alpha)


def sample_wishart(df, scale, rng):
    """Wishart draw W_d(df, scale) with E[W] = df * scale.

    Uses the Bartlett decomposition: with scale = LL', W = (LA)(LA)' where
    A is lower triangular, A_ii^2 ~ chi^2_{df-i+1} and A_ij ~ N(0,1).
    """
    scale = np.asarray(scale, dtype=np.float64)
    d = scale.shape[0]
    if df <= d - 1:
        raise ParameterError(f"Wishart df must exceed d-1={d - 1}, got {df}")
    chol = spd_cholesky(scale)
    return _bartlett(df, chol, rng)


def _bartlett(df, scale_factor, rng):
    d = scale_factor.shape[0]
    a = np.zeros((d, d))
    a[np.diag_indices(d)] = np.sqrt(rng.chisquare(df - np.arange(d)))
    if d > 1:
        a[np.tril_indices(d, -1)] = rng.standard_normal(d * (d - 1) // 2)
    la = scale_factor @ a
    return la @ la.T


def sample_wishart_from_rate(df, rate, rng):
    """Wishart draw parameterized by the rate (inverse scale) matrix.

    Equivalent to ``sample_wishart(df, inv(rate), rng)`` but factors the
    rate matrix directly instead of inverting it.
    """
    rate = np.asarray(rate, dtype=np.float64)
    d = rate.shape[0]
    if df <= d - 1:
        raise ParameterError(f"Wishart df must exceed d-1={d - 1}, got {df}")
    chol = spd_cholesky(rate)
    # B = L^{-T} satisfies B B' = rate^{-1}
    bmat = np.linalg.solve(chol.T, np.eye(d))
    return _bartlett(df, bmat, rng)


def sample_mvn(mean, cov, rng):
    """Multivariate normal draw via the Cholesky factor of ``cov``."""
    mean = np.asarray(mean, dtype=np.float64)
    chol = spd_cholesky(cov)
    return mean + chol @ rng.standard_normal(mean.shape[0])


# --- generalized inverse Gaussian -----------------------------------------
#
# Density proportional to x^(p-1) exp(-(a x + b / x) / 2) on x > 0.
# Sampling reduces GIG(p, a, b) to the standardized two-parameter form
# GIG(lam, omega, omega) with omega = sqrt(a b) via x -> sqrt(b/a) x and
# 1/X ~ GIG(-p, b, a) for negative orders, then draws with a
# ratio-of-uniforms generator (with and without mode shift) or, for small
# lam and omega, rejection from a three-piece hat around the mode.

_GIG_OMEGA_EPS = 1e-10


def sample_gig(p, a, b, rng):
    """Generalized inverse Gaussian draw on x > 0.

    Requires a > 0 and b >= 0; b == 0 is only valid for p > 0, where the
    density reduces to Gamma(p, rate a/2).
    """
    p = float(p)
    a = float(a)
    b = float(b)
    if not math.isfinite(p) or not math.isfinite(a) or not math.isfinite(b):
        raise ParameterError("GIG parameters must be finite")
    if a <= 0:
        raise ParameterError(f"GIG requires a > 0, got a={a}")
    if b < 0:
        raise ParameterError(f"GIG requires b >= 0, got b={b}")
    omega = math.sqrt(a * b)
    if b == 0.0 or omega < _GIG_OMEGA_EPS:
        # gamma shortcut; also used for vanishingly small omega where the
        # exp(-b/2x) correction is below double precision
        if p <= 0:
            raise ParameterError("GIG with b == 0 requires p > 0")
        return rng.gamma(shape=p, scale=2.0 / a)
    if p >= 0:
        z = _gig_standard(p, omega, rng)
    else:
        z = 1.0 / _gig_standard(-p, omega, rng)
    return math.sqrt(b / a) * z


def _gig_mode(lam, omega):
    # mode of z^(lam-1) exp(-omega (z + 1/z) / 2)
    if lam >= 1.0:
        return (math.sqrt((lam - 1.0) ** 2 + omega**2) + (lam - 1.0)) / omega
    return omega / (math.sqrt((1.0 - lam) ** 2 + omega**2) + (1.0 - lam))


def _gig_standard(lam, omega, rng):
    # lam >= 0, omega > 0
    if lam > 2.0 or omega > 3.0:
        return _gig_rou_shift(lam, omega, rng)
    if lam >= 1.0 - 2.25 * omega * omega or omega > 0.2:
        return _gig_rou_noshift(lam, omega, rng)
    return _gig_hat_rejection(lam, omega, rng)


def _gig_rou_noshift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    # maximum of x * sqrt(density)
    ym = ((lam + 1.0) + math.sqrt((lam + 1.0) ** 2 + omega**2)) / omega
    um = math.exp((1.0 + t) * math.log(ym) - s * (ym + 1.0 / ym) - nc)
    while True:
        u = um * rng.random()
        v = rng.random()
        x = u / v
        if math.log(v) <= t * math.log(x) - s * (x + 1.0 / x) - nc:
            return x


def _gig_rou_shift(lam, omega, rng):
    t = 0.5 * (lam - 1.0)
    s = 0.25 * omega
    xm = _gig_mode(lam, omega)
    nc = t * math.log(xm) - s * (xm + 1.0 / xm)
    # stationary points of (x - xm) * sqrt(density): roots of a cubic
    a = -(2.0 * (lam + 1.0) / omega + xm)
    b = 2.0 * (lam - 1.0) * xm / omega - 1.0
    p = b - a * a / 3.0
    q = (2.0 * a**3) / 27.0 - (a * b) / 3.0 + xm
    fi = math.acos(-q / (2.0 * math.sqrt(-(p**3) / 27.0)))
    fak = 2.0 * math.sqrt(-p / 3.0)
    y1 = fak * math.cos(fi / 3.0) - a / 3.0
    y2 = fak * math.cos(fi / 3.0 + 4.0 / 3.0 * math.pi) - a / 3.0
    uplus = (y1 - xm) * math.exp(t * math.log(y1) - s * (y1 + 1.0 / y1) - nc)
    uminus = (y2 - xm) * math.exp(t * math.log(y2) - s * (y2 + 1.0 / y2) - nc)
    while True:
        u = uminus + rng.random() * (uplus - uminus)
        v = rng.random()
        x = u / v + xm
        if x > 0 and math.log(v) <= t * math.log(x) - s * (x + 1.0 / x) - nc:
            return x


def _gig_hat_rejection(lam, omega, rng):
    # lam in [0,1), omega in (0,1]: density is T-concave around the mode;
    # rejection from a constant/power/exponential three-piece hat
    xm = _gig_mode(lam, omega)
    x0 = omega / (1.0 - lam)
    k0 = math.exp((lam - 1.0) * math.log(xm) - 0.5 * omega * (xm + 1.0 / xm))
    a0 = k0 * x0
    if x0 >= 2.0 / omega:
        # two pieces: constant on [0, x0], exponential tail from x0
        k1 = 0.0
        a1 = 0.0
        k2 = x0 ** (lam - 1.0)
        x_tail = x0
    else:
        # power hat on [x0, 2/omega], exponential tail from 2/omega
        k1 = math.exp(-omega)
        if lam == 0.0:
            a1 = k1 * math.log(2.0 / (omega * omega))
        else:
            a1 = k1 / lam * ((2.0 / omega) ** lam - x0**lam)
        k2 = (2.0 / omega) ** (lam - 1.0)
        x_tail = 2.0 / omega
    tail_base = math.exp(-0.5 * omega * x_tail)
    a2 = k2 * 2.0 / omega * tail_base
    atot = a0 + a1 + a2
    while True:
        v = atot * rng.random()
        if v <= a0:
            x = x0 * v / a0
            hx = k0
        else:
            v -= a0
            if v <= a1:
                if lam == 0.0:
                    x = omega * math.exp(math.exp(omega) * v)
                    hx = k1 / x
                else:
                    x = (x0**lam + lam / k1 * v) ** (1.0 / lam)
                    hx = k1 * x ** (lam - 1.0)
            else:
                v -= a1
                x = -2.0 / omega * math.log(tail_base - omega / (2.0 * k2) * v)
                hx = k2 * math.exp(-0.5 * omega * x)
        u = rng.random() * hx
        if math.log(u) <= (lam - 1.0) * math.log(x) - 0.5 * omega * (x + 1.0 / x):
            return x


def mvt_logpdf(x, loc, scale, df):
    """Log density of the multivariate Student-t.

    ``x`` may be a single point of shape (d,) or a batch of shape (n, d);
    the return value matches (scalar or shape (n,)).
    """
    if df <= 0:
        raise ParameterError(f"t density requires df > 0, got {df}")
    x = np.asarray(x, dtype=np.float64)
    loc = np.asarray(loc, dtype=np.float64)
    d = loc.shape[0]
    chol = spd_cholesky(scale)
    single = x.ndim == 1
    dev = np.atleast_2d(x) - loc
    z = np.linalg.solve(chol, dev.T).T if d > 1 else dev / chol[0, 0]
    quad = np.einsum("ij,ij->i", z, z)
    out = (
        gammaln((df + d) / 2.0)
        - gammaln(df / 2.0)
        - 0.5 * d * math.log(df * math.pi)
        - 0.5 * chol_logdet(chol)
        - ((df + d) / 2.0) * np.log1p(quad / df)
    )
    return float(out[0]) if single else out


def gaussian_logpdf(x, mean, chol):
    """Batched multivariate normal log density given the Cholesky of cov."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    dev = np.atleast_2d(x) - mean
    d = dev.shape[1]
    z = np.linalg.solve(chol, dev.T).T if d > 1 else dev / chol[0, 0]
    quad = np.einsum("ij,ij->i", z, z)
    out = -0.5 * (quad + d * math.log(2.0 * math.pi) + chol_logdet(chol))
    return float(out[0]) if single else out


def log_categorical_sample(log_weights, rng):
    """Sample an index i with probability exp(lw_i - logsumexp(lw)).

    Uses the Gumbel-max trick, so shifting all the weights by a constant
    consumes the same stream and returns the same index.
    """
    lw = np.asarray(log_weights, dtype=np.float64)
    if lw.ndim != 1 or lw.size == 0:
        raise ParameterError("log_weights must be a non-empty vector")
    if not np.any(np.isfinite(lw)):
        raise ParameterError("all categorical log weights are -inf")
    g = rng.gumbel(size=lw.shape)
    return int(np.argmax(lw + g))


def gumbel_argmax(log_weights, rng, axis=-1):
    """Vectorized categorical sampling over the given axis of a matrix."""
    lw = np.asarray(log_weights, dtype=np.float64)
    g = rng.gumbel(size=lw.shape)
    return np.argmax(lw + g, axis=axis)
