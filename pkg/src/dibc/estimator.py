"""scikit-learn style estimator wrapping the distributed pipeline."""

import numpy as np
from sklearn.base import BaseEstimator, ClusterMixin
from sklearn.exceptions import NotFittedError
from sklearn.utils.validation import check_array

from . import params as param_ops
from ._rng import PREDICT, stream
from .model import mixture_logdensity
from .runtime import PipelineConfig, run_pipeline


class DibcClustering(BaseEstimator, ClusterMixin):
    """Bayesian model-based clustering of an overfitted mixture of
    Gaussian mixtures, fit by embarrassingly parallel MCMC.

    Parameters mirror :class:`dibc.runtime.PipelineConfig`:
    ``n_clusters_max`` is the overfitted upper bound K (surplus clusters
    empty out), ``n_subcomponents`` the Gaussians per cluster.  After
    ``fit``, ``labels_`` holds the loss-optimal partition, ``n_clusters_``
    its cluster count, and ``draws_`` the conditional parameter draws
    backing ``predict``, ``predict_proba``, ``sample`` and
    ``score_samples``.
    """

    def __init__(
        self,
        n_clusters_max=10,
        n_subcomponents=3,
        n_workers=1,
        n_iters=1000,
        burn_in=500,
        n_refine_samples=100,
        n_candidates=20,
        phi_b=0.5,
        phi_w=0.1,
        param_iters=2000,
        param_burn_in=500,
        loss="vi",
        transport="inproc",
        random_state=0,
    ):
        self.n_clusters_max = n_clusters_max
        self.n_subcomponents = n_subcomponents
        self.n_workers = n_workers
        self.n_iters = n_iters
        self.burn_in = burn_in
        self.n_refine_samples = n_refine_samples
        self.n_candidates = n_candidates
        self.phi_b = phi_b
        self.phi_w = phi_w
        self.param_iters = param_iters
        self.param_burn_in = param_burn_in
        self.loss = loss
        self.transport = transport
        self.random_state = random_state

    def _config(self):
        return PipelineConfig(
            n_workers=self.n_workers,
            n_clusters=self.n_clusters_max,
            n_subcomponents=self.n_subcomponents,
            n_iters=self.n_iters,
            burn_in=self.burn_in,
            n_refine_samples=self.n_refine_samples,
            n_candidates=self.n_candidates,
            phi_b=self.phi_b,
            phi_w=self.phi_w,
            param_iters=self.param_iters,
            param_burn_in=self.param_burn_in,
            seed=self.random_state,
            transport=self.transport,
            loss=self.loss,
        )

    def fit(self, X, y=None):
        X = check_array(X, dtype=np.float64, ensure_min_samples=2)
        result = run_pipeline(self._config(), X)
        self.labels_ = result.c_star
        self.n_clusters_ = result.n_clusters
        self.draws_ = result.draws
        self.diagnostics_ = result.diagnostics
        self.n_features_in_ = X.shape[1]
        return self

    def _check_fitted(self):
        if not hasattr(self, "draws_"):
            raise NotFittedError(
                "this DibcClustering instance is not fitted yet; call fit first"
            )

    def predict(self, X):
        """Bayes classification of new points into the fitted clusters."""
        self._check_fitted()
        X = check_array(X, dtype=np.float64)
        labels, _ = param_ops.classify(X, self.draws_)
        return labels

    def predict_proba(self, X):
        self._check_fitted()
        X = check_array(X, dtype=np.float64)
        _, probs = param_ops.classify(X, self.draws_)
        return probs

    def sample(self, n_samples=1, random_state=None):
        """Posterior predictive draws; returns (X, cluster tags)."""
        self._check_fitted()
        seed = self.random_state if random_state is None else random_state
        rng = stream(seed, PREDICT)
        return param_ops.posterior_predictive_sample(self.draws_, n_samples, rng)

    def score_samples(self, X):
        """Draw-averaged predictive log density of each row."""
        self._check_fitted()
        X = check_array(X, dtype=np.float64)
        per_draw = np.empty((self.draws_.n_draws, X.shape[0]))
        for t in range(self.draws_.n_draws):
            per_draw[t] = mixture_logdensity(X, param_ops.draw_params(self.draws_, t))
        from scipy.special import logsumexp

        return logsumexp(per_draw, axis=0) - np.log(self.draws_.n_draws)

    def score(self, X, y=None):
        return float(np.mean(self.score_samples(X)))
