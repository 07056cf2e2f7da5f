import numpy as np
import pytest
from sklearn.exceptions import NotFittedError

from dibc import DibcClustering
from dibc.metrics import compute_metrics

from conftest import two_blob_points


@pytest.fixture(scope="module")
def fitted():
    points, truth = two_blob_points(n_per=120, dim=2, seed=17)
    model = DibcClustering(
        n_clusters_max=4, n_subcomponents=2, n_workers=2,
        n_iters=100, burn_in=50, n_refine_samples=10, n_candidates=4,
        param_iters=200, param_burn_in=50, random_state=3,
    )
    return points, truth, model.fit(points)


class TestSklearnApi:
    def test_get_set_params_round_trip(self):
        model = DibcClustering(n_workers=3, n_iters=50)
        params = model.get_params()
        assert params["n_workers"] == 3
        clone = DibcClustering(**params)
        assert clone.get_params() == params

    def test_unfitted_predict_raises(self):
        with pytest.raises(NotFittedError):
            DibcClustering().predict(np.zeros((2, 2)))

    def test_fit_sets_canonical_attributes(self, fitted):
        points, truth, model = fitted
        assert model.labels_.shape == (points.shape[0],)
        assert model.n_clusters_ == 2
        assert model.n_features_in_ == 2
        assert compute_metrics(truth, model.labels_).ari == 1.0

    def test_fit_predict_matches_labels(self):
        points, _ = two_blob_points(n_per=60, dim=2, seed=23)
        model = DibcClustering(
            n_clusters_max=3, n_subcomponents=1, n_workers=1,
            n_iters=60, burn_in=30, n_refine_samples=6, n_candidates=2,
            param_iters=100, param_burn_in=30, random_state=1,
        )
        labels = model.fit_predict(points)
        np.testing.assert_array_equal(labels, model.labels_)

    def test_predict_new_points(self, fitted):
        _, _, model = fitted
        labels = model.predict(np.array([[-5.0, -5.0], [5.0, 5.0]]))
        assert labels[0] != labels[1]
        probs = model.predict_proba(np.array([[-5.0, -5.0]]))
        assert probs.shape == (1, model.n_clusters_)
        np.testing.assert_allclose(probs.sum(axis=1), 1.0)

    def test_sample(self, fitted):
        points, _, model = fitted
        sims, tags = model.sample(500, random_state=11)
        assert sims.shape == (500, 2)
        assert set(np.unique(tags)) <= set(range(1, model.n_clusters_ + 1))
        again, _ = model.sample(500, random_state=11)
        np.testing.assert_array_equal(sims, again)

    def test_score_prefers_matching_data(self, fitted):
        points, _, model = fitted
        held_out, _ = two_blob_points(n_per=30, dim=2, seed=99)
        far = held_out + 50.0
        assert model.score(held_out) > model.score(far)

    def test_validation_rejects_bad_input(self):
        model = DibcClustering()
        with pytest.raises(ValueError):
            model.fit(np.array([[np.nan, 1.0], [2.0, 3.0]]))
