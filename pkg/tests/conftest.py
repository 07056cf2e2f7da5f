import numpy as np
import pytest

from dibc.model import Shard


def make_rng(seed=0):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))


@pytest.fixture
def rng():
    return make_rng(12345)


def two_blob_points(n_per=100, dim=2, centers=(-5.0, 5.0), seed=0):
    """Well-separated two-cluster toy with ground-truth labels."""
    rng = make_rng(seed)
    blobs = [rng.normal(c, 1.0, size=(n_per, dim)) for c in centers]
    points = np.concatenate(blobs)
    truth = np.repeat(np.arange(1, len(centers) + 1), n_per)
    return points, truth


@pytest.fixture
def toy_shard():
    points, truth = two_blob_points(n_per=100, dim=2, seed=3)
    return Shard(worker_id=1, points=points, true_labels=truth)
