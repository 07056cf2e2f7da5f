import numpy as np
import pytest

import dibc.local
from dibc.errors import ConfigError, NumericalError, PipelineError, TransportError
from dibc.estimate import JointCounts
from dibc.local import LocalChainConfig
from dibc.model import Hyperparams, Shard, elicit_priors
from dibc.params import FixedSuffStats
from dibc.refine import ItemStats, RefinementPrior, refine_sweep
from dibc.runtime import PipelineConfig, partition_data, run_pipeline
from dibc.runtime.messages import (
    FRAME_HEADER,
    Kind,
    Message,
    decode_body,
    encode_frame,
)
from dibc.runtime.transport import Meter, MeteredChannel, InProcChannel, raw_row_guard

from conftest import make_rng, two_blob_points


def roundtrip(msg):
    frame = encode_frame(msg)
    return decode_body(frame[FRAME_HEADER.size:])


class TestCodec:
    def test_shard_assign(self):
        shard = Shard(
            worker_id=3,
            points=np.arange(8, dtype=np.float64).reshape(4, 2),
            true_labels=np.array([1, -1, 2, 2]),
            origin=np.array([5, 1, 2, 9]),
        )
        out = roundtrip(Message(Kind.SHARD_ASSIGN, {"shard": shard}, correlation=7))
        got = out.payload["shard"]
        assert out.correlation == 7
        np.testing.assert_array_equal(got.points, shard.points)
        np.testing.assert_array_equal(got.true_labels, shard.true_labels)
        np.testing.assert_array_equal(got.origin, shard.origin)

    def test_run_local_chain(self):
        hp = elicit_priors(np.zeros(2), np.eye(2))
        msg = Message(
            Kind.RUN_LOCAL_CHAIN,
            {
                "n_clusters": 5,
                "n_subcomponents": 2,
                "hp": hp,
                "chain": LocalChainConfig(
                    n_iters=100, burn_in=40, thin=2, record_allocations_every=3
                ),
                "master_seed": 99,
                "n_refine_samples": 10,
                "refinement_prior": RefinementPrior(1.0, 4.0, np.eye(2)),
                "local_diagnostics": True,
            },
        )
        got = roundtrip(msg).payload
        assert got["n_clusters"] == 5
        assert got["chain"].record_allocations_every == 3
        assert got["master_seed"] == 99
        np.testing.assert_allclose(got["hp"].G0, hp.G0)
        assert got["local_diagnostics"] is True

    def test_item_stats(self):
        items = [
            ItemStats(2, 5, 17, np.array([1.0, 2.0]), np.eye(2)),
            ItemStats(2, 1, 3, np.array([-1.0, 0.5]), 2 * np.eye(2)),
        ]
        msg = Message(
            Kind.ITEM_STATS_UPLOAD,
            {"worker_id": 2, "dim": 2, "samples": {0: items, 4: items[:1]}},
        )
        got = roundtrip(msg).payload
        assert set(got["samples"]) == {0, 4}
        assert got["samples"][0][0].within_index == 5
        assert got["samples"][0][0].count == 17
        assert got["samples"][0][0].member_indices is None
        np.testing.assert_allclose(got["samples"][0][1].second_moment, 2 * np.eye(2))

    def test_error_status_payload(self):
        msg = Message(
            Kind.LOGLIK_REPLY,
            {"error": {"code": 4, "message": "Cholesky failed"}},
        )
        got = roundtrip(msg).payload
        assert got["error"]["code"] == 4
        assert "Cholesky" in got["error"]["message"]

    def test_group_stats_and_loglik(self):
        msg = Message(
            Kind.GROUP_STATS_BROADCAST,
            {
                "tag": 3,
                "within_index": 7,
                "counts": np.array([4, 0, 9]),
                "means": np.zeros((3, 2)),
                "moments": np.tile(np.eye(2), (3, 1, 1)),
            },
            correlation=(3 << 20) | 7,
        )
        got = roundtrip(msg)
        assert got.payload["tag"] == 3
        np.testing.assert_array_equal(got.payload["counts"], [4, 0, 9])
        reply = roundtrip(
            Message(
                Kind.LOGLIK_REPLY,
                {"tag": 3, "within_index": 7, "logliks": np.array([-1.5, -2.5, 0.0])},
            )
        )
        np.testing.assert_allclose(reply.payload["logliks"], [-1.5, -2.5, 0.0])

    def test_label_assign_both_directions(self):
        down = roundtrip(
            Message(Kind.LABEL_ASSIGN, {"tag": 2, "assignments": {5: 1, 1: 4}})
        )
        assert down.payload["assignments"] == {5: 1, 1: 4}
        up = roundtrip(
            Message(
                Kind.LABEL_ASSIGN,
                {
                    "worker_id": 1,
                    "labels": np.array([1, 2, 1]),
                    "accuracy_before": 0.5,
                    "accuracy_after": 0.75,
                },
            )
        )
        np.testing.assert_array_equal(up.payload["labels"], [1, 2, 1])
        assert up.payload["accuracy_after"] == 0.75

    def test_counts_upload(self):
        jc = JointCounts()
        jc.n_plus.update({1: 10, 2: 5})
        jc.n_joint[0] = {(1, 1): 8, (2, 2): 4, (1, 2): 3}
        msg = Message(Kind.COUNTS_UPLOAD, {"worker_id": 2, "counts": {3: jc}})
        got = roundtrip(msg).payload
        assert got["counts"][3].n_plus == jc.n_plus
        assert got["counts"][3].n_joint[0] == jc.n_joint[0]

    def test_global_estimate_and_suff_stats(self):
        est = roundtrip(
            Message(
                Kind.GLOBAL_ESTIMATE_BROADCAST,
                {"t_star": 4, "n_clusters": 2, "label_map": {3: 1, 9: 2}},
            )
        )
        assert est.payload["label_map"] == {3: 1, 9: 2}
        stats = FixedSuffStats(
            counts=np.array([[2, 0], [1, 3]], dtype=np.int64),
            sums=np.zeros((2, 2, 2)),
            outers=np.zeros((2, 2, 2, 2)),
        )
        up = roundtrip(
            Message(Kind.SUFF_STATS_UPLOAD, {"worker_id": 1, "stats": stats})
        )
        np.testing.assert_array_equal(up.payload["stats"].counts, stats.counts)

    def test_fixed_width_payloads(self):
        # byte size depends on entity counts, not on the values carried
        def frame_size(value):
            item = ItemStats(1, 1, value, np.array([float(value)]), np.eye(1))
            return len(
                encode_frame(
                    Message(
                        Kind.ITEM_STATS_UPLOAD,
                        {"worker_id": 1, "dim": 1, "samples": {0: [item]}},
                    )
                )
            )

        assert frame_size(1) == frame_size(10**12)


class TestPartition:
    def test_single_worker_identity(self):
        data = np.arange(12, dtype=float).reshape(6, 2)
        shards, assignment = partition_data(data, 1, seed=0)
        assert len(shards) == 1
        np.testing.assert_array_equal(np.sort(shards[0].origin), np.arange(6))
        np.testing.assert_array_equal(assignment, np.ones(6))

    def test_balanced_sizes(self):
        data = np.zeros((10, 2))
        shards, _ = partition_data(data, 3, seed=1)
        assert sorted(s.n for s in shards) == [3, 3, 4]

    def test_deterministic(self):
        data = np.random.default_rng(0).normal(size=(20, 2))
        a, _ = partition_data(data, 4, seed=5)
        b, _ = partition_data(data, 4, seed=5)
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.origin, sb.origin)

    def test_labels_travel_with_rows(self):
        data = np.arange(10, dtype=float).reshape(5, 2)
        labels = np.array([10, 20, 30, 40, 50])
        shards, _ = partition_data(data, 2, seed=3, labels=labels)
        for shard in shards:
            np.testing.assert_array_equal(shard.true_labels, labels[shard.origin])

    def test_too_few_rows(self):
        with pytest.raises(ConfigError):
            partition_data(np.zeros((2, 2)), 3, seed=0)


class TestConfigValidation:
    def test_more_candidates_than_samples(self):
        cfg = PipelineConfig(
            n_iters=100, burn_in=50, n_refine_samples=20, n_candidates=30
        )
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_refine_samples_exceeding_recorded(self):
        cfg = PipelineConfig(
            n_iters=20, burn_in=10, n_refine_samples=50, n_candidates=5
        )
        with pytest.raises(ConfigError):
            cfg.validate()

    def test_unknown_transport(self):
        cfg = PipelineConfig(
            n_iters=100, burn_in=50, n_refine_samples=10, n_candidates=2,
            transport="pigeon",
        )
        with pytest.raises(ConfigError):
            cfg.validate()


def small_config(**kw):
    defaults = dict(
        n_workers=2, n_clusters=4, n_subcomponents=2, n_iters=80, burn_in=40,
        n_refine_samples=10, n_candidates=4, param_iters=120, param_burn_in=40,
        seed=5,
    )
    defaults.update(kw)
    return PipelineConfig(**defaults)


@pytest.fixture(scope="module")
def blob_data():
    return two_blob_points(n_per=120, dim=2, seed=31)


class TestPipeline:
    def test_recovers_separated_blobs(self, blob_data):
        points, truth = blob_data
        result = run_pipeline(small_config(), points, true_labels=truth)
        from dibc.metrics import compute_metrics

        assert result.n_clusters == 2
        assert compute_metrics(truth, result.c_star).ari == 1.0
        assert result.draws.n_clusters == 2
        assert "per_worker_accuracy" in result.diagnostics

    def test_deterministic_given_seed(self, blob_data):
        points, _ = blob_data
        a = run_pipeline(small_config(), points)
        b = run_pipeline(small_config(), points)
        np.testing.assert_array_equal(a.c_star, b.c_star)
        np.testing.assert_array_equal(a.draws.mu, b.draws.mu)

    def test_transports_agree(self, blob_data):
        points, _ = blob_data
        a = run_pipeline(small_config(transport="inproc"), points)
        b = run_pipeline(small_config(transport="tcp"), points)
        assert a.c_star.tobytes() == b.c_star.tobytes()
        np.testing.assert_array_equal(a.draws.sigma, b.draws.sigma)

    def test_kind_set_independent_of_worker_count(self, blob_data):
        points, _ = blob_data
        kinds = []
        for workers in (2, 3):
            res = run_pipeline(small_config(n_workers=workers), points)
            seen = {
                kind
                for phase in res.diagnostics["transport"].values()
                for kind in phase
            }
            kinds.append(seen)
        assert kinds[0] == kinds[1]

    def test_worker_failure_names_step(self, blob_data, monkeypatch):
        points, _ = blob_data

        def broken(*args, **kwargs):
            raise NumericalError("synthetic Cholesky failure")

        monkeypatch.setattr(dibc.local, "run_local_chain", broken)
        monkeypatch.setattr("dibc.runtime.worker.run_local_chain", broken)
        with pytest.raises(PipelineError) as exc:
            run_pipeline(small_config(), points)
        assert exc.value.step == "local_chains"

    def test_unexpected_worker_crash_reaches_master(self, blob_data, monkeypatch):
        # a non-library exception must surface as a pipeline error rather
        # than deadlocking the master
        points, _ = blob_data

        def explodes(*args, **kwargs):
            raise RuntimeError("worker bug")

        monkeypatch.setattr("dibc.runtime.worker.run_local_chain", explodes)
        with pytest.raises(PipelineError) as exc:
            run_pipeline(small_config(), points)
        assert "RuntimeError" in str(exc.value)


class TestRawRowGuard:
    def test_forged_rows_rejected(self):
        shard = Shard(worker_id=1, points=np.zeros((3, 2)))
        msg = Message(Kind.ITEM_STATS_UPLOAD, {"shard": shard})
        with pytest.raises(TransportError):
            raw_row_guard(msg, "to_master")

    def test_shard_assign_allowed(self):
        shard = Shard(worker_id=1, points=np.zeros((3, 2)))
        raw_row_guard(Message(Kind.SHARD_ASSIGN, {"shard": shard}), "to_worker")

    def test_metered_channel_applies_guard(self):
        a, b = InProcChannel.pair()
        channel = MeteredChannel(a, Meter(), raw_row_guard)
        shard = Shard(worker_id=1, points=np.zeros((3, 2)))
        with pytest.raises(TransportError):
            channel.send(Message(Kind.LABEL_ASSIGN, {"shard": shard}))


class TestStatisticsOnlyRefinement:
    def test_master_side_needs_no_rows(self):
        # refine_sweep runs on summaries alone: the items it sees carry no
        # member indices and no row data; likelihoods arrive via callback
        rng = make_rng(2)
        rows = {}
        items = []
        for j, center in enumerate([-3.0, 3.0], start=1):
            r = rng.normal(center, 0.5, size=(6, 1))
            rows[j - 1] = r
            items.append(
                ItemStats(
                    worker=1, within_index=j, count=6,
                    mean=r.mean(axis=0), second_moment=r.T @ r / 6,
                    member_indices=None,
                )
            )
        prior = RefinementPrior(1.0, 3.0, np.array([[1.0]]))
        from dibc.refine import init_groups, loglik_from_stats

        state = init_groups(items, reference=1)

        def sealed_loglik(b, counts, means, moments):
            return loglik_from_stats(rows[b], counts, means, moments, prior)

        out = refine_sweep(items, state, prior, sealed_loglik, make_rng(3))
        assert out.z.shape == (2,)
        assert all(item.member_indices is None for item in items)

    def test_master_bound_refine_traffic_is_summaries(self, blob_data):
        # each refine-phase reply carries H likelihood values, never rows
        points, _ = blob_data
        res = run_pipeline(small_config(), points)
        transport = res.diagnostics["transport"]
        n, d = points.shape
        raw_row_bytes = n / 2 * d * 8  # one worker's rows
        refine = transport["refine"]
        assert set(refine) <= {"GROUP_STATS_BROADCAST", "LOGLIK_REPLY", "LABEL_ASSIGN"}
        reply = refine["LOGLIK_REPLY"]["to_master"]
        assert reply["bytes"] / reply["frames"] < raw_row_bytes / 4
