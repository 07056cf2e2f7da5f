"""Worker-side runtime: owns one shard, its local chain and refined samples.

The worker is a single-threaded message loop.  Raw data rows never leave
it after the shard assignment; every upload is a summary (moments, item
statistics, likelihood values, counts) except the one-shot final label
vector that delivers the chosen clustering back to the master.
"""

import numpy as np

from .. import _rng
from ..errors import NumericalError, TransportError
from ..estimate import expected_vi_score, select_candidate, worker_counts
from ..local import run_local_chain
from ..params import suff_stats_from_alloc
from ..refine import apply_labels, extract_items, loglik_from_stats
from .messages import FRAME_HEADER, Kind, Message, decode_body, encode_frame

_ERROR_CODES = {NumericalError: 4, TransportError: 5}


class WorkerRuntime:
    def __init__(self, channel):
        self.channel = channel
        self.shard = None
        self.hp = None
        self.prior = None
        self.n_clusters = None
        self.n_subcomponents = None
        self.trace = None
        self.sample_tags = []
        self.alloc_by_tag = {}
        self.items_by_tag = {}
        self.refined_by_tag = {}
        self.local_diagnostics = False
        self.announced = None

    # -- plumbing ------------------------------------------------------

    def run(self):
        while True:
            frame = self.channel.recv_bytes()
            msg = decode_body(frame[FRAME_HEADER.size:])
            if msg.kind == Kind.SHUTDOWN:
                self.channel.close()
                return
            try:
                reply = self._dispatch(msg)
            except Exception as exc:  # fail fast: every failure reaches the master
                reply = Message(
                    self._reply_kind(msg.kind),
                    {
                        "error": {
                            "code": _ERROR_CODES.get(type(exc), 1),
                            "message": f"{type(exc).__name__}: {exc}",
                        }
                    },
                    correlation=msg.correlation,
                )
            if reply is not None:
                self.channel.send_bytes(encode_frame(reply))

    @staticmethod
    def _reply_kind(kind):
        return {
            Kind.SHARD_ASSIGN: Kind.SUFF_STATS_UPLOAD,
            Kind.RUN_LOCAL_CHAIN: Kind.ITEM_STATS_UPLOAD,
            Kind.GROUP_STATS_BROADCAST: Kind.LOGLIK_REPLY,
            Kind.CANDIDATE_ANNOUNCE: Kind.COUNTS_UPLOAD,
            Kind.GLOBAL_ESTIMATE_BROADCAST: Kind.LABEL_ASSIGN,
        }.get(kind, Kind.SUFF_STATS_UPLOAD)

    def _dispatch(self, msg):
        handlers = {
            Kind.SHARD_ASSIGN: self.on_shard_assign,
            Kind.RUN_LOCAL_CHAIN: self.on_run_local_chain,
            Kind.GROUP_STATS_BROADCAST: self.on_group_stats,
            Kind.LABEL_ASSIGN: self.on_label_assign,
            Kind.CANDIDATE_ANNOUNCE: self.on_candidate_announce,
            Kind.GLOBAL_ESTIMATE_BROADCAST: self.on_global_estimate,
            Kind.SUFF_STATS_UPLOAD: None,
        }
        handler = handlers.get(msg.kind)
        if handler is None:
            raise TransportError(f"worker cannot handle {msg.kind.name}")
        return handler(msg)

    # -- handlers ------------------------------------------------------

    def on_shard_assign(self, msg):
        self.shard = msg.payload["shard"]
        pts = self.shard.points
        return Message(
            Kind.SUFF_STATS_UPLOAD,
            {
                "worker_id": self.shard.worker_id,
                "n": self.shard.n,
                "sum": pts.sum(axis=0),
                "sumsq": pts.T @ pts,
            },
            correlation=msg.correlation,
        )

    def on_run_local_chain(self, msg):
        p = msg.payload
        self.hp = p["hp"]
        self.prior = p["refinement_prior"]
        self.n_clusters = p["n_clusters"]
        self.n_subcomponents = p["n_subcomponents"]
        self.local_diagnostics = p["local_diagnostics"]
        rng = _rng.worker_stream(p["master_seed"], self.shard.worker_id)
        self.trace = run_local_chain(
            self.shard, self.hp, p["chain"],
            self.n_clusters, self.n_subcomponents, rng=rng,
        )
        n_refine = p["n_refine_samples"]
        keep = min(n_refine, len(self.trace))
        # the refined set is the last n_refine recorded samples
        offset = len(self.trace) - keep
        self.sample_tags = list(range(keep))
        self.alloc_by_tag = {
            tag: self.trace.allocation_samples[offset + tag] for tag in self.sample_tags
        }
        self.items_by_tag = {
            tag: extract_items(
                alloc, self.shard, self.n_clusters, self.n_subcomponents
            )
            for tag, alloc in self.alloc_by_tag.items()
        }
        self.refined_by_tag = {}
        samples = {
            tag: [item.summary() for item in items]
            for tag, items in self.items_by_tag.items()
        }
        return Message(
            Kind.ITEM_STATS_UPLOAD,
            {
                "worker_id": self.shard.worker_id,
                "dim": self.shard.dim,
                "samples": samples,
            },
            correlation=msg.correlation,
        )

    def on_group_stats(self, msg):
        p = msg.payload
        tag = p["tag"]
        within = p["within_index"]
        item = self._find_item(tag, within)
        rows = self.shard.points[item.member_indices]
        logliks = loglik_from_stats(
            rows, p["counts"], p["means"], p["moments"], self.prior
        )
        return Message(
            Kind.LOGLIK_REPLY,
            {"tag": tag, "within_index": within, "logliks": logliks},
            correlation=msg.correlation,
        )

    def _find_item(self, tag, within):
        for item in self.items_by_tag[tag]:
            if item.within_index == within:
                return item
        raise TransportError(
            f"worker {self.shard.worker_id} has no item {within} in sample {tag}"
        )

    def on_label_assign(self, msg):
        p = msg.payload
        tag = p["tag"]
        alloc = self.alloc_by_tag[tag]
        self.refined_by_tag[tag] = apply_labels(
            p["assignments"], alloc, self.n_subcomponents
        )
        return None

    def on_candidate_announce(self, msg):
        p = msg.payload
        self.announced = (list(p["sample_tags"]), list(p["candidate_tags"]))
        refined_c = {
            tag: self.refined_by_tag[tag].c for tag in p["sample_tags"]
        }
        counts = worker_counts(refined_c, p["candidate_tags"], p["sample_tags"])
        return Message(
            Kind.COUNTS_UPLOAD,
            {"worker_id": self.shard.worker_id, "counts": counts},
            correlation=msg.correlation,
        )

    def on_global_estimate(self, msg):
        p = msg.payload
        t_star = p["t_star"]
        label_map = p["label_map"]
        chosen = self.refined_by_tag[t_star]
        canonical_c = np.array(
            [label_map[int(c)] for c in chosen.c], dtype=np.int64
        )
        stats = suff_stats_from_alloc(
            self.shard.points,
            type(chosen)(canonical_c.astype(np.int32), chosen.s),
            p["n_clusters"],
            self.n_subcomponents,
        )
        acc_before = acc_after = float("nan")
        if self.local_diagnostics and self.shard.true_labels is not None:
            acc_before, acc_after = self._accuracy_delta(canonical_c)
        reply = Message(
            Kind.LABEL_ASSIGN,
            {
                "worker_id": self.shard.worker_id,
                "labels": canonical_c,
                "accuracy_before": acc_before,
                "accuracy_after": acc_after,
            },
            correlation=msg.correlation,
        )
        self.channel.send_bytes(encode_frame(reply))
        return Message(
            Kind.SUFF_STATS_UPLOAD,
            {"worker_id": self.shard.worker_id, "stats": stats},
            correlation=msg.correlation,
        )

    def _accuracy_delta(self, refined_c):
        """Local accuracy of the locally optimal sample vs the global
        estimate restricted to this shard."""
        from ..metrics import compute_metrics

        truth = self.shard.true_labels
        labeled = truth >= 0
        if not np.any(labeled):
            return float("nan"), float("nan")
        sample_tags, candidate_tags = self.announced
        local_c = {tag: self.alloc_by_tag[tag].c for tag in sample_tags}
        counts = worker_counts(local_c, candidate_tags, sample_tags)
        scores = {
            t: expected_vi_score(jc, self.shard.n, len(sample_tags))
            for t, jc in counts.items()
        }
        best_local = select_candidate(scores)
        before = compute_metrics(
            truth[labeled], local_c[best_local][labeled]
        ).accuracy
        after = compute_metrics(truth[labeled], refined_c[labeled]).accuracy
        return before, after
