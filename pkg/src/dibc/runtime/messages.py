"""Typed wire envelope and binary payload codec.

Frame layout (little-endian): ``[u32 length][u8 kind][u64 correlation]
[payload]`` where ``length`` counts everything after the length field.
Payload encodings are fixed-width (struct-packed scalars plus raw
little-endian f8/i8 array bytes), so a message's size depends only on the
counts of the entities it carries, never on the magnitude of the values.

Worker-originated payloads begin with a status byte; a nonzero status
carries an error category and message instead of the normal payload.
"""

import struct
from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np

from ..errors import TransportError

FRAME_HEADER = struct.Struct("<I")
ENVELOPE = struct.Struct("<BQ")

PROTOCOL_MAGIC = b"DIBC"
PROTOCOL_VERSION = 1


class Kind(IntEnum):
    SHARD_ASSIGN = 1
    RUN_LOCAL_CHAIN = 2
    ITEM_STATS_UPLOAD = 3
    GROUP_STATS_BROADCAST = 4
    LOGLIK_REPLY = 5
    LABEL_ASSIGN = 6
    CANDIDATE_ANNOUNCE = 7
    COUNTS_UPLOAD = 8
    GLOBAL_ESTIMATE_BROADCAST = 9
    SUFF_STATS_UPLOAD = 10
    SHUTDOWN = 11


@dataclass
class Message:
    kind: Kind
    payload: dict = field(default_factory=dict)
    correlation: int = 0


class Writer:
    def __init__(self):
        self.parts = []

    def u8(self, v):
        self.parts.append(struct.pack("<B", v))

    def u32(self, v):
        self.parts.append(struct.pack("<I", v))

    def u64(self, v):
        self.parts.append(struct.pack("<Q", v))

    def i64(self, v):
        self.parts.append(struct.pack("<q", v))

    def f64(self, v):
        self.parts.append(struct.pack("<d", float(v)))

    def farray(self, arr):
        self.parts.append(np.ascontiguousarray(arr, dtype="<f8").tobytes())

    def iarray(self, arr):
        self.parts.append(np.ascontiguousarray(arr, dtype="<i8").tobytes())

    def string(self, s):
        raw = s.encode("utf-8")
        self.u32(len(raw))
        self.parts.append(raw)

    def getvalue(self):
        return b"".join(self.parts)


class Reader:
    def __init__(self, buf):
        self.buf = buf
        self.pos = 0

    def _take(self, n):
        if self.pos + n > len(self.buf):
            raise TransportError("truncated payload")
        out = self.buf[self.pos: self.pos + n]
        self.pos += n
        return out

    def u8(self):
        return struct.unpack("<B", self._take(1))[0]

    def u32(self):
        return struct.unpack("<I", self._take(4))[0]

    def u64(self):
        return struct.unpack("<Q", self._take(8))[0]

    def i64(self):
        return struct.unpack("<q", self._take(8))[0]

    def f64(self):
        return struct.unpack("<d", self._take(8))[0]

    def farray(self, shape):
        count = int(np.prod(shape)) if shape else 1
        return (
            np.frombuffer(self._take(8 * count), dtype="<f8")
            .reshape(shape)
            .copy()
        )

    def iarray(self, shape):
        count = int(np.prod(shape)) if shape else 1
        return (
            np.frombuffer(self._take(8 * count), dtype="<i8")
            .reshape(shape)
            .copy()
        )

    def string(self):
        n = self.u32()
        return self._take(n).decode("utf-8")


def _write_hyperparams(w, hp):
    d = hp.dim
    w.u32(d)
    for name in ("e0", "d0", "c0", "g0", "nu"):
        w.f64(getattr(hp, name))
    w.farray(hp.G0)
    w.farray(hp.B0)
    w.farray(hp.m0)
    w.farray(hp.M0)


def _read_hyperparams(r):
    from ..model import Hyperparams

    d = r.u32()
    e0, d0, c0, g0, nu = (r.f64() for _ in range(5))
    return Hyperparams(
        e0=e0, d0=d0, c0=c0, g0=g0,
        G0=r.farray((d, d)), B0=r.farray((d, d)),
        m0=r.farray((d,)), M0=r.farray((d, d)), nu=nu,
    )


def _encode_shard_assign(w, p):
    shard = p["shard"]
    n, d = shard.points.shape
    w.u32(shard.worker_id)
    w.u64(n)
    w.u32(d)
    w.u8(1 if shard.true_labels is not None else 0)
    w.iarray(shard.origin)
    w.farray(shard.points)
    if shard.true_labels is not None:
        w.iarray(shard.true_labels)


def _decode_shard_assign(r):
    from ..model import Shard

    worker_id = r.u32()
    n = r.u64()
    d = r.u32()
    has_labels = r.u8()
    origin = r.iarray((n,))
    points = r.farray((n, d))
    labels = r.iarray((n,)) if has_labels else None
    return {
        "shard": Shard(
            worker_id=worker_id, points=points, true_labels=labels, origin=origin
        )
    }


def _encode_run_local_chain(w, p):
    w.u32(p["n_clusters"])
    w.u32(p["n_subcomponents"])
    _write_hyperparams(w, p["hp"])
    cfg = p["chain"]
    w.u32(cfg.n_iters)
    w.u32(cfg.burn_in)
    w.u32(cfg.thin)
    w.u32(cfg.record_every)
    w.u64(p["master_seed"])
    w.u32(p["n_refine_samples"])
    prior = p["refinement_prior"]
    w.f64(prior.alpha0)
    w.f64(prior.nu0)
    w.farray(prior.S0)
    w.u8(1 if p.get("local_diagnostics") else 0)


def _decode_run_local_chain(r):
    from ..local import LocalChainConfig
    from ..refine import RefinementPrior

    n_clusters = r.u32()
    n_subcomponents = r.u32()
    hp = _read_hyperparams(r)
    d = hp.dim
    chain = LocalChainConfig(
        n_iters=r.u32(), burn_in=r.u32(), thin=r.u32(),
        record_allocations_every=r.u32(),
    )
    master_seed = r.u64()
    n_refine = r.u32()
    prior = RefinementPrior(alpha0=r.f64(), nu0=r.f64(), S0=r.farray((d, d)))
    return {
        "n_clusters": n_clusters,
        "n_subcomponents": n_subcomponents,
        "hp": hp,
        "chain": chain,
        "master_seed": master_seed,
        "n_refine_samples": n_refine,
        "refinement_prior": prior,
        "local_diagnostics": bool(r.u8()),
    }


def _write_status(w, p):
    error = p.get("error")
    if error is None:
        w.u8(0)
        return False
    w.u8(1)
    w.u8(error.get("code", 1))
    w.string(error.get("message", ""))
    return True


def _read_status(r):
    if r.u8() == 0:
        return None
    return {"code": r.u8(), "message": r.string()}


def _encode_item_stats(w, p):
    if _write_status(w, p):
        return
    w.u32(p["worker_id"])
    w.u32(p["dim"])
    samples = p["samples"]  # {tag: [item summaries]}
    w.u32(len(samples))
    for tag in sorted(samples):
        w.u32(tag)
        items = samples[tag]
        w.u32(len(items))
        for item in items:
            w.u32(item.within_index)
            w.u64(item.count)
            w.farray(item.mean)
            w.farray(item.second_moment)


def _decode_item_stats(r):
    from ..refine import ItemStats

    error = _read_status(r)
    if error is not None:
        return {"error": error}
    worker_id = r.u32()
    d = r.u32()
    n_samples = r.u32()
    samples = {}
    for _ in range(n_samples):
        tag = r.u32()
        n_items = r.u32()
        items = []
        for _ in range(n_items):
            within = r.u32()
            count = r.u64()
            mean = r.farray((d,))
            second = r.farray((d, d))
            items.append(
                ItemStats(
                    worker=worker_id, within_index=within, count=count,
                    mean=mean, second_moment=second,
                )
            )
        samples[tag] = items
    return {"worker_id": worker_id, "dim": d, "samples": samples}


def _encode_group_stats(w, p):
    w.u32(p["tag"])
    w.u32(p["within_index"])
    counts = p["counts"]
    means = p["means"]
    moments = p["moments"]
    h, d = means.shape
    w.u32(h)
    w.u32(d)
    w.iarray(counts)
    w.farray(means)
    w.farray(moments)


def _decode_group_stats(r):
    tag = r.u32()
    within = r.u32()
    h = r.u32()
    d = r.u32()
    return {
        "tag": tag,
        "within_index": within,
        "counts": r.iarray((h,)),
        "means": r.farray((h, d)),
        "moments": r.farray((h, d, d)),
    }


def _encode_loglik_reply(w, p):
    if _write_status(w, p):
        return
    w.u32(p["tag"])
    w.u32(p["within_index"])
    logliks = p["logliks"]
    w.u32(len(logliks))
    w.farray(logliks)


def _decode_loglik_reply(r):
    error = _read_status(r)
    if error is not None:
        return {"error": error}
    tag = r.u32()
    within = r.u32()
    h = r.u32()
    return {"tag": tag, "within_index": within, "logliks": r.farray((h,))}


def _encode_label_assign(w, p):
    if "labels" in p:  # worker -> master: final row labels
        w.u8(1)
        if _write_status(w, p):
            return
        w.u32(p["worker_id"])
        labels = p["labels"]
        w.u64(len(labels))
        w.iarray(labels)
        w.f64(p.get("accuracy_before", float("nan")))
        w.f64(p.get("accuracy_after", float("nan")))
    else:  # master -> worker: refined item labels for one sample
        w.u8(0)
        w.u32(p["tag"])
        assignments = p["assignments"]  # {within_index: z_tilde}
        w.u32(len(assignments))
        for within in sorted(assignments):
            w.u32(within)
            w.u32(assignments[within])


def _decode_label_assign(r):
    sub = r.u8()
    if sub == 1:
        error = _read_status(r)
        if error is not None:
            return {"error": error}
        worker_id = r.u32()
        n = r.u64()
        labels = r.iarray((n,))
        return {
            "worker_id": worker_id,
            "labels": labels,
            "accuracy_before": r.f64(),
            "accuracy_after": r.f64(),
        }
    tag = r.u32()
    n = r.u32()
    assignments = {}
    for _ in range(n):
        within = r.u32()
        assignments[within] = r.u32()
    return {"tag": tag, "assignments": assignments}


def _encode_candidate_announce(w, p):
    sample_tags = p["sample_tags"]
    candidate_tags = p["candidate_tags"]
    w.u32(len(sample_tags))
    for t in sample_tags:
        w.u32(t)
    w.u32(len(candidate_tags))
    for t in candidate_tags:
        w.u32(t)


def _decode_candidate_announce(r):
    n_t = r.u32()
    sample_tags = [r.u32() for _ in range(n_t)]
    n_m = r.u32()
    candidate_tags = [r.u32() for _ in range(n_m)]
    return {"sample_tags": sample_tags, "candidate_tags": candidate_tags}


def _encode_counts_upload(w, p):
    if _write_status(w, p):
        return
    w.u32(p["worker_id"])
    counts = p["counts"]  # {t': JointCounts}
    w.u32(len(counts))
    for t_prime in sorted(counts):
        jc = counts[t_prime]
        w.u32(t_prime)
        w.u32(len(jc.n_plus))
        for j in sorted(jc.n_plus):
            w.i64(j)
            w.i64(jc.n_plus[j])
        w.u32(len(jc.n_joint))
        for t in sorted(jc.n_joint):
            table = jc.n_joint[t]
            w.u32(t)
            w.u32(len(table))
            for (i, j) in sorted(table):
                w.i64(i)
                w.i64(j)
                w.i64(table[(i, j)])


def _decode_counts_upload(r):
    from collections import Counter

    from ..estimate import JointCounts

    error = _read_status(r)
    if error is not None:
        return {"error": error}
    worker_id = r.u32()
    n_candidates = r.u32()
    counts = {}
    for _ in range(n_candidates):
        t_prime = r.u32()
        jc = JointCounts()
        n_plus = r.u32()
        for _ in range(n_plus):
            j = r.i64()
            jc.n_plus[j] = r.i64()
        n_tables = r.u32()
        for _ in range(n_tables):
            t = r.u32()
            table = Counter()
            n_entries = r.u32()
            for _ in range(n_entries):
                i = r.i64()
                j = r.i64()
                table[(i, j)] = r.i64()
            jc.n_joint[t] = table
        counts[t_prime] = jc
    return {"worker_id": worker_id, "counts": counts}


def _encode_global_estimate(w, p):
    w.u32(p["t_star"])
    w.u32(p["n_clusters"])
    label_map = p["label_map"]  # {original label: canonical 1..k*}
    w.u32(len(label_map))
    for orig in sorted(label_map):
        w.i64(orig)
        w.u32(label_map[orig])


def _decode_global_estimate(r):
    t_star = r.u32()
    k_star = r.u32()
    n = r.u32()
    label_map = {}
    for _ in range(n):
        orig = r.i64()
        label_map[orig] = r.u32()
    return {"t_star": t_star, "n_clusters": k_star, "label_map": label_map}


def _encode_suff_stats(w, p):
    if _write_status(w, p):
        return
    if "stats" in p:
        w.u8(1)
        w.u32(p["worker_id"])
        stats = p["stats"]
        k, ell = stats.counts.shape
        d = stats.dim
        w.u32(k)
        w.u32(ell)
        w.u32(d)
        w.iarray(stats.counts)
        w.farray(stats.sums)
        w.farray(stats.outers)
    else:
        w.u8(0)
        w.u32(p["worker_id"])
        w.u64(p["n"])
        d = p["sum"].shape[0]
        w.u32(d)
        w.farray(p["sum"])
        w.farray(p["sumsq"])


def _decode_suff_stats(r):
    error = _read_status(r)
    if error is not None:
        return {"error": error}
    sub = r.u8()
    if sub == 1:
        from ..params import FixedSuffStats

        worker_id = r.u32()
        k = r.u32()
        ell = r.u32()
        d = r.u32()
        return {
            "worker_id": worker_id,
            "stats": FixedSuffStats(
                counts=r.iarray((k, ell)),
                sums=r.farray((k, ell, d)),
                outers=r.farray((k, ell, d, d)),
            ),
        }
    worker_id = r.u32()
    n = r.u64()
    d = r.u32()
    return {
        "worker_id": worker_id,
        "n": n,
        "sum": r.farray((d,)),
        "sumsq": r.farray((d, d)),
    }


def _encode_empty(w, p):
    pass


def _decode_empty(r):
    return {}


_CODECS = {
    Kind.SHARD_ASSIGN: (_encode_shard_assign, _decode_shard_assign),
    Kind.RUN_LOCAL_CHAIN: (_encode_run_local_chain, _decode_run_local_chain),
    Kind.ITEM_STATS_UPLOAD: (_encode_item_stats, _decode_item_stats),
    Kind.GROUP_STATS_BROADCAST: (_encode_group_stats, _decode_group_stats),
    Kind.LOGLIK_REPLY: (_encode_loglik_reply, _decode_loglik_reply),
    Kind.LABEL_ASSIGN: (_encode_label_assign, _decode_label_assign),
    Kind.CANDIDATE_ANNOUNCE: (_encode_candidate_announce, _decode_candidate_announce),
    Kind.COUNTS_UPLOAD: (_encode_counts_upload, _decode_counts_upload),
    Kind.GLOBAL_ESTIMATE_BROADCAST: (_encode_global_estimate, _decode_global_estimate),
    Kind.SUFF_STATS_UPLOAD: (_encode_suff_stats, _decode_suff_stats),
    Kind.SHUTDOWN: (_encode_empty, _decode_empty),
}


def encode_frame(msg):
    """Serialize a Message to one wire frame (including the length prefix)."""
    encode, _ = _CODECS[msg.kind]
    w = Writer()
    encode(w, msg.payload)
    payload = w.getvalue()
    body = ENVELOPE.pack(int(msg.kind), msg.correlation) + payload
    return FRAME_HEADER.pack(len(body)) + body


def decode_body(body):
    """Decode the frame body (everything after the length prefix)."""
    if len(body) < ENVELOPE.size:
        raise TransportError("frame too short")
    kind_value, correlation = ENVELOPE.unpack(body[: ENVELOPE.size])
    try:
        kind = Kind(kind_value)
    except ValueError as exc:
        raise TransportError(f"unknown message kind {kind_value}") from exc
    _, decode = _CODECS[kind]
    r = Reader(body[ENVELOPE.size:])
    payload = decode(r)
    return Message(kind=kind, payload=payload, correlation=correlation)
