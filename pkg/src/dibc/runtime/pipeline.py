"""Master-side orchestration of the five-step pipeline.

Steps: (a) randomly partition and distribute the data, (b) run local MCMC
chains in parallel, (c) refine the recorded allocation samples across
workers through sufficient statistics, (d) pick the candidate partition
minimizing the estimated expected loss from distributed joint counts, and
(e) aggregate frozen statistics once and sample model parameters on the
master.  A single master seed determines every stream of randomness.
"""

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import _rng
from ..errors import ConfigError, DibcError, PipelineError, TransportError
from ..estimate import LOSSES, merge_counts, select_candidate
from ..local import LocalChainConfig
from ..model import Shard, elicit_priors
from ..params import PosteriorDraws, merge_suff_stats, run_param_chain
from ..refine import (
    GroupState,
    default_refinement_prior,
    init_groups,
    order_items,
    refine_sweep,
)
from .messages import Kind, Message
from .transport import Meter, launch_inproc_workers, launch_tcp_workers

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PipelineConfig:
    n_workers: int = 1
    n_clusters: int = 10
    n_subcomponents: int = 3
    n_iters: int = 1000
    burn_in: int = 500
    thin: int = 1
    n_refine_samples: int = 100
    n_candidates: int = 20
    phi_b: float = 0.5
    phi_w: float = 0.1
    param_iters: int = 2000
    param_burn_in: int = 500
    seed: int = 0
    transport: str = "inproc"
    loss: str = "vi"
    local_diagnostics: bool = True

    def validate(self):
        if self.n_workers < 1:
            raise ConfigError("n_workers must be >= 1")
        if self.n_clusters < 1 or self.n_subcomponents < 1:
            raise ConfigError("n_clusters and n_subcomponents must be >= 1")
        chain = self.chain_config()
        n_eligible = chain.n_eligible
        if self.n_refine_samples > chain.n_recorded:
            raise ConfigError(
                f"n_refine_samples={self.n_refine_samples} exceeds the "
                f"{chain.n_recorded} recorded post-burn-in samples"
            )
        if self.n_candidates > self.n_refine_samples:
            raise ConfigError(
                f"n_candidates={self.n_candidates} exceeds "
                f"n_refine_samples={self.n_refine_samples}"
            )
        if self.transport not in ("inproc", "tcp"):
            raise ConfigError(f"unknown transport {self.transport!r}")
        if self.loss not in LOSSES:
            raise ConfigError(f"unknown loss {self.loss!r}")
        if self.param_burn_in >= self.param_iters:
            raise ConfigError("param_burn_in must be smaller than param_iters")
        return self

    def chain_config(self):
        n_eligible = (self.n_iters - self.burn_in) // self.thin
        record_every = max(1, n_eligible // self.n_refine_samples)
        return LocalChainConfig(
            n_iters=self.n_iters,
            burn_in=self.burn_in,
            thin=self.thin,
            record_allocations_every=record_every,
            seed=self.seed,
        )


@dataclass
class PipelineResult:
    c_star: np.ndarray
    t_star: int
    n_clusters: int
    draws: PosteriorDraws
    diagnostics: dict = field(default_factory=dict)


def partition_data(data, n_workers, seed, labels=None):
    """Uniform random partition into shards whose sizes differ by at most 1.

    Returns (shards, assignment) where assignment[i] is the worker id of
    row i.
    """
    data = np.asarray(data, dtype=np.float64)
    n = data.shape[0]
    if n < n_workers:
        raise ConfigError(f"cannot split {n} rows across {n_workers} workers")
    rng = _rng.stream(seed, _rng.PARTITION)
    perm = rng.permutation(n)
    shards = []
    assignment = np.empty(n, dtype=np.int64)
    base = n // n_workers
    extra = n % n_workers
    start = 0
    for r in range(1, n_workers + 1):
        size = base + (1 if r <= extra else 0)
        rows = perm[start: start + size]
        start += size
        assignment[rows] = r
        shards.append(
            Shard(
                worker_id=r,
                points=data[rows],
                true_labels=None if labels is None else np.asarray(labels)[rows],
                origin=rows.astype(np.int64),
            )
        )
    return shards, assignment


class _StepTimer:
    def __init__(self):
        self.times = {}

    def time(self, name):
        timer = self

        class _Ctx:
            def __enter__(self):
                self.t0 = time.perf_counter()
                return self

            def __exit__(self, *exc):
                timer.times[name] = timer.times.get(name, 0.0) + (
                    time.perf_counter() - self.t0
                )
                return False

        return _Ctx()


def run_pipeline(cfg, data, true_labels=None, _inspect_workers=None):
    """Execute the full pipeline and return the clustering estimate,
    parameter draws and diagnostics.

    ``_inspect_workers`` is a test hook: with the in-process transport it
    receives the worker runtimes after the run completes.
    """
    cfg.validate()
    data = np.asarray(data, dtype=np.float64)
    meter = Meter()
    timer = _StepTimer()
    launch = launch_inproc_workers if cfg.transport == "inproc" else launch_tcp_workers
    pool, workers, threads = launch(cfg.n_workers, meter)
    try:
        result = _run(cfg, data, true_labels, pool, meter, timer)
        if _inspect_workers is not None and workers:
            _inspect_workers(workers)
        return result
    finally:
        pool.shutdown()


def _run(cfg, data, true_labels, pool, meter, timer):
    n_total, dim = data.shape
    diagnostics = {
        "config": asdict(cfg),
        "n_rows": int(n_total),
        "dim": int(dim),
        "refinement_skipped": cfg.n_workers == 1,
        "dropped_samples": [],
    }

    # (a) partition ------------------------------------------------------
    meter.set_phase("partition")
    with timer.time("partition"):
        try:
            shards, assignment = partition_data(
                data, cfg.n_workers, cfg.seed, labels=true_labels
            )
            origin_by_worker = {s.worker_id: s.origin for s in shards}
            for shard in shards:
                pool.send(
                    shard.worker_id, Message(Kind.SHARD_ASSIGN, {"shard": shard})
                )
            moments = pool.gather(Kind.SUFF_STATS_UPLOAD)
        except DibcError as exc:
            raise PipelineError("partition", str(exc)) from exc

    total = sum(m.payload["n"] for m in moments.values())
    mean = sum(m.payload["sum"] for m in moments.values()) / total
    sumsq = sum(m.payload["sumsq"] for m in moments.values())
    data_cov = (sumsq - total * np.outer(mean, mean)) / max(total - 1, 1)
    data_cov = 0.5 * (data_cov + data_cov.T)

    # (b) local chains ----------------------------------------------------
    meter.set_phase("local")
    with timer.time("local"):
        try:
            hp = elicit_priors(
                mean, data_cov, cfg.phi_b, cfg.phi_w,
                n_clusters=cfg.n_clusters, n_subcomponents=cfg.n_subcomponents,
            )
            prior = default_refinement_prior(data_cov)
            chain = cfg.chain_config()
            pool.broadcast(
                lambda r: Message(
                    Kind.RUN_LOCAL_CHAIN,
                    {
                        "n_clusters": cfg.n_clusters,
                        "n_subcomponents": cfg.n_subcomponents,
                        "hp": hp,
                        "chain": chain,
                        "master_seed": cfg.seed,
                        "n_refine_samples": cfg.n_refine_samples,
                        "refinement_prior": prior,
                        "local_diagnostics": cfg.local_diagnostics,
                    },
                )
            )
            uploads = pool.gather(Kind.ITEM_STATS_UPLOAD)
        except DibcError as exc:
            raise PipelineError("local_chains", str(exc)) from exc

    items_by_tag = {}
    for worker_id, msg in sorted(uploads.items()):
        for tag, items in msg.payload["samples"].items():
            items_by_tag.setdefault(tag, {})[worker_id] = items
    sample_tags = sorted(items_by_tag)

    # (c) refinement -------------------------------------------------------
    meter.set_phase("refine")
    with timer.time("refine"):
        refined_tags = _refine_all(cfg, pool, items_by_tag, prior, diagnostics)
    if not refined_tags:
        raise PipelineError("refine", "every sample failed refinement")

    # (d) estimation -------------------------------------------------------
    meter.set_phase("estimate")
    with timer.time("estimate"):
        try:
            cand_rng = _rng.stream(cfg.seed, _rng.CANDIDATES)
            from ..estimate import choose_candidate_tags

            candidate_tags = choose_candidate_tags(
                refined_tags, cfg.n_candidates, cand_rng
            )
            pool.broadcast(
                lambda r: Message(
                    Kind.CANDIDATE_ANNOUNCE,
                    {"sample_tags": refined_tags, "candidate_tags": candidate_tags},
                )
            )
            count_replies = pool.gather(Kind.COUNTS_UPLOAD)
        except DibcError as exc:
            raise PipelineError("estimate", str(exc)) from exc
        merged = merge_counts(
            [msg.payload["counts"] for _, msg in sorted(count_replies.items())]
        )
        loss_fn = LOSSES[cfg.loss]
        scores = {}
        for t_prime, jc in merged.items():
            jc.validate(n_total)
            scores[t_prime] = loss_fn(jc, n_total, len(refined_tags))
        t_star = select_candidate(scores)
        k_star_labels = sorted(merged[t_star].n_plus)
        label_map = {orig: i + 1 for i, orig in enumerate(k_star_labels)}

    diagnostics["candidate_scores"] = {int(t): float(v) for t, v in scores.items()}
    diagnostics["t_star"] = int(t_star)
    diagnostics["n_clusters"] = len(label_map)
    diagnostics["count_entries"] = {
        int(t): jc.n_entries for t, jc in merged.items()
    }

    # (e) parameter sampling -------------------------------------------------
    meter.set_phase("collect")
    with timer.time("collect"):
        try:
            pool.broadcast(
                lambda r: Message(
                    Kind.GLOBAL_ESTIMATE_BROADCAST,
                    {
                        "t_star": t_star,
                        "n_clusters": len(label_map),
                        "label_map": label_map,
                    },
                )
            )
            label_replies = pool.gather(Kind.LABEL_ASSIGN)
            stats_replies = pool.gather(Kind.SUFF_STATS_UPLOAD)
        except DibcError as exc:
            raise PipelineError("collect", str(exc)) from exc
        c_star = np.empty(n_total, dtype=np.int64)
        accuracy_delta = {}
        for worker_id, msg in sorted(label_replies.items()):
            c_star[origin_by_worker[worker_id]] = msg.payload["labels"]
            before = msg.payload["accuracy_before"]
            after = msg.payload["accuracy_after"]
            if np.isfinite(before) and np.isfinite(after):
                accuracy_delta[worker_id] = {
                    "before": float(before), "after": float(after),
                }
        if accuracy_delta:
            diagnostics["per_worker_accuracy"] = accuracy_delta

    meter.set_phase("params")
    with timer.time("params"):
        try:
            stats = merge_suff_stats(
                {w: msg.payload["stats"] for w, msg in stats_replies.items()}
            ).validate(n_total)
            draws = run_param_chain(
                stats, hp,
                n_iters=cfg.param_iters, burn_in=cfg.param_burn_in,
                rng=_rng.stream(cfg.seed, _rng.PARAMS), seed=cfg.seed,
            )
        except DibcError as exc:
            raise PipelineError("params", str(exc)) from exc

    diagnostics["step_seconds"] = dict(timer.times)
    diagnostics["transport"] = meter.summary()
    diagnostics["master_bound_bytes"] = {
        phase: meter.master_bound_bytes({phase})
        for phase in ("partition", "local", "refine", "estimate", "collect", "params")
    }
    return PipelineResult(
        c_star=c_star,
        t_star=int(t_star),
        n_clusters=len(label_map),
        draws=draws,
        diagnostics=diagnostics,
    )


def _refine_all(cfg, pool, items_by_tag, prior, diagnostics):
    """Run one collapsed Gibbs pass per recorded sample; failed samples are
    dropped with a warning.  With a single worker the local samples stand
    in for the refined set directly (identity assignments)."""
    refined_tags = []
    worker_ids = pool.worker_ids
    for tag in sorted(items_by_tag):
        per_worker = items_by_tag[tag]
        try:
            if cfg.n_workers == 1:
                assignments = {
                    it.within_index: it.within_index
                    for it in per_worker[worker_ids[0]]
                }
                pool.send(
                    worker_ids[0],
                    Message(
                        Kind.LABEL_ASSIGN,
                        {"tag": tag, "assignments": assignments},
                        correlation=tag,
                    ),
                )
                refined_tags.append(tag)
                continue
            rng = _rng.stream(cfg.seed, _rng.REFINE, tag)
            reference = int(worker_ids[int(rng.integers(len(worker_ids)))])
            if not per_worker.get(reference):
                raise PipelineError(
                    "refine", f"reference worker {reference} has no items"
                )
            items = order_items(per_worker, reference)
            state = init_groups(items, reference)

            def loglik_fn(b, counts, means, moments):
                item = items[b]
                reply = pool.request(
                    item.worker,
                    Message(
                        Kind.GROUP_STATS_BROADCAST,
                        {
                            "tag": tag,
                            "within_index": item.within_index,
                            "counts": counts,
                            "means": means,
                            "moments": moments,
                        },
                        correlation=(tag << 20) | item.within_index,
                    ),
                )
                return reply.payload["logliks"]

            state = refine_sweep(items, state, prior, loglik_fn, rng)
            for worker_id in worker_ids:
                assignments = {
                    items[b].within_index: state.updated_label(b)
                    for b in range(len(items))
                    if items[b].worker == worker_id
                }
                pool.send(
                    worker_id,
                    Message(
                        Kind.LABEL_ASSIGN,
                        {"tag": tag, "assignments": assignments},
                        correlation=tag,
                    ),
                )
            refined_tags.append(tag)
        except (TransportError, DibcError) as exc:
            if isinstance(exc, PipelineError):
                raise
            log.warning("dropping sample %s: refinement failed (%s)", tag, exc)
            diagnostics["dropped_samples"].append(int(tag))
    return refined_tags
