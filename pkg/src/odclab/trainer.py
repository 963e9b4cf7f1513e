"""Training loops.

`train_odc` interleaves clustering with optimization: every iteration does a
forward pass, a supervised step against the pseudo-labels read from the
samples memory, a momentum update of the batch's memory rows, and a
nearest-centroid reassignment of those rows. Centroid refresh and
small-cluster elimination run on a fixed iteration cadence.

`train_dc` is the offline baseline: once per epoch it re-extracts features
for the whole dataset, re-clusters them from scratch (cluster ids land in
arbitrary order), re-initializes the classifier, and then runs one epoch of
supervised steps on the frozen labels.

Both loops are fully deterministic given (config, seed): reruns produce
byte-identical metrics CSV and summary JSON. Wall-clock timings are kept
out of those files for exactly that reason.
"""

from __future__ import annotations

import json
import os
import time
from dataclasses import dataclass, field

import numpy as np

from . import backbone as bb
from . import kmeans as km
from . import memory as mm
from . import metrics as mt
from . import rebalance as rb
from .errors import NonFiniteError, UnsatisfiableError, ZeroNormError
from .numerics import as_matrix, format_float

ALGO_ODC = "odc"
ALGO_DC = "dc"

METRICS_COLUMNS = (
    "iter", "epoch", "loss", "unweighted_loss",
    "label_switch_ratio", "min_cluster", "max_cluster",
)


@dataclass
class RunConfig:
    algo: str = ALGO_ODC
    n_clusters: int = 50
    batch_size: int = 64
    epochs: int = 50
    momentum: float = 0.5            # memory feature blend weight
    centroid_interval: int = 10      # refresh dirty centroids every this many iterations
    rebalance: rb.RebalanceConfig | None = None  # None: resolved from data size
    sgd: bb.SgdConfig = field(default_factory=bb.SgdConfig)
    seed: int = 0
    dc_uniform_sampling: bool = False
    resume_checkpoint: str | None = None
    hidden_dim: int = 32
    feature_dim: int = 16
    kmeans_restarts: int = 10
    lr_decay_epoch: int | None = 15    # one-time x0.1 learning-rate step
    standardize_inputs: bool = True    # fresh models z-score the raw inputs
    debug_checks: bool = False         # assert memory invariants every iteration

    def __post_init__(self):
        if self.algo not in (ALGO_ODC, ALGO_DC):
            raise ValueError(f"algo must be '{ALGO_ODC}' or '{ALGO_DC}'")
        if self.n_clusters < 2:
            raise ValueError("n_clusters must be >= 2")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if not 0.0 < self.momentum <= 1.0:
            raise ValueError("momentum must be in (0, 1]")
        if self.centroid_interval < 1:
            raise ValueError("centroid_interval must be >= 1")


@dataclass
class IterationRecord:
    iteration: int
    epoch: int
    loss: float
    unweighted_loss: float
    switch_ratio: float
    min_cluster: int
    max_cluster: int
    wall_time: float  # seconds spent in this iteration; not serialized


@dataclass
class RunLog:
    config: dict
    records: list[IterationRecord]
    final_labels: np.ndarray
    final_nmi: float | None
    final_purity: float | None
    wall_time_sec: float
    backbone: bb.Backbone
    samples_memory: mm.SamplesMemory | None = None
    centroids_memory: mm.CentroidsMemory | None = None
    rebalance_events: int = 0

    def losses(self, unweighted: bool = False) -> np.ndarray:
        if unweighted:
            return np.array([r.unweighted_loss for r in self.records])
        return np.array([r.loss for r in self.records])

    def switch_ratios(self) -> np.ndarray:
        return np.array([r.switch_ratio for r in self.records])


def resume(cfg: RunConfig) -> bb.Backbone:
    """Load the backbone named by cfg.resume_checkpoint."""
    if not cfg.resume_checkpoint:
        raise ValueError("resume requires cfg.resume_checkpoint")
    return bb.load_checkpoint(cfg.resume_checkpoint)


def extract_unit_features(model: bb.Backbone, points: np.ndarray,
                          chunk: int = 512) -> np.ndarray:
    """Forward all rows and L2-normalize the resulting feature rows."""
    pts = as_matrix(points)
    blocks = [
        bb.forward(model, pts[start:start + chunk]).features
        for start in range(0, pts.shape[0], chunk)
    ]
    feats = np.vstack(blocks)
    norms = np.linalg.norm(feats, axis=1)
    bad = np.flatnonzero(norms <= 1e-300)
    if bad.size:
        raise ZeroNormError(
            f"feature rows {bad[:5].tolist()} have zero norm; cannot normalize"
        )
    return feats / norms[:, None]


def _make_backbone(cfg: RunConfig, pts: np.ndarray,
                   rng: np.random.Generator) -> bb.Backbone:
    input_dim = pts.shape[1]
    if cfg.resume_checkpoint:
        # a resumed model keeps its own input standardization
        model = resume(cfg)
        if model.input_dim != input_dim or model.n_classes != cfg.n_clusters:
            raise ValueError(
                f"checkpoint dims (input {model.input_dim}, classes "
                f"{model.n_classes}) do not match run (input {input_dim}, "
                f"clusters {cfg.n_clusters})"
            )
        return model
    model = bb.Backbone(input_dim, cfg.hidden_dim, cfg.feature_dim,
                        cfg.n_clusters, rng)
    if cfg.standardize_inputs:
        std = pts.std(axis=0)
        model.set_input_standardization(
            pts.mean(axis=0), np.where(std > 1e-12, std, 1.0)
        )
    return model


def _resolve_rebalance(cfg: RunConfig, n: int) -> rb.RebalanceConfig:
    if cfg.rebalance is not None:
        return cfg.rebalance
    return rb.RebalanceConfig(
        min_cluster_size=rb.default_min_cluster_size(n, cfg.n_clusters),
        check_every=cfg.centroid_interval,
    )


def _resolved_config_dict(cfg: RunConfig, reb: rb.RebalanceConfig,
                          n: int, input_dim: int) -> dict:
    return {
        "algo": cfg.algo,
        "n_samples": n,
        "input_dim": input_dim,
        "n_clusters": cfg.n_clusters,
        "batch_size": cfg.batch_size,
        "epochs": cfg.epochs,
        "momentum": cfg.momentum,
        "centroid_interval": cfg.centroid_interval,
        "min_cluster_size": reb.min_cluster_size,
        "rebalance_check_every": reb.check_every,
        "learning_rate": cfg.sgd.learning_rate,
        "sgd_momentum": cfg.sgd.momentum,
        "weight_decay": cfg.sgd.weight_decay,
        "lr_decay_epoch": cfg.lr_decay_epoch,
        "seed": cfg.seed,
        "dc_uniform_sampling": cfg.dc_uniform_sampling,
        "resume_checkpoint": cfg.resume_checkpoint,
        "hidden_dim": cfg.hidden_dim,
        "feature_dim": cfg.feature_dim,
        "kmeans_restarts": cfg.kmeans_restarts,
        "standardize_inputs": cfg.standardize_inputs,
    }


def _epoch_lr(cfg: RunConfig, epoch: int) -> bb.SgdConfig:
    lr = cfg.sgd.learning_rate
    if cfg.lr_decay_epoch is not None and epoch >= cfg.lr_decay_epoch:
        lr *= 0.1
    return bb.SgdConfig(learning_rate=lr, momentum=cfg.sgd.momentum,
                        weight_decay=cfg.sgd.weight_decay)


def _batches(perm: np.ndarray, batch_size: int):
    for start in range(0, perm.shape[0], batch_size):
        yield perm[start:start + batch_size]


def _validate_run(cfg: RunConfig, reb_cfg: rb.RebalanceConfig, n: int) -> None:
    if cfg.n_clusters > n:
        raise ValueError(f"n_clusters {cfg.n_clusters} exceeds n_samples {n}")
    if n < cfg.n_clusters * reb_cfg.min_cluster_size:
        raise UnsatisfiableError(
            f"n={n} cannot give {cfg.n_clusters} clusters of size >= "
            f"{reb_cfg.min_cluster_size}; lower the threshold"
        )


def _final_scores(labels: np.ndarray, true_labels) -> tuple[float | None, float | None]:
    if true_labels is None:
        return None, None
    return mt.nmi(labels, true_labels), mt.purity(labels, true_labels)


def train_odc(points, cfg: RunConfig, rng: np.random.Generator,
              true_labels=None) -> RunLog:
    """Online joint clustering and representation learning.

    Per iteration: forward the batch, read its pseudo-labels from the
    samples memory, take one weighted-cross-entropy SGD step, then push the
    batch's fresh features into the memory and reassign each batch sample to
    its nearest centroid. Every `centroid_interval` iterations the dirty
    centroids are re-averaged and undersized clusters are eliminated.
    """
    t_start = time.perf_counter()
    pts = as_matrix(points)
    n = pts.shape[0]
    reb_cfg = _resolve_rebalance(cfg, n)
    _validate_run(cfg, reb_cfg, n)
    model = _make_backbone(cfg, pts, rng)
    velocity = model.zero_velocity()

    feats = extract_unit_features(model, pts)
    mem, cmem = mm.init_memories(feats, cfg.n_clusters, rng,
                                 restarts=cfg.kmeans_restarts)

    records: list[IterationRecord] = []
    iteration = 0
    rebalance_events = 0
    for epoch in range(cfg.epochs):
        sgd_cfg = _epoch_lr(cfg, epoch)
        perm = rng.permutation(n)
        for batch in _batches(perm, cfg.batch_size):
            iteration += 1
            t0 = time.perf_counter()

            cache = bb.forward(model, pts[batch])
            batch_labels = mem.labels[batch]
            weights = rb.class_weights(mem.counts)
            loss, dlogits = bb.weighted_ce_loss(cache.logits, batch_labels, weights)
            if not np.isfinite(loss):
                raise NonFiniteError(
                    f"loss became {loss} at iteration {iteration} "
                    f"(epoch {epoch}); aborting"
                )
            unweighted = bb.mean_nll(cache.logits, batch_labels)
            grads = bb.backward(model, cache, dlogits)
            bb.sgd_step(model, grads, sgd_cfg, velocity)

            for row, idx in enumerate(batch):
                mm.momentum_update(mem, int(idx), cache.features[row], cfg.momentum)
            switches = 0
            for idx in batch:
                old, new = mm.reassign(mem, cmem, int(idx))
                switches += old != new

            refreshed: set[int] = set()
            if iteration % cfg.centroid_interval == 0 or \
                    iteration % reb_cfg.check_every == 0:
                refreshed = set(cmem.dirty)
                mm.recompute_dirty(mem, cmem)
            if iteration % reb_cfg.check_every == 0:
                report = rb.handle_small_clusters(mem, cmem, reb_cfg, rng)
                if not report.is_noop:
                    mm.recompute_clusters(mem, cmem, sorted(report.touched))
                    rebalance_events += 1
                    refreshed |= report.touched
                if cfg.debug_checks and int(mem.counts.min()) < reb_cfg.min_cluster_size:
                    raise AssertionError(
                        f"cluster below threshold after rebalance at "
                        f"iteration {iteration}"
                    )
            if cfg.debug_checks:
                mm.check_consistency(mem, cmem)
                _assert_exact_means(mem, cmem, refreshed)

            records.append(IterationRecord(
                iteration=iteration,
                epoch=epoch,
                loss=loss,
                unweighted_loss=unweighted,
                switch_ratio=switches / len(batch),
                min_cluster=int(mem.counts.min()),
                max_cluster=int(mem.counts.max()),
                wall_time=time.perf_counter() - t0,
            ))

    final_nmi, final_purity = _final_scores(mem.labels, true_labels)
    return RunLog(
        config=_resolved_config_dict(cfg, reb_cfg, n, pts.shape[1]),
        records=records,
        final_labels=mem.labels.copy(),
        final_nmi=final_nmi,
        final_purity=final_purity,
        wall_time_sec=time.perf_counter() - t_start,
        backbone=model,
        samples_memory=mem,
        centroids_memory=cmem,
        rebalance_events=rebalance_events,
    )


def _assert_exact_means(mem: mm.SamplesMemory, cmem: mm.CentroidsMemory,
                        clusters: set[int]) -> None:
    """Debug guard: freshly refreshed centroids must equal scratch means."""
    for c in clusters:
        members = mem.features[mem.labels == c]
        if members.size and not np.allclose(
            cmem.centroids[c], members.mean(axis=0), rtol=0.0, atol=1e-12
        ):
            raise AssertionError(f"centroid {c} drifted from the member mean")


def train_dc(points, cfg: RunConfig, rng: np.random.Generator,
             true_labels=None) -> RunLog:
    """Offline-clustering baseline.

    Per epoch: extract features for the whole dataset, run a fresh global
    K-Means (cluster ids land in arbitrary order), re-initialize the
    classifier, then take one pass of supervised mini-batch steps on the
    frozen labels. Class imbalance is countered either by uniform-over-
    cluster sampling (with replacement) or by inverse-sqrt loss re-weighting.

    The recorded switch ratio for a batch is the fraction of its samples
    whose label changed at this epoch's re-clustering; labels are frozen
    between re-clusterings.
    """
    t_start = time.perf_counter()
    pts = as_matrix(points)
    n = pts.shape[0]
    # the rebalance config is echoed for config parity but unused by DC, so
    # its size constraint is not enforced here
    reb_cfg = _resolve_rebalance(cfg, n)
    if cfg.n_clusters > n:
        raise ValueError(f"n_clusters {cfg.n_clusters} exceeds n_samples {n}")
    model = _make_backbone(cfg, pts, rng)
    velocity = model.zero_velocity()

    labels = _initial_dc_labels(model, pts, cfg, rng) if cfg.epochs == 0 else None
    records: list[IterationRecord] = []
    iteration = 0
    for epoch in range(cfg.epochs):
        sgd_cfg = _epoch_lr(cfg, epoch)
        feats = extract_unit_features(model, pts)
        result = km.kmeans(feats, cfg.n_clusters, rng,
                              restarts=cfg.kmeans_restarts)
        new_labels = result.assignments
        changed = np.ones(n, dtype=bool) if labels is None else new_labels != labels
        labels = new_labels
        counts = np.bincount(labels, minlength=cfg.n_clusters)

        bb.reinit_classifier(model, rng)
        if cfg.dc_uniform_sampling:
            stream = _uniform_over_cluster_stream(labels, counts, n, rng)
            weights = np.ones(cfg.n_clusters)
        else:
            stream = rng.permutation(n)
            weights = rb.class_weights(counts)

        for batch in _batches(stream, cfg.batch_size):
            iteration += 1
            t0 = time.perf_counter()
            cache = bb.forward(model, pts[batch])
            batch_labels = labels[batch]
            loss, dlogits = bb.weighted_ce_loss(cache.logits, batch_labels, weights)
            if not np.isfinite(loss):
                raise NonFiniteError(
                    f"loss became {loss} at iteration {iteration} "
                    f"(epoch {epoch}); aborting"
                )
            unweighted = bb.mean_nll(cache.logits, batch_labels)
            grads = bb.backward(model, cache, dlogits)
            bb.sgd_step(model, grads, sgd_cfg, velocity)
            records.append(IterationRecord(
                iteration=iteration,
                epoch=epoch,
                loss=loss,
                unweighted_loss=unweighted,
                switch_ratio=float(changed[batch].mean()),
                min_cluster=int(counts.min()),
                max_cluster=int(counts.max()),
                wall_time=time.perf_counter() - t0,
            ))

    assert labels is not None
    final_nmi, final_purity = _final_scores(labels, true_labels)
    return RunLog(
        config=_resolved_config_dict(cfg, reb_cfg, n, pts.shape[1]),
        records=records,
        final_labels=labels.copy(),
        final_nmi=final_nmi,
        final_purity=final_purity,
        wall_time_sec=time.perf_counter() - t_start,
        backbone=model,
    )


def _initial_dc_labels(model: bb.Backbone, pts: np.ndarray, cfg: RunConfig,
                       rng: np.random.Generator) -> np.ndarray:
    feats = extract_unit_features(model, pts)
    return km.kmeans(feats, cfg.n_clusters, rng,
                        restarts=cfg.kmeans_restarts).assignments


def _uniform_over_cluster_stream(labels: np.ndarray, counts: np.ndarray,
                                 n: int, rng: np.random.Generator) -> np.ndarray:
    """Epoch-length sample stream: pick a nonempty cluster uniformly, then a
    member uniformly (sampling with replacement)."""
    nonempty = np.flatnonzero(counts > 0)
    members = {int(c): np.flatnonzero(labels == c) for c in nonempty}
    cluster_picks = rng.integers(0, nonempty.size, size=n)
    stream = np.empty(n, dtype=np.int64)
    for i, pick in enumerate(cluster_picks):
        rows = members[int(nonempty[pick])]
        stream[i] = rows[rng.integers(rows.size)]
    return stream


def train(points, cfg: RunConfig, rng: np.random.Generator,
          true_labels=None) -> RunLog:
    """Dispatch on cfg.algo."""
    if cfg.algo == ALGO_ODC:
        return train_odc(points, cfg, rng, true_labels)
    return train_dc(points, cfg, rng, true_labels)


def write_metrics_csv(log: RunLog, path: str) -> None:
    """One row per iteration; float cells are repr-formatted so identical
    runs serialize to identical bytes."""
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        f.write(",".join(METRICS_COLUMNS) + "\n")
        for r in log.records:
            f.write(",".join((
                str(r.iteration),
                str(r.epoch),
                format_float(r.loss),
                format_float(r.unweighted_loss),
                format_float(r.switch_ratio),
                str(r.min_cluster),
                str(r.max_cluster),
            )) + "\n")
    os.replace(tmp, path)


def summary_dict(log: RunLog) -> dict:
    """Deterministic run summary: resolved config echo plus final scores.

    Wall-clock time is deliberately excluded; reruns of the same seed must
    serialize byte-identically.
    """
    hist = np.bincount(log.final_labels,
                       minlength=int(log.config["n_clusters"]))
    summary = {
        "config": log.config,
        "iterations": len(log.records),
        "final_nmi": log.final_nmi,
        "final_purity": log.final_purity,
        "final_min_cluster": int(hist.min()),
        "final_max_cluster": int(hist.max()),
    }
    if log.samples_memory is not None:
        summary["skipped_feature_updates"] = log.samples_memory.skipped_updates
        summary["rebalance_events"] = log.rebalance_events
    return summary


def write_summary_json(log: RunLog, path: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(summary_dict(log), f, sort_keys=True, indent=2)
        f.write("\n")
    os.replace(tmp, path)
