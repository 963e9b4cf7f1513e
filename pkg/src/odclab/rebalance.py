"""Cluster-size discipline: inverse-sqrt loss re-weighting and elimination
of undersized clusters by dissolving them and splitting the largest cluster.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import kmeans as km
from .errors import AllEmptyError, UnsatisfiableError
from .memory import CentroidsMemory, SamplesMemory, recompute_clusters
from .numerics import pairwise_sq_dists


@dataclass
class RebalanceConfig:
    min_cluster_size: int
    check_every: int = 10  # iterations between size checks; trainers keep
                           # this equal to the centroid update interval

    def __post_init__(self):
        if self.min_cluster_size < 1:
            raise ValueError("min_cluster_size must be >= 1")
        if self.check_every < 1:
            raise ValueError("check_every must be >= 1")


def default_min_cluster_size(n_samples: int, n_clusters: int) -> int:
    """max(2, floor(0.2 * n/k)): small enough to never exceed the average
    cluster size, large enough to catch collapsing clusters."""
    return max(2, int(0.2 * n_samples / n_clusters))


@dataclass
class SplitEvent:
    refilled: int   # cluster id that was dissolved and refilled
    donor: int      # largest cluster that was split
    moved_in: int   # members handed to the refilled cluster


@dataclass
class RebalanceReport:
    rounds: int = 0
    moved_samples: list[int] = field(default_factory=list)
    splits: list[SplitEvent] = field(default_factory=list)
    touched: set[int] = field(default_factory=set)

    @property
    def is_noop(self) -> bool:
        return not self.moved_samples and not self.splits

    def to_dict(self) -> dict:
        return {
            "rounds": self.rounds,
            "n_moved": len(self.moved_samples),
            "moved_samples": list(self.moved_samples),
            "splits": [
                {"refilled": s.refilled, "donor": s.donor, "moved_in": s.moved_in}
                for s in self.splits
            ],
            "touched": sorted(self.touched),
        }


def class_weights(counts) -> np.ndarray:
    """Per-cluster loss weights proportional to 1/sqrt(size).

    Empty clusters get weight 0. Weights are scaled by one constant so the
    dataset-wide per-sample weight averages to 1, i.e.
    sum_c counts[c] * w[c] = sum(counts).
    """
    c = np.asarray(counts, dtype=np.float64)
    if c.min() < 0:
        raise ValueError("counts must be nonnegative")
    total = c.sum()
    if total <= 0:
        raise AllEmptyError("all cluster counts are zero")
    raw = np.zeros_like(c)
    nonzero = c > 0
    raw[nonzero] = 1.0 / np.sqrt(c[nonzero])
    scale = total / float((c * raw).sum())
    return raw * scale


def handle_small_clusters(mem: SamplesMemory, cmem: CentroidsMemory,
                          cfg: RebalanceConfig,
                          rng: np.random.Generator) -> RebalanceReport:
    """Dissolve every cluster below the size threshold and refill it from the
    largest cluster, repeating until all clusters meet the threshold.

    Each round: partition clusters into normal (size >= threshold) and small;
    process small clusters in ascending size order. For each small cluster c:
    its members move to their nearest normal centroid; then the currently
    largest cluster is 2-means split and one randomly chosen side is
    relabeled to c. Centroids of every touched cluster are recomputed from
    scratch immediately, so later decisions within the round use fresh means.

    Raises UnsatisfiableError when n < n_clusters * min_cluster_size (no
    valid outcome exists) or if n_clusters rounds do not stabilize.
    """
    n = mem.n_samples
    n_clusters = mem.n_clusters
    if n < n_clusters * cfg.min_cluster_size:
        raise UnsatisfiableError(
            f"n={n} cannot give {n_clusters} clusters of size >= "
            f"{cfg.min_cluster_size}; lower the threshold"
        )
    report = RebalanceReport()
    max_rounds = n_clusters
    for _ in range(max_rounds):
        small = np.flatnonzero(mem.counts < cfg.min_cluster_size)
        if small.size == 0:
            break
        report.rounds += 1
        receivers = np.flatnonzero(mem.counts >= cfg.min_cluster_size)
        # n >= n_clusters * min_cluster_size guarantees at least one cluster
        # sits at or above the average, so a receiver always exists
        assert receivers.size > 0
        # most endangered first; ties by id for determinism
        order = small[np.lexsort((small, mem.counts[small]))]
        for c in order:
            c = int(c)
            if mem.counts[c] >= cfg.min_cluster_size:
                continue
            _dissolve_into(mem, cmem, c, receivers, report)
            _refill_by_split(mem, cmem, c, cfg.min_cluster_size, rng, report)
    else:
        small = np.flatnonzero(mem.counts < cfg.min_cluster_size)
        if small.size:
            raise UnsatisfiableError(
                f"rebalancing did not stabilize after {max_rounds} rounds; "
                f"{small.size} clusters remain below {cfg.min_cluster_size}"
            )
    cmem.dirty.difference_update(report.touched)
    return report


def _dissolve_into(mem: SamplesMemory, cmem: CentroidsMemory, c: int,
                   receivers: np.ndarray, report: RebalanceReport) -> None:
    """Move every member of cluster c to its nearest receiver centroid."""
    members = np.flatnonzero(mem.labels == c)
    if members.size == 0:
        return
    d = pairwise_sq_dists(mem.features[members], cmem.centroids[receivers])
    nearest = receivers[d.argmin(axis=1)]
    for idx, target in zip(members, nearest):
        mem.labels[idx] = target
        mem.counts[c] -= 1
        mem.counts[target] += 1
        report.moved_samples.append(int(idx))
    hit = set(int(t) for t in nearest)
    recompute_clusters(mem, cmem, sorted(hit))
    report.touched.update(hit)
    report.touched.add(c)


def _refill_by_split(mem: SamplesMemory, cmem: CentroidsMemory, c: int,
                     min_size: int, rng: np.random.Generator,
                     report: RebalanceReport) -> None:
    """Split the currently largest cluster in two and relabel one randomly
    chosen side to c (the other side keeps the donor's id).

    A 2-means split can isolate a lone outlier, which would recreate an
    undersized cluster and ping-pong forever. When that happens and the
    donor is big enough for two legal halves, fall back to a balanced
    median split along the members' top principal direction.
    """
    donor = int(mem.counts.argmax())
    members = np.flatnonzero(mem.labels == donor)
    if members.size < 2:
        raise UnsatisfiableError(
            f"largest cluster has {members.size} members; cannot split to "
            f"refill cluster {c}"
        )
    halves = km.split_two(mem.features[members], rng)
    sizes = np.bincount(halves, minlength=2)
    if sizes.min() < min_size <= members.size // 2:
        halves = _median_split(mem.features[members])
    side = int(rng.integers(2))
    moving = members[halves == side]
    mem.labels[moving] = c
    mem.counts[donor] -= moving.size
    mem.counts[c] += moving.size
    recompute_clusters(mem, cmem, [c, donor])
    report.touched.update((c, donor))
    report.splits.append(SplitEvent(refilled=c, donor=donor, moved_in=int(moving.size)))


def _median_split(rows: np.ndarray) -> np.ndarray:
    """Deterministic half/half split by rank along the top principal axis."""
    centered = rows - rows.mean(axis=0)
    cov = centered.T @ centered
    _, vecs = np.linalg.eigh(cov)
    proj = centered @ vecs[:, -1]
    order = np.argsort(proj, kind="stable")
    halves = np.zeros(rows.shape[0], dtype=np.int64)
    halves[order[rows.shape[0] // 2:]] = 1
    return halves
