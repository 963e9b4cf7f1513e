"""Samples memory and centroids memory.

The samples memory keeps one momentum-smoothed unit-norm feature row and one
pseudo-label per training sample, plus per-cluster member counts. The
centroids memory keeps the per-cluster mean feature and a dirty set of
cluster ids whose membership changed since the last recomputation.

Update rule for a sample's stored feature, given a fresh feature f and blend
weight m in (0, 1]:

    row <- normalize(m * normalize(f) + (1 - m) * row)

The stored row is re-normalized after the blend, so nearest-centroid
assignment on rows is equivalent to cosine similarity and m = 1 reduces to
storing the fresh unit feature exactly. Centroids are plain arithmetic means
of member rows and are deliberately NOT normalized.

A cluster that loses all members keeps its stale centroid; only the
rebalancing pass (see rebalance.py) may renumber or refill clusters.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from . import kmeans as km
from .errors import CorruptCheckpointError, ZeroNormError
from .numerics import as_matrix, l2_normalize

SNAPSHOT_FORMAT = "odclab-memory-v1"


@dataclass
class SamplesMemory:
    features: np.ndarray          # (n, dim), unit-norm rows
    labels: np.ndarray            # (n,) int64 in [0, n_clusters)
    counts: np.ndarray            # (n_clusters,) int64 member counts
    skipped_updates: int = 0      # degenerate fresh features, row left as-is

    @property
    def n_samples(self) -> int:
        return self.features.shape[0]

    @property
    def n_clusters(self) -> int:
        return self.counts.shape[0]


@dataclass
class CentroidsMemory:
    centroids: np.ndarray         # (n_clusters, dim)
    dirty: set[int] = field(default_factory=set)


def init_memories(all_features, n_clusters: int, rng: np.random.Generator,
                  restarts: int = 10) -> tuple[SamplesMemory, CentroidsMemory]:
    """Build both memories from a global K-Means over the given unit-norm
    feature rows. Centroids are exact member means; the dirty set starts
    empty."""
    feats = as_matrix(all_features).copy()
    result = km.kmeans(feats, n_clusters, rng, restarts=restarts)
    labels = result.assignments.astype(np.int64)
    counts = np.bincount(labels, minlength=n_clusters).astype(np.int64)
    mem = SamplesMemory(features=feats, labels=labels, counts=counts)
    cmem = CentroidsMemory(centroids=np.zeros((n_clusters, feats.shape[1])))
    recompute_clusters(mem, cmem, range(n_clusters))
    return mem, cmem


def momentum_update(mem: SamplesMemory, idx: int, fresh_feature,
                    momentum: float) -> None:
    """Blend a fresh feature into the stored row for sample idx.

    A fresh feature with (near-)zero norm cannot define a direction: the row
    is left unchanged and the event counted instead of raising. The same
    holds for the pathological exact-cancellation blend.
    """
    if not 0.0 < momentum <= 1.0:
        raise ValueError(f"momentum must be in (0, 1], got {momentum}")
    try:
        unit = l2_normalize(fresh_feature)
    except ZeroNormError:
        mem.skipped_updates += 1
        return
    blended = momentum * unit + (1.0 - momentum) * mem.features[idx]
    try:
        mem.features[idx] = l2_normalize(blended)
    except ZeroNormError:
        mem.skipped_updates += 1


def reassign(mem: SamplesMemory, cmem: CentroidsMemory,
             idx: int) -> tuple[int, int]:
    """Move sample idx to its nearest centroid (ties break to the lowest
    cluster id). Updates labels/counts and marks both endpoints dirty when
    the label changes. Returns (old_label, new_label)."""
    diff = cmem.centroids - mem.features[idx]
    d = np.einsum("ij,ij->i", diff, diff)
    new_label = int(d.argmin())
    old_label = int(mem.labels[idx])
    if new_label != old_label:
        mem.labels[idx] = new_label
        mem.counts[old_label] -= 1
        mem.counts[new_label] += 1
        cmem.dirty.add(old_label)
        cmem.dirty.add(new_label)
    return old_label, new_label


def recompute_clusters(mem: SamplesMemory, cmem: CentroidsMemory,
                       clusters) -> None:
    """Set each listed nonempty cluster's centroid to the exact mean of its
    member rows. Empty clusters are skipped (stale centroid kept)."""
    for c in clusters:
        members = mem.labels == c
        if members.any():
            cmem.centroids[c] = mem.features[members].mean(axis=0)


def recompute_dirty(mem: SamplesMemory, cmem: CentroidsMemory) -> list[int]:
    """Refresh centroids of all dirty clusters and clear the dirty set.

    Returns the dirty clusters that were empty: their centroids stay stale
    and they are left for the rebalancing pass to resolve.
    """
    stale_empty: list[int] = []
    for c in sorted(cmem.dirty):
        if mem.counts[c] > 0:
            cmem.centroids[c] = mem.features[mem.labels == c].mean(axis=0)
        else:
            stale_empty.append(c)
    cmem.dirty.clear()
    return stale_empty


def full_recompute(mem: SamplesMemory, cmem: CentroidsMemory) -> None:
    """Recompute every nonempty cluster's centroid from scratch and clear
    the dirty set, regardless of what was marked dirty."""
    recompute_clusters(mem, cmem, range(mem.n_clusters))
    cmem.dirty.clear()


def check_consistency(mem: SamplesMemory, cmem: CentroidsMemory,
                      norm_tol: float = 1e-9) -> None:
    """Assert the structural invariants; used by tests and debug runs."""
    histogram = np.bincount(mem.labels, minlength=mem.n_clusters)
    if not np.array_equal(histogram, mem.counts):
        raise AssertionError("counts do not match label histogram")
    if int(mem.counts.sum()) != mem.n_samples:
        raise AssertionError("counts do not sum to n_samples")
    norms = np.linalg.norm(mem.features, axis=1)
    if not np.allclose(norms, 1.0, atol=norm_tol, rtol=0.0):
        worst = float(np.abs(norms - 1.0).max())
        raise AssertionError(f"memory rows drift from unit norm by {worst}")
    if not np.isfinite(cmem.centroids).all():
        raise AssertionError("non-finite centroid entries")
    if cmem.dirty and (min(cmem.dirty) < 0 or max(cmem.dirty) >= mem.n_clusters):
        raise AssertionError("dirty ids out of range")


def save_snapshot(mem: SamplesMemory, cmem: CentroidsMemory, path: str) -> None:
    """Canonical JSON snapshot (dims header, features, labels, centroids);
    equal memories serialize to identical bytes."""
    payload = {
        "format": SNAPSHOT_FORMAT,
        "dims": {
            "n_samples": mem.n_samples,
            "feature_dim": int(mem.features.shape[1]),
            "n_clusters": mem.n_clusters,
        },
        "features": mem.features.ravel().tolist(),
        "labels": mem.labels.tolist(),
        "centroids": cmem.centroids.ravel().tolist(),
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    os.replace(tmp, path)


def load_snapshot(path: str) -> tuple[SamplesMemory, CentroidsMemory]:
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"cannot read snapshot {path!r}: {exc}") from exc
    try:
        if payload["format"] != SNAPSHOT_FORMAT:
            raise CorruptCheckpointError(
                f"unexpected snapshot format {payload.get('format')!r}"
            )
        dims = payload["dims"]
        n, d, c = dims["n_samples"], dims["feature_dim"], dims["n_clusters"]
        features = np.asarray(payload["features"], dtype=np.float64).reshape(n, d)
        labels = np.asarray(payload["labels"], dtype=np.int64)
        centroids = np.asarray(payload["centroids"], dtype=np.float64).reshape(c, d)
    except CorruptCheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"malformed snapshot {path!r}: {exc}") from exc
    if labels.shape != (n,) or labels.size and (labels.min() < 0 or labels.max() >= c):
        raise CorruptCheckpointError("snapshot labels out of range")
    counts = np.bincount(labels, minlength=c).astype(np.int64)
    mem = SamplesMemory(features=features, labels=labels, counts=counts)
    cmem = CentroidsMemory(centroids=centroids)
    return mem, cmem
