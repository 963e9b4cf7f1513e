"""Global K-Means used for memory initialization and 2-way cluster splitting.

Plain Lloyd's algorithm with k-means++ seeding, deterministic lowest-index
tie-breaking, and explicit empty-cluster repair. Everything is driven by an
explicit Generator, so a fixed seed reproduces the result bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimMismatchError, TooFewPointsError
from .numerics import as_matrix, pairwise_sq_dists


@dataclass
class KmeansResult:
    assignments: np.ndarray  # (n,) int64, values in [0, k)
    centroids: np.ndarray    # (k, dim)
    objective: float         # sum of squared distances to assigned centroids
    iterations_run: int
    converged: bool          # True when assignments reached a fixed point
    objective_trace: list[float] | None = None  # one value per Lloyd pass


def kmeans_pp_seed(points, k: int, rng: np.random.Generator) -> np.ndarray:
    """Pick k distinct seed rows with squared-distance-weighted sampling.

    When every remaining point coincides with a chosen seed the weights all
    vanish; the lowest unchosen index is taken so the seeds stay distinct.
    """
    pts = as_matrix(points)
    n = pts.shape[0]
    if k < 1 or n < k:
        raise TooFewPointsError(f"need at least {k} points, have {n}")

    chosen = np.empty(k, dtype=np.int64)
    chosen[0] = rng.integers(n)
    d2 = pairwise_sq_dists(pts, pts[chosen[0]][None, :])[:, 0]
    for i in range(1, k):
        d2[chosen[:i]] = 0.0
        total = d2.sum()
        if total <= 0.0:
            mask = np.ones(n, dtype=bool)
            mask[chosen[:i]] = False
            chosen[i] = np.flatnonzero(mask)[0]
        else:
            chosen[i] = rng.choice(n, p=d2 / total)
        new_d2 = pairwise_sq_dists(pts, pts[chosen[i]][None, :])[:, 0]
        np.minimum(d2, new_d2, out=d2)
    return pts[chosen].copy()


def repair_empty(points: np.ndarray, assignments: np.ndarray,
                 centroids: np.ndarray) -> bool:
    """Give every empty cluster one member: the point farthest from its own
    centroid, drawn only from clusters with >= 2 members so donors never
    empty out. Mutates assignments and centroids; returns True if repaired.
    """
    k = centroids.shape[0]
    sizes = np.bincount(assignments, minlength=k)
    empties = np.flatnonzero(sizes == 0)
    if empties.size == 0:
        return False
    dist_to_own = np.einsum(
        "ij,ij->i", points - centroids[assignments], points - centroids[assignments]
    )
    for c in empties:
        eligible = sizes[assignments] >= 2
        if not eligible.any():
            break  # n < k: nothing left to donate
        masked = np.where(eligible, dist_to_own, -np.inf)
        donor = int(np.argmax(masked))
        sizes[assignments[donor]] -= 1
        assignments[donor] = c
        sizes[c] = 1
        centroids[c] = points[donor]
        dist_to_own[donor] = 0.0
    return True


def lloyd(points, init_centroids, max_iters: int = 100,
          tol: float = 1e-6) -> KmeansResult:
    """Alternate nearest-centroid assignment (ties to the lowest index) and
    mean updates until assignments stop changing, the relative objective
    decrease falls below tol, or max_iters passes run out.

    The objective is evaluated after each mean update, so the recorded
    sequence is non-increasing.
    """
    pts = as_matrix(points)
    centroids = as_matrix(init_centroids).copy()
    if pts.shape[1] != centroids.shape[1]:
        raise DimMismatchError(
            f"point dim {pts.shape[1]} != centroid dim {centroids.shape[1]}"
        )
    if max_iters < 1:
        raise ValueError("max_iters must be >= 1")
    k = centroids.shape[0]

    prev_assign: np.ndarray | None = None
    prev_obj = np.inf
    assign = np.zeros(pts.shape[0], dtype=np.int64)
    converged = False
    iterations = 0
    trace: list[float] = []

    for iterations in range(1, max_iters + 1):
        d = pairwise_sq_dists(pts, centroids)
        assign = d.argmin(axis=1).astype(np.int64)
        repair_empty(pts, assign, centroids)

        sums = np.zeros_like(centroids)
        np.add.at(sums, assign, pts)
        sizes = np.bincount(assign, minlength=k).astype(np.float64)
        centroids = sums / sizes[:, None]

        diff = pts - centroids[assign]
        obj = float(np.einsum("ij,ij->i", diff, diff).sum())
        trace.append(obj)

        if prev_assign is not None and np.array_equal(assign, prev_assign):
            converged = True
            break
        if prev_obj < np.inf and prev_obj - obj < tol * max(prev_obj, 1e-300):
            break
        prev_assign = assign
        prev_obj = obj

    diff = pts - centroids[assign]
    objective = float(np.einsum("ij,ij->i", diff, diff).sum())
    return KmeansResult(
        assignments=assign,
        centroids=centroids,
        objective=objective,
        iterations_run=iterations,
        converged=converged,
        objective_trace=trace,
    )


def kmeans(points, k: int, rng: np.random.Generator, restarts: int = 10,
           max_iters: int = 100, tol: float = 1e-6) -> KmeansResult:
    """k-means++ seeded Lloyd's, restarted; the best objective wins."""
    pts = as_matrix(points)
    best: KmeansResult | None = None
    for _ in range(max(1, restarts)):
        seeds = kmeans_pp_seed(pts, k, rng)
        result = lloyd(pts, seeds, max_iters=max_iters, tol=tol)
        if best is None or result.objective < best.objective:
            best = result
    assert best is not None
    return best


def split_two(points_of_cluster, rng: np.random.Generator) -> np.ndarray:
    """2-means split of one cluster's rows; both sides come back nonempty.

    Identical rows still split (repair hands one row to the empty side).
    """
    pts = as_matrix(points_of_cluster)
    if pts.shape[0] < 2:
        raise TooFewPointsError(
            f"need at least 2 rows to split, have {pts.shape[0]}"
        )
    result = kmeans(pts, 2, rng, restarts=3)
    return result.assignments
