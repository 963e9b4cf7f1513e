"""Clustering-quality and training-stability measurements."""

from __future__ import annotations

import numpy as np

from .errors import LengthMismatchError, TooShortError


def contingency_table(pred, truth) -> np.ndarray:
    """Cross-tabulation of predicted clusters vs true classes.

    Rows follow the sorted distinct predicted labels, columns the sorted
    distinct true labels; entries count co-occurrences.
    """
    p = np.asarray(pred)
    t = np.asarray(truth)
    if p.shape != t.shape or p.ndim != 1:
        raise LengthMismatchError(f"label shapes differ: {p.shape} vs {t.shape}")
    if p.size == 0:
        raise LengthMismatchError("labels must be nonempty")
    _, p_idx = np.unique(p, return_inverse=True)
    _, t_idx = np.unique(t, return_inverse=True)
    table = np.zeros((p_idx.max() + 1, t_idx.max() + 1), dtype=np.int64)
    np.add.at(table, (p_idx, t_idx), 1)
    return table


def _entropy(sizes: np.ndarray, n: int) -> float:
    p = sizes[sizes > 0] / n
    return float(-(p * np.log(p)).sum())


def nmi(pred, truth) -> float:
    """Normalized mutual information, geometric-mean normalization.

    I(pred; truth) / sqrt(H(pred) * H(truth)) with natural logarithms and
    0*log(0) = 0. When both partitions are single-cluster the score is 1;
    when exactly one entropy vanishes it is 0.
    """
    table = contingency_table(pred, truth)
    n = int(table.sum())
    h_pred = _entropy(table.sum(axis=1), n)
    h_truth = _entropy(table.sum(axis=0), n)
    if h_pred == 0.0 and h_truth == 0.0:
        return 1.0
    if h_pred == 0.0 or h_truth == 0.0:
        return 0.0
    joint = table / n
    outer = np.outer(table.sum(axis=1), table.sum(axis=0)) / (n * n)
    nz = joint > 0
    mutual = float((joint[nz] * np.log(joint[nz] / outer[nz])).sum())
    value = mutual / np.sqrt(h_pred * h_truth)
    return float(min(1.0, max(0.0, value)))


def purity(pred, truth) -> float:
    """Fraction of samples in the majority true class of their cluster."""
    table = contingency_table(pred, truth)
    return float(table.max(axis=1).sum() / table.sum())


def switch_ratio(old_labels, new_labels) -> float:
    """Fraction of positions whose label changed."""
    a = np.asarray(old_labels)
    b = np.asarray(new_labels)
    if a.shape != b.shape or a.ndim != 1 or a.size == 0:
        raise LengthMismatchError(f"label shapes differ: {a.shape} vs {b.shape}")
    return float((a != b).mean())


def loss_stability(curve, epoch_len: int) -> tuple[float, float]:
    """Largest smoothed loss jumps at epoch boundaries vs elsewhere.

    A jump at split point p compares the mean of the w losses before p with
    the mean of the w after, w = min(5, epoch_len). Boundary jumps sit where
    an epoch ends; interior jumps are measured at every other split whose
    two windows both stay inside a single epoch, so a clean step at a
    boundary registers only as a boundary jump.

    Returns (max_boundary_jump, max_interior_jump); a max over no valid
    splits is 0.
    """
    losses = np.asarray(curve, dtype=np.float64)
    if epoch_len < 1:
        raise ValueError("epoch_len must be >= 1")
    n = losses.shape[0]
    if n < 2 * epoch_len:
        raise TooShortError(
            f"need at least {2 * epoch_len} losses, have {n}"
        )
    w = min(5, epoch_len)

    def jump(p: int) -> float:
        return abs(float(losses[p:p + w].mean() - losses[p - w:p].mean()))

    max_boundary = 0.0
    for p in range(epoch_len, n - w + 1, epoch_len):
        if p - w >= 0:
            max_boundary = max(max_boundary, jump(p))

    max_interior = 0.0
    for p in range(w, n - w + 1):
        if p % epoch_len == 0:
            continue
        if (p - w) // epoch_len == (p + w - 1) // epoch_len:
            max_interior = max(max_interior, jump(p))
    return max_boundary, max_interior
