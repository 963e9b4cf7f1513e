"""Dense float64 primitives and seeded randomness.

All arithmetic is 64-bit. Random state is always an explicit
`numpy.random.Generator` owned by a single caller; nothing in the package
touches global RNG state.
"""

from __future__ import annotations

import numpy as np

from .errors import DimMismatchError, ZeroNormError

_ZERO_NORM_FLOOR = 1e-300


def as_vector(v) -> np.ndarray:
    """Coerce to a 1-D float64 array."""
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise DimMismatchError(f"expected 1-D vector, got shape {arr.shape}")
    return arr


def as_matrix(m) -> np.ndarray:
    """Coerce to a 2-D float64 array."""
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise DimMismatchError(f"expected 2-D matrix, got shape {arr.shape}")
    return arr


def l2_normalize(v) -> np.ndarray:
    """Scale v to unit L2 norm. Raises ZeroNormError on degenerate input."""
    v = as_vector(v)
    norm = float(np.linalg.norm(v))
    if norm <= _ZERO_NORM_FLOOR:
        raise ZeroNormError(f"cannot normalize vector with norm {norm}")
    return v / norm


def squared_euclidean(a, b) -> float:
    """Sum of squared coordinate differences."""
    a = as_vector(a)
    b = as_vector(b)
    if a.shape != b.shape:
        raise DimMismatchError(f"dims differ: {a.shape[0]} vs {b.shape[0]}")
    d = a - b
    return float(d @ d)


def softmax(logits) -> np.ndarray:
    """Shift-invariant softmax; max is subtracted so exp never overflows."""
    z = as_vector(logits)
    shifted = z - z.max()
    e = np.exp(shifted)
    return e / e.sum()


def pairwise_sq_dists(points, centers) -> np.ndarray:
    """Matrix of squared distances: entry (i, j) = ||points[i] - centers[j]||^2.

    Uses the expanded form ||a||^2 + ||b||^2 - 2 a.b (one matmul), clamping
    tiny negative round-off at zero.
    """
    p = as_matrix(points)
    c = as_matrix(centers)
    if p.shape[1] != c.shape[1]:
        raise DimMismatchError(
            f"point dim {p.shape[1]} != center dim {c.shape[1]}"
        )
    p_sq = np.einsum("ij,ij->i", p, p)
    c_sq = np.einsum("ij,ij->i", c, c)
    d = p_sq[:, None] + c_sq[None, :] - 2.0 * (p @ c.T)
    np.maximum(d, 0.0, out=d)
    return d


def make_rng(seed: int) -> np.random.Generator:
    """Deterministic generator; equal seeds give identical streams."""
    return np.random.default_rng(int(seed))


def derive_seeds(base_seed: int, count: int) -> list[int]:
    """Stable child seeds for independent runs (sweeps, multi-seed medians)."""
    children = np.random.SeedSequence(int(base_seed)).spawn(count)
    return [int(c.generate_state(1, dtype=np.uint64)[0]) for c in children]


def format_float(x: float) -> str:
    """Shortest decimal text that round-trips the float64 exactly."""
    return repr(float(x))
