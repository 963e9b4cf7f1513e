"""Shared test helpers: brute-force oracles kept independent of the library
code paths they check."""

import itertools

import numpy as np
import pytest


def brute_force_two_means(points: np.ndarray) -> tuple[float, np.ndarray]:
    """Exact optimal 2-partition objective by exhaustive enumeration.

    Returns (objective, labels) minimizing the summed squared distance to
    each side's mean, over all nonempty bipartitions.
    """
    n = points.shape[0]
    best_obj = np.inf
    best_labels = None
    for bits in range(1, 2 ** (n - 1)):
        mask = np.array([(bits >> i) & 1 for i in range(n)], dtype=bool)
        obj = 0.0
        for side in (mask, ~mask):
            if side.any():
                group = points[side]
                obj += float(((group - group.mean(axis=0)) ** 2).sum())
        if obj < best_obj:
            best_obj = obj
            best_labels = mask.astype(np.int64)
    return best_obj, best_labels


def finite_difference_gradient(f, x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function, element by element."""
    grad = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    while not it.finished:
        idx = it.multi_index
        orig = x[idx]
        x[idx] = orig + h
        up = f()
        x[idx] = orig - h
        down = f()
        x[idx] = orig
        grad[idx] = (up - down) / (2 * h)
        it.iternext()
    return grad


def max_relative_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    scale = np.maximum(np.abs(analytic) + np.abs(numeric), 1e-8)
    return float((np.abs(analytic - numeric) / scale).max())


def random_kink_safe_case(rng, margin: float = 1e-3):
    """Random small backbone plus a batch whose pre-activations all sit at
    least `margin` away from the relu kinks, where the central-difference
    oracle is valid. Biases are randomized so dead rows cannot pin a
    pre-activation at exactly zero.
    """
    from odclab import backbone as bb

    while True:
        dims = rng.integers(2, 9, size=4)
        model = bb.Backbone(int(dims[0]), int(dims[1]), int(dims[2]),
                            max(2, int(dims[3])), rng)
        model.ext_b = rng.uniform(-0.3, 0.3, size=model.hidden_dim)
        model.head1_b = rng.uniform(-0.3, 0.3, size=model.feature_dim)
        for _ in range(20):
            batch = rng.normal(size=(int(rng.integers(1, 5)), model.input_dim))
            cache = bb.forward(model, batch)
            if min(np.abs(cache.ext_pre).min(),
                   np.abs(cache.head_pre).min()) >= margin:
                labels = rng.integers(0, model.n_classes, size=batch.shape[0])
                weights = rng.uniform(0.5, 2.0, size=model.n_classes)
                return model, batch, labels, weights


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
