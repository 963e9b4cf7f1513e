"""Trainable feature extractor, reduction head, linear classifier.

A small fully-connected network with hand-written gradients:

    hidden   = relu(x  @ W_ext.T + b_ext)            # extractor
    mid      = relu(hidden @ W_head1.T + b_head1)    # head, first affine
    features = mid @ W_head2.T + b_head2             # head, second affine
    logits   = features @ W_cls.T + b_cls            # classifier

The head output is the canonical feature used both for the classifier and
for the feature memories. The relu subgradient at 0 is taken as 0.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from .errors import (
    CorruptCheckpointError,
    DimMismatchError,
    LabelOutOfRangeError,
    ShapeMismatchError,
)

CHECKPOINT_FORMAT = "odclab-backbone-v1"


@dataclass
class SgdConfig:
    learning_rate: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.0

    def __post_init__(self):
        if self.learning_rate < 0:
            raise ValueError("learning_rate must be >= 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")


@dataclass
class ForwardCache:
    """Per-batch activations kept so backward needs no second forward."""

    inputs: np.ndarray
    ext_pre: np.ndarray
    ext_act: np.ndarray
    head_pre: np.ndarray
    head_act: np.ndarray
    features: np.ndarray  # (batch, feature_dim)
    logits: np.ndarray    # (batch, n_classes)


class Backbone:
    """Parameter container with explicit forward/backward passes."""

    PARAM_NAMES = (
        "ext_w", "ext_b",
        "head1_w", "head1_b",
        "head2_w", "head2_b",
        "cls_w", "cls_b",
    )

    def __init__(self, input_dim: int, hidden_dim: int, feature_dim: int,
                 n_classes: int, rng: np.random.Generator):
        if feature_dim < 2:
            raise ValueError("feature_dim must be >= 2")
        self.input_dim = input_dim
        self.hidden_dim = hidden_dim
        self.feature_dim = feature_dim
        self.n_classes = n_classes
        # fixed input standardization (not trained, saved with the model)
        self.input_shift = np.zeros(input_dim)
        self.input_scale = np.ones(input_dim)
        # biases share the weights' uniform(+-1/sqrt(fan_in)) init: an
        # all-zero bias row lets a dead relu layer emit exactly-zero
        # features, which cannot be L2-normalized into the memories
        self.ext_w = _init_weight(hidden_dim, input_dim, rng)
        self.ext_b = _init_bias(hidden_dim, input_dim, rng)
        self.head1_w = _init_weight(feature_dim, hidden_dim, rng)
        self.head1_b = _init_bias(feature_dim, hidden_dim, rng)
        self.head2_w = _init_weight(feature_dim, feature_dim, rng)
        self.head2_b = _init_bias(feature_dim, feature_dim, rng)
        self.cls_w = _init_weight(n_classes, feature_dim, rng)
        self.cls_b = _init_bias(n_classes, feature_dim, rng)

    def set_input_standardization(self, shift, scale) -> None:
        """Fix the affine input transform x -> (x - shift) / scale."""
        shift = np.asarray(shift, dtype=np.float64)
        scale = np.asarray(scale, dtype=np.float64)
        if shift.shape != (self.input_dim,) or scale.shape != (self.input_dim,):
            raise ShapeMismatchError("standardization shape mismatch")
        if (scale <= 0).any():
            raise ValueError("input_scale entries must be positive")
        self.input_shift = shift
        self.input_scale = scale

    def params(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in self.PARAM_NAMES}

    def zero_velocity(self) -> dict[str, np.ndarray]:
        return {name: np.zeros_like(p) for name, p in self.params().items()}

    def dims(self) -> dict[str, int]:
        return {
            "input_dim": self.input_dim,
            "hidden_dim": self.hidden_dim,
            "feature_dim": self.feature_dim,
            "n_classes": self.n_classes,
        }


def _init_weight(fan_out: int, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=(fan_out, fan_in))


def _init_bias(fan_out: int, fan_in: int, rng: np.random.Generator) -> np.ndarray:
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=fan_out)


def forward(b: Backbone, batch) -> ForwardCache:
    """Run the full network on a batch of rows; deterministic and pure.

    The cache stores the standardized inputs, which is what the extractor
    weight gradient needs.
    """
    x = np.asarray(batch, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != b.input_dim:
        raise DimMismatchError(
            f"batch shape {x.shape} incompatible with input_dim {b.input_dim}"
        )
    x = (x - b.input_shift) / b.input_scale
    ext_pre = x @ b.ext_w.T + b.ext_b
    ext_act = np.maximum(ext_pre, 0.0)
    head_pre = ext_act @ b.head1_w.T + b.head1_b
    head_act = np.maximum(head_pre, 0.0)
    features = head_act @ b.head2_w.T + b.head2_b
    logits = features @ b.cls_w.T + b.cls_b
    return ForwardCache(x, ext_pre, ext_act, head_pre, head_act, features, logits)


def weighted_ce_loss(logits, labels, class_weights) -> tuple[float, np.ndarray]:
    """Per-class weighted cross-entropy, averaged over the batch.

    Returns the loss and its exact gradient with respect to the logits:
    dlogits[n] = (w[labels[n]] / batch) * (softmax(logits[n]) - onehot[n]).
    """
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    w = np.asarray(class_weights, dtype=np.float64)
    batch, n_classes = z.shape
    if y.shape != (batch,):
        raise ShapeMismatchError(f"{batch} logit rows but {y.shape} labels")
    if y.size and (y.min() < 0 or y.max() >= n_classes):
        raise LabelOutOfRangeError(
            f"labels must lie in [0, {n_classes}), got range "
            f"[{y.min()}, {y.max()}]"
        )
    if w.shape != (n_classes,):
        raise ShapeMismatchError(
            f"expected {n_classes} class weights, got shape {w.shape}"
        )

    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    sample_w = w[y]
    loss = float(-(sample_w * log_probs[np.arange(batch), y]).sum() / batch)

    dlogits = np.exp(log_probs)
    dlogits[np.arange(batch), y] -= 1.0
    dlogits *= (sample_w / batch)[:, None]
    return loss, dlogits


def mean_nll(logits, labels) -> float:
    """Unweighted mean cross-entropy, for curve logging."""
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    shifted = z - z.max(axis=1, keepdims=True)
    log_norm = np.log(np.exp(shifted).sum(axis=1))
    log_probs = shifted - log_norm[:, None]
    return float(-log_probs[np.arange(z.shape[0]), y].mean())


def backward(b: Backbone, cache: ForwardCache,
             dlogits) -> dict[str, np.ndarray]:
    """Chain rule through the network.

    Returns gradients keyed like Backbone.params(), plus "dfeatures"
    (gradient at the feature layer) for diagnostics.
    """
    dz = np.asarray(dlogits, dtype=np.float64)
    if dz.shape != cache.logits.shape:
        raise ShapeMismatchError(
            f"dlogits shape {dz.shape} != logits shape {cache.logits.shape}"
        )
    grads: dict[str, np.ndarray] = {}
    grads["cls_w"] = dz.T @ cache.features
    grads["cls_b"] = dz.sum(axis=0)
    dfeatures = dz @ b.cls_w
    grads["dfeatures"] = dfeatures

    grads["head2_w"] = dfeatures.T @ cache.head_act
    grads["head2_b"] = dfeatures.sum(axis=0)
    dhead_act = dfeatures @ b.head2_w
    dhead_pre = dhead_act * (cache.head_pre > 0.0)

    grads["head1_w"] = dhead_pre.T @ cache.ext_act
    grads["head1_b"] = dhead_pre.sum(axis=0)
    dext_act = dhead_pre @ b.head1_w
    dext_pre = dext_act * (cache.ext_pre > 0.0)

    grads["ext_w"] = dext_pre.T @ cache.inputs
    grads["ext_b"] = dext_pre.sum(axis=0)
    return grads


def sgd_step(b: Backbone, grads: dict[str, np.ndarray], cfg: SgdConfig,
             velocity: dict[str, np.ndarray]) -> None:
    """Momentum SGD, in place: v <- mu*v + g + wd*theta; theta <- theta - lr*v."""
    for name in Backbone.PARAM_NAMES:
        theta = getattr(b, name)
        v = velocity[name]
        v *= cfg.momentum
        v += grads[name]
        if cfg.weight_decay:
            v += cfg.weight_decay * theta
        theta -= cfg.learning_rate * v


def reinit_classifier(b: Backbone, rng: np.random.Generator) -> None:
    """Resample the classifier affine from the init distribution; the
    extractor and head are untouched."""
    b.cls_w = _init_weight(b.n_classes, b.feature_dim, rng)
    b.cls_b = _init_bias(b.n_classes, b.feature_dim, rng)


def save_checkpoint(b: Backbone, path: str) -> None:
    """Serialize all parameter tensors as canonical JSON (dims header first).

    Floats are written via repr, so values round-trip exactly and two saves
    of equal parameters are byte-identical.
    """
    payload = {
        "format": CHECKPOINT_FORMAT,
        "dims": b.dims(),
        "input_shift": b.input_shift.tolist(),
        "input_scale": b.input_scale.tolist(),
        "params": {
            name: {"shape": list(p.shape), "data": p.ravel().tolist()}
            for name, p in b.params().items()
        },
    }
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(payload, f, sort_keys=True, separators=(",", ":"))
        f.write("\n")
    os.replace(tmp, path)


def load_checkpoint(path: str) -> Backbone:
    """Rebuild a Backbone from a checkpoint file.

    Raises CorruptCheckpointError for a missing file, bad JSON, or any
    shape/format inconsistency.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            payload = json.load(f)
    except (OSError, json.JSONDecodeError) as exc:
        raise CorruptCheckpointError(f"cannot read checkpoint {path!r}: {exc}") from exc
    try:
        if payload["format"] != CHECKPOINT_FORMAT:
            raise CorruptCheckpointError(
                f"unexpected checkpoint format {payload.get('format')!r}"
            )
        dims = payload["dims"]
        b = Backbone.__new__(Backbone)
        b.input_dim = int(dims["input_dim"])
        b.hidden_dim = int(dims["hidden_dim"])
        b.feature_dim = int(dims["feature_dim"])
        b.n_classes = int(dims["n_classes"])
        b.input_shift = np.asarray(payload["input_shift"], dtype=np.float64)
        b.input_scale = np.asarray(payload["input_scale"], dtype=np.float64)
        for name in Backbone.PARAM_NAMES:
            entry = payload["params"][name]
            arr = np.asarray(entry["data"], dtype=np.float64).reshape(entry["shape"])
            setattr(b, name, arr)
    except CorruptCheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CorruptCheckpointError(f"malformed checkpoint {path!r}: {exc}") from exc
    _validate_dims(b)
    return b


def _validate_dims(b: Backbone) -> None:
    expected = {
        "ext_w": (b.hidden_dim, b.input_dim),
        "ext_b": (b.hidden_dim,),
        "head1_w": (b.feature_dim, b.hidden_dim),
        "head1_b": (b.feature_dim,),
        "head2_w": (b.feature_dim, b.feature_dim),
        "head2_b": (b.feature_dim,),
        "cls_w": (b.n_classes, b.feature_dim),
        "cls_b": (b.n_classes,),
    }
    for name, shape in expected.items():
        actual = getattr(b, name).shape
        if actual != shape:
            raise CorruptCheckpointError(
                f"parameter {name} has shape {actual}, expected {shape}"
            )
        if not np.isfinite(getattr(b, name)).all():
            raise CorruptCheckpointError(f"parameter {name} has non-finite entries")
    for name in ("input_shift", "input_scale"):
        if getattr(b, name).shape != (b.input_dim,):
            raise CorruptCheckpointError(f"{name} has wrong shape")
    if (b.input_scale <= 0).any():
        raise CorruptCheckpointError("input_scale entries must be positive")
