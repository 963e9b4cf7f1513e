"""Synthetic Gaussian-mixture generation with long-tail control, plus CSV
ingestion of external feature tables."""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .errors import ParseError
from .numerics import format_float, make_rng


@dataclass
class BlobSpec:
    n_classes: int
    dim: int
    n_total: int
    class_separation: float = 6.0   # min distance between class means, in stds
    longtail_ratio: float = 1.0     # largest class size / smallest class size
    seed: int = 0

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.n_total < self.n_classes:
            raise ValueError("n_total must be >= n_classes")
        if self.longtail_ratio < 1.0:
            raise ValueError("longtail_ratio must be >= 1")
        if self.dim < 1:
            raise ValueError("dim must be >= 1")


@dataclass
class Dataset:
    points: np.ndarray                 # (n, dim)
    true_labels: np.ndarray | None     # (n,) int64, metrics-only ground truth

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def dim(self) -> int:
        return self.points.shape[1]


def longtail_sizes(n_total: int, n_classes: int, ratio: float) -> np.ndarray:
    """Class sizes on a geometric profile with largest/smallest = ratio.

    Size of class i is proportional to ratio**(-i/(n_classes-1)). Rounding
    is largest-remainder so the sizes sum to n_total exactly; every class
    keeps at least one sample.
    """
    if n_classes == 1:
        return np.array([n_total], dtype=np.int64)
    exponents = -np.arange(n_classes) / (n_classes - 1)
    weights = np.power(ratio, exponents)
    shares = n_total * weights / weights.sum()
    sizes = np.floor(shares).astype(np.int64)
    remainder = shares - sizes
    deficit = n_total - int(sizes.sum())
    # stable largest-remainder: sort by (-remainder, index)
    for idx in np.lexsort((np.arange(n_classes), -remainder))[:deficit]:
        sizes[idx] += 1
    while (sizes == 0).any():
        sizes[int(sizes.argmax())] -= 1
        sizes[int(np.flatnonzero(sizes == 0)[0])] += 1
    return sizes


def _sample_means(n_classes: int, dim: int, separation: float,
                  rng: np.random.Generator) -> np.ndarray:
    """Rejection-sample class means pairwise at least `separation` apart.

    Candidates come from N(0, scale^2 I); the scale inflates after repeated
    rejections so low dimensions cannot stall.
    """
    means: list[np.ndarray] = []
    scale = max(separation, 1.0)
    failures = 0
    while len(means) < n_classes:
        candidate = rng.normal(0.0, scale, size=dim)
        if all(np.linalg.norm(candidate - m) >= separation for m in means):
            means.append(candidate)
            failures = 0
        else:
            failures += 1
            if failures >= 50:
                scale *= 1.5
                failures = 0
    return np.vstack(means)


def gen_blobs(spec: BlobSpec) -> Dataset:
    """Gaussian blobs with unit-variance noise around well-separated means.

    Deterministic per seed. Rows are shuffled so file order carries no class
    structure.
    """
    rng = make_rng(spec.seed)
    sizes = longtail_sizes(spec.n_total, spec.n_classes, spec.longtail_ratio)
    means = _sample_means(spec.n_classes, spec.dim, spec.class_separation, rng)
    points = np.empty((spec.n_total, spec.dim))
    labels = np.empty(spec.n_total, dtype=np.int64)
    row = 0
    for cls, size in enumerate(sizes):
        points[row:row + size] = means[cls] + rng.standard_normal((size, spec.dim))
        labels[row:row + size] = cls
        row += size
    perm = rng.permutation(spec.n_total)
    return Dataset(points=points[perm], true_labels=labels[perm])


def write_csv(dataset: Dataset, path: str) -> None:
    """Feature columns f0..f{d-1}, plus a final integer `label` column when
    ground truth is present. Floats are repr-formatted so reading the file
    back reproduces them bit for bit."""
    n, d = dataset.points.shape
    header = [f"f{j}" for j in range(d)]
    if dataset.true_labels is not None:
        header.append("label")
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(header)
        for i in range(n):
            row = [format_float(x) for x in dataset.points[i]]
            if dataset.true_labels is not None:
                row.append(str(int(dataset.true_labels[i])))
            writer.writerow(row)
    os.replace(tmp, path)


def load_csv(path: str) -> Dataset:
    """Read a feature table; a header is auto-detected and a final column
    named `label` becomes the ground truth. ParseError carries the 1-based
    row/column of the first bad cell."""
    with open(path, "r", encoding="utf-8", newline="") as f:
        rows = list(csv.reader(f))
    rows = [r for r in rows if r]
    if not rows:
        raise ParseError(f"{path}: empty file")
    has_header = _looks_like_header(rows[0])
    header = rows[0] if has_header else None
    data_rows = rows[1:] if has_header else rows
    if not data_rows:
        raise ParseError(f"{path}: header but no data rows")
    has_labels = bool(header) and header[-1].strip().lower() == "label"

    width = len(data_rows[0])
    n_features = width - 1 if has_labels else width
    if n_features < 1:
        raise ParseError(f"{path}: no feature columns")
    points = np.empty((len(data_rows), n_features))
    labels = np.empty(len(data_rows), dtype=np.int64) if has_labels else None
    offset = 2 if has_header else 1
    for i, row in enumerate(data_rows):
        if len(row) != width:
            raise ParseError(
                f"{path}: inconsistent column count {len(row)} != {width}",
                row=i + offset, col=len(row),
            )
        for j in range(n_features):
            try:
                points[i, j] = float(row[j])
            except ValueError:
                raise ParseError(
                    f"{path}: malformed float {row[j]!r}",
                    row=i + offset, col=j + 1,
                ) from None
        if labels is not None:
            try:
                labels[i] = int(row[-1])
            except ValueError:
                raise ParseError(
                    f"{path}: malformed label {row[-1]!r}",
                    row=i + offset, col=width,
                ) from None
    if not np.isfinite(points).all():
        bad = np.argwhere(~np.isfinite(points))[0]
        raise ParseError(
            f"{path}: non-finite value", row=int(bad[0]) + offset,
            col=int(bad[1]) + 1,
        )
    return Dataset(points=points, true_labels=labels)


def _looks_like_header(row: list[str]) -> bool:
    for cell in row:
        try:
            float(cell)
        except ValueError:
            return True
    return False
