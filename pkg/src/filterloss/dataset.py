"""Labeled datasets: CSV I/O, synthetic imbalanced generation, normalization
and stratified splitting."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

STD_FLOOR = 1e-12
# Centroids are drawn from this seed when none are supplied, so independently
# generated source/target pairs share the same class signal.
CENTROID_SEED = 0
CENTROID_SCALE = 4.0


class DatasetError(ValueError):
    """Base class for dataset contract violations."""


class EmptyFileError(DatasetError):
    pass


class RaggedRowError(DatasetError):
    def __init__(self, row: int, expected: int, got: int):
        self.row = row
        super().__init__(
            f"row {row} (line {row + 1}) has {got} fields, expected {expected}"
        )


class NonNumericFieldError(DatasetError):
    def __init__(self, row: int, column: str, value: str):
        self.row = row
        self.column = column
        super().__init__(
            f"row {row} (line {row + 1}), column {column!r}: "
            f"non-numeric value {value!r}"
        )


def round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


@dataclass(frozen=True)
class LabeledDataset:
    """Immutable feature matrix with integer class labels.

    ``features`` is ``(n, d)`` float64, ``labels`` is ``(n,)`` int64 with
    values in ``[0, C)`` where ``C = len(class_names)``.
    """

    features: np.ndarray
    labels: np.ndarray
    class_names: tuple[str, ...]

    def __post_init__(self):
        X = np.array(self.features, dtype=np.float64)
        y = np.array(self.labels, dtype=np.int64)
        names = tuple(str(c) for c in self.class_names)
        if X.ndim != 2:
            raise DatasetError(f"features must be 2-d, got shape {X.shape}")
        if y.ndim != 1 or y.shape[0] != X.shape[0]:
            raise DatasetError(
                f"{y.shape[0] if y.ndim == 1 else y.shape} labels for {X.shape[0]} rows"
            )
        if not np.all(np.isfinite(X)):
            raise DatasetError("features contain NaN or Inf")
        if len(names) == 0:
            raise DatasetError("class_names is empty")
        if y.size and (y.min() < 0 or y.max() >= len(names)):
            raise DatasetError(f"labels must lie in [0, {len(names)})")
        X.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "features", X)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "class_names", names)

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def d(self) -> int:
        return self.features.shape[1]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def class_counts(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_classes)

    def subset(self, indices) -> "LabeledDataset":
        idx = np.asarray(indices, dtype=np.int64)
        return LabeledDataset(self.features[idx], self.labels[idx], self.class_names)

    def with_class_order(self, class_names: Sequence[str]) -> "LabeledDataset":
        """Same rows with labels re-indexed to ``class_names`` order."""
        names = tuple(class_names)
        missing = [c for c in self.class_names if c not in names]
        if missing:
            raise DatasetError(f"classes {missing} not in target order {list(names)}")
        remap = np.array([names.index(c) for c in self.class_names], dtype=np.int64)
        return LabeledDataset(self.features, remap[self.labels], names)

    def append(self, features: np.ndarray, labels: np.ndarray) -> "LabeledDataset":
        if len(labels) == 0:
            return self
        X = np.vstack([self.features, np.asarray(features, dtype=np.float64)])
        y = np.concatenate([self.labels, np.asarray(labels, dtype=np.int64)])
        return LabeledDataset(X, y, self.class_names)


# -- CSV ------------------------------------------------------------------


def load_csv(path) -> LabeledDataset:
    """Read ``f0,...,f{d-1},label`` CSV. Class ids follow first appearance."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"dataset file not found: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or not any(rows[0]):
        raise EmptyFileError(f"{path} is empty")
    header = rows[0]
    if header[-1] != "label" or len(header) < 2:
        raise DatasetError(f"{path}: header must end with 'label', got {header!r}")
    d = len(header) - 1
    data_rows = [r for r in rows[1:] if r]
    if not data_rows:
        raise EmptyFileError(f"{path} has a header but no data rows")

    X = np.empty((len(data_rows), d))
    y = np.empty(len(data_rows), dtype=np.int64)
    ids: dict[str, int] = {}
    for i, row in enumerate(data_rows):
        rownum = i + 1
        if len(row) != d + 1:
            raise RaggedRowError(rownum, d + 1, len(row))
        for j in range(d):
            try:
                X[i, j] = float(row[j])
            except ValueError:
                raise NonNumericFieldError(rownum, header[j], row[j]) from None
            if not math.isfinite(X[i, j]):
                raise NonNumericFieldError(rownum, header[j], row[j])
        y[i] = ids.setdefault(row[d], len(ids))
    return LabeledDataset(X, y, tuple(ids))


def save_csv(ds: LabeledDataset, path) -> None:
    path = Path(path)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"f{j}" for j in range(ds.d)] + ["label"])
        for row, label in zip(ds.features, ds.labels):
            w.writerow([f"{v:.9g}" for v in row] + [ds.class_names[label]])


# -- synthetic data -------------------------------------------------------


@dataclass(frozen=True)
class SyntheticSpec:
    n_classes: int
    class_counts: tuple[int, ...]
    dim: int
    cluster_spread: float = 1.0
    noise_floor: float = 0.0
    label_noise_frac: float = 0.0
    seed: int = 0
    class_names: Optional[tuple[str, ...]] = None

    def __post_init__(self):
        object.__setattr__(self, "class_counts", tuple(int(c) for c in self.class_counts))
        if self.class_names is not None:
            object.__setattr__(self, "class_names", tuple(self.class_names))
        if self.n_classes < 1 or len(self.class_counts) != self.n_classes:
            raise DatasetError("class_counts length must equal n_classes")
        if any(c < 1 for c in self.class_counts):
            raise DatasetError("every class count must be >= 1")
        if self.dim < 1:
            raise DatasetError("dim must be >= 1")
        if self.cluster_spread <= 0 or self.noise_floor < 0:
            raise DatasetError("cluster_spread must be > 0 and noise_floor >= 0")
        if not 0.0 <= self.label_noise_frac <= 1.0:
            raise DatasetError("label_noise_frac must be in [0, 1]")
        if self.class_names is not None and len(self.class_names) != self.n_classes:
            raise DatasetError("class_names length must equal n_classes")
        if self.n_classes == 1 and self.label_noise_frac > 0:
            raise DatasetError("label noise needs at least two classes")


def default_centroids(n_classes: int, dim: int) -> np.ndarray:
    rng = np.random.default_rng(CENTROID_SEED)
    return CENTROID_SCALE * rng.standard_normal((n_classes, dim))


def synth_generate(
    spec: SyntheticSpec, shared_centroids: Optional[np.ndarray] = None
) -> tuple[LabeledDataset, np.ndarray]:
    """Draw Gaussian class clusters around centroids, then flip labels.

    Class ``c`` contributes ``class_counts[c]`` rows of
    ``centroid_c + N(0, spread^2 I) + N(0, noise_floor^2 I)``. A fraction
    ``label_noise_frac`` of rows then gets a uniformly random *different*
    label. Rows are ordered by generating class.
    """
    if shared_centroids is None:
        centroids = default_centroids(spec.n_classes, spec.dim)
    else:
        centroids = np.asarray(shared_centroids, dtype=np.float64)
        if centroids.shape != (spec.n_classes, spec.dim):
            raise DatasetError(
                f"shared_centroids shape {centroids.shape} != "
                f"({spec.n_classes}, {spec.dim})"
            )
    rng = np.random.default_rng(spec.seed)
    blocks, labels = [], []
    for c, count in enumerate(spec.class_counts):
        signal = spec.cluster_spread * rng.standard_normal((count, spec.dim))
        noise = spec.noise_floor * rng.standard_normal((count, spec.dim))
        blocks.append(centroids[c] + signal + noise)
        labels.append(np.full(count, c, dtype=np.int64))
    X = np.vstack(blocks)
    y = np.concatenate(labels)

    n_flip = round_half_up(spec.label_noise_frac * len(y))
    if n_flip:
        flip = rng.choice(len(y), size=n_flip, replace=False)
        offsets = rng.integers(1, spec.n_classes, size=n_flip)
        y[flip] = (y[flip] + offsets) % spec.n_classes

    names = spec.class_names or tuple(f"c{c}" for c in range(spec.n_classes))
    return LabeledDataset(X, y, names), centroids


# -- splitting ------------------------------------------------------------


def stratified_split_indices(
    ds: LabeledDataset, test_frac: float, seed: int
) -> tuple[np.ndarray, np.ndarray]:
    if not 0.0 < test_frac < 1.0:
        raise DatasetError("test_frac must be in (0, 1)")
    rng = np.random.default_rng(seed)
    train, test = [], []
    for c in range(ds.n_classes):
        members = np.flatnonzero(ds.labels == c)
        if members.size == 0:
            continue
        if members.size < 2:
            raise DatasetError(
                f"class {ds.class_names[c]!r} has {members.size} sample; need >= 2"
            )
        n_test = min(max(round_half_up(test_frac * members.size), 1), members.size - 1)
        perm = rng.permutation(members)
        test.append(perm[:n_test])
        train.append(perm[n_test:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def stratified_split(
    ds: LabeledDataset, test_frac: float = 0.2, seed: int = 0
) -> tuple[LabeledDataset, LabeledDataset]:
    train_idx, test_idx = stratified_split_indices(ds, test_frac, seed)
    return ds.subset(train_idx), ds.subset(test_idx)


# -- normalization --------------------------------------------------------


@dataclass(frozen=True)
class Normalizer:
    mean: np.ndarray
    std: np.ndarray = field(repr=False)


def fit_normalizer(ds: LabeledDataset) -> Normalizer:
    X = ds.features
    if X.shape[0] < 1:
        raise DatasetError("cannot fit a normalizer on an empty dataset")
    mean = X.mean(axis=0)
    # np.mean of a constant column may be off by an ulp; pin it exactly.
    constant = np.ptp(X, axis=0) == 0
    mean = np.where(constant, X[0], mean)
    std = np.maximum(X.std(axis=0), STD_FLOOR)
    return Normalizer(mean, std)


def apply_normalizer(norm: Normalizer, ds: LabeledDataset) -> LabeledDataset:
    if ds.d != norm.mean.shape[0]:
        raise DatasetError(f"normalizer fit on d={norm.mean.shape[0]}, data has d={ds.d}")
    return LabeledDataset((ds.features - norm.mean) / norm.std, ds.labels, ds.class_names)


# -- summaries ------------------------------------------------------------


def class_distribution(ds: LabeledDataset) -> list[tuple[str, int, float]]:
    if ds.n < 1:
        raise DatasetError("empty dataset")
    counts = ds.class_counts()
    return [(name, int(k), k / ds.n) for name, k in zip(ds.class_names, counts)]


def imbalance_ratio(counts: Sequence[int]) -> float:
    present = [c for c in counts if c > 0]
    return max(present) / min(present)
