"""Per-label similarity diagnostics: mean within-class Euclidean distance and
cosine similarity, and side-by-side comparison of two datasets."""

from __future__ import annotations

import csv
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dataset import LabeledDataset

DEFAULT_MAX_PAIRS = 5000


class AnalysisError(ValueError):
    pass


@dataclass
class ClassStats:
    class_name: str
    n: int
    pairs: int
    mean_euclid: Optional[float]
    mean_cosine: Optional[float]


@dataclass
class LabelSimilarityReport:
    reference: str  # "pairwise" or "centroid"
    classes: list[ClassStats]
    zero_norm_vectors: int = 0

    def by_name(self, name: str) -> ClassStats:
        for s in self.classes:
            if s.class_name == name:
                return s
        raise KeyError(name)

    def to_json(self) -> dict:
        return {
            "reference": self.reference,
            "zero_norm_vectors": self.zero_norm_vectors,
            "classes": [
                {"class": s.class_name, "n": s.n, "pairs": s.pairs,
                 "mean_euclid": s.mean_euclid, "mean_cosine": s.mean_cosine}
                for s in self.classes
            ],
        }

    def to_csv(self, path) -> None:
        with open(Path(path), "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["class", "n", "pairs", "mean_euclid", "mean_cosine"])
            for s in self.classes:
                w.writerow([s.class_name, s.n, s.pairs, s.mean_euclid, s.mean_cosine])


def _decode_pairs(linear: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """Map row-major indices over pairs ``i < j`` back to ``(i, j)``."""
    linear = np.asarray(linear, dtype=np.int64)
    # start(i) = i*(2n - i - 1)/2 is the first linear index of row i.
    i = np.floor((2 * n - 1 - np.sqrt((2 * n - 1) ** 2 - 8.0 * linear)) / 2).astype(np.int64)
    start = lambda r: r * (2 * n - r - 1) // 2
    i = np.where(start(i) > linear, i - 1, i)
    i = np.where(start(i + 1) <= linear, i + 1, i)
    j = linear - start(i) + i + 1
    return i, j


def _cosine(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, int]:
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    zero = (na == 0) | (nb == 0)
    denom = np.where(zero, 1.0, na * nb)
    cos = np.where(zero, 0.0, np.einsum("ij,ij->i", a, b) / denom)
    return np.clip(cos, -1.0, 1.0), int(zero.sum())


def pairwise_stats(
    ds: LabeledDataset,
    max_pairs_per_class: int = DEFAULT_MAX_PAIRS,
    seed: int = 0,
    reference: str = "pairwise",
) -> LabelSimilarityReport:
    """Mean Euclidean distance and cosine similarity within each label.

    With ``reference="pairwise"`` statistics run over unordered same-label
    pairs, exhaustively when there are at most ``max_pairs_per_class`` of
    them and over a seeded uniform sample of that many pairs otherwise.
    ``reference="centroid"`` compares each sample with its class mean.
    Zero-norm vectors count as cosine 0. Classes with fewer than two
    samples get ``None`` statistics.
    """
    if max_pairs_per_class < 1:
        raise AnalysisError("max_pairs_per_class must be >= 1")
    if reference not in ("pairwise", "centroid"):
        raise AnalysisError(f"unknown reference {reference!r}")
    rng = np.random.default_rng(seed)
    out, zeros = [], 0
    for c, name in enumerate(ds.class_names):
        X = ds.features[ds.labels == c]
        m = X.shape[0]
        if m < 2:
            out.append(ClassStats(name, m, 0, None, None))
            continue
        if reference == "centroid":
            a, b = X, np.broadcast_to(X.mean(axis=0), X.shape)
        else:
            total = m * (m - 1) // 2
            if total <= max_pairs_per_class:
                i, j = np.triu_indices(m, k=1)
            else:
                i, j = _decode_pairs(np.sort(rng.choice(total, max_pairs_per_class, replace=False)), m)
            a, b = X[i], X[j]
        diff = a - b
        dist = np.sqrt(np.einsum("ij,ij->i", diff, diff))
        cos, z = _cosine(a, b)
        zeros += z
        out.append(ClassStats(name, m, len(dist), float(dist.mean()), float(cos.mean())))
    return LabelSimilarityReport(reference, out, zeros)


@dataclass
class CrossRow:
    class_name: str
    stat_a: ClassStats
    stat_b: ClassStats
    delta_euclid: Optional[float]  # b - a
    delta_cosine: Optional[float]

    def to_json(self) -> dict:
        return {
            "class": self.class_name,
            "a": _stats_json(self.stat_a),
            "b": _stats_json(self.stat_b),
            "delta_euclid": self.delta_euclid,
            "delta_cosine": self.delta_cosine,
        }


def _stats_json(s: ClassStats) -> dict:
    d = asdict(s)
    d["class"] = d.pop("class_name")
    return d


def _delta(a, b):
    return None if a is None or b is None else b - a


def cross_dataset_report(
    ds_a: LabeledDataset,
    ds_b: LabeledDataset,
    shared_class_names: Optional[Sequence[str]] = None,
    max_pairs_per_class: int = DEFAULT_MAX_PAIRS,
    seed: int = 0,
    reference: str = "pairwise",
) -> list[CrossRow]:
    """Per shared label, both datasets' statistics and ``b - a`` deltas.

    Classes are matched by name. ``shared_class_names=None`` uses every
    name present in both datasets.
    """
    if ds_a.d != ds_b.d:
        raise AnalysisError(f"dimension mismatch: {ds_a.d} vs {ds_b.d}")
    if shared_class_names is None:
        shared_class_names = [c for c in ds_a.class_names if c in ds_b.class_names]
        if not shared_class_names:
            raise AnalysisError("the datasets share no class names")
    for name in shared_class_names:
        for tag, ds in (("first", ds_a), ("second", ds_b)):
            if name not in ds.class_names:
                raise AnalysisError(f"class {name!r} missing from the {tag} dataset")
    rep_a = pairwise_stats(ds_a, max_pairs_per_class, seed, reference)
    rep_b = pairwise_stats(ds_b, max_pairs_per_class, seed, reference)
    rows = []
    for name in shared_class_names:
        sa, sb = rep_a.by_name(name), rep_b.by_name(name)
        rows.append(CrossRow(name, sa, sb, _delta(sa.mean_euclid, sb.mean_euclid),
                             _delta(sa.mean_cosine, sb.mean_cosine)))
    return rows


def mean_within_class_distance(ds: LabeledDataset, max_pairs_per_class: int = DEFAULT_MAX_PAIRS) -> float:
    """Pair-count weighted mean of the per-class mean distances."""
    rep = pairwise_stats(ds, max_pairs_per_class)
    num = sum(s.mean_euclid * s.pairs for s in rep.classes if s.pairs)
    den = sum(s.pairs for s in rep.classes)
    if not den:
        return math.nan
    return num / den
