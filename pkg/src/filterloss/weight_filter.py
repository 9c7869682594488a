"""Per-sample loss weights from a consensus of undersamplers.

Each undersampler runs independently on the same dataset. A sample kept by
``j`` of the ``k`` samplers receives weight ``alphas[j]``, so the table has
``k + 1`` entries and samples no sampler keeps still get ``alphas[0]``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .dataset import LabeledDataset
from .resampling import UndersamplerSpec


class WeightFilterError(ValueError):
    pass


@dataclass(frozen=True)
class WeightTable:
    alphas: tuple[float, ...]

    def __post_init__(self):
        a = tuple(float(x) for x in self.alphas)
        object.__setattr__(self, "alphas", a)
        if len(a) < 2:
            raise WeightFilterError("a weight table needs at least two entries")
        if any(x < 0 or x > 1 for x in a):
            raise WeightFilterError(f"weights must lie in [0, 1], got {a}")
        if any(lo > hi for lo, hi in zip(a, a[1:])):
            raise WeightFilterError(f"weights must be non-decreasing, got {a}")

    def __len__(self):
        return len(self.alphas)


def default_weight_table(n_samplers: int, alpha_min: float = 0.1) -> WeightTable:
    """Linear ramp from ``alpha_min`` (kept by none) to 1 (kept by all)."""
    if n_samplers < 1:
        raise WeightFilterError("n_samplers must be >= 1")
    if not 0.0 <= alpha_min <= 1.0:
        raise WeightFilterError(f"alpha_min must be in [0, 1], got {alpha_min}")
    return WeightTable(
        tuple(alpha_min + (1.0 - alpha_min) * j / n_samplers for j in range(n_samplers + 1))
    )


def keep_counts(n: int, keep_sets: Sequence[np.ndarray]) -> np.ndarray:
    counts = np.zeros(n, dtype=np.int64)
    for keep in keep_sets:
        counts[np.unique(np.asarray(keep, dtype=np.int64))] += 1
    return counts


def weights_from_counts(counts: np.ndarray, table: WeightTable) -> np.ndarray:
    return np.asarray(table.alphas)[counts]


def assign_weights(
    ds: LabeledDataset, samplers: Sequence[UndersamplerSpec], table: WeightTable
) -> np.ndarray:
    """Run every sampler on ``ds`` and map per-sample keep counts to weights.

    Returns the weight vector, one entry per row of ``ds``.
    """
    if not samplers:
        raise WeightFilterError("at least one undersampler is required")
    if len(table) != len(samplers) + 1:
        raise WeightFilterError(
            f"weight table has {len(table)} entries; expected {len(samplers) + 1} "
            f"for {len(samplers)} sampler(s)"
        )
    keep_sets = []
    for spec in samplers:
        try:
            keep_sets.append(spec.run(ds).keep_indices)
        except Exception as exc:
            raise WeightFilterError(f"sampler {spec.name!r} failed: {exc}") from exc
    return weights_from_counts(keep_counts(ds.n, keep_sets), table)


def weight_histogram(omega: np.ndarray, table: WeightTable) -> list[dict]:
    """Number of samples in each weight class, in table order."""
    counts = {}
    for a in table.alphas:
        counts.setdefault(a, 0)
    for w in omega:
        counts[float(w)] += 1
    return [{"weight": a, "count": c} for a, c in counts.items()]


def save_weights_csv(omega: np.ndarray, path) -> None:
    with open(Path(path), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["weight"])
        for v in omega:
            w.writerow([repr(float(v))])


def load_weights_csv(path) -> np.ndarray:
    with open(Path(path), newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows or rows[0] != ["weight"]:
        raise WeightFilterError(f"{path}: expected a 'weight' header")
    return np.array([float(r[0]) for r in rows[1:] if r])
