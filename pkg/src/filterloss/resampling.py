"""Over- and undersampling strategies.

Undersamplers return the sorted indices they keep; oversamplers keep every
index and add synthetic rows. All methods are deterministic given ``seed``
and never empty a class that was present in the input (the guard rule).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any, Optional

import numpy as np

from .dataset import LabeledDataset
from .neighbors import NeighborIndex, knn_all, knn_indices

log = logging.getLogger(__name__)

UNDERSAMPLERS = ("random_under", "tomek", "enn", "oss")
OVERSAMPLERS = ("random_over", "smote", "adasyn")


class ResamplingError(ValueError):
    pass


@dataclass
class ResampleResult:
    keep_indices: np.ndarray
    method_name: str
    params: dict[str, Any] = field(default_factory=dict)
    synthetic_features: Optional[np.ndarray] = None
    synthetic_labels: Optional[np.ndarray] = None
    # Parent and interpolation partner of each synthetic row (oversamplers).
    parents: Optional[np.ndarray] = field(default=None, repr=False)
    partners: Optional[np.ndarray] = field(default=None, repr=False)

    @property
    def n_synthetic(self) -> int:
        return 0 if self.synthetic_labels is None else len(self.synthetic_labels)

    def apply(self, ds: LabeledDataset) -> LabeledDataset:
        """Kept rows followed by any synthetic rows."""
        out = ds.subset(self.keep_indices)
        if self.n_synthetic:
            out = out.append(self.synthetic_features, self.synthetic_labels)
        return out

    def to_json(self) -> dict:
        return {
            "method": self.method_name,
            "params": self.params,
            "keep_indices": [int(i) for i in self.keep_indices],
            "n_synthetic": self.n_synthetic,
        }


@dataclass(frozen=True)
class UndersamplerSpec:
    method: str
    k: int = 3
    seed: int = 0
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.method not in UNDERSAMPLERS:
            raise ResamplingError(
                f"unknown undersampler {self.method!r}; expected one of {UNDERSAMPLERS}"
            )
        if self.k < 1:
            raise ResamplingError("k must be >= 1")

    @property
    def name(self) -> str:
        return self.method

    def run(self, ds: LabeledDataset) -> ResampleResult:
        if self.method == "random_under":
            return random_undersample(ds, self.seed)
        if self.method == "tomek":
            return tomek_links(ds)
        if self.method == "enn":
            return enn(ds, self.k)
        return oss(ds, self.seed)


def _as_rng(seed):
    # Anything exposing the Generator methods we use is accepted (test stubs).
    if hasattr(seed, "integers") and hasattr(seed, "random"):
        return seed
    return np.random.default_rng(seed)


def _require_all_classes(ds: LabeledDataset) -> np.ndarray:
    counts = ds.class_counts()
    empty = [ds.class_names[c] for c in np.flatnonzero(counts == 0)]
    if empty:
        raise ResamplingError(f"empty class(es): {empty}")
    return counts


def _present_classes(ds: LabeledDataset) -> np.ndarray:
    return np.flatnonzero(ds.class_counts() > 0)


def apply_guard(ds: LabeledDataset, keep: np.ndarray, params: dict) -> np.ndarray:
    """Restore the lowest-index member of any class the keep set emptied."""
    keep = np.unique(np.asarray(keep, dtype=np.int64))
    kept_labels = set(ds.labels[keep].tolist())
    restored = []
    for c in _present_classes(ds):
        if c not in kept_labels:
            restored.append(int(np.flatnonzero(ds.labels == c)[0]))
    if restored:
        params["guard_restored"] = restored
        keep = np.unique(np.concatenate([keep, restored]))
    return keep


# -- random ---------------------------------------------------------------


def random_undersample(ds: LabeledDataset, seed=0) -> ResampleResult:
    counts = _require_all_classes(ds)
    rng = _as_rng(seed)
    target = int(counts.min())
    keep = []
    for c in range(ds.n_classes):
        members = np.flatnonzero(ds.labels == c)
        keep.append(rng.permutation(members)[:target])
    keep = np.sort(np.concatenate(keep))
    return ResampleResult(keep, "random_under", {"seed": _seed_repr(seed), "per_class": target})


def random_oversample(ds: LabeledDataset, seed=0) -> ResampleResult:
    counts = _require_all_classes(ds)
    rng = _as_rng(seed)
    target = int(counts.max())
    picks = []
    for c in range(ds.n_classes):
        need = target - int(counts[c])
        if need:
            members = np.flatnonzero(ds.labels == c)
            picks.append(rng.choice(members, size=need, replace=True))
    picks = np.concatenate(picks) if picks else np.empty(0, dtype=np.int64)
    return ResampleResult(
        np.arange(ds.n),
        "random_over",
        {"seed": _seed_repr(seed), "per_class": target},
        ds.features[picks].copy(),
        ds.labels[picks].copy(),
    )


# -- SMOTE / ADASYN -------------------------------------------------------


def _clamped_k(k: int, available: int, where: str) -> int:
    if k > available:
        log.warning("%s: k=%d clamped to %d", where, k, available)
        return available
    return k


def _class_neighbors(ds: LabeledDataset, c: int, k: int, method: str):
    members = np.flatnonzero(ds.labels == c)
    if members.size < 2:
        raise ResamplingError(
            f"{method}: class {ds.class_names[c]!r} has {members.size} sample; need >= 2"
        )
    k_eff = _clamped_k(k, members.size - 1, f"{method} class {ds.class_names[c]!r}")
    local = knn_all(NeighborIndex(ds.features[members]), k_eff)
    return members, members[local], k_eff


def _interpolate(ds, parent: int, neighbor: int, lam: float) -> np.ndarray:
    x = ds.features[parent]
    return x + lam * (ds.features[neighbor] - x)


def smote(ds: LabeledDataset, k: int = 5, seed=0) -> ResampleResult:
    """Interpolate minority samples toward same-class nearest neighbors.

    Every class is filled up to the majority count. For each synthetic row a
    parent is drawn uniformly from the class, then one of its ``k`` nearest
    same-class neighbors, then ``lam ~ U[0, 1)``.
    """
    counts = _require_all_classes(ds)
    rng = _as_rng(seed)
    target = int(counts.max())
    feats, labels, parents, partners = [], [], [], []
    k_used = {}
    for c in range(ds.n_classes):
        need = target - int(counts[c])
        if not need:
            continue
        members, nbrs, k_eff = _class_neighbors(ds, c, k, "smote")
        k_used[ds.class_names[c]] = k_eff
        for _ in range(need):
            p = int(rng.integers(members.size))
            j = int(rng.integers(k_eff))
            lam = float(rng.random())
            feats.append(_interpolate(ds, members[p], nbrs[p, j], lam))
            labels.append(c)
            parents.append(int(members[p]))
            partners.append(int(nbrs[p, j]))
    return _oversample_result(ds, "smote", {"k": k, "k_used": k_used, "seed": _seed_repr(seed)},
                              feats, labels, parents, partners)


def adasyn_allocation(delta: np.ndarray, G: float) -> np.ndarray:
    """Synthetic counts per minority sample: ``round(r_i * G)``, with
    ``r = delta / sum(delta)`` (uniform when every delta is 0). Rounding is
    half-up.

    ``delta`` may be raw mismatch counts; only ratios matter. With integer
    counts and integer ``G`` the product is formed before the division, so
    exact .5 ties are represented exactly.
    """
    delta = np.asarray(delta, dtype=np.float64)
    total = delta.sum()
    if total > 0:
        scaled = delta * G / total
    else:
        scaled = np.full(delta.shape, G / delta.size)
    return np.floor(scaled + 0.5).astype(np.int64)


def _impurity_counts(ds: LabeledDataset, k: int) -> tuple[np.ndarray, int]:
    k_eff = _clamped_k(k, ds.n - 1, "adasyn impurity")
    nbrs = knn_all(NeighborIndex(ds.features), k_eff)
    return (ds.labels[nbrs] != ds.labels[:, None]).sum(axis=1), k_eff


def adasyn_impurity(ds: LabeledDataset, k: int) -> np.ndarray:
    """Fraction of each sample's ``k`` nearest neighbors (all classes) with
    a different label."""
    counts, k_eff = _impurity_counts(ds, k)
    return counts / k_eff


def adasyn(ds: LabeledDataset, k: int = 5, beta: float = 1.0, seed=0) -> ResampleResult:
    counts = _require_all_classes(ds)
    if beta < 0:
        raise ResamplingError("beta must be >= 0")
    rng = _as_rng(seed)
    majority = int(counts.max())
    mismatches, _ = _impurity_counts(ds, k)
    feats, labels, parents, partners = [], [], [], []
    allocation = {}
    for c in range(ds.n_classes):
        G = beta * (majority - int(counts[c]))
        if counts[c] == majority:
            continue
        members, nbrs, k_eff = _class_neighbors(ds, c, k, "adasyn")
        g = adasyn_allocation(mismatches[members], G)
        allocation[ds.class_names[c]] = [int(v) for v in g]
        for p, n_new in enumerate(g):
            for _ in range(n_new):
                j = int(rng.integers(k_eff))
                lam = float(rng.random())
                feats.append(_interpolate(ds, members[p], nbrs[p, j], lam))
                labels.append(c)
                parents.append(int(members[p]))
                partners.append(int(nbrs[p, j]))
    params = {"k": k, "beta": beta, "seed": _seed_repr(seed), "allocation": allocation}
    return _oversample_result(ds, "adasyn", params, feats, labels, parents, partners)


def _oversample_result(ds, name, params, feats, labels, parents, partners):
    X = np.array(feats).reshape(len(feats), ds.d)
    return ResampleResult(
        np.arange(ds.n), name, params, X, np.array(labels, dtype=np.int64),
        parents=np.array(parents, dtype=np.int64),
        partners=np.array(partners, dtype=np.int64),
    )


# -- cleaning undersamplers -----------------------------------------------


def _require_two_classes(ds: LabeledDataset, method: str):
    if len(_present_classes(ds)) < 2:
        raise ResamplingError(f"{method} needs at least two classes present")


def find_tomek_links(X: np.ndarray, y: np.ndarray) -> list[tuple[int, int]]:
    """Cross-label mutual 1-NN pairs ``(a, b)`` with ``a < b``."""
    if len(y) < 2:
        return []
    nn = knn_all(NeighborIndex(X), 1)[:, 0]
    return [
        (a, int(b))
        for a, b in enumerate(nn)
        if a < b and nn[b] == a and y[a] != y[b]
    ]


def tomek_links(ds: LabeledDataset) -> ResampleResult:
    """Drop the majority member of every Tomek link (both when the two
    classes have equal global counts)."""
    if ds.n < 2:
        raise ResamplingError("tomek needs n >= 2")
    _require_two_classes(ds, "tomek")
    counts = ds.class_counts()
    drop = set()
    links = find_tomek_links(ds.features, ds.labels)
    for a, b in links:
        ca, cb = counts[ds.labels[a]], counts[ds.labels[b]]
        if ca >= cb:
            drop.add(a)
        if cb >= ca:
            drop.add(b)
    params = {"n_links": len(links)}
    keep = np.array([i for i in range(ds.n) if i not in drop], dtype=np.int64)
    return ResampleResult(apply_guard(ds, keep, params), "tomek", params)


def enn(ds: LabeledDataset, k: int = 3) -> ResampleResult:
    """Single-pass Edited Nearest Neighbours.

    A sample is removed when some label holds a strict majority (more than
    ``k/2``) of its ``k`` nearest neighbors and that label differs from its
    own. All decisions use the original dataset.
    """
    if ds.n <= k:
        raise ResamplingError(f"enn needs n > k (n={ds.n}, k={k})")
    nbrs = knn_all(NeighborIndex(ds.features), k)
    nbr_labels = ds.labels[nbrs]
    keep = []
    for i in range(ds.n):
        votes = np.bincount(nbr_labels[i], minlength=ds.n_classes)
        winner = int(votes.argmax())
        if 2 * votes[winner] > k and winner != ds.labels[i]:
            continue
        keep.append(i)
    params = {"k": k}
    keep = apply_guard(ds, np.array(keep, dtype=np.int64), params)
    return ResampleResult(keep, "enn", params)


def _oss_binary(X: np.ndarray, is_min: np.ndarray, rng) -> np.ndarray:
    """One-sided selection on a binary problem; returns kept row indices."""
    majority = np.flatnonzero(~is_min)
    retained = list(np.flatnonzero(is_min))
    if majority.size == 0:
        return np.sort(np.array(retained, dtype=np.int64))
    order = rng.permutation(majority)
    retained.append(int(order[0]))
    for i in order[1:]:
        ref = np.sort(np.array(retained, dtype=np.int64))
        nearest = ref[knn_indices(NeighborIndex(X[ref]), X[i], 1)[0]]
        if is_min[nearest]:
            retained.append(int(i))
    retained = np.sort(np.array(retained, dtype=np.int64))
    drop = set()
    for a, b in find_tomek_links(X[retained], is_min[retained]):
        for local in (a, b):
            if not is_min[retained[local]]:
                drop.add(int(retained[local]))
    return np.array([i for i in retained if i not in drop], dtype=np.int64)


def oss(ds: LabeledDataset, seed=0) -> ResampleResult:
    """One-Sided Selection: 1-NN condensation of the majority, then Tomek
    cleaning of majority members.

    With more than two classes the binary procedure runs once per
    non-majority class (that class against all others) and the keep sets
    are intersected.
    """
    _require_two_classes(ds, "oss")
    rng = _as_rng(seed)
    counts = ds.class_counts()
    present = _present_classes(ds)
    major = int(present[np.argmax(counts[present])])
    minorities = [int(c) for c in present if c != major]
    keep = np.arange(ds.n)
    for c in minorities:
        kept = _oss_binary(ds.features, ds.labels == c, rng)
        keep = np.intersect1d(keep, kept)
    params = {"seed": _seed_repr(seed), "minority_runs": [ds.class_names[c] for c in minorities]}
    return ResampleResult(apply_guard(ds, keep, params), "oss", params)


def _seed_repr(seed):
    return seed if isinstance(seed, (int, np.integer)) else repr(type(seed).__name__)


def resample(ds: LabeledDataset, method: str, *, k: Optional[int] = None,
             beta: float = 1.0, seed=0) -> ResampleResult:
    """Dispatch by method name (``random_under``, ``random_over``, ``smote``,
    ``adasyn``, ``tomek``, ``enn``, ``oss``)."""
    if method == "random_under":
        return random_undersample(ds, seed)
    if method == "random_over":
        return random_oversample(ds, seed)
    if method == "smote":
        return smote(ds, k or 5, seed)
    if method == "adasyn":
        return adasyn(ds, k or 5, beta, seed)
    if method == "tomek":
        return tomek_links(ds)
    if method == "enn":
        return enn(ds, k or 3)
    if method == "oss":
        return oss(ds, seed)
    raise ResamplingError(f"unknown resampling method {method!r}")
