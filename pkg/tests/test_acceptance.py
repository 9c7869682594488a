"""Acceptance criteria, each checked at its stated tolerance and time limit.

Every test records one PASS/FAIL line that is printed in the pytest summary.
"""

import json
import time
from contextlib import contextmanager
from fractions import Fraction
from math import floor

import numpy as np
import pytest

from filterloss import model as M
from filterloss.analysis import cross_dataset_report, pairwise_stats
from filterloss.cli import main
from filterloss.config import DEFAULT_CONFIG
from filterloss.dataset import LabeledDataset, SyntheticSpec, synth_generate
from filterloss.losses import FAMILIES, LossSpec, per_sample_loss, reduce_weighted
from filterloss.resampling import adasyn, enn, oss, random_undersample, smote, tomek_links
from filterloss.trainer import StrategyOptions, prepare_strategy
from filterloss.weight_filter import WeightTable, assign_weights, keep_counts, weights_from_counts

import oracles
from conftest import ACCEPTANCE_LINES
from helpers import random_model_case, small_problem, trajectory, weighted_loss, with_flat


@contextmanager
def criterion(number, title, limit_s=None):
    """Record a PASS/FAIL line; fail also when the time limit is exceeded."""
    detail = {}
    start = time.perf_counter()
    ok = False
    try:
        yield detail
        ok = True
    finally:
        elapsed = time.perf_counter() - start
        slow = limit_s is not None and elapsed >= limit_s
        status = "PASS" if ok and not slow else "FAIL"
        limit = f" (limit {limit_s:g} s)" if limit_s else ""
        extra = f" | {detail['msg']}" if "msg" in detail else ""
        ACCEPTANCE_LINES.append(f"[{status}] criterion {number:2d}: {title} | {elapsed:.2f} s{limit}{extra}")
    assert not slow, f"criterion {number} took {elapsed:.2f} s, limit {limit_s} s"


def ds_of(X, y, C):
    return LabeledDataset(X, y, tuple(f"c{c}" for c in range(C)))


def rel(a, b):
    return abs(a - b) / max(abs(a), abs(b), 1e-300)


def test_1_reduction_identity():
    with criterion(1, "unit weights reduce to the plain mean", 1.0) as d:
        rng = np.random.default_rng(1)
        worst = 0.0
        for t in range(100):
            n, C = int(rng.integers(1, 64)), int(rng.integers(2, 8))
            spec = LossSpec(FAMILIES[t % len(FAMILIES)], float(rng.uniform(0, 3)), float(rng.uniform(0, 0.5)))
            ps = per_sample_loss(spec, rng.normal(scale=5, size=(n, C)), rng.integers(0, C, size=n))
            weighted, _ = reduce_weighted(ps, np.ones(n))
            worst = max(worst, rel(weighted, float(np.mean(ps.values))))
        d["msg"] = f"max rel err {worst:.1e}"
        assert worst <= 1e-12


def test_2_undersampling_proportionality():
    with criterion(2, "binary filter equals scaled undersampled loss and trajectory", 10.0) as d:
        worst_loss = worst_traj = 0.0
        for seed, family in enumerate(("ce", "focal_logits", "ls_focal")):
            ds = small_problem(seed=seed, counts=(40, 20, 10))
            opts = StrategyOptions(weight_table=(0.0, 1.0))
            full, omega = prepare_strategy("filterloss:enn", ds, options=opts)
            keep = np.flatnonzero(omega)
            sub = ds.subset(keep)
            spec = LossSpec(family)
            params = M.init(M.ModelSpec(ds.d, ds.n_classes, (8, 8), init_seed=seed))
            logits = M.forward(params, ds.features)[0]
            eq5, _ = reduce_weighted(per_sample_loss(spec, logits, ds.labels), omega)
            eq4 = float(per_sample_loss(spec, logits[keep], ds.labels[keep]).values.mean())
            worst_loss = max(worst_loss, rel(eq5, keep.size / ds.n * eq4))
            eta = 0.1
            wf, wl = trajectory(params, full, omega, spec, eta * ds.n / keep.size, 5)
            sf, sl = trajectory(params, sub, None, spec, eta, 5)
            for a, b in zip(wf, sf):
                worst_traj = max(worst_traj, oracles.rel_err(a, b))
            for a, b in zip(wl, sl):
                worst_loss = max(worst_loss, rel(a, keep.size / ds.n * b))
        d["msg"] = f"loss rel err {worst_loss:.1e}, trajectory rel err {worst_traj:.1e}"
        assert worst_loss <= 1e-10 and worst_traj <= 1e-10


def test_3_gradient_fidelity():
    with criterion(3, "model+loss gradients match central differences", 30.0) as d:
        rng = np.random.default_rng(3)
        worst, cases = 0.0, 0
        for family in FAMILIES:
            for _ in range(50):
                params, X, y, omega, loss = random_model_case(rng, family)
                _, grad = weighted_loss(params, X, y, omega, loss)
                fd = oracles.central_diff(
                    lambda f: weighted_loss(with_flat(params, f), X, y, omega, loss)[0], params.flat(), 1e-5)
                worst = max(worst, oracles.rel_err(grad, fd))
                cases += 1
        d["msg"] = f"{cases} configs, max rel err {worst:.1e}"
        assert worst < 1e-4


def adasyn_oracle_allocation(X, y, C, k):
    """Closed-form per-point allocation with exact rational arithmetic."""
    n = len(y)
    k_imp = min(k, n - 1)
    counts = np.bincount(y, minlength=C)
    out = {}
    for c in range(C):
        if counts[c] == counts.max():
            continue
        members = [i for i in range(n) if y[i] == c]
        mism = [sum(y[j] != c for j in oracles.knn(X, X[i], k_imp, skip=i)) for i in members]
        G = int(counts.max() - counts[c])
        total = sum(mism)
        r = [Fraction(m, total) if total else Fraction(1, len(members)) for m in mism]
        out[f"c{c}"] = [floor(ri * G + Fraction(1, 2)) for ri in r]
    return out


def seg_dist(p, a, b):
    ab = b - a
    denom = ab @ ab
    t = 0.0 if denom == 0 else np.clip((p - a) @ ab / denom, 0.0, 1.0)
    return float(np.linalg.norm(p - (a + t * ab)))


def test_4_resampler_oracles():
    with criterion(4, "resamplers equal brute-force oracles", 60.0) as d:
        rng = np.random.default_rng(4)
        mismatches, worst_seg, n_synth, n_over = [], 0.0, 0, 0
        for t in range(100):
            X, y, C = oracles.random_instance(rng, grid=t % 2 == 1)
            ds = ds_of(X, y, C)
            yl = [int(v) for v in y]
            checks = {
                "enn": (enn(ds, 3), oracles.enn(X, yl, 3)),
                "tomek": (tomek_links(ds), oracles.tomek(X, yl)),
                "oss": (oss(ds, seed=t), oracles.oss(X, yl, t)),
                "random_under": (random_undersample(ds, seed=t), oracles.random_under(yl, C, t)),
            }
            for name, (res, expected) in checks.items():
                if res.keep_indices.tolist() != expected:
                    mismatches.append((t, name))
            if np.bincount(y).min() < 2:
                continue  # interpolation needs a same-class partner
            n_over += 1
            for res in (smote(ds, k=5, seed=t), adasyn(ds, k=5, seed=t)):
                n_synth += res.n_synthetic
                for p, a, b in zip(res.synthetic_features, res.parents, res.partners):
                    worst_seg = max(worst_seg, seg_dist(p, X[a], X[b]))
            alloc = adasyn(ds, k=5, seed=t).params["allocation"]
            if alloc != adasyn_oracle_allocation(X, y, C, 5):
                mismatches.append((t, "adasyn_allocation"))
        d["msg"] = f"{len(mismatches)} mismatches, {n_over} oversampled instances, {n_synth} synthetic points, max segment dist {worst_seg:.1e}"
        assert not mismatches, mismatches[:5]
        assert worst_seg <= 1e-9


def test_5_loss_lattice():
    with criterion(5, "loss family lattice and focal_logits stability", 5.0) as d:
        rng = np.random.default_rng(5)
        worst_lattice = worst_logits = 0.0
        for _ in range(200):
            n, C = int(rng.integers(1, 16)), int(rng.integers(2, 8))
            z = rng.uniform(-20, 20, size=(n, C))
            y = rng.integers(0, C, size=n)
            g, e = float(rng.uniform(0.1, 4)), float(rng.uniform(0.01, 0.5))
            L = lambda fam, gamma=2.0, eps=0.1: per_sample_loss(LossSpec(fam, gamma, eps), z, y)
            pairs = [
                (L("focal", gamma=0.0), L("ce")),
                (L("label_smooth", eps=0.0), L("ce")),
                (L("ls_focal", gamma=g, eps=0.0), L("focal", gamma=g)),
                (L("ls_focal", gamma=0.0, eps=e), L("label_smooth", eps=e)),
            ]
            for a, b in pairs:
                worst_lattice = max(worst_lattice, np.abs(a.values - b.values).max(),
                                    np.abs(a.grad_logits - b.grad_logits).max())
            worst_logits = max(worst_logits,
                               np.abs(L("focal_logits", gamma=g).values - L("focal", gamma=g).values).max())
        huge = rng.choice([-1e4, 1e4], size=(50, 5)) * rng.uniform(0.5, 1, size=(50, 5))
        huge[:, 0] = 1e4 * np.sign(rng.normal(size=50))
        out = per_sample_loss(LossSpec("focal_logits"), huge, rng.integers(0, 5, size=50))
        finite = bool(np.all(np.isfinite(out.values)) and np.all(np.isfinite(out.grad_logits)))
        d["msg"] = f"lattice max diff {worst_lattice:.1e}, focal_logits vs focal {worst_logits:.1e}, finite at 1e4: {finite}"
        assert worst_lattice <= 1e-12 and worst_logits <= 1e-8 and finite


class Fixed:
    def __init__(self, keep):
        self.name, self.keep = "fixed", np.array(keep, dtype=int)

    def run(self, ds):
        from filterloss.resampling import ResampleResult

        return ResampleResult(self.keep, "fixed")


def test_6_weight_filter_properties():
    with criterion(6, "weight filter monotone, equivariant, worked example", 1.0) as d:
        ds = LabeledDataset(np.arange(5.0)[:, None], [0, 1, 0, 1, 0], ("a", "b"))
        omega = assign_weights(ds, [Fixed([0, 1, 2]), Fixed([0, 2, 4])], WeightTable((0.0, 0.5, 1.0)))
        assert omega.tolist() == [1.0, 0.5, 1.0, 0.0, 0.5]
        rng = np.random.default_rng(6)
        for _ in range(300):
            n, s = int(rng.integers(1, 30)), int(rng.integers(1, 4))
            table = WeightTable(tuple(np.sort(rng.uniform(0, 1, size=s + 1))))
            sets = [np.flatnonzero(rng.random(n) < 0.5) for _ in range(s)]
            base = weights_from_counts(keep_counts(n, sets), table)
            grown = [np.union1d(k, np.flatnonzero(rng.random(n) < 0.3)) for k in sets]
            assert np.all(weights_from_counts(keep_counts(n, grown), table) >= base)
            perm = rng.permutation(n)
            inv = np.argsort(perm)
            moved = weights_from_counts(keep_counts(n, [inv[k] for k in sets]), table)
            assert np.array_equal(moved, base[perm])
        d["msg"] = "300 random instances"


@pytest.fixture(scope="module")
def bench_runs(tmp_path_factory):
    """Scaled strategy grid, run twice through the CLI."""
    root = tmp_path_factory.mktemp("bench")
    cfg = root / "bench.json"
    cfg.write_text(json.dumps({
        "schema_version": 1,
        "strategies": ["none", "rus", "filterloss:enn"],
        "losses": [{"family": "focal_logits"}],
        "replicates": 5,
    }))
    runs = []
    for tag in ("first", "second"):
        start = time.perf_counter()
        code = main(["bench", "--config", str(cfg), "--out", str(root / tag)])
        elapsed = time.perf_counter() - start
        doc = json.loads((root / tag / "bench_report.json").read_text())
        runs.append((code, elapsed, doc))
    return runs


def strategy_means(doc, key):
    return {row["strategy"]: row[f"{key}_mean"] for row in doc["results"]["summary"]}


def test_7_scaled_grid_ordering(bench_runs):
    code, elapsed, doc = bench_runs[0]
    with criterion(7, "filterloss:enn beats none by 0.05 and rus within 0.01 (macro-F1)") as d:
        f1 = strategy_means(doc, "macro_f1")
        src = doc["results"]["config"]
        d["msg"] = (f"none {f1['none']:.4f}, rus {f1['rus']:.4f}, filterloss:enn {f1['filterloss:enn']:.4f}, "
                    f"grid {elapsed:.1f} s (limit 300 s)")
        assert code == 0
        assert src["target"]["class_counts"] == [500, 400, 300, 60, 25, 15]
        assert src["target"]["label_noise_frac"] == 0.10
        assert src["target"]["noise_floor"] > src["source"]["noise_floor"]
        assert sum(src["source"]["class_counts"]) == 3000 and src["source"]["dim"] == 32
        assert src["pretrain"]["epochs"] == 10 and src["finetune"]["epochs"] == 10
        assert f1["filterloss:enn"] >= f1["none"] + 0.05
        assert f1["filterloss:enn"] >= f1["rus"] - 0.01
        assert elapsed < 300


def test_8_stability(bench_runs):
    _, _, doc = bench_runs[0]
    with criterion(8, "filterloss:enn epoch-accuracy std <= rus") as d:
        sd = strategy_means(doc, "accuracy_std")
        d["msg"] = f"rus {sd['rus']:.4f}, filterloss:enn {sd['filterloss:enn']:.4f}, none {sd['none']:.4f}"
        assert sd["filterloss:enn"] <= sd["rus"]


def test_9_determinism(bench_runs):
    (_, _, a), (_, _, b) = bench_runs
    with criterion(9, "rerun yields identical results section") as d:
        da, db = a["meta"]["results_sha256"], b["meta"]["results_sha256"]
        d["msg"] = f"sha256 {da[:16]}"
        assert a["results"] == b["results"] and da == db


def test_10_analysis_oracle():
    with criterion(10, "pairwise stats equal double loop; noisy deltas positive", 5.0) as d:
        rng = np.random.default_rng(10)
        worst = 0.0
        for _ in range(20):
            C, dim = int(rng.integers(1, 4)), int(rng.integers(1, 5))
            y = np.concatenate([np.arange(C).repeat(2), rng.integers(0, C, size=int(rng.integers(0, 20)))])
            X = rng.normal(size=(len(y), dim))
            if rng.random() < 0.3:
                X[0] = 0.0
            rep = pairwise_stats(ds_of(X, y, C))
            for c in range(C):
                dist, cos, pairs = oracles.pair_stats([list(r) for r in X[y == c]])
                s = rep.classes[c]
                assert s.pairs == pairs
                worst = max(worst, rel(s.mean_euclid, dist), abs(s.mean_cosine - cos))
        quiet, cents = synth_generate(SyntheticSpec(6, (40,) * 6, 8, noise_floor=0.0, seed=1))
        loud, _ = synth_generate(SyntheticSpec(6, (40,) * 6, 8, noise_floor=2.0, seed=2), cents)
        deltas = [r.delta_euclid for r in cross_dataset_report(quiet, loud)]
        d["msg"] = f"max err vs oracle {worst:.1e}, min distance delta {min(deltas):.3f}"
        assert worst <= 1e-12
        assert all(v > 0 for v in deltas)
