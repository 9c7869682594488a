"""Replicate data generation, pretraining and the strategy x loss grid."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import os
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import model as M
from .config import ExperimentConfig
from .dataset import (
    LabeledDataset,
    Normalizer,
    apply_normalizer,
    fit_normalizer,
    stratified_split,
    synth_generate,
)
from .trainer import accuracy_std, evaluate, run_strategy, train

log = logging.getLogger(__name__)


def derive_seed(base: int, *parts) -> int:
    """Stable 32-bit seed from a base seed and labels (strategy, loss, ...)."""
    words = [int(base) & 0xFFFFFFFF]
    for p in parts:
        words.append(p if isinstance(p, int) else zlib.crc32(str(p).encode("utf-8")))
    return int(np.random.SeedSequence(words).generate_state(1)[0])


@dataclass
class ReplicateData:
    source_train: LabeledDataset
    source_test: LabeledDataset
    target_train: LabeledDataset
    target_test: LabeledDataset
    normalizer: Optional[Normalizer] = None

    def normalized(self) -> "ReplicateData":
        """All four splits z-scored with source-train statistics."""
        norm = fit_normalizer(self.source_train)
        return ReplicateData(
            *(apply_normalizer(norm, ds) for ds in
              (self.source_train, self.source_test, self.target_train, self.target_test)),
            normalizer=norm,
        )


def replicate_data(cfg: ExperimentConfig, replicate: int) -> ReplicateData:
    """Raw (unnormalized) source/target splits sharing class centroids."""
    seed = derive_seed(cfg.seed, "data", replicate)
    source, centroids = synth_generate(dataclasses.replace(cfg.source, seed=seed))
    target, _ = synth_generate(dataclasses.replace(cfg.target, seed=seed + 1), centroids)
    s_tr, s_te = stratified_split(source, cfg.test_frac, seed)
    t_tr, t_te = stratified_split(target, cfg.test_frac, seed + 1)
    return ReplicateData(s_tr, s_te, t_tr, t_te)


def pretrain(cfg: ExperimentConfig, data: ReplicateData, replicate: int):
    """Train every group on the (normalized) source split."""
    init_seed = derive_seed(cfg.seed, "init", replicate)
    params = M.init(cfg.model_spec(init_seed))
    config = dataclasses.replace(cfg.pretrain, shuffle_seed=derive_seed(cfg.seed, "pretrain", replicate))
    params, history = train(params, data.source_train, None, cfg.pretrain_loss, config, data.source_test)
    return params, history


def _history_json(history) -> list[dict]:
    return [dataclasses.asdict(r) for r in history]


def run_cell(cfg: ExperimentConfig, strategy: str, loss_name: str, replicate: int,
             source_model: M.ModelParams, data: ReplicateData) -> dict:
    loss_spec = dict(cfg.losses)[loss_name]
    seed = derive_seed(cfg.seed, strategy, loss_name, replicate)
    config = dataclasses.replace(cfg.finetune, shuffle_seed=seed)
    report, history = run_strategy(
        strategy, source_model, data.target_train, data.target_test,
        loss_spec, config, seed=seed, options=cfg.options,
    )
    return {
        "strategy": strategy,
        "loss": loss_name,
        "replicate": replicate,
        "seed": seed,
        "accuracy": report.accuracy,
        "macro_f1": report.macro_f1,
        "accuracy_std": accuracy_std(history),
        "history": _history_json(history),
        "report": report.to_json(),
    }


def _cell_task(args):
    cfg, strategy, loss_name, replicate, model, data = args
    try:
        return run_cell(cfg, strategy, loss_name, replicate, model, data)
    except Exception as exc:  # recorded per cell, the grid keeps going
        return {"strategy": strategy, "loss": loss_name, "replicate": replicate,
                "error": f"{type(exc).__name__}: {exc}"}


def run_grid(cfg: ExperimentConfig, jobs: Optional[int] = None) -> dict:
    """Every (strategy, loss, replicate) cell plus per-replicate pretraining.

    Returns ``{"pretrain": [...], "cells": [...], "summary": [...]}``; cell
    order follows the config, independent of scheduling.
    """
    jobs = jobs or os.cpu_count() or 1
    pre, tasks = [], []
    for r in range(cfg.replicates):
        data = replicate_data(cfg, r).normalized()
        params, history = pretrain(cfg, data, r)
        pre.append({"replicate": r, "source_accuracy": history[-1].accuracy,
                    "history": _history_json(history)})
        for s in cfg.strategies:
            for loss_name, _ in cfg.losses:
                tasks.append((cfg, s, loss_name, r, params, data))
    if jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            cells = list(pool.map(_cell_task, tasks))
    else:
        cells = [_cell_task(t) for t in tasks]
    return {"pretrain": pre, "cells": cells, "summary": summarize(cfg, cells)}


def summarize(cfg: ExperimentConfig, cells: list[dict]) -> list[dict]:
    out = []
    for s in cfg.strategies:
        for loss_name, _ in cfg.losses:
            group = [c for c in cells if c["strategy"] == s and c["loss"] == loss_name]
            ok = [c for c in group if "error" not in c]
            row = {"strategy": s, "loss": loss_name, "n_ok": len(ok), "n_failed": len(group) - len(ok)}
            for key in ("accuracy", "macro_f1", "accuracy_std"):
                vals = np.array([c[key] for c in ok])
                row[f"{key}_mean"] = float(vals.mean()) if ok else None
                row[f"{key}_sd"] = float(vals.std()) if ok else None
            out.append(row)
    return out


def summary_table(cfg: ExperimentConfig, summary: list[dict]) -> list[list[str]]:
    """Rows = strategies, columns = losses, cells ``acc±sd / f1±sd`` (percent)."""
    header = ["strategy"] + [name for name, _ in cfg.losses]
    rows = [header]
    lookup = {(r["strategy"], r["loss"]): r for r in summary}
    for s in cfg.strategies:
        row = [s]
        for name, _ in cfg.losses:
            r = lookup[(s, name)]
            if r["n_ok"] == 0:
                row.append("failed")
            else:
                row.append(
                    f"{100 * r['accuracy_mean']:.2f}±{100 * r['accuracy_sd']:.2f} / "
                    f"{100 * r['macro_f1_mean']:.2f}±{100 * r['macro_f1_sd']:.2f}"
                )
        rows.append(row)
    return rows


def results_digest(results) -> str:
    blob = json.dumps(results, sort_keys=True, separators=(",", ":")).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()
