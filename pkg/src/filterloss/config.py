"""Experiment configuration (JSON) with validation and defaults."""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .dataset import DatasetError, SyntheticSpec
from .losses import LossError, LossSpec
from .model import ModelError, ModelSpec, TrainConfig
from .trainer import StrategyError, StrategyOptions, parse_strategy
from .weight_filter import WeightFilterError, WeightTable

SCHEMA_VERSION = 1
SCENE_LABELS = ("still", "walking", "running", "bicycling", "subway", "bus")
TABLE_STRATEGIES = (
    "none", "ros", "smote", "adasyn", "rus", "tomek", "enn", "oss",
    "filterloss:oss", "filterloss:enn", "filterloss:enn&oss",
)
TABLE_LOSSES = ("label_smooth", "focal", "focal_logits", "ls_focal")


class ConfigError(ValueError):
    pass


DEFAULT_CONFIG: dict[str, Any] = {
    "schema_version": SCHEMA_VERSION,
    "seed": 0,
    "replicates": 5,
    "test_frac": 0.2,
    "source": {
        "n_classes": 6,
        "class_counts": [500] * 6,
        "dim": 32,
        "cluster_spread": 1.0,
        "noise_floor": 0.0,
        "label_noise_frac": 0.0,
        "class_names": list(SCENE_LABELS),
    },
    "target": {
        "n_classes": 6,
        "class_counts": [500, 400, 300, 60, 25, 15],
        "dim": 32,
        "cluster_spread": 1.0,
        "noise_floor": 4.0,
        "label_noise_frac": 0.10,
        "class_names": list(SCENE_LABELS),
    },
    "model": {"hidden_layers": [256, 256], "residual": True, "conv_channels": 0},
    "pretrain": {"learning_rate": 0.01, "epochs": 10, "batch_size": 32,
                 "loss": {"family": "ce"}},
    "finetune": {"learning_rate": 0.2, "epochs": 10, "batch_size": 32},
    "losses": [{"family": f} for f in TABLE_LOSSES],
    "strategies": list(TABLE_STRATEGIES),
    "strategy_options": {"enn_k": 3, "smote_k": 5, "adasyn_k": 5, "adasyn_beta": 1.0,
                         "alpha_min": 0.1, "reinit_head": True},
    "weight_table": None,
    "out_dir": "runs/default",
}


@dataclass
class ExperimentConfig:
    seed: int
    replicates: int
    test_frac: float
    source: SyntheticSpec
    target: SyntheticSpec
    model: dict
    pretrain: TrainConfig
    pretrain_loss: LossSpec
    finetune: TrainConfig
    losses: list[tuple[str, LossSpec]]
    strategies: list[str]
    options: StrategyOptions
    out_dir: Path
    raw: dict = field(repr=False, default_factory=dict)

    def model_spec(self, init_seed: int) -> ModelSpec:
        return ModelSpec(self.source.dim, self.source.n_classes, init_seed=init_seed, **self.model)


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _synth(d: dict, what: str) -> SyntheticSpec:
    try:
        return SyntheticSpec(
            n_classes=int(d["n_classes"]),
            class_counts=tuple(d["class_counts"]),
            dim=int(d["dim"]),
            cluster_spread=float(d.get("cluster_spread", 1.0)),
            noise_floor=float(d.get("noise_floor", 0.0)),
            label_noise_frac=float(d.get("label_noise_frac", 0.0)),
            class_names=tuple(d["class_names"]) if d.get("class_names") else None,
        )
    except (KeyError, TypeError, DatasetError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _train(d: dict, what: str) -> TrainConfig:
    try:
        return TrainConfig(float(d["learning_rate"]), int(d["epochs"]), int(d["batch_size"]),
                           full_batch=bool(d.get("full_batch", False)))
    except (KeyError, TypeError, ModelError) as exc:
        raise ConfigError(f"{what}: {exc}") from None


def _loss(d: dict) -> tuple[str, LossSpec]:
    try:
        spec = LossSpec(d["family"], float(d.get("gamma", 2.0)), float(d.get("epsilon", 0.1)))
    except (KeyError, TypeError, LossError) as exc:
        raise ConfigError(f"loss {d!r}: {exc}") from None
    return d.get("name", spec.family), spec


def parse_config(doc: Optional[dict] = None) -> ExperimentConfig:
    """Validate a config document (merged over the defaults)."""
    raw = _merge(DEFAULT_CONFIG, doc or {})
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise ConfigError(
            f"unsupported schema_version {raw.get('schema_version')!r}; expected {SCHEMA_VERSION}"
        )
    source = _synth(raw["source"], "source")
    target = _synth(raw["target"], "target")
    if (source.dim, source.n_classes) != (target.dim, target.n_classes):
        raise ConfigError("source and target must share dim and n_classes")
    if not raw["strategies"]:
        raise ConfigError("strategy list is empty")
    for s in raw["strategies"]:
        try:
            parse_strategy(s)
        except StrategyError as exc:
            raise ConfigError(str(exc)) from None
    if not raw["losses"]:
        raise ConfigError("loss list is empty")
    losses = [_loss(d) for d in raw["losses"]]
    if len({name for name, _ in losses}) != len(losses):
        raise ConfigError("loss names must be unique (set 'name' to disambiguate)")
    if int(raw["replicates"]) < 1:
        raise ConfigError("replicates must be >= 1")
    if not 0 < float(raw["test_frac"]) < 1:
        raise ConfigError("test_frac must be in (0, 1)")
    pre = dict(raw["pretrain"])
    pretrain_loss = _loss(pre.pop("loss", {"family": "ce"}))[1]

    opts = dict(raw["strategy_options"])
    table = raw.get("weight_table")
    if table is not None:
        try:
            WeightTable(tuple(table))
        except WeightFilterError as exc:
            raise ConfigError(f"weight_table: {exc}") from None
        opts["weight_table"] = tuple(table)
    if "trainable" in opts and opts["trainable"] is not None:
        opts["trainable"] = tuple(opts["trainable"])
    try:
        options = StrategyOptions(**opts)
    except TypeError as exc:
        raise ConfigError(f"strategy_options: {exc}") from None

    model = dict(raw["model"])
    model["hidden_layers"] = tuple(model.get("hidden_layers", (64, 64)))
    try:
        ModelSpec(source.dim, source.n_classes, **model)
    except (TypeError, ModelError) as exc:
        raise ConfigError(f"model: {exc}") from None

    return ExperimentConfig(
        seed=int(raw["seed"]),
        replicates=int(raw["replicates"]),
        test_frac=float(raw["test_frac"]),
        source=source,
        target=target,
        model=model,
        pretrain=_train(pre, "pretrain"),
        pretrain_loss=pretrain_loss,
        finetune=_train(raw["finetune"], "finetune"),
        losses=losses,
        strategies=list(raw["strategies"]),
        options=options,
        out_dir=Path(raw["out_dir"]),
        raw=raw,
    )


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return parse_config(doc)
