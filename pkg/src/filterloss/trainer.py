"""Training, evaluation and the strategy pipeline (resample or weight-filter,
then fine-tune and evaluate)."""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np

from . import model as M
from .dataset import LabeledDataset
from .losses import LossSpec, per_sample_loss, reduce_weighted
from .resampling import UndersamplerSpec, resample
from .weight_filter import WeightTable, assign_weights, default_weight_table

log = logging.getLogger(__name__)

PLAIN_STRATEGIES = ("none", "ros", "smote", "adasyn", "rus", "tomek", "enn", "oss")
# Strategy name -> resampling method.
_RESAMPLERS = {
    "ros": "random_over",
    "smote": "smote",
    "adasyn": "adasyn",
    "rus": "random_under",
    "tomek": "tomek",
    "enn": "enn",
    "oss": "oss",
}
_FILTER_SAMPLERS = {"enn": "enn", "oss": "oss", "tomek": "tomek", "rus": "random_under",
                    "random_under": "random_under"}


class TrainingError(RuntimeError):
    pass


class StrategyError(ValueError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    accuracy: Optional[float] = None
    macro_f1: Optional[float] = None


@dataclass
class EvalReport:
    accuracy: float
    macro_f1: float
    weighted_f1: float
    precision: list[float]
    recall: list[float]
    f1: list[float]
    confusion: list[list[int]]
    class_names: list[str]
    absent_classes: list[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return asdict(self)


# -- evaluation -----------------------------------------------------------


def confusion_matrix(truth: np.ndarray, pred: np.ndarray, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (truth, pred), 1)
    return cm


def report_from_predictions(truth, pred, class_names: Sequence[str]) -> EvalReport:
    truth = np.asarray(truth, dtype=np.int64)
    pred = np.asarray(pred, dtype=np.int64)
    if truth.size == 0:
        raise TrainingError("cannot evaluate on an empty set")
    C = len(class_names)
    cm = confusion_matrix(truth, pred, C)
    tp = np.diag(cm).astype(np.float64)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    precision = np.divide(tp, predicted, out=np.zeros(C), where=predicted > 0)
    recall = np.divide(tp, actual, out=np.zeros(C), where=actual > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(C), where=denom > 0)
    absent = [class_names[c] for c in range(C) if actual[c] == 0 and predicted[c] == 0]
    return EvalReport(
        accuracy=float(tp.sum() / truth.size),
        macro_f1=float(f1.mean()),
        weighted_f1=float((f1 * actual).sum() / actual.sum()),
        precision=precision.tolist(),
        recall=recall.tolist(),
        f1=f1.tolist(),
        confusion=cm.tolist(),
        class_names=list(class_names),
        absent_classes=absent,
    )


def evaluate(params: M.ModelParams, ds: LabeledDataset) -> EvalReport:
    if ds.n == 0:
        raise TrainingError("cannot evaluate on an empty set")
    return report_from_predictions(ds.labels, M.predict(params, ds.features), ds.class_names)


# -- training -------------------------------------------------------------


def _batches(n: int, config: M.TrainConfig, rng):
    if config.full_batch:
        return [np.arange(n)]
    order = rng.permutation(n)
    return [order[i : i + config.batch_size] for i in range(0, n, config.batch_size)]


def train(
    params: M.ModelParams,
    ds: LabeledDataset,
    omega: Optional[np.ndarray],
    loss_spec: LossSpec,
    config: M.TrainConfig,
    eval_ds: Optional[LabeledDataset] = None,
    normalize_by_weight: bool = False,
) -> tuple[M.ModelParams, list[EpochRecord]]:
    """Mini-batch SGD on the per-sample weighted loss.

    Each batch loss is ``(1/B) sum_i omega_i l_i`` over the batch (``B`` is
    the batch size). ``omega=None`` trains on the plain mean loss. The
    recorded ``train_loss`` is the size-weighted average of the batch losses
    seen during the epoch.
    """
    if params.spec.input_dim != ds.d:
        raise TrainingError(f"model expects d={params.spec.input_dim}, data has d={ds.d}")
    if params.spec.n_classes != ds.n_classes:
        raise TrainingError(
            f"model has {params.spec.n_classes} classes, data has {ds.n_classes}"
        )
    if omega is not None:
        omega = np.asarray(omega, dtype=np.float64)
        if omega.shape != (ds.n,):
            raise TrainingError(f"{omega.shape} weights for {ds.n} samples")
    rng = np.random.default_rng(config.shuffle_seed)
    history = []
    for epoch in range(1, config.epochs + 1):
        total = 0.0
        for b, idx in enumerate(_batches(ds.n, config, rng)):
            logits, cache = M.forward(params, ds.features[idx])
            losses = per_sample_loss(loss_spec, logits, ds.labels[idx])
            w = None if omega is None else omega[idx]
            loss, grad_logits = reduce_weighted(losses, w, normalize_by_weight)
            if not np.isfinite(loss):
                raise TrainingError(f"non-finite loss at epoch {epoch}, batch {b}")
            try:
                params = M.sgd_step(params, M.backward(params, cache, grad_logits),
                                    config.learning_rate)
            except M.ModelError as exc:
                raise TrainingError(f"epoch {epoch}, batch {b}: {exc}") from exc
            total += loss * len(idx)
        record = EpochRecord(epoch, total / ds.n)
        if eval_ds is not None:
            rep = evaluate(params, eval_ds)
            record.accuracy, record.macro_f1 = rep.accuracy, rep.macro_f1
        history.append(record)
    return params, history


def accuracy_std(history: Sequence[EpochRecord], first_epoch: int = 2) -> float:
    """Population std of eval accuracy over epochs ``first_epoch..end``."""
    acc = [r.accuracy for r in history if r.epoch >= first_epoch]
    if not acc or any(a is None for a in acc):
        raise TrainingError("history has no eval accuracy for the requested epochs")
    return float(np.std(acc))


# -- strategies -----------------------------------------------------------


@dataclass(frozen=True)
class StrategyOptions:
    enn_k: int = 3
    smote_k: int = 5
    adasyn_k: int = 5
    adasyn_beta: float = 1.0
    alpha_min: float = 0.1
    weight_table: Optional[tuple[float, ...]] = None
    reinit_head: bool = True
    trainable: Optional[tuple[str, ...]] = None  # None: last feature group + head


def parse_strategy(name: str) -> tuple[str, list[str]]:
    """``"enn"`` -> ("enn", []); ``"filterloss:enn&oss"`` -> ("filterloss", ["enn", "oss"])."""
    if name in PLAIN_STRATEGIES:
        return name, []
    if name.startswith("filterloss:"):
        parts = [p.strip() for p in name.split(":", 1)[1].replace("&", ",").replace("+", ",").split(",")]
        parts = [p for p in parts if p]
        bad = [p for p in parts if p not in _FILTER_SAMPLERS]
        if not parts or bad:
            raise StrategyError(f"bad filterloss sampler list in {name!r}")
        return "filterloss", parts
    raise StrategyError(
        f"unknown strategy {name!r}; expected one of {PLAIN_STRATEGIES} or filterloss:<samplers>"
    )


def prepare_strategy(
    strategy: str, ds: LabeledDataset, seed: int = 0, options: StrategyOptions = StrategyOptions()
) -> tuple[LabeledDataset, Optional[np.ndarray]]:
    """Training set and per-sample weights for a strategy.

    Resampling strategies return the resampled set with ``None`` weights;
    ``filterloss`` returns the original set with filter weights.
    """
    kind, samplers = parse_strategy(strategy)
    if kind == "none":
        return ds, None
    if kind == "filterloss":
        specs = [
            UndersamplerSpec(_FILTER_SAMPLERS[s], k=options.enn_k, seed=seed + i)
            for i, s in enumerate(samplers)
        ]
        table = (
            WeightTable(options.weight_table)
            if options.weight_table is not None
            else default_weight_table(len(specs), options.alpha_min)
        )
        return ds, assign_weights(ds, specs, table)
    method = _RESAMPLERS[kind]
    k = {"smote": options.smote_k, "adasyn": options.adasyn_k, "enn": options.enn_k}.get(method)
    result = resample(ds, method, k=k, beta=options.adasyn_beta, seed=seed)
    return result.apply(ds), None


def run_strategy(
    strategy: str,
    source_model: M.ModelParams,
    target_train: LabeledDataset,
    target_eval: LabeledDataset,
    loss_spec: LossSpec,
    config: M.TrainConfig,
    seed: int = 0,
    options: StrategyOptions = StrategyOptions(),
) -> tuple[EvalReport, list[EpochRecord]]:
    """Apply a strategy, fine-tune ``source_model`` on the target and evaluate."""
    train_ds, omega = prepare_strategy(strategy, target_train, seed, options)
    params = source_model.copy()
    if options.reinit_head:
        params = M.reinit_head(params, seed)
    params = M.set_trainable(params, list(options.trainable or M.finetune_groups(params)))
    params, history = train(params, train_ds, omega, loss_spec, config, target_eval)
    return evaluate(params, target_eval), history
