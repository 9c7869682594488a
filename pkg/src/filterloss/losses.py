"""Per-sample classification losses with analytic logit gradients, and the
per-sample weighted reduction.

Families
--------
ce            -log p_y
label_smooth  -sum_c q_c log p_c,  q = (1 - eps) onehot + eps / C
focal         -(1 - p_y)^gamma log p_y
focal_logits  focal, evaluated from a log-softmax (stable for huge logits)
ls_focal      -sum_c q_c (1 - p_c)^gamma log p_c
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

# Floor inside the probability-space logs. It only has to keep the loss finite
# once softmax underflows; a larger floor (say 1e-12) would truncate -log p at
# ~27.6 and make focal disagree with focal_logits for moderate logit gaps.
PROB_FLOOR = float(np.finfo(np.float64).tiny)
FAMILIES = ("ce", "label_smooth", "focal", "focal_logits", "ls_focal")


class LossError(ValueError):
    pass


@dataclass(frozen=True)
class LossSpec:
    family: str = "ce"
    gamma: float = 2.0
    epsilon: float = 0.1

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise LossError(f"unknown loss family {self.family!r}; expected one of {FAMILIES}")
        if self.gamma < 0:
            raise LossError("gamma must be >= 0")
        if not 0.0 <= self.epsilon < 1.0:
            raise LossError("epsilon must be in [0, 1)")

    def to_json(self) -> dict:
        return {"family": self.family, "gamma": self.gamma, "epsilon": self.epsilon}


@dataclass
class PerSampleLoss:
    values: np.ndarray      # (n,)
    grad_logits: np.ndarray  # (n, C)


def _check(logits, labels):
    z = np.asarray(logits, dtype=np.float64)
    y = np.asarray(labels, dtype=np.int64)
    if z.ndim != 2:
        raise LossError(f"logits must be (n, C), got shape {z.shape}")
    if y.shape != (z.shape[0],):
        raise LossError(f"{y.shape} labels for {z.shape[0]} rows")
    if not np.all(np.isfinite(z)):
        raise LossError("logits contain NaN or Inf")
    if y.size and (y.min() < 0 or y.max() >= z.shape[1]):
        raise LossError(f"labels must lie in [0, {z.shape[1]})")
    return z, y


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))


def _onehot(y, C):
    out = np.zeros((y.shape[0], C))
    out[np.arange(y.shape[0]), y] = 1.0
    return out


def _smoothed_targets(y, C, eps):
    return (1.0 - eps) * _onehot(y, C) + eps / C


def _clamped_log(p):
    # d(log p)/dp is taken as 0 where the floor is active.
    active = p >= PROB_FLOOR
    return np.log(np.maximum(p, PROB_FLOOR)), active


def _modulated(q, p, one_minus_p, logp, active, gamma):
    """Loss and logit gradient of -sum_c q_c (1 - p_c)^gamma log p_c."""
    mod = one_minus_p ** gamma
    values = -(q * mod * logp).sum(axis=1)
    # h_c = q_c p_c d/dp_c[(1-p_c)^gamma log p_c]; grad_j = -(h_j - p_j sum_c h_c)
    if gamma == 0:
        dmod = np.zeros_like(p)
    else:
        safe = one_minus_p > 0
        base = np.where(safe, one_minus_p, 1.0)
        dmod = np.where(safe, gamma * base ** (gamma - 1.0), 0.0)
    h = q * (active * mod - p * dmod * logp)
    grad = -(h - p * h.sum(axis=1, keepdims=True))
    return values, grad


def per_sample_loss(spec: LossSpec, logits, labels) -> PerSampleLoss:
    z, y = _check(logits, labels)
    n, C = z.shape
    rows = np.arange(n)

    if spec.family == "focal_logits":
        logp = log_softmax(z)
        p = np.exp(logp)
        values, grad = _modulated(_onehot(y, C), p, -np.expm1(logp), logp,
                                  np.ones_like(p, dtype=bool), spec.gamma)
        return PerSampleLoss(values + 0.0, grad)

    p = softmax(z)
    logp, active = _clamped_log(p)
    if spec.family == "ce":
        values = -logp[rows, y]
        grad = p.copy()
        grad[rows, y] -= active[rows, y]
    elif spec.family == "label_smooth":
        q = _smoothed_targets(y, C, spec.epsilon)
        values = -(q * logp).sum(axis=1)
        qa = q * active
        grad = p * qa.sum(axis=1, keepdims=True) - qa
    elif spec.family == "focal":
        values, grad = _modulated(_onehot(y, C), p, 1.0 - p, logp, active, spec.gamma)
    else:
        q = _smoothed_targets(y, C, spec.epsilon)
        values, grad = _modulated(q, p, 1.0 - p, logp, active, spec.gamma)
    # -log(1.0) is -0.0; adding 0.0 normalizes the sign.
    return PerSampleLoss(values + 0.0, grad)


def reduce_weighted(
    per_sample: PerSampleLoss,
    omega: Optional[np.ndarray] = None,
    normalize_by_weight: bool = False,
) -> tuple[float, np.ndarray]:
    """Weighted mean loss ``(1/N) sum_i omega_i l_i`` and its logit gradient.

    Divides by the sample count ``N``, not by ``sum(omega)``, unless
    ``normalize_by_weight`` is set. ``omega=None`` gives the plain mean.
    """
    values, grad = per_sample.values, per_sample.grad_logits
    n = values.shape[0]
    if omega is None:
        return float(values.mean()), grad / n
    omega = np.asarray(omega, dtype=np.float64)
    if omega.shape != (n,):
        raise LossError(f"{omega.shape[0] if omega.ndim == 1 else omega.shape} weights for {n} samples")
    denom = float(omega.sum()) if normalize_by_weight else n
    if denom == 0:
        return 0.0, np.zeros_like(grad)
    return float((omega * values).sum() / denom), grad * omega[:, None] / denom
