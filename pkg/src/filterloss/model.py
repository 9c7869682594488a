"""Residual MLP classifier in plain numpy with named, freezable parameter
groups.

Layout: optional ``conv`` stem (1-D convolution over the feature axis,
kernel 5, stride 2, ReLU), then ``hidden0..hidden{L-1}`` dense ReLU blocks
(identity skip when input and output widths match), then the linear
``output`` head producing logits.
"""

from __future__ import annotations

import fnmatch
import json
import struct
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Callable, Iterable, Optional, Union

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

CONV_KERNEL = 5
CONV_STRIDE = 2
MAGIC = b"FLMODEL\x00"
FORMAT_VERSION = 1


class ModelError(ValueError):
    pass


class ModelFileError(ModelError):
    """Unreadable, truncated or inconsistent model file."""


@dataclass(frozen=True)
class ModelSpec:
    input_dim: int
    n_classes: int
    hidden_layers: tuple[int, ...] = (64, 64)
    residual: bool = True
    conv_channels: int = 0  # 0 disables the conv stem
    init_seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "hidden_layers", tuple(int(w) for w in self.hidden_layers))
        if self.input_dim < 1 or self.n_classes < 1:
            raise ModelError("input_dim and n_classes must be >= 1")
        if any(w < 1 for w in self.hidden_layers):
            raise ModelError("hidden widths must be >= 1")
        if self.conv_channels < 0:
            raise ModelError("conv_channels must be >= 0")
        if self.conv_channels and self.input_dim < CONV_KERNEL:
            raise ModelError(f"conv stem needs input_dim >= {CONV_KERNEL}")

    @property
    def conv_length(self) -> int:
        return (self.input_dim - CONV_KERNEL) // CONV_STRIDE + 1


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.01
    epochs: int = 10
    batch_size: int = 32
    shuffle_seed: int = 0
    full_batch: bool = False

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ModelError("learning_rate must be > 0")
        if self.epochs < 1 or self.batch_size < 1:
            raise ModelError("epochs and batch_size must be >= 1")


@dataclass
class ParamGroup:
    name: str
    weight: np.ndarray
    bias: np.ndarray
    trainable: bool = True


@dataclass
class ModelParams:
    spec: ModelSpec
    groups: list[ParamGroup] = field(default_factory=list)

    @property
    def names(self) -> list[str]:
        return [g.name for g in self.groups]

    @property
    def trainable_flags(self) -> list[bool]:
        return [g.trainable for g in self.groups]

    def group(self, name: str) -> ParamGroup:
        for g in self.groups:
            if g.name == name:
                return g
        raise KeyError(name)

    def copy(self) -> "ModelParams":
        return ModelParams(
            self.spec,
            [ParamGroup(g.name, g.weight.copy(), g.bias.copy(), g.trainable) for g in self.groups],
        )

    def flat(self) -> np.ndarray:
        return np.concatenate([a.ravel() for g in self.groups for a in (g.weight, g.bias)])


Gradients = list[tuple[np.ndarray, np.ndarray]]


def _layout(spec: ModelSpec) -> list[tuple[str, int, int]]:
    """(name, fan_in, fan_out) per group."""
    out = []
    width = spec.input_dim
    if spec.conv_channels:
        out.append(("conv", CONV_KERNEL, spec.conv_channels))
        width = spec.conv_length * spec.conv_channels
    for i, w in enumerate(spec.hidden_layers):
        out.append((f"hidden{i}", width, w))
        width = w
    out.append(("output", width, spec.n_classes))
    return out


def _init_group(rng, name, fan_in, fan_out) -> ParamGroup:
    scale = np.sqrt(2.0 / fan_in)
    return ParamGroup(name, scale * rng.uniform(-1.0, 1.0, (fan_in, fan_out)), np.zeros(fan_out))


def init(spec: ModelSpec) -> ModelParams:
    rng = np.random.default_rng(spec.init_seed)
    return ModelParams(spec, [_init_group(rng, *layer) for layer in _layout(spec)])


def reinit_head(params: ModelParams, seed: int) -> ModelParams:
    """Fresh output group drawn like ``init`` from ``seed``; other groups shared."""
    rng = np.random.default_rng(seed)
    head = params.groups[-1]
    fan_in, fan_out = head.weight.shape
    new = _init_group(rng, head.name, fan_in, fan_out)
    new.trainable = head.trainable
    return ModelParams(params.spec, params.groups[:-1] + [new])


# -- forward / backward ---------------------------------------------------


def forward(params: ModelParams, features: np.ndarray):
    X = np.asarray(features, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != params.spec.input_dim:
        raise ModelError(
            f"expected (batch, {params.spec.input_dim}) features, got shape {X.shape}"
        )
    h = X
    cache = []
    for g in params.groups:
        if g.name == "conv":
            patches = sliding_window_view(h, CONV_KERNEL, axis=1)[:, ::CONV_STRIDE, :]
            pre = patches @ g.weight + g.bias
            cache.append((patches, pre, False))
            h = np.maximum(pre, 0.0).reshape(h.shape[0], -1)
        elif g.name == "output":
            cache.append((h, None, False))
            h = h @ g.weight + g.bias
        else:
            pre = h @ g.weight + g.bias
            skip = params.spec.residual and g.weight.shape[0] == g.weight.shape[1]
            cache.append((h, pre, skip))
            h = np.maximum(pre, 0.0) + (h if skip else 0.0)
    return h, cache


def predict(params: ModelParams, features: np.ndarray) -> np.ndarray:
    """Argmax class per row; ties resolve to the lowest class id."""
    logits, _ = forward(params, features)
    return logits.argmax(axis=1)


def backward(params: ModelParams, cache, weighted_grad_logits: np.ndarray) -> Gradients:
    """Chain rule from logit gradients to every group (frozen ones included)."""
    d = np.asarray(weighted_grad_logits, dtype=np.float64)
    if len(cache) != len(params.groups):
        raise ModelError("cache does not come from a forward pass of these params")
    out_in = cache[-1][0]
    if d.shape != (out_in.shape[0], params.spec.n_classes):
        raise ModelError(f"gradient shape {d.shape} does not match logits")
    grads: Gradients = [None] * len(params.groups)
    for idx in range(len(params.groups) - 1, -1, -1):
        g = params.groups[idx]
        inp, pre, skip = cache[idx]
        if g.name == "output":
            grads[idx] = (inp.T @ d, d.sum(axis=0))
            d = d @ g.weight.T
        elif g.name == "conv":
            dpre = d.reshape(pre.shape) * (pre > 0)
            grads[idx] = (np.einsum("blk,blc->kc", inp, dpre), dpre.sum(axis=(0, 1)))
        else:
            dpre = d * (pre > 0)
            grads[idx] = (inp.T @ dpre, dpre.sum(axis=0))
            d = dpre @ g.weight.T + (d if skip else 0.0)
    return grads


def sgd_step(params: ModelParams, grads: Gradients, learning_rate: float) -> ModelParams:
    """``w <- w - lr * grad`` on trainable groups; frozen groups untouched."""
    if len(grads) != len(params.groups):
        raise ModelError("gradient structure does not match params")
    new_groups = []
    for g, (dW, db) in zip(params.groups, grads):
        if dW.shape != g.weight.shape or db.shape != g.bias.shape:
            raise ModelError(f"gradient shape mismatch in group {g.name!r}")
        if not (np.all(np.isfinite(dW)) and np.all(np.isfinite(db))):
            raise ModelError(f"non-finite gradient in group {g.name!r}")
        if g.trainable:
            g = ParamGroup(g.name, g.weight - learning_rate * dW, g.bias - learning_rate * db, True)
        new_groups.append(g)
    return ModelParams(params.spec, new_groups)


# -- freezing -------------------------------------------------------------

Pattern = Union[str, Iterable[str], Callable[[str], bool]]


def _matcher(pattern: Pattern) -> Callable[[str], bool]:
    if callable(pattern):
        return pattern
    globs = [pattern] if isinstance(pattern, str) else list(pattern)
    return lambda name: any(fnmatch.fnmatchcase(name, p) for p in globs)


def set_trainable(params: ModelParams, pattern: Pattern) -> ModelParams:
    """Matched groups become trainable, all others frozen.

    ``pattern`` is a glob, a list of globs, or a predicate on group names.
    """
    match = _matcher(pattern)
    flags = [bool(match(g.name)) for g in params.groups]
    if not any(flags):
        raise ModelError(f"trainable pattern {pattern!r} matches no group of {params.names}")
    return ModelParams(
        params.spec,
        [replace(g, trainable=f) for g, f in zip(params.groups, flags)],
    )


def finetune_groups(params: ModelParams) -> list[str]:
    """Last feature group before the head, plus the head."""
    names = params.names
    return names[-2:] if len(names) > 1 else names


# -- persistence ----------------------------------------------------------


def save(params: ModelParams, path) -> None:
    header = {
        "spec": asdict(params.spec),
        "groups": [
            {
                "name": g.name,
                "weight_shape": list(g.weight.shape),
                "bias_shape": list(g.bias.shape),
                "trainable": g.trainable,
            }
            for g in params.groups
        ],
    }
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes()
        for g in params.groups
        for a in (g.weight, g.bias)
    )
    with open(Path(path), "wb") as fh:
        fh.write(MAGIC + bytes([FORMAT_VERSION]) + struct.pack("<Q", len(blob)) + blob + payload)


def load(path) -> ModelParams:
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"model file not found: {path}")
    raw = path.read_bytes()
    head = len(MAGIC) + 1 + 8
    if len(raw) < head or raw[: len(MAGIC)] != MAGIC:
        raise ModelFileError(f"{path}: not a model file (bad magic or truncated)")
    version = raw[len(MAGIC)]
    if version != FORMAT_VERSION:
        raise ModelFileError(f"{path}: unsupported format version {version}")
    (hlen,) = struct.unpack("<Q", raw[len(MAGIC) + 1 : head])
    try:
        header = json.loads(raw[head : head + hlen].decode("utf-8"))
        spec = ModelSpec(**header["spec"])
        entries = header["groups"]
    except (ValueError, KeyError, TypeError) as exc:
        raise ModelFileError(f"{path}: corrupt header ({exc})") from None

    expected = _layout(spec)
    if [(e["name"], tuple(e["weight_shape"]), tuple(e["bias_shape"])) for e in entries] != [
        (name, (fi, fo), (fo,)) for name, fi, fo in expected
    ]:
        raise ModelFileError(f"{path}: group shapes in header do not match the model spec")

    need = sum(fi * fo + fo for _, fi, fo in expected)
    nbytes = len(raw) - head - hlen
    if nbytes != need * 8:
        raise ModelFileError(f"{path}: payload is {nbytes} bytes, expected {need * 8}")
    data = np.frombuffer(raw, dtype="<f8", offset=head + hlen, count=need)
    groups, pos = [], 0
    for e, (name, fi, fo) in zip(entries, expected):
        W = data[pos : pos + fi * fo].reshape(fi, fo).astype(np.float64)
        pos += fi * fo
        b = data[pos : pos + fo].astype(np.float64)
        pos += fo
        groups.append(ParamGroup(name, W, b, bool(e["trainable"])))
    return ModelParams(spec, groups)
