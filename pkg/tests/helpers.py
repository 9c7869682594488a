"""Shared test utilities that do use the package (unlike ``oracles``)."""

import numpy as np

from filterloss import model as M
from filterloss.losses import per_sample_loss, reduce_weighted


def with_flat(params, flat):
    """Copy of ``params`` whose weights and biases are read from ``flat``."""
    out = params.copy()
    pos = 0
    for g in out.groups:
        for arr in (g.weight, g.bias):
            arr[...] = flat[pos:pos + arr.size].reshape(arr.shape)
            pos += arr.size
    return out


def flat_grads(grads):
    return np.concatenate([a.ravel() for pair in grads for a in pair])


def weighted_loss(params, X, y, omega, spec):
    logits, cache = M.forward(params, X)
    loss, g = reduce_weighted(per_sample_loss(spec, logits, y), omega)
    return loss, flat_grads(M.backward(params, cache, g))


def random_model_case(rng, family=None):
    from filterloss.losses import FAMILIES, LossSpec

    conv = int(rng.integers(0, 3)) if rng.random() < 0.4 else 0
    d = int(rng.integers(5, 9)) if conv else int(rng.integers(1, 6))
    hidden = tuple(int(w) for w in rng.integers(2, 6, size=rng.integers(0, 3)))
    if rng.random() < 0.5 and hidden:
        hidden = hidden + (hidden[-1],)  # square layer exercises the skip path
    C = int(rng.integers(2, 5))
    spec = M.ModelSpec(d, C, hidden, residual=bool(rng.random() < 0.7), conv_channels=conv,
                       init_seed=int(rng.integers(1 << 30)))
    params = M.init(spec)
    # Zero biases put dead-row pre-activations exactly on the ReLU kink,
    # where finite differences are meaningless.
    for g in params.groups:
        g.bias[...] = rng.normal(scale=0.5, size=g.bias.shape)
    n = int(rng.integers(1, 7))
    X = rng.normal(size=(n, d))
    y = rng.integers(0, C, size=n)
    omega = rng.uniform(0, 1, size=n)
    family = family or FAMILIES[int(rng.integers(len(FAMILIES)))]
    loss = LossSpec(family, gamma=float(rng.uniform(0, 3)), epsilon=float(rng.uniform(0, 0.4)))
    return params, X, y, omega, loss


def trajectory(params, ds, omega, loss_spec, learning_rate, epochs):
    """Flat parameters after each full-batch epoch, plus per-epoch losses."""
    from filterloss.model import TrainConfig
    from filterloss.trainer import train

    config = TrainConfig(learning_rate=learning_rate, epochs=1, full_batch=True)
    flats, losses = [], []
    for _ in range(epochs):
        params, hist = train(params, ds, omega, loss_spec, config)
        flats.append(params.flat())
        losses.append(hist[0].train_loss)
    return flats, losses


def small_problem(seed=0, counts=(30, 12, 6), d=3):
    from filterloss.dataset import SyntheticSpec, synth_generate

    ds, _ = synth_generate(SyntheticSpec(len(counts), counts, d, cluster_spread=2.0,
                                         label_noise_frac=0.1, seed=seed))
    return ds
