import numpy as np
import pytest

from filterloss import model as M
from filterloss.losses import LossSpec, per_sample_loss, reduce_weighted

from helpers import flat_grads, random_model_case, weighted_loss, with_flat
from oracles import central_diff, rel_err


def test_shapes_and_seed():
    p = M.init(M.ModelSpec(4, 3, (8,)))
    assert [(g.weight.shape, g.bias.shape) for g in p.groups] == [((4, 8), (8,)), ((8, 3), (3,))]
    q = M.init(M.ModelSpec(4, 3, (8,)))
    assert np.array_equal(p.flat(), q.flat())


def test_conv_layout():
    p = M.init(M.ModelSpec(9, 2, (4,), conv_channels=3))
    assert p.names == ["conv", "hidden0", "output"]
    assert p.group("conv").weight.shape == (M.CONV_KERNEL, 3)
    assert p.group("hidden0").weight.shape == (3 * 3, 4)


def test_identity_map():
    p = M.init(M.ModelSpec(3, 3, ()))
    p.groups[0].weight[...] = np.eye(3)
    X = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(M.forward(p, X)[0], X)


def test_zero_input_zero_logits():
    p = M.init(M.ModelSpec(4, 3, (6, 6)))
    assert np.all(M.forward(p, np.zeros((2, 4)))[0] == 0)


def test_batch_permutation():
    rng = np.random.default_rng(1)
    p = M.init(M.ModelSpec(8, 3, (5, 5), conv_channels=2))
    for _ in range(10):
        X = rng.normal(size=(7, 8))
        perm = rng.permutation(7)
        np.testing.assert_allclose(M.forward(p, X[perm])[0], M.forward(p, X)[0][perm], rtol=0, atol=1e-14)


def test_whole_model_gradient_check():
    rng = np.random.default_rng(2024)
    for _ in range(20):
        params, X, y, omega, loss = random_model_case(rng)
        _, grad = weighted_loss(params, X, y, omega, loss)
        fd = central_diff(lambda f: weighted_loss(with_flat(params, f), X, y, omega, loss)[0], params.flat())
        assert rel_err(grad, fd) < 1e-4


def test_zero_weights_zero_gradients():
    rng = np.random.default_rng(3)
    params, X, y, _, loss = random_model_case(rng)
    _, grad = weighted_loss(params, X, y, np.zeros(len(y)), loss)
    assert np.all(grad == 0)


def test_duplicate_sample_linearity():
    rng = np.random.default_rng(4)
    params = M.init(M.ModelSpec(3, 3, (4, 4)))
    X = rng.normal(size=(3, 3))
    y = np.array([0, 2, 1])
    spec = LossSpec("ls_focal")
    # Sum-normalized so both batches share the same denominator.
    def grads(Xb, yb, w):
        logits, cache = M.forward(params, Xb)
        ps = per_sample_loss(spec, logits, yb)
        return flat_grads(M.backward(params, cache, ps.grad_logits * w[:, None]))
    a = grads(X, y, np.array([2.0, 1.0, 1.0]))
    b = grads(np.vstack([X, X[:1]]), np.append(y, y[0]), np.ones(4))
    assert rel_err(a, b) < 1e-12


def test_sgd_arithmetic_and_freeze():
    p = M.init(M.ModelSpec(1, 1, ()))
    p.groups[0].weight[...] = 1.0
    out = M.sgd_step(p, [(np.array([[2.0]]), np.array([0.0]))], 0.1)
    assert out.groups[0].weight[0, 0] == pytest.approx(0.8, abs=1e-15)
    same = M.sgd_step(p, [(np.array([[2.0]]), np.array([0.0]))], 0.0)
    assert np.array_equal(same.flat(), p.flat())
    frozen = M.set_trainable(M.init(M.ModelSpec(2, 2, (3,))), "output")
    grads = [(np.ones_like(g.weight), np.ones_like(g.bias)) for g in frozen.groups]
    stepped = M.sgd_step(frozen, grads, 0.5)
    assert np.array_equal(stepped.groups[0].weight, frozen.groups[0].weight)
    assert not np.array_equal(stepped.groups[1].weight, frozen.groups[1].weight)


def test_sgd_rejects_non_finite():
    p = M.init(M.ModelSpec(1, 1, ()))
    with pytest.raises(M.ModelError):
        M.sgd_step(p, [(np.array([[np.nan]]), np.array([0.0]))], 0.1)


def test_set_trainable():
    p = M.init(M.ModelSpec(4, 3, (5, 5)))
    assert M.set_trainable(p, M.finetune_groups(p)).trainable_flags == [False, True, True]
    assert M.set_trainable(p, "*").trainable_flags == [True, True, True]
    assert M.set_trainable(p, lambda n: n == "hidden0").trainable_flags == [True, False, False]
    with pytest.raises(M.ModelError):
        M.set_trainable(p, "nothing*")


def test_save_load_roundtrip(tmp_path):
    p = M.set_trainable(M.init(M.ModelSpec(9, 4, (6, 6), conv_channels=2, init_seed=5)), "output")
    M.save(p, tmp_path / "m.bin")
    q = M.load(tmp_path / "m.bin")
    assert q.spec == p.spec and q.names == p.names
    assert q.trainable_flags == p.trainable_flags
    for a, b in zip(p.groups, q.groups):
        assert a.weight.tobytes() == b.weight.tobytes() and a.bias.tobytes() == b.bias.tobytes()


def test_load_corrupt(tmp_path):
    path = tmp_path / "m.bin"
    M.save(M.init(M.ModelSpec(3, 2, (4,))), path)
    data = path.read_bytes()
    path.write_bytes(data[:-8])
    with pytest.raises(M.ModelFileError):
        M.load(path)
    path.write_bytes(b"garbage" + data[7:])
    with pytest.raises(M.ModelFileError):
        M.load(path)
    with pytest.raises(FileNotFoundError):
        M.load(tmp_path / "none.bin")


def test_loss_decreases_on_separable_toy():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(loc=-2, size=(10, 2)), rng.normal(loc=2, size=(10, 2))])
    y = np.repeat([0, 1], 10)
    p = M.init(M.ModelSpec(2, 2, (8,)))
    losses = []
    for _ in range(30):
        logits, cache = M.forward(p, X)
        loss, g = reduce_weighted(per_sample_loss(LossSpec(), logits, y))
        losses.append(loss)
        p = M.sgd_step(p, M.backward(p, cache, g), 0.05)
    assert all(b < a for a, b in zip(losses, losses[1:]))


def test_load_then_forward_is_exact(tmp_path):
    p = M.init(M.ModelSpec(9, 3, (5, 5), conv_channels=2, init_seed=8))
    X = np.random.default_rng(0).normal(size=(6, 9))
    M.save(p, tmp_path / "m.bin")
    assert np.array_equal(M.forward(M.load(tmp_path / "m.bin"), X)[0], M.forward(p, X)[0])


def test_frozen_groups_survive_training():
    from filterloss.trainer import train

    rng = np.random.default_rng(9)
    X = rng.normal(size=(40, 9))
    y = rng.integers(0, 3, size=40)
    from filterloss.dataset import LabeledDataset

    ds = LabeledDataset(X, y, ("a", "b", "c"))
    p = M.set_trainable(M.init(M.ModelSpec(9, 3, (6, 6), conv_channels=2)), ["hidden1", "output"])
    out, _ = train(p, ds, rng.uniform(size=40), LossSpec("focal"), M.TrainConfig(0.1, 4, 8))
    for before, after in zip(p.groups, out.groups):
        same = np.array_equal(before.weight, after.weight) and np.array_equal(before.bias, after.bias)
        assert same == (not before.trainable)
