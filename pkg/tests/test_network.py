import numpy as np
import pytest

from iculoss.data import Dataset, GaussianClass, GmmSpec, gen_gmm
from iculoss.gradcheck import mlp_instance
from iculoss.models import make_head
from iculoss.network import (
    CheckpointError,
    DenseLayer,
    Mlp,
    Optimizer,
    ShapeError,
    backward,
    evaluate,
    forward,
    load_checkpoint,
    optimizer_step,
    save_checkpoint,
    train_epoch,
)
from iculoss.oracle import finite_diff_gradient
from iculoss.rng import Rng


def blobs(seed=0):
    spec = GmmSpec([GaussianClass([-3.0, 0.0], [0.5, 0.5], 100),
                    GaussianClass([3.0, 0.0], [0.5, 0.5], 100)], seed)
    return gen_gmm(spec)


def test_zero_network_gives_zero_embeddings():
    mlp = Mlp([DenseLayer(np.zeros((3, 4)), np.zeros(3)), DenseLayer(np.zeros((2, 3)), np.zeros(2))])
    emb, _ = forward(mlp, Rng(0).normal(8).reshape(2, 4))
    assert np.all(emb == 0)


def test_identity_layer():
    mlp = Mlp([DenseLayer(np.eye(3), np.zeros(3))])
    x = np.array([[1.0, 2.0, 3.0]])
    np.testing.assert_array_equal(forward(mlp, x)[0], x)


def test_forward_deterministic():
    a = Mlp.init([5, 4, 2], Rng(1))
    b = Mlp.init([5, 4, 2], Rng(1))
    x = Rng(2).normal(15).reshape(3, 5)
    assert forward(a, x)[0].tobytes() == forward(b, x)[0].tobytes()


def test_forward_shape_error():
    with pytest.raises(ShapeError):
        forward(Mlp.init([5, 2], Rng(0)), np.zeros((1, 4)))


def test_layers_must_chain():
    with pytest.raises(ShapeError):
        Mlp([DenseLayer(np.zeros((3, 4)), np.zeros(3)), DenseLayer(np.zeros((2, 5)), np.zeros(2))])


def test_he_uniform_init():
    mlp = Mlp.init([100, 50], Rng(0))
    bound = np.sqrt(6.0 / 100)
    assert np.abs(mlp.layers[0].weight).max() <= bound
    assert np.all(mlp.layers[0].bias == 0)


def test_backward_zero_upstream():
    mlp = Mlp.init([4, 3, 2], Rng(0))
    _, cache = forward(mlp, Rng(1).normal(8).reshape(2, 4))
    grads, d_in = backward(mlp, cache, np.zeros((2, 2)))
    assert all(np.all(g == 0) for g in grads.values()) and np.all(d_in == 0)


def test_backward_linear_sum():
    mlp = Mlp.init([3, 2], Rng(0))
    x = np.array([[1.0, 2.0, 3.0]])
    _, cache = forward(mlp, x)
    grads, _ = backward(mlp, cache, np.ones((1, 2)))
    np.testing.assert_array_equal(grads["layer0.weight"], np.tile(x, (2, 1)))
    np.testing.assert_array_equal(grads["layer0.bias"], [1.0, 1.0])


def test_backward_stale_cache():
    mlp = Mlp.init([4, 3, 2], Rng(0))
    _, cache = forward(mlp, np.ones((2, 4)))
    with pytest.raises(ShapeError):
        backward(mlp, cache, np.zeros((3, 2)))
    with pytest.raises(ShapeError):
        backward(mlp, cache[:1], np.zeros((2, 2)))


def test_relu_zero_at_kink():
    mlp = Mlp([DenseLayer(np.array([[1.0]]), np.array([0.0])), DenseLayer(np.array([[1.0]]), np.array([0.0]))])
    _, cache = forward(mlp, np.array([[0.0]]))
    grads, d_in = backward(mlp, cache, np.ones((1, 1)))
    assert d_in[0, 0] == 0.0 and grads["layer0.weight"][0, 0] == 0.0


def test_two_layer_finite_differences_seed3():
    rng = Rng(3)
    mlp = Mlp.init([4, 5, 3], rng)
    for layer in mlp.layers:
        layer.bias[:] = 0.1 * rng.normal(len(layer.bias))
    x = rng.normal(12).reshape(3, 4)
    r = rng.normal(9).reshape(3, 3)

    def loss():
        return float(np.sum(forward(mlp, x)[0] * r))

    _, cache = forward(mlp, x)
    grads, d_in = backward(mlp, cache, r)
    for name, p in mlp.params().items():
        def f(flat, p=p):
            saved = p.copy()
            p[...] = flat.reshape(p.shape)
            v = loss()
            p[...] = saved
            return v
        num = finite_diff_gradient(f, p.ravel().copy())
        err = np.abs(num - grads[name].ravel()) / np.maximum(1, np.maximum(np.abs(num), np.abs(grads[name].ravel())))
        assert err.max() < 1e-5, name
    num = finite_diff_gradient(lambda flat: float(np.sum(forward(mlp, flat.reshape(3, 4))[0] * r)), x.ravel())
    np.testing.assert_allclose(d_in.ravel(), num, atol=1e-6)


def test_end_to_end_icu_gradient():
    rng = Rng(0)
    assert max(mlp_instance(rng).max_relative_error for _ in range(20)) < 1e-5


def test_sgd_step():
    p = {"p": np.zeros(1)}
    Optimizer("sgd", 0.1, 0.0).step(p, {"p": np.ones(1)})
    assert p["p"][0] == pytest.approx(-0.1, abs=1e-15)


def test_sgd_weight_decay():
    p = {"p": np.array([2.0])}
    Optimizer("sgd", 0.1, 0.5).step(p, {"p": np.zeros(1)})
    assert p["p"][0] == pytest.approx(2.0 - 0.1 * 1.0)


def test_adam_first_step():
    p = {"p": np.zeros(1)}
    Optimizer("adam", 0.01, 0.0).step(p, {"p": np.ones(1)})
    assert p["p"][0] == pytest.approx(-0.01, rel=1e-6)


@pytest.mark.parametrize("kind", ["sgd", "adam"])
def test_zero_gradient_no_decay_unchanged(kind):
    p = {"p": np.array([1.5, -2.0])}
    Optimizer(kind, 0.01, 0.0).step(p, {"p": np.zeros(2)})
    np.testing.assert_array_equal(p["p"], [1.5, -2.0])


def test_optimizer_rejects_bad_config():
    with pytest.raises(ValueError):
        Optimizer("rmsprop")
    with pytest.raises(ShapeError):
        Optimizer("sgd").step({"p": np.zeros(2)}, {"p": np.zeros(3)})


def test_optimizer_step_applies_floor():
    h = make_head("icu", 2, 2, Rng(0))
    params = h.params()
    grads = {k: np.zeros_like(v) for k, v in params.items()}
    grads["log_var"][:] = 1e6
    optimizer_step(Optimizer("sgd", 1.0, 0.0), params, grads, h)
    assert np.all(h.gaussians.var >= 1e-6 * (1 - 1e-12))


def test_learning_rate_zero_leaves_params():
    data = blobs()
    rng = Rng(0)
    mlp = Mlp.init([2, 8, 2], rng.spawn(0))
    h = make_head("icu", 2, 2, rng.spawn(1))
    before = {k: v.copy() for k, v in {**mlp.params(), **h.params()}.items()}
    m = train_epoch(mlp, h, data, Optimizer("adam", 0.0, 0.001), rng.spawn(2), 32)
    for k, v in {**mlp.params(), **h.params()}.items():
        np.testing.assert_array_equal(v, before[k])
    assert np.isfinite(m.train_loss) and 0 <= m.train_accuracy <= 1


def _train(kind, seed=0, epochs=20):
    data = blobs()
    rng = Rng(seed)
    mlp = Mlp.init([2, 16, 2], rng.spawn(0))
    h = make_head(kind, 2, 2, rng.spawn(1))
    opt = Optimizer("adam", 0.01, 0.001)
    brng = rng.spawn(2)
    return mlp, h, [train_epoch(mlp, h, data, opt, brng, 32) for _ in range(epochs)]


def test_separable_blobs_icu():
    _, _, hist = _train("icu")
    assert hist[-1].train_accuracy >= 0.99


@pytest.mark.parametrize("kind", ["softmax", "center", "lgm"])
def test_separable_blobs_baselines(kind):
    _, _, hist = _train(kind)
    assert hist[-1].train_accuracy >= 0.99


def test_training_deterministic():
    a_mlp, _, a = _train("icu", epochs=5)
    b_mlp, _, b = _train("icu", epochs=5)
    assert [m.train_loss for m in a] == [m.train_loss for m in b]
    for k, v in a_mlp.params().items():
        assert v.tobytes() == b_mlp.params()[k].tobytes()


@pytest.mark.parametrize("kind", ["icu", "softmax", "center", "lgm"])
def test_checkpoint_round_trip(tmp_path, kind):
    mlp, h, _ = _train(kind, epochs=2)
    path = tmp_path / "m.ckpt"
    save_checkpoint(path, mlp, h, {"note": 1})
    mlp2, h2, meta = load_checkpoint(path)
    assert meta["loss"] == kind and meta["extra"] == {"note": 1}
    assert mlp2.sizes == mlp.sizes
    for k, v in {**mlp.params(), **h.params()}.items():
        assert v.tobytes() == {**mlp2.params(), **h2.params()}[k].tobytes()
    data = blobs(5)
    assert evaluate(mlp, h, data.features, data.labels) == evaluate(mlp2, h2, data.features, data.labels)
    assert h2.hyper() == h.hyper()


def test_checkpoint_rejects_garbage(tmp_path):
    bad = tmp_path / "bad.ckpt"
    bad.write_bytes(b"NOTACKPT" + b"\0" * 16)
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)
    mlp, h, _ = _train("icu", epochs=1)
    good = tmp_path / "good.ckpt"
    save_checkpoint(good, mlp, h)
    bad.write_bytes(good.read_bytes()[:-20])
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)


def test_dataset_validation():
    with pytest.raises(ValueError):
        Dataset(np.zeros((2, 2)), [0, 2], 2)
