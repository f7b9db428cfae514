import numpy as np
import pytest

from _oracles import gradient_check, rel_ok
from rowflow.nn import functional as fn
from rowflow.nn.data import synthetic_blobs
from rowflow.nn.network import (CONV_BN_RELU, CONV_RELU, NetworkSpec, batchnorm, conv, fc, flatten,
                                init_params, maxpool, relu, toy_network)
from rowflow.nn.trainer import (Pruner, UsageError, backward, forward, loss_and_grad,
                                sgd_step, train)
from rowflow.prune import PruneConfig
from rowflow.rng import Rng
from rowflow.tensor import ConfigurationError, conv2d_ref


def three_conv_net():
    return NetworkSpec(
        layers=[conv(1, 2, 3, pad=1), batchnorm(2), relu(), maxpool(2),
                conv(2, 3, 3, stride=2, pad=1), relu(),
                conv(3, 2, 1), flatten(), fc(8, 3)],
        input_shape=(1, 6, 6), n_classes=3)


def test_shapes_and_structures():
    net = three_conv_net()
    assert net.shapes[-1] == (3,)
    assert net.structure(0) == CONV_BN_RELU
    assert net.structure(4) == CONV_RELU
    assert net.structure(6) is None
    assert net.input_masked(4) and net.input_masked(6) and not net.input_masked(0)
    assert NetworkSpec.from_dict(net.to_dict()) == net


@pytest.mark.parametrize("bad", [
    dict(layers=[conv(2, 2, 3), flatten(), fc(8, 3)], input_shape=(1, 4, 4), n_classes=3),
    dict(layers=[flatten(), fc(16, 3)], input_shape=(1, 4, 4), n_classes=2),
    dict(layers=[flatten(), fc(16, 3)], input_shape=(1, 4, 4), n_classes=3, lr=0.0),
    dict(layers=[conv(1, 2, 3)], input_shape=(1, 4, 4), n_classes=3),
])
def test_network_validation(bad):
    with pytest.raises(ConfigurationError):
        NetworkSpec(**bad)


@pytest.mark.parametrize("make", [three_conv_net, toy_network])
def test_gradients_match_finite_differences(make):
    net = make()
    rng = Rng(0)
    params = init_params(net, rng)
    for p in params.values():
        if "beta" in p:
            p["gamma"] += 0.3 * rng.normal(p["gamma"].size)
            p["beta"] += 0.3 * rng.normal(p["beta"].size)
        if "b" in p:
            p["b"] += 0.1 * rng.normal(p["b"].size)
    x = rng.uniform(3 * int(np.prod(net.input_shape))).reshape((3, *net.input_shape))
    y = np.array([0, 1, 2])
    for name, got, fd in gradient_check(net, params, x, y):
        assert rel_ok(got, fd), name


def test_forward_single_conv_equals_reference():
    net = NetworkSpec([conv(2, 3, 3, stride=2, pad=1), flatten(), fc(27, 2)], (2, 5, 5), 2)
    params = init_params(net, Rng(1))
    x = Rng(2).normal(2 * 50).reshape(2, 2, 5, 5)
    _, ctx = forward(net, params, x)
    for b in range(2):
        np.testing.assert_array_equal(ctx.inputs[1][b], conv2d_ref(x[b], params[0]["W"], params[0]["b"], 2, 1))


def test_forward_shape_check():
    net = toy_network()
    with pytest.raises(ConfigurationError):
        forward(net, init_params(net, Rng(0)), np.zeros((2, 1, 7, 7)))


def test_backward_needs_context():
    net = toy_network()
    with pytest.raises(UsageError):
        backward(net, init_params(net, Rng(0)), None, np.zeros((1, 3)))


def test_relu_saturation():
    out, mask = fn.relu_forward(-np.ones((1, 2, 3, 3)))
    assert not out.any() and not mask.any()
    assert not fn.relu_backward(np.ones((1, 2, 3, 3)), mask).any()


def test_maxpool_definition_and_ties():
    x = np.array([[1.0, 2.0], [4.0, 3.0]])[None, None]
    out, arg = fn.maxpool_forward(x, 2, 2)
    assert out.item() == 4.0 and arg.item() == 2
    _, arg = fn.maxpool_forward(np.ones((1, 1, 2, 2)), 2, 2)
    assert arg.item() == 0
    d = fn.maxpool_backward(np.array([[[[5.0]]]]), np.array([[[[2]]]]), (1, 1, 2, 2))
    assert d.ravel().tolist() == [0, 0, 5, 0]


def test_batchnorm_identity_and_constant():
    x = Rng(3).normal(4 * 2 * 25).reshape(4, 2, 5, 5)
    x = (x - x.mean(axis=(0, 2, 3), keepdims=True)) / x.std(axis=(0, 2, 3), keepdims=True)
    out, _ = fn.batchnorm_forward(x, np.ones(2), np.zeros(2))
    assert np.max(np.abs(out - x)) < 1e-6
    out, _ = fn.batchnorm_forward(np.full((3, 2, 2, 2), 7.0), np.array([2.0, 3.0]), np.array([0.5, -1.0]))
    assert np.all(out[:, 0] == 0.5) and np.all(out[:, 1] == -1.0)


def test_batchnorm_backward_finite_differences():
    rng = Rng(4)
    x = rng.normal(3 * 2 * 16).reshape(3, 2, 4, 4)
    gamma, beta = 1 + 0.2 * rng.normal(2), rng.normal(2)
    r = rng.normal(x.size).reshape(x.shape)
    out, cache = fn.batchnorm_forward(x, gamma, beta)
    d_in, dg, db = fn.batchnorm_backward(r, gamma, cache)
    eps = 1e-6
    fd = np.zeros_like(x)
    for idx in np.ndindex(x.shape):
        e = np.zeros_like(x)
        e[idx] = eps
        fd[idx] = ((fn.batchnorm_forward(x + e, gamma, beta)[0] - fn.batchnorm_forward(x - e, gamma, beta)[0]) * r).sum() / (2 * eps)
    assert rel_ok(d_in, fd)
    np.testing.assert_allclose(db, r.sum(axis=(0, 2, 3)))


def test_pruning_with_p_zero_is_noop():
    net = three_conv_net()
    params = init_params(net, Rng(5))
    x = Rng(6).uniform(4 * 36).reshape(4, 1, 6, 6)
    y = np.array([0, 1, 2, 0])
    _, g, _, ctx = loss_and_grad(net, params, x, y)
    plain = backward(net, params, ctx, g)
    pruner = Pruner(net, PruneConfig(0.0, fifo_depth=1), seed=1)
    for _ in range(3):
        pruned = backward(net, params, ctx, g, pruner)
    for idx in plain.params:
        for name in plain.params[idx]:
            np.testing.assert_array_equal(plain.params[idx][name], pruned.params[idx][name])


def test_pruning_positions():
    net = three_conv_net()
    params = init_params(net, Rng(7))
    x = Rng(8).uniform(4 * 36).reshape(4, 1, 6, 6)
    _, g, _, ctx = loss_and_grad(net, params, x, np.array([0, 1, 2, 0]))
    pruner = Pruner(net, PruneConfig(0.9, fifo_depth=1), seed=2)
    backward(net, params, ctx, g, pruner)            # warm up the FIFOs
    grads = backward(net, params, ctx, g, pruner)
    # CONV-BN-RELU prunes the dO it consumes
    assert np.count_nonzero(grads.d_outputs[0]) < np.count_nonzero(grads.targets[0])
    # CONV-RELU prunes the dI it sends upstream
    assert 4 in grads.targets
    assert np.count_nonzero(grads.d_inputs[4]) < np.count_nonzero(grads.targets[4])
    # no pruning structure -> untouched
    assert 6 not in grads.targets


def test_sgd_step():
    p = {0: {"W": np.array([1.0]), "b": np.array([2.0])}}
    zero = {0: {"W": np.zeros(1), "b": np.zeros(1)}}
    assert sgd_step(p, zero, 0.1, 1)[0]["W"].tolist() == [1.0]
    g = {0: {"W": np.array([3.0]), "b": np.array([1.0])}}
    assert sgd_step(p, g, 0.0, 1)[0]["W"].tolist() == [1.0]
    out = sgd_step(p, g, 0.1, 1)
    assert out[0]["W"].tolist() == [1.0 - 0.1 * 3.0]
    assert sgd_step(p, g, 0.1, 4)[0]["W"].tolist() == [1.0 - 0.1 * 3.0 / 4]


def test_training_loss_mostly_decreases():
    net = toy_network(lr=0.05, batch_size=100)
    x, y = synthetic_blobs(200, Rng(0))
    _, hist = train(net, init_params(net, Rng(1)), x, y, 50, seed=0)
    losses = [h.loss for h in hist]
    increases = sum(b > a for a, b in zip(losses, losses[1:]))
    assert increases <= 0.05 * 50


@pytest.mark.filterwarnings("ignore:fifo_depth")
def test_training_is_deterministic():
    net = toy_network()
    x, y = synthetic_blobs(40, Rng(0))
    runs = [train(net, init_params(net, Rng(1)), x, y, 2, seed=3, prune=PruneConfig(0.9, 1)) for _ in range(2)]
    for a, b in zip(runs[0][1], runs[1][1]):
        assert a == b


def test_unpruned_density_is_natural():
    net = toy_network()
    x, y = synthetic_blobs(40, Rng(0))
    _, hist = train(net, init_params(net, Rng(1)), x, y, 1, seed=0)
    assert all(0.0 < d <= 1.0 for d in hist[0].densities.values())
    assert hist[0].taus == {0: None, 4: None}
