import math

import numpy as np
import pytest

from rfadv.engine import (
    AddChannel,
    Conv2D,
    Dense,
    MaxPool2D,
    Network,
    Residual,
    Softmax,
    fd_check,
    forward,
    input_gradient,
    logit_gradients,
    logits,
    loss_and_param_gradients,
)
from rfadv.errors import ShapeMismatch


def _central_diff(f, x, h=1e-5):
    g = np.zeros_like(x)
    flat = x.ravel()
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        a = f(x)
        flat[i] = old - h
        b = f(x)
        flat[i] = old
        g.ravel()[i] = (a - b) / (2 * h)
    return g


def test_every_layer_kind_matches_finite_differences(layer_cases):
    rng = np.random.default_rng(0)
    for name, (net, shape, h) in layer_cases.items():
        assert int(np.prod(shape)) <= 64
        x = rng.normal(size=shape)
        rep = fd_check(net, x, np.arange(shape[0]) % 3, h=h, n_probe=None)
        assert rep["max_rel_err"] < 1e-4, (name, rep)


def test_linear_model_gradient_is_exact():
    net = Network([Dense(3), Softmax()], (4,), rng=np.random.default_rng(0))
    rep = fd_check(net, np.random.default_rng(1).normal(size=(2, 4)), [0, 1], h=1e-5, n_probe=None)
    assert rep["max_rel_err"] < 1e-8


def test_softmax_normalization_and_zero_weights():
    net = Network([Dense(10), Softmax()], (6,), params=np.zeros(70))
    p = forward(net, np.random.default_rng(2).normal(size=6))
    assert p.shape == (10,)
    assert np.allclose(p, 0.1)
    net2 = Network([Dense(7), Softmax()], (6,), rng=np.random.default_rng(3))
    q = forward(net2, np.random.default_rng(4).normal(size=(5, 6)) * 50)
    assert np.allclose(q.sum(axis=1), 1.0, atol=1e-6)


def test_identity_1x1_conv():
    net = Network([AddChannel(), Conv2D(1, 1)], (3, 4), params=np.array([1.0, 0.0]))
    x = np.random.default_rng(5).normal(size=(2, 3, 4))
    y, _ = net.run(x)
    assert np.array_equal(y[..., 0], x)


def test_hand_computed_3x3_conv():
    # single 3x3 kernel of ones: each output is the sum of its zero-padded neighbourhood
    net = Network([AddChannel(), Conv2D(1, 3)], (3, 3), params=np.concatenate([np.ones(9), [0.0]]))
    x = np.arange(9.0).reshape(1, 3, 3)
    y, _ = net.run(x)
    expect = np.array([[8, 15, 12], [21, 36, 27], [20, 33, 24]], dtype=float)
    assert np.allclose(y[0, ..., 0], expect)


def test_maxpool_ties_break_low():
    net = Network([AddChannel(), MaxPool2D()], (2, 2))
    x = np.ones((1, 2, 2))
    y, caches = net.run(x)
    dx, _ = net.backprop(np.ones_like(y), caches)
    assert np.array_equal(dx[0], [[1, 0], [0, 0]])


def test_loss_values():
    net = Network([Dense(10), Softmax()], (3,), params=np.zeros(40))
    loss, _ = loss_and_param_gradients(net, np.zeros((4, 3)), np.arange(4))
    assert loss == pytest.approx(math.log(10), abs=1e-12)
    w = np.zeros((3, 10))
    b = np.zeros(10)
    b[2] = 50.0
    net.set_params(np.concatenate([w.ravel(), b]))
    loss, _ = loss_and_param_gradients(net, np.zeros((2, 3)), [2, 2])
    assert loss < 1e-6
    b[2] = 1e4  # extreme logits stay finite in log-space
    net.set_params(np.concatenate([w.ravel(), b]))
    loss, _ = loss_and_param_gradients(net, np.zeros((1, 3)), [0])
    assert np.isfinite(loss) and loss == pytest.approx(1e4)


def test_logistic_input_gradient():
    # two-class softmax with logits (0, w.x) equals a logistic model with weight w
    w = np.array([1.0, -1.0])
    net = Network([Dense(2), Softmax()], (2,), params=np.array([0.0, 1.0, 0.0, -1.0, 0.0, 0.0]))
    g = input_gradient(net, np.zeros(2), 1)
    assert np.allclose(g, (0.5 - 1.0) * w)


def test_input_gradient_matches_central_difference():
    net = Network([Dense(5), Softmax()], (4,), rng=np.random.default_rng(6))
    x = np.random.default_rng(7).normal(size=4)

    def loss(xx):
        p = forward(net, xx)
        return -math.log(p[3])

    assert np.allclose(input_gradient(net, x, 3), _central_diff(loss, x.copy()), rtol=1e-6, atol=1e-9)


def test_logit_gradients():
    net = Network([Dense(4), Softmax()], (3,), rng=np.random.default_rng(8))
    w = net._views[0][0]
    z, g = logit_gradients(net, np.ones(3), [1, 3])
    assert np.allclose(z, logits(net, np.ones(3)))
    assert np.allclose(g, w[:, [1, 3]].T)


def test_forward_is_pure_and_shape_checked(layer_cases):
    net, shape, _ = layer_cases["gru"]
    x = np.random.default_rng(9).normal(size=shape)
    assert np.array_equal(forward(net, x), forward(net, x))
    with pytest.raises(ShapeMismatch):
        forward(net, np.zeros((1, 3, 3)))


def test_residual_zero_body_is_identity():
    body = [Conv2D(2, 3), Conv2D(2, 3)]
    net = Network([AddChannel(), Conv2D(2, 1), Residual(body)], (3, 3), rng=np.random.default_rng(0))
    p = net.params.copy()
    p[4:] = 0.0  # stem 1x1 conv keeps its weights; the block body is zeroed
    net.set_params(p)
    x = np.random.default_rng(1).normal(size=(1, 3, 3))
    stem = Network([AddChannel(), Conv2D(2, 1)], (3, 3), params=p[:4])
    assert np.allclose(net.run(x)[0], stem.run(x)[0])
