import numpy as np
import pytest

from dngo.network import (BasisNetwork, NetworkConfig, forward_features, init_params, loss_and_gradient,
                          momentum_step, train_map)


def finite_difference(net, X, y, l2, loss, h=1e-5):
    theta = net.flat()
    grad = np.empty_like(theta)
    for i in range(theta.size):
        tp, tm = theta.copy(), theta.copy()
        tp[i] += h
        tm[i] -= h
        fp = loss_and_gradient(net.with_flat(tp), X, y, l2, loss)[0]
        fm = loss_and_gradient(net.with_flat(tm), X, y, l2, loss)[0]
        grad[i] = (fp - fm) / (2 * h)
    return grad


def flatten_grads(grads):
    gW, gb = grads
    return np.concatenate([a.ravel() for pair in zip(gW, gb) for a in pair])


def test_init_deterministic_and_zero_biases():
    cfg = NetworkConfig()
    a, b = init_params(cfg, 2, seed=7), init_params(cfg, 2, seed=7)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert all(np.all(bias == 0) for bias in a.biases)
    assert forward_features(a, [0.2, 0.3]).shape == (50,)
    assert a.D == 50


def test_init_rejects_zero_width():
    with pytest.raises(ValueError):
        NetworkConfig(layer_widths=(50, 0, 50))


def test_init_scale_is_inverse_sqrt_fan_in():
    net = init_params(NetworkConfig(layer_widths=(400,)), 400, seed=0)
    assert np.std(net.weights[1]) == pytest.approx(1 / np.sqrt(400), rel=0.05)


def test_zero_network_gives_zero_features():
    net = init_params(NetworkConfig(layer_widths=(5, 5)), 3, seed=0)
    net = net.with_flat(np.zeros(net.n_params))
    assert np.all(forward_features(net, np.random.default_rng(0).random((10, 3))) == 0)


def test_single_unit_hand_evaluation():
    net = init_params(NetworkConfig(layer_widths=(1,)), 1, seed=0)
    net.weights[0][:] = 1.0
    assert forward_features(net, [0.5])[0] == pytest.approx(0.46211715726, abs=1e-10)


def test_tanh_features_bounded():
    net = init_params(NetworkConfig(), 4, seed=3)
    for w in net.weights:
        w *= 30.0
    phi = forward_features(net, np.random.default_rng(0).random((10_000, 4)))
    assert np.max(np.abs(phi)) <= 1.0


def test_relu_then_tanh_layout():
    cfg = NetworkConfig(activation="relu_then_tanh")
    assert cfg.hidden_activations() == ["relu", "relu", "tanh"]


def test_exact_fit_has_zero_loss_and_gradient():
    net = init_params(NetworkConfig(layer_widths=(4,)), 2, seed=1)
    X = np.random.default_rng(0).random((6, 2))
    y = net.head(X)
    value, grads = loss_and_gradient(net, X, y, 0.0)
    assert value == pytest.approx(0.0, abs=1e-25)
    assert np.max(np.abs(flatten_grads(grads))) < 1e-14


def test_penalty_gradient_on_zero_data():
    net = init_params(NetworkConfig(layer_widths=(3, 3)), 2, seed=2)
    # zero inputs with the bias-free head giving zero output: only the penalty is active
    X = np.zeros((4, 2))
    y = np.zeros(4)
    _, (gW, _) = loss_and_gradient(net, X, y, 0.3)
    # hidden output is tanh(0) = 0, so data gradients on W vanish
    for W, g in zip(net.weights, gW):
        np.testing.assert_allclose(g, 2 * 0.3 * W, atol=1e-15)


@pytest.mark.parametrize("activation", ["tanh_all", "relu_then_tanh", "relu_all"])
@pytest.mark.parametrize("loss", ["mse", "cross_entropy"])
def test_gradient_matches_finite_differences(activation, loss):
    rng = np.random.default_rng(11)
    net = init_params(NetworkConfig(layer_widths=(4, 3), activation=activation), 2, seed=5)
    net = net.with_flat(net.flat() + 0.1 * rng.standard_normal(net.n_params))
    X = rng.random((7, 2))
    y = rng.integers(0, 2, 7).astype(float) if loss == "cross_entropy" else rng.standard_normal(7)
    _, grads = loss_and_gradient(net, X, y, 0.05, loss)
    analytic = flatten_grads(grads)
    numeric = finite_difference(net, X, y, 0.05, loss)
    rel = np.abs(analytic - numeric) / np.maximum(np.abs(numeric), 1e-6)
    assert np.max(rel) < 1e-6


def test_loss_rejects_bad_batches():
    net = init_params(NetworkConfig(layer_widths=(3,)), 1, seed=0)
    with pytest.raises(ValueError):
        loss_and_gradient(net, np.zeros((0, 1)), [], 0.0)
    with pytest.raises(ValueError):
        loss_and_gradient(net, [[np.nan]], [1.0], 0.0)


def test_momentum_matches_hand_stepped_quadratic():
    # f(w) = 0.5 * a * w^2, gradient a * w
    a, lr, mom = 3.0, 0.1, 0.9
    w, v = np.array([1.0]), np.zeros(1)
    hand_w, hand_v = 1.0, 0.0
    for _ in range(20):
        momentum_step(w, v, a * w, lr, mom)
        hand_v = mom * hand_v - lr * a * hand_w
        hand_w = hand_w + hand_v
        assert w[0] == pytest.approx(hand_w, abs=1e-15)


def test_train_map_fits_linear_function():
    x = np.linspace(0, 1, 50)[:, None]
    y = 2 * x[:, 0] - 1
    ys = (y - y.mean()) / y.std()
    net = train_map(NetworkConfig(), x, ys, seed=0)
    assert net.final_loss < 1e-3


def test_train_map_single_observation():
    net = train_map(NetworkConfig(), [[0.3]], [0.7], seed=0)
    assert net.head([[0.3]])[0] == pytest.approx(0.7, abs=1e-4)


def test_train_map_deterministic():
    rng = np.random.default_rng(4)
    X, y = rng.random((30, 2)), rng.standard_normal(30)
    a = train_map(NetworkConfig(epochs=50), X, y, seed=9)
    b = train_map(NetworkConfig(epochs=50), X, y, seed=9)
    assert np.array_equal(a.flat(), b.flat())


def test_train_map_minibatch_regime_and_update_cap():
    rng = np.random.default_rng(5)
    X = rng.random((300, 2))
    y = np.sin(3 * X[:, 0])
    cfg = NetworkConfig(epochs=5, max_updates=7)
    net = train_map(cfg, X, (y - y.mean()) / y.std(), seed=1)
    assert np.isfinite(net.final_loss)


def test_train_map_requires_data():
    with pytest.raises(ValueError):
        train_map(NetworkConfig(), np.zeros((0, 2)), [], seed=0)
