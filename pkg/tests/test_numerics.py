import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tnet.numerics import Adam, DimensionError, MlpParams, log_sigmoid, mlp_backward, mlp_forward, sigmoid, softmax


def test_identity_layer_passes_input_through():
    p = MlpParams([np.eye(3)], [np.zeros(3)], "identity")
    x = np.arange(6.0).reshape(2, 3)
    np.testing.assert_array_equal(mlp_forward(p, x), x)


def test_zero_sigmoid_layer_is_one_half():
    p = MlpParams([np.zeros((4, 2))], [np.zeros(2)], "sigmoid")
    np.testing.assert_array_equal(mlp_forward(p, np.random.default_rng(0).normal(size=(5, 4))), 0.5)


def test_two_layer_relu_by_hand():
    w0 = np.array([[1.0, -1.0], [2.0, 0.5]])
    w1 = np.array([[1.0], [-2.0]])
    p = MlpParams([w0, w1], [np.array([0.0, 1.0]), np.array([0.5])], "identity")
    x = np.array([[1.0, 1.0], [-1.0, 2.0], [0.0, -1.0]])
    h = np.maximum(x @ w0 + [0.0, 1.0], 0.0)
    np.testing.assert_allclose(mlp_forward(p, x), h @ w1 + 0.5)
    # second row: pre = (3, 2) + bias (0, 1) -> 3 - 6 + .5
    assert mlp_forward(p, x)[1, 0] == pytest.approx(-2.5)


def test_shape_mismatch_raises():
    p = MlpParams([np.zeros((3, 2))], [np.zeros(2)])
    with pytest.raises(DimensionError):
        mlp_forward(p, np.zeros((1, 4)))
    with pytest.raises(DimensionError):
        MlpParams([np.zeros((3, 2)), np.zeros((3, 1))], [np.zeros(2), np.zeros(1)])


def test_dropout_only_in_training():
    rng = np.random.default_rng(0)
    p = MlpParams.init([4, 16, 2], rng, dropout_rate=0.5)
    x = rng.normal(size=(8, 4))
    np.testing.assert_array_equal(mlp_forward(p, x), mlp_forward(p, x))
    a = mlp_forward(p, x, training=True, rng=np.random.default_rng(1))
    assert not np.allclose(a, mlp_forward(p, x))


def test_sum_loss_gradient_is_ones_on_bias():
    p = MlpParams([np.ones((2, 3))], [np.zeros(3)])
    cache = []
    from tnet.numerics import MlpCache
    c = MlpCache()
    out = mlp_forward(p, np.ones((4, 2)), cache=c)
    gw, gb, _ = mlp_backward(p, c, np.ones_like(out))
    np.testing.assert_array_equal(gb[0], 4.0)   # one per row
    np.testing.assert_array_equal(gw[0], 4.0)


def test_least_squares_gradient_closed_form():
    from tnet.numerics import MlpCache
    rng = np.random.default_rng(1)
    w = rng.normal(size=(3, 2))
    x = rng.normal(size=(1, 3))
    y = rng.normal(size=(1, 2))
    p = MlpParams([w], [np.zeros(2)])
    c = MlpCache()
    out = mlp_forward(p, x, cache=c)
    gw, _, _ = mlp_backward(p, c, out - y)
    np.testing.assert_allclose(gw[0], x.T @ (x @ w - y))


@pytest.mark.parametrize("act", ["identity", "sigmoid", "softmax", "relu"])
def test_three_layer_gradients_match_finite_differences(act):
    from tnet.numerics import MlpCache
    rng = np.random.default_rng(2)
    p = MlpParams.init([4, 5, 5, 3], rng, activation=act)
    x = rng.normal(size=(6, 4))
    target = rng.normal(size=(6, 3))

    def loss():
        return 0.5 * np.sum((mlp_forward(p, x) - target) ** 2)

    c = MlpCache()
    out = mlp_forward(p, x, cache=c)
    gw, gb, gx = mlp_backward(p, c, out - target)
    h = 1e-5
    for arr, g in list(zip(p.weights, gw)) + list(zip(p.biases, gb)):
        for idx in np.ndindex(arr.shape):
            old = arr[idx]
            arr[idx] = old + h
            up = loss()
            arr[idx] = old - h
            down = loss()
            arr[idx] = old
            fd = (up - down) / (2 * h)
            assert abs(fd - g[idx]) <= 1e-4 * max(1.0, abs(fd)), (idx, fd, g[idx])


def test_adam_zero_gradient_keeps_params():
    opt = Adam(0.1)
    p = {"w": np.array([1.0, -2.0])}
    opt.step(p, {"w": np.zeros(2)})
    np.testing.assert_array_equal(p["w"], [1.0, -2.0])
    assert opt.step_count == 1


def test_adam_first_step_moves_by_lr():
    opt = Adam(0.1)
    p = {"w": np.array([0.0])}
    opt.step(p, {"w": np.array([1.0])})
    assert p["w"][0] == pytest.approx(-0.1, rel=1e-6)


def test_adam_constant_gradient_monotone():
    opt = Adam(0.01)
    p = {"w": np.array([0.0])}
    prev = 0.0
    for _ in range(100):
        opt.step(p, {"w": np.array([2.0])})
        assert p["w"][0] < prev
        prev = p["w"][0]


def test_adam_deterministic():
    def run():
        rng = np.random.default_rng(4)
        p = {"w": rng.normal(size=5)}
        opt = Adam(0.05)
        for _ in range(20):
            opt.step(p, {"w": np.sin(p["w"])})
        return p["w"]
    np.testing.assert_array_equal(run(), run())


@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20))
def test_sigmoid_stable(xs):
    x = np.array(xs)
    s = sigmoid(x)
    assert np.all((s >= 0) & (s <= 1))
    np.testing.assert_allclose(np.log(np.clip(s, 1e-300, None)), log_sigmoid(x), atol=1e-9)


@settings(max_examples=50)
@given(st.lists(st.floats(-30, 30), min_size=2, max_size=10))
def test_softmax_rows_sum_to_one(xs):
    s = softmax(np.array([xs]))
    assert s.sum() == pytest.approx(1.0)
    assert np.all(s >= 0)
