import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import max_model_error, numeric_grad, rel_error
from hgmdp.nn import Conv2D, Dense, Model, ReLU, ShapeError, build_mlp, random_model, softmax
from hgmdp.rng import make_rng


def linear(W, b=None):
    W = np.asarray(W, dtype=float)
    return Model([Dense(W, np.zeros(W.shape[1]) if b is None else b)])


def test_hand_computed_softmax():
    m = linear([[1.0, -1.0], [0.5, 2.0]])
    x = np.array([1.0, 0.5])
    # logits = x @ W = (1.25, 0.0)
    p0 = np.exp(1.25) / (np.exp(1.25) + 1.0)
    scores, h1 = m.forward(x)
    np.testing.assert_allclose(scores, [p0, 1 - p0], rtol=1e-14)
    np.testing.assert_allclose(h1, [1.25, 0.0])


def test_zero_noise_equals_absent():
    m = random_model(0, 5, (6,), 3)
    x = make_rng(1).uniform(-1, 1, 5)
    np.testing.assert_array_equal(m.forward(x)[0], m.forward(x, np.zeros(6))[0])


def test_noise_enters_first_hidden_layer():
    m = random_model(0, 5, (6,), 3)
    x = make_rng(1).uniform(-1, 1, 5)
    g = np.arange(6.0)
    np.testing.assert_allclose(m.forward(x, g)[1], x @ m.first.W + m.first.b + g)


def test_zero_weights_give_uniform_scores():
    m = Model([Dense(np.zeros((4, 3)), np.zeros(3)), ReLU(), Dense(np.zeros((3, 5)), np.zeros(5))])
    np.testing.assert_allclose(m.forward(np.ones(4))[0], np.full(5, 0.2), rtol=1e-15)


@given(st.integers(0, 10_000), st.floats(0.1, 30))
@settings(max_examples=50, deadline=None)
def test_scores_are_probabilities(seed, scale):
    m = random_model(seed, 4, (5, 3), 4, scale=scale)
    x = make_rng(seed + 1).uniform(-1, 1, (8, 4))
    s = m.forward(x)[0]
    assert np.all((s >= 0) & (s <= 1))
    np.testing.assert_allclose(s.sum(axis=1), 1, atol=1e-9)


def test_shape_errors():
    m = random_model(0, 3, (4,), 2)
    with pytest.raises(ShapeError):
        m.forward(np.ones(4))
    with pytest.raises(ShapeError):
        m.forward(np.ones(3), np.ones(5))
    with pytest.raises(ShapeError):
        Model([ReLU(), Dense(np.ones((2, 2)), np.zeros(2))])


@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(seed):
    rng = make_rng(seed)
    m = random_model(rng, 4, (5,), 3)
    x = rng.uniform(-1, 1, 4)
    gamma = rng.normal(0, 0.3, 5)
    assert max_model_error(m, x, int(rng.integers(3)), gamma) <= 1e-4


def test_conv_gradients_match_finite_differences():
    rng = make_rng(4)
    conv = Conv2D(rng.normal(size=(2, 1, 2, 2)), rng.normal(size=2), (1, 4, 4), stride=1)
    m = Model([conv, ReLU(), Dense(rng.normal(size=(conv.out_size, 3)), rng.normal(size=3))])
    x = rng.uniform(-1, 1, 16)
    assert max_model_error(m, x, 1) <= 1e-4


def test_conv_stride_matches_direct_loop():
    rng = make_rng(2)
    k = rng.normal(size=(2, 2, 3, 3))
    conv = Conv2D(k, np.zeros(2), (2, 7, 7), stride=2)
    x = rng.normal(size=2 * 49)
    img = x.reshape(2, 7, 7)
    expect = np.zeros((2, 3, 3))
    for o in range(2):
        for i in range(3):
            for j in range(3):
                expect[o, i, j] = np.sum(img[:, 2 * i : 2 * i + 3, 2 * j : 2 * j + 3] * k[o])
    np.testing.assert_allclose(conv.forward(x[None])[0][0], expect.ravel(), rtol=1e-12)


def test_certain_prediction_has_zero_gradient():
    m = linear([[800.0, -800.0]])
    grads = m.per_example_gradient(np.array([1.0]), 0)
    assert all(np.all(g == 0) for g in grads)


def test_duplicate_example_doubles_gradient():
    m = random_model(3, 3, (4,), 2)
    x = np.array([0.2, -0.4, 0.9])
    single = m.per_example_gradient(x, 1)
    # batch gradient of the summed loss
    batch = m._backward(np.stack([x, x]), [1, 1], None)[0]
    for a, b in zip(single, batch):
        np.testing.assert_allclose(b, 2 * a, rtol=1e-14)


def test_linear_input_gradient_closed_form():
    W = np.array([[1.0, -2.0], [0.5, 0.3], [-1.0, 0.0]])
    m = linear(W)
    x = np.array([0.1, -0.7, 0.4])
    y = np.array([0.0, 1.0])
    expect = (softmax(x @ W) - y) @ W.T
    np.testing.assert_allclose(m.input_gradient(x, 1), expect, rtol=1e-13)
    np.testing.assert_allclose(m.h1_gradient(x, 1), softmax(x @ W) - y, rtol=1e-13)


def test_zero_first_layer_gives_zero_input_gradient():
    m = random_model(0, 3, (4,), 2)
    m.first.W[...] = 0
    assert np.all(m.input_gradient(np.ones(3), 0) == 0)


def test_h1_gradient_is_batched_rowwise():
    m = random_model(0, 3, (4,), 2)
    X = make_rng(0).uniform(-1, 1, (5, 3))
    y = np.array([0, 1, 1, 0, 1])
    G = m.h1_gradient(X, y)
    for i in range(5):
        np.testing.assert_allclose(G[i], m.h1_gradient(X[i], y[i]), rtol=1e-14)


def test_one_hot_labels_accepted():
    m = random_model(0, 3, (4,), 3)
    x = np.array([0.1, 0.2, 0.3])
    assert m.loss(x, np.array([0.0, 0.0, 1.0])) == m.loss(x, 2)


def test_state_round_trip_and_determinism():
    a = build_mlp(6, (5, 4), 3, seed=9)
    b = Model.from_state(a.state())
    c = build_mlp(6, (5, 4), 3, seed=9)
    x = make_rng(0).uniform(-1, 1, (3, 6))
    np.testing.assert_array_equal(a.forward(x)[0], b.forward(x)[0])
    np.testing.assert_array_equal(a.forward(x)[0], c.forward(x)[0])


def test_build_mlp_with_conv():
    m = build_mlp(16, (3,), 2, seed=0, conv={"input_shape": (1, 4, 4), "channels": 2, "kernel": 3})
    assert isinstance(m.first, Conv2D) and m.first_hidden_size == 8
    assert m.forward(np.zeros(16))[0].shape == (2,)


def test_numeric_grad_helper():
    g = numeric_grad(lambda v: float(np.sum(v**3)), np.array([1.0, 2.0]))
    assert rel_error(g, np.array([3.0, 12.0])) < 1e-9
