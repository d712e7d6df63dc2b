import math

import numpy as np
import pytest

from fetaprune.linalg import ParameterError, make_rng, relu
from fetaprune.net import (
    DenseNet,
    LabeledSet,
    Layer,
    LayerTap,
    accuracy,
    capture,
    forward,
    load_net,
    load_set,
    margin_lower_bound,
    min_score,
    predict,
    save_net,
    save_set,
    score,
    score_logits,
)
from fetaprune.trainer import init_net


def two_layer(seed=0):
    rng = make_rng(seed)
    return DenseNet((
        Layer(rng.standard_normal((4, 5)), rng.standard_normal(5), "relu"),
        Layer(rng.standard_normal((5, 3)), rng.standard_normal(3), "softmax"),
    ))


def test_forward_examples():
    lin = DenseNet((Layer(np.eye(2), None, "linear"),))
    assert np.array_equal(forward(lin, [[1.0], [2.0]]), [[1], [2]])
    rl = DenseNet((Layer(np.eye(2), None, "relu"), Layer(np.eye(2), None, "linear")))
    assert np.array_equal(forward(rl, [[-1.0], [2.0]]), [[0], [2]])

    net = two_layer()
    X = make_rng(1).standard_normal((4, 9))
    (W1, b1), (W2, b2) = [(L.weights, L.bias) for L in net.layers]
    oracle = np.zeros((3, 9))
    for j in range(9):
        h = np.maximum(0, W1.T @ X[:, j] + b1)
        oracle[:, j] = W2.T @ h + b2
    assert np.max(np.abs(forward(net, X) - oracle)) <= 1e-12


def test_forward_shape_error():
    with pytest.raises(ParameterError):
        forward(two_layer(), np.ones((3, 2)))


def test_forward_permutation_equivariant():
    net, X = two_layer(), make_rng(2).standard_normal((4, 11))
    perm = make_rng(3).permutation(11)
    assert np.allclose(forward(net, X[:, perm]), forward(net, X)[:, perm], rtol=0, atol=1e-14)


def test_invalid_networks():
    with pytest.raises(ParameterError):
        DenseNet((Layer(np.ones((2, 3))), Layer(np.ones((4, 2)), activation="softmax")))
    with pytest.raises(ParameterError):
        DenseNet((Layer(np.ones((2, 3)), activation="softmax"), Layer(np.ones((3, 2)), activation="softmax")))
    with pytest.raises(ParameterError):
        DenseNet((Layer(np.ones((2, 1)), activation="linear"),))
    with pytest.raises(ParameterError):
        Layer(np.ones((2, 2)), activation="tanh")
    with pytest.raises(ParameterError):
        LayerTap(0, np.ones((2, 3)), -np.ones((1, 3)))


def test_predict_and_tie_rule():
    lin = DenseNet((Layer(np.eye(3), None, "linear"),))
    assert predict(lin, [[0.1], [0.9], [0.2]])[0] == 1
    assert predict(lin, [[0.5], [0.5], [0.5]])[0] == 0
    X = np.eye(3)
    assert accuracy(lin, LabeledSet(X, [0, 1, 2])) == 1.0


def test_capture():
    rng = make_rng(4)
    X = rng.standard_normal((4, 20))
    one = DenseNet((Layer(rng.standard_normal((4, 3)), rng.standard_normal(3)),
                    Layer(rng.standard_normal((3, 2)), None, "softmax")))
    assert np.array_equal(capture(one, X, 0).A, X)

    net = init_net([4, 6, 5, 3], seed=1)
    t0, t1 = capture(net, X, 0), capture(net, X, 1)
    L = net.layers[0]
    assert np.max(np.abs(t0.B - relu(L.weights.T @ X + L.bias[:, None]))) <= 1e-9
    assert np.array_equal(t1.A, t0.B)
    with pytest.raises(ParameterError):
        capture(net, X, 2)
    with pytest.raises(ParameterError):
        capture(net, X, 7)

    same = net.with_layer(0, np.array(net.layers[0].weights))
    t0b = capture(same, X, 0)
    assert np.array_equal(t0b.A, t0.A) and np.array_equal(t0b.B, t0.B)


def test_score_examples():
    assert score_logits([2.0, 0.5, -1.0])[0] == pytest.approx(math.sqrt(2) * 1.5, abs=1e-12)
    assert score_logits([1.0, 1.0, -1.0])[0] == 0.0
    rng = make_rng(5)
    F = rng.standard_normal((10, 30))
    s = score_logits(F)
    for j in range(30):
        c = int(np.argmax(F[:, j]))
        brute = min(math.sqrt(2) * (F[c, j] - F[i, j]) for i in range(10) if i != c)
        assert abs(s[j] - brute) <= 1e-12
    # against an explicit class, misclassified samples score negative
    assert score_logits([0.0, 1.0], predicted=0)[0] == pytest.approx(-math.sqrt(2))


def test_score_shift_invariance():
    F = make_rng(6).standard_normal((5, 8))
    assert np.allclose(score_logits(F + 3.7), score_logits(F), rtol=0, atol=1e-13)


def test_score_of_single_sample():
    net = two_layer()
    x = make_rng(7).standard_normal(4)
    assert score(net, x) == pytest.approx(score_logits(forward(net, x[:, None]))[0], abs=0)


def test_min_score():
    net = two_layer()
    X = make_rng(8).standard_normal((4, 25))
    data = LabeledSet(X, predict(net, X))
    v, i = min_score(net, data.subset([3]))
    assert i == 0 and v == score(net, X[:, 3])
    s = score_logits(forward(net, X))
    v, i = min_score(net, data)
    assert v == s.min() and i == int(np.argmin(s))
    dup = LabeledSet(np.column_stack([X, X[:, i]]), np.append(data.y, data.y[i]))
    assert min_score(net, dup) == (v, i)
    with pytest.raises(ParameterError):
        min_score(net, data.subset([]))


def test_margin_lower_bound():
    lin = DenseNet((Layer(np.eye(3), None, "linear"),))
    X = np.array([[3.0, 0.0], [1.0, 2.0], [0.0, 0.5]])
    data = LabeledSet(X, [0, 1])
    mb = margin_lower_bound(lin, data)
    assert mb.valid and mb.gamma == pytest.approx(min_score(lin, data)[0], abs=1e-12)

    net = two_layer()
    Xr = make_rng(9).standard_normal((4, 40))
    data = LabeledSet(Xr, predict(net, Xr))
    mb = margin_lower_bound(net, data)
    norms = [np.linalg.svd(L.weights, compute_uv=False)[0] for L in net.layers]
    assert abs(mb.gamma - min_score(net, data)[0] / np.prod(norms)) <= 1e-10 * mb.gamma

    # scaling the output layer by c scales the score and the norm product alike
    scaled = net.with_layer(1, 2.5 * net.layers[1].weights, 2.5 * net.layers[1].bias)
    assert margin_lower_bound(scaled, data).gamma == pytest.approx(mb.gamma, rel=1e-10)

    wrong = LabeledSet(Xr, (predict(net, Xr) + 1) % 3)
    mb = margin_lower_bound(net, wrong)
    assert mb.gamma == 0.0 and not mb.valid and mb.score <= 0


def test_model_round_trip(tmp_path):
    net = two_layer()
    path = save_net(net, tmp_path)
    back = load_net(path)
    for a, b in zip(net.layers, back.layers):
        assert np.array_equal(a.weights, b.weights) and np.array_equal(a.bias, b.bias)
        assert a.activation == b.activation
    first = (tmp_path / "model.json").read_bytes()
    save_net(back, tmp_path)
    assert (tmp_path / "model.json").read_bytes() == first


def test_labeled_set_round_trip(tmp_path):
    X = make_rng(10).standard_normal((3, 7))
    data = LabeledSet(X, [0, 2, 1, 1, 0, 2, 2])
    save_set(data, tmp_path, "train")
    back = load_set(tmp_path, "train")
    assert np.array_equal(back.X, X) and np.array_equal(back.y, data.y)


def test_layers_are_immutable():
    net = two_layer()
    with pytest.raises(ValueError):
        net.layers[0].weights[0, 0] = 1.0
