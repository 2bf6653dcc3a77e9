import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra.numpy import arrays

from mothernets.archspec import DenseLayerSpec, NetworkArch, conv_arch, dense_arch, param_count
from mothernets.engine import (Dataset, TrainConfig, WeightedNetwork, conv2d, decode_weights, encode_weights,
                               evaluate, forward, gradients, init_network, load_dataset, load_weights, logits,
                               max_pool, save_dataset, save_weights, softmax, train)
from mothernets.errors import (ConvTrainingUnsupported, NonFiniteValue, ShapeMismatch, ValidationError,
                               WeightsFormatError)
from mothernets.testkit import SyntheticSpec, fd_gradients, gen, random_dense_arch


def linear_identity():
    arch = NetworkArch("dense", 2, dense_layers=[DenseLayerSpec(2, "softmax")])
    return WeightedNetwork(arch, [np.eye(2), np.zeros(2)])


def test_init_deterministic_and_counted():
    arch = dense_arch(3, [5, 4], 2)
    a, b = init_network(arch, 7), init_network(arch, 7)
    assert all(np.array_equal(x, y) for x, y in zip(a.weights, b.weights))
    assert a.num_params == param_count(arch)
    c = init_network(arch, 8)
    assert any(not np.array_equal(x, y) for x, y in zip(a.weights, c.weights))
    assert all(np.all(w == 0) for w in a.weights[1::2])


def test_unscaled_init_is_standard_normal():
    w = init_network(dense_arch(400, [300], 2), 0, scaled=False).weights[0]
    assert abs(w.std() - 1.0) < 0.01
    ws = init_network(dense_arch(400, [300], 2), 0).weights[0]
    assert abs(ws.std() - 1 / np.sqrt(400)) < 0.001


def test_identity_logits():
    assert np.allclose(logits(linear_identity(), [1.0, 2.0]), [1.0, 2.0])


def test_softmax_symmetric():
    assert np.allclose(softmax(np.zeros(2)), [0.5, 0.5])


def test_constant_convolution():
    x = np.ones((1, 1, 8, 8))
    out = conv2d(x, np.ones((1, 1, 3, 3)), np.array([0.5]))
    assert out.shape == (1, 1, 6, 6) and np.all(out == 9.5)


@given(arrays(np.float64, (2, 3, 6, 7), elements=st.floats(-5, 5)))
def test_max_pool_brute_force(x):
    out = max_pool(x)
    assert out.shape == (2, 3, 3, 3)
    for n, c, i, j in np.ndindex(out.shape):
        assert out[n, c, i, j] == x[n, c, 2 * i:2 * i + 2, 2 * j:2 * j + 2].max()


@pytest.mark.parametrize("seed", range(10))
def test_softmax_rows_and_purity(seed):
    rng = np.random.default_rng(seed)
    net = init_network(random_dense_arch(rng), seed)
    x = rng.standard_normal((20, net.arch.input_shape))
    p = forward(net, x)
    assert np.allclose(p.sum(axis=1), 1.0, atol=1e-12, rtol=0)
    assert np.all((p > 0) & (p < 1))
    assert np.array_equal(p, forward(net, x))


def test_conv_forward_shapes():
    arch = conv_arch((8, 8, 2), [[(3, 4)], [(1, 3)]], [5], 3)
    net = init_network(arch, 0)
    x = np.random.default_rng(0).standard_normal((4, 8, 8, 2))
    assert forward(net, x).shape == (4, 3)
    assert forward(net, x[0]).shape == (3,)
    with pytest.raises(ShapeMismatch):
        forward(net, np.zeros((4, 7, 8, 2)))


def test_dense_shape_mismatch():
    with pytest.raises(ShapeMismatch):
        forward(linear_identity(), np.zeros((3, 5)))


@pytest.mark.filterwarnings("ignore::RuntimeWarning")
def test_non_finite_detected():
    net = linear_identity()
    with pytest.raises(NonFiniteValue):
        forward(net, [np.inf, 0.0])


def blobs(n=200, seed=0):
    return gen(SyntheticSpec("blobs", n, 2, 0.1, seed))


def test_train_separable_blobs():
    data = blobs()
    net, log = train(init_network(dense_arch(2, [8], 2), 0), data, TrainConfig(max_epochs=50))
    assert log.epochs <= 50
    assert max(log.accuracies) >= 0.95 and evaluate(net, data) >= 0.95
    assert len(log.losses) == log.epochs


def test_zero_learning_rate_keeps_weights():
    net = init_network(dense_arch(2, [8], 2), 0)
    out, log = train(net, blobs(), TrainConfig(learning_rate=0.0, max_epochs=5, patience=10))
    assert log.epochs == 5
    assert all(np.array_equal(a, b) for a, b in zip(net.weights, out.weights))


def test_train_bit_identical():
    cfg = TrainConfig(max_epochs=10, shuffle_seed=3)
    net = init_network(dense_arch(2, [6, 5], 2), 1)
    a, la = train(net, blobs(), cfg)
    b, lb = train(net, blobs(), cfg)
    assert la.losses == lb.losses and la.accuracies == lb.accuracies
    assert encode_weights(a) == encode_weights(b)


def test_patience_stops_early():
    cfg = TrainConfig(learning_rate=0.0, max_epochs=100, patience=3)
    _, log = train(init_network(dense_arch(2, [4], 2), 0), blobs(), cfg)
    assert log.epochs == 4          # first epoch sets the best, then three stale epochs


def test_conv_training_unsupported():
    net = init_network(conv_arch((8, 8, 1), [[(3, 2)]], [], 2), 0)
    data = gen(SyntheticSpec("random_images", 10, 2, shape=(8, 8, 1)))
    with pytest.raises(ConvTrainingUnsupported):
        train(net, data, TrainConfig(max_epochs=1))
    with pytest.raises(ConvTrainingUnsupported):
        gradients(net, data.features, data.labels)


def test_single_linear_layer_closed_form_gradient():
    arch = NetworkArch("dense", 3, dense_layers=[DenseLayerSpec(4, "softmax")])
    net = init_network(arch, 2)
    x, y = np.array([[0.3, -1.2, 2.0]]), np.array([2])
    p = forward(net, x)[0]
    dz = p - np.eye(4)[2]
    gw, gb = gradients(net, x, y)
    assert np.allclose(gw, np.outer(x[0], dz)) and np.allclose(gb, dz)


@pytest.mark.parametrize("seed", range(8))
def test_gradients_match_finite_differences(seed):
    rng = np.random.default_rng(seed)
    net = init_network(random_dense_arch(rng, max_depth=2), seed)
    n = int(rng.integers(1, 9))
    x = rng.standard_normal((n, net.arch.input_shape))
    y = rng.integers(0, net.arch.num_classes, n)
    for g, f in zip(gradients(net, x, y), fd_gradients(net, x, y)):
        assert np.allclose(g, f, rtol=1e-4, atol=1e-7)


def test_duplicate_example_same_gradient():
    net = init_network(dense_arch(3, [4], 2), 0)
    x, y = np.array([[0.1, 0.2, -0.3]]), np.array([1])
    one = gradients(net, x, y)
    two = gradients(net, np.vstack([x, x]), np.array([1, 1]))
    assert all(np.allclose(a, b) for a, b in zip(one, two))


def test_evaluate_extremes():
    net = linear_identity()
    x = np.array([[2.0, 0.0], [0.0, 2.0]])
    assert evaluate(net, Dataset(x, [0, 1], 2)) == 1.0
    assert evaluate(net, Dataset(x, [1, 0], 2)) == 0.0


def test_argmax_ties_go_low():
    net = linear_identity()
    assert evaluate(net, Dataset(np.array([[1.0, 1.0]]), [0], 2)) == 1.0


def test_dataset_validation():
    with pytest.raises(ValidationError):
        Dataset(np.zeros((2, 2)), [0, 2], 2)
    with pytest.raises(ValidationError):
        Dataset(np.zeros((0, 2)), [], 2)


def test_weights_round_trip(tmp_path):
    net = init_network(conv_arch((8, 8, 2), [[(3, 4)]], [5], 3), 11)
    path = tmp_path / "w.mnwb"
    save_weights(net, path)
    back = load_weights(path)
    assert back.arch == net.arch and back.rng_seed == 11
    assert all(np.array_equal(a, b) for a, b in zip(net.weights, back.weights))
    raw = path.read_bytes()
    assert raw[:4] == b"MNWB" and raw[4] == 1
    assert encode_weights(back) == raw


@pytest.mark.parametrize("mutate", [lambda b: b"XXXX" + b[4:], lambda b: b[:4] + b"\x07" + b[5:],
                                    lambda b: b + b"\x00" * 8])
def test_weights_rejects_corruption(mutate):
    raw = encode_weights(init_network(dense_arch(2, [3], 2), 0))
    with pytest.raises(WeightsFormatError):
        decode_weights(mutate(raw))


def test_dataset_csv_round_trip(tmp_path):
    data = gen(SyntheticSpec("random_images", 6, 3, shape=(4, 4, 2)))
    path = tmp_path / "d.csv"
    save_dataset(data, path)
    back = load_dataset(path)
    assert back.features.shape == (6, 4, 4, 2) and back.num_classes == 3
    assert np.array_equal(back.features, data.features) and np.array_equal(back.labels, data.labels)


def test_train_config_validation():
    with pytest.raises(ValidationError):
        TrainConfig(batch_size=0)
    assert TrainConfig.from_dict(TrainConfig(patience=4).to_dict()) == TrainConfig(patience=4)
