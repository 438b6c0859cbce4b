import math

import numpy as np
import pytest

from attrivis import nn
from attrivis.errors import (
    ConfigError,
    EmptyDataset,
    InvalidShape,
    IoError,
    ShapeMismatch,
)
from helpers import blob_task, numerical_grad, rel_err, tiny_net


# ---------------------------------------------------------------------------
# layer specs

def test_layer_spec_validation():
    with pytest.raises(InvalidShape):
        nn.Conv(out_channels=0, kernel_size=3)
    with pytest.raises(InvalidShape):
        nn.Conv(out_channels=4, kernel_size=0)
    with pytest.raises(InvalidShape):
        nn.MaxPool(window=2, stride=0)
    with pytest.raises(InvalidShape):
        nn.FullyConnected(out_units=0)


def test_layer_dict_round_trip():
    layers = [nn.Conv(8, 5, stride=1, pad=2), nn.ReLU(), nn.MaxPool(2, 2),
              nn.FullyConnected(16), nn.Softmax()]
    for spec in layers:
        assert nn.layer_from_dict(nn.layer_to_dict(spec)) == spec


def test_layer_output_shapes_default_stack():
    net = nn.build_network()
    shapes = nn.layer_output_shapes(net.input_shape, net.layers)
    assert shapes[0] == (16, 60, 60)     # conv keeps spatial size at pad k//2
    assert shapes[2] == (16, 30, 30)     # first pool
    assert shapes[-1] == (2,)            # softmax output
    assert len(shapes) == len(net.layers)


def test_softmax_must_be_terminal():
    with pytest.raises(InvalidShape):
        nn.layer_output_shapes((3, 8, 8), [nn.Softmax(), nn.ReLU()])


# ---------------------------------------------------------------------------
# conv

def test_conv_identity_kernel():
    x = np.arange(9.0).reshape(1, 3, 3)
    w = np.ones((1, 1, 1, 1))
    b = np.zeros(1)
    out = nn.conv_forward(x, w, b)
    assert np.array_equal(out, x)


def test_conv_2x2_all_ones_sums_patch():
    x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
    w = np.ones((1, 1, 2, 2))
    out = nn.conv_forward(x, w, np.zeros(1))
    assert out.shape == (1, 1, 1)
    assert out[0, 0, 0] == 10.0


def test_conv_zero_weights_gives_bias_map():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(2, 5, 5))
    w = np.zeros((3, 2, 3, 3))
    b = np.array([1.5, -2.0, 0.0])
    out = nn.conv_forward(x, w, b, stride=1, pad=1)
    for c in range(3):
        assert np.all(out[c] == b[c])


def test_conv_channel_mismatch():
    with pytest.raises(ShapeMismatch):
        nn.conv_forward(np.zeros((2, 4, 4)), np.ones((1, 3, 2, 2)), np.zeros(1))


def test_conv_backward_zero_grad():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(2, 4, 4))
    w = rng.normal(size=(3, 2, 2, 2))
    gx, gw, gb = nn.conv_backward(np.zeros((3, 3, 3)), x, w)
    assert not gx.any() and not gw.any() and not gb.any()


def test_conv_backward_identity_kernel_passes_grad():
    rng = np.random.default_rng(2)
    x = rng.normal(size=(1, 4, 4))
    w = np.ones((1, 1, 1, 1))
    go = rng.normal(size=(1, 4, 4))
    gx, _, _ = nn.conv_backward(go, x, w)
    assert np.array_equal(gx, go)


def test_conv_gradients_match_finite_differences():
    rng = np.random.default_rng(3)
    x = rng.normal(size=(1, 4, 4))
    w = rng.normal(size=(2, 1, 3, 3))
    b = rng.normal(size=2)
    go = rng.normal(size=(2, 2, 2))

    gx, gw, gb = nn.conv_backward(go, x, w)
    nx = numerical_grad(lambda v: float((nn.conv_forward(v, w, b) * go).sum()), x)
    nw = numerical_grad(lambda v: float((nn.conv_forward(x, v, b) * go).sum()), w)
    nb = numerical_grad(lambda v: float((nn.conv_forward(x, w, v) * go).sum()), b)
    assert rel_err(gx, nx) < 1e-5
    assert rel_err(gw, nw) < 1e-5
    assert rel_err(gb, nb) < 1e-5


# ---------------------------------------------------------------------------
# relu / maxpool / fc / softmax

def test_relu_examples():
    assert np.array_equal(nn.relu_forward(np.array([-1.0, 2.0])), [0.0, 2.0])
    x = -np.arange(1.0, 4.0)
    assert not nn.relu_forward(x).any()
    assert not nn.relu_backward(np.ones(3), x).any()
    got = nn.relu_backward(np.array([5.0, 5.0]), np.array([-1.0, 2.0]))
    assert np.array_equal(got, [0.0, 5.0])


def test_maxpool_records_argmax_switch():
    x = np.array([[[1.0, 3.0], [2.0, 0.0]]])
    out, sw = nn.maxpool_forward(x, 2, 2)
    assert out[0, 0, 0] == 3.0
    assert sw[0, 0, 0] == 1  # flat index of (0, 1) in a 2x2 plane


def test_maxpool_ramp():
    x = np.arange(16.0).reshape(1, 4, 4)
    out, sw = nn.maxpool_forward(x, 2, 2)
    assert np.array_equal(out[0], [[5.0, 7.0], [13.0, 15.0]])
    assert np.array_equal(sw[0], [[5, 7], [13, 15]])


def test_maxpool_window_too_large():
    with pytest.raises(InvalidShape):
        nn.maxpool_forward(np.zeros((1, 2, 2)), 3, 1)


def test_fc_examples():
    x = np.array([3.0, 4.0])
    assert np.array_equal(nn.fc_forward(x, np.eye(2), np.zeros(2)), x)
    out = nn.fc_forward(x, np.array([[1.0, -2.0]]), np.zeros(1))
    assert np.array_equal(out, [-5.0])


def test_fc_dimension_mismatch():
    with pytest.raises(ShapeMismatch):
        nn.fc_forward(np.zeros(3), np.zeros((2, 4)), np.zeros(2))


def test_fc_gradients_match_finite_differences():
    rng = np.random.default_rng(4)
    x = rng.normal(size=6)
    w = rng.normal(size=(3, 6))
    b = rng.normal(size=3)
    go = rng.normal(size=3)
    gx, gw, gb = nn.fc_backward(go, x, w)
    nx = numerical_grad(lambda v: float(nn.fc_forward(v, w, b) @ go), x)
    nw = numerical_grad(lambda v: float(nn.fc_forward(x, v, b) @ go), w)
    nb = numerical_grad(lambda v: float(nn.fc_forward(x, w, v) @ go), b)
    assert rel_err(gx, nx) < 1e-5
    assert rel_err(gw, nw) < 1e-5
    assert rel_err(gb, nb) < 1e-5


def test_softmax_values():
    np.testing.assert_allclose(nn.softmax(np.zeros(2)), [0.5, 0.5], atol=1e-15)
    got = nn.softmax(np.array([math.log(2.0), 0.0]))
    np.testing.assert_allclose(got, [2.0 / 3.0, 1.0 / 3.0], atol=1e-15)


def test_softmax_no_overflow():
    got = nn.softmax(np.array([1000.0, 0.0]))
    assert math.isfinite(got[0]) and math.isfinite(got[1])
    assert got[0] > 1.0 - 1e-12
    assert abs(got.sum() - 1.0) < 1e-12


def test_softmax_sums_to_one():
    rng = np.random.default_rng(5)
    for _ in range(50):
        logits = rng.normal(scale=rng.uniform(0.1, 50), size=rng.integers(2, 9))
        assert abs(nn.softmax(logits).sum() - 1.0) < 1e-12


def test_cross_entropy_matches_log_prob_and_gradient():
    rng = np.random.default_rng(6)
    logits = rng.normal(size=(4, 2))
    labels = np.array([0, 1, 1, 0])
    loss, dlogits = nn.softmax_cross_entropy(logits, labels)
    want = -np.mean([math.log(nn.softmax(logits[i])[labels[i]]) for i in range(4)])
    assert abs(loss - want) < 1e-12
    num = numerical_grad(
        lambda v: nn.softmax_cross_entropy(v, labels)[0], logits)
    assert rel_err(dlogits, num) < 1e-5


# ---------------------------------------------------------------------------
# whole-network forward/backward

def test_forward_zero_weight_network_is_coin_flip():
    net = tiny_net()
    for i in net.param_layers():
        net.params[i]["w"][:] = 0.0
        net.params[i]["b"][:] = 0.0
    probs, switches, cache = net.forward(np.ones((1, 6, 6)))
    np.testing.assert_allclose(probs, [0.5, 0.5], atol=1e-15)
    assert len(switches) == 1


def test_forward_is_deterministic():
    net = tiny_net(seed=7)
    rng = np.random.default_rng(8)
    img = rng.normal(size=(1, 6, 6))
    p1 = net.forward(img)[0]
    p2 = net.forward(img)[0]
    assert np.array_equal(p1, p2)


def test_forward_rejects_wrong_shape():
    net = tiny_net()
    with pytest.raises(ShapeMismatch):
        net.forward(np.zeros((1, 5, 5)))


def test_network_gradients_match_finite_differences():
    rng = np.random.default_rng(9)
    net = tiny_net(seed=1)
    x = rng.normal(size=(2, 1, 6, 6))
    labels = np.array([0, 1])

    def loss_fn():
        probs, cache = net.forward_batch(x)
        return nn.softmax_cross_entropy(cache.inputs[-1], labels)[0]

    probs, cache = net.forward_batch(x)
    _, dlogits = nn.softmax_cross_entropy(cache.inputs[-1], labels)
    grads = net.backward_batch(cache, dlogits)

    for i in net.param_layers():
        for key in ("w", "b"):
            p = net.params[i][key]
            num = numerical_grad(lambda v: loss_fn(), p)
            assert rel_err(grads[i][key], num) < 1e-5, (i, key)


# ---------------------------------------------------------------------------
# init

def test_init_glorot_bounds_and_zero_biases():
    net = nn.build_network(input_shape=(3, 12, 12), conv_channels=(4, 8),
                           kernel_size=3, fc_units=16)
    net.init_params(123)
    for i in net.param_layers():
        spec = net.layers[i]
        w = net.params[i]["w"]
        b = net.params[i]["b"]
        assert not b.any()
        if isinstance(spec, nn.Conv):
            fan_in = w.shape[1] * w.shape[2] * w.shape[3]
            fan_out = w.shape[0] * w.shape[2] * w.shape[3]
        else:
            fan_in, fan_out = w.shape[1], w.shape[0]
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        assert np.abs(w).max() <= limit
        assert np.abs(w).max() > 0.5 * limit  # actually fills the range


def test_init_seed_determinism():
    a = tiny_net(seed=5)
    b = tiny_net(seed=5)
    c = tiny_net(seed=6)
    for i in a.param_layers():
        assert np.array_equal(a.params[i]["w"], b.params[i]["w"])
    assert any(not np.array_equal(a.params[i]["w"], c.params[i]["w"])
               for i in a.param_layers())


# ---------------------------------------------------------------------------
# training

def test_train_config_validation():
    with pytest.raises(ConfigError):
        nn.TrainConfig(momentum=1.0, epochs=1)
    with pytest.raises(ConfigError):
        nn.TrainConfig(batch_size=0, epochs=1)
    with pytest.raises(ConfigError):
        nn.TrainConfig(weight_decay=-0.1, epochs=1)
    nn.TrainConfig(learning_rate=0.0, epochs=1)  # explicitly allowed


def test_train_lr_zero_is_identity():
    images, labels = blob_task(n=20)
    net = tiny_net(seed=2, input_shape=(1, 8, 8))
    before = [dict(w=net.params[i]["w"].copy(), b=net.params[i]["b"].copy())
              for i in net.param_layers()]
    nn.train(net, images, labels,
             nn.TrainConfig(learning_rate=0.0, epochs=3, batch_size=5, seed=0))
    for i, saved in zip(net.param_layers(), before):
        assert np.array_equal(net.params[i]["w"], saved["w"])
        assert np.array_equal(net.params[i]["b"], saved["b"])


def test_train_rejects_empty_dataset():
    net = tiny_net(input_shape=(1, 8, 8))
    with pytest.raises(EmptyDataset):
        nn.train(net, np.zeros((0, 1, 8, 8)), np.zeros(0, dtype=int),
                 nn.TrainConfig(epochs=1))


def test_train_fits_separable_blobs():
    images, labels = blob_task(n=200)
    net = tiny_net(seed=3, input_shape=(1, 8, 8))
    nn.train(net, images, labels,
             nn.TrainConfig(learning_rate=0.01, epochs=20, batch_size=20, seed=0))
    probs = net.forward_batch(images)[0][:, 1]
    acc = np.mean((probs >= 0.5) == (labels == 1))
    assert acc == 1.0


def test_train_loss_non_increasing_at_small_lr():
    images, labels = blob_task(n=40)
    net = tiny_net(seed=4, input_shape=(1, 8, 8))
    hist = []
    nn.train(net, images, labels,
             nn.TrainConfig(learning_rate=1e-4, epochs=6, batch_size=40, seed=0),
             on_epoch=lambda e, loss: hist.append(loss))
    for prev, cur in zip(hist, hist[1:]):
        assert cur <= prev + 1e-12


def test_train_seed_determinism():
    images, labels = blob_task(n=30)

    def run():
        net = tiny_net(seed=5, input_shape=(1, 8, 8))
        nn.train(net, images, labels,
                 nn.TrainConfig(learning_rate=0.005, epochs=3, batch_size=10,
                                seed=42))
        return net

    a, b = run(), run()
    for i in a.param_layers():
        assert np.array_equal(a.params[i]["w"], b.params[i]["w"])
        assert np.array_equal(a.params[i]["b"], b.params[i]["b"])


def test_momentum_and_weight_decay_follow_update_rule():
    # one-parameter check against a hand-stepped velocity sequence
    images, labels = blob_task(n=10)
    net = tiny_net(seed=6, input_shape=(1, 8, 8))
    cfg = nn.TrainConfig(learning_rate=0.1, momentum=0.5, weight_decay=0.01,
                         epochs=1, batch_size=10, seed=0)

    probs, cache = net.forward_batch(images)
    _, dlogits = nn.softmax_cross_entropy(cache.inputs[-1], labels)
    grads = net.backward_batch(cache, dlogits)
    i0 = net.param_layers()[0]
    w0 = net.params[i0]["w"].copy()
    g0 = grads[i0]["w"].copy()
    expect = w0 + (-cfg.learning_rate * (g0 + cfg.weight_decay * w0))

    nn.train(net, images, labels, cfg)
    np.testing.assert_allclose(net.params[i0]["w"], expect, rtol=0, atol=1e-12)


# ---------------------------------------------------------------------------
# checkpoints

def test_checkpoint_round_trip_bit_identical(tmp_path):
    net = tiny_net(seed=9, input_shape=(3, 10, 10), conv_channels=(4,),
                   fc_units=8)
    rng = np.random.default_rng(10)
    img = rng.normal(size=(3, 10, 10))
    p = tmp_path / "net.bin"
    nn.save_network(net, p, centering={"mode": "scalar", "values": [12.5]})
    loaded, centering = nn.load_network(p)
    assert centering == {"mode": "scalar", "values": [12.5]}
    assert loaded.layers == net.layers
    assert np.array_equal(loaded.forward(img)[0], net.forward(img)[0])


def test_checkpoint_rejects_bad_magic(tmp_path):
    p = tmp_path / "net.bin"
    p.write_bytes(b"NOT-A-CHECKPOINT" + b"\x00" * 64)
    with pytest.raises(IoError):
        nn.load_network(p)


def test_checkpoint_rejects_trailing_bytes(tmp_path):
    net = tiny_net(seed=9)
    p = tmp_path / "net.bin"
    nn.save_network(net, p)
    p.write_bytes(p.read_bytes() + b"junk")
    with pytest.raises(IoError):
        nn.load_network(p)
