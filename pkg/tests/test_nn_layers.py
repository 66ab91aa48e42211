import numpy as np
import pytest

from phishcnn.nn.layers import (BatchNorm, Conv1D, Dense, Dropout, Flatten, MaxPool1D, ReLU, Sequential, Sigmoid,
                                glorot_uniform, he_uniform)
from phishcnn.nn.rng import RngStream


def test_he_and_glorot_limits():
    rng = RngStream(0)
    w = he_uniform(rng, (1000, 8), 10)
    assert np.abs(w).max() <= np.sqrt(6 / 10)
    assert np.abs(w).max() > 0.9 * np.sqrt(6 / 10)
    g = glorot_uniform(rng, (32, 1), 32, 1)
    assert np.abs(g).max() <= np.sqrt(6 / 33)


def test_biases_start_at_zero():
    rng = RngStream(1)
    assert not Conv1D(1, 4, 3, rng).params["bias"].any()
    assert not Dense(4, 2, rng).params["bias"].any()


def test_grad_shapes_match_params():
    rng = RngStream(2)
    for layer in (Conv1D(2, 3, 4, rng), Dense(5, 2, rng), BatchNorm(3)):
        for k, p in layer.params.items():
            assert layer.grads[k].shape == p.shape


def test_output_shapes():
    assert Conv1D(1, 8, 10).output_shape((30, 1)) == (21, 8)
    assert MaxPool1D().output_shape((21, 8)) == (10, 8)
    assert Flatten().output_shape((10, 8)) == (80,)
    assert Dense(80, 8).output_shape((80,)) == (8,)


def test_flatten_is_position_major_and_reversible():
    x = np.arange(2 * 3 * 4, dtype=float).reshape(2, 3, 4)
    f = Flatten()
    out = f.forward(x)
    np.testing.assert_array_equal(out[0, :4], x[0, 0])
    np.testing.assert_array_equal(f.backward(out), x)


def test_batchnorm_buffers_are_not_params():
    bn = BatchNorm(4)
    assert set(bn.params) == {"gamma", "beta"}
    assert set(bn.buffers) == {"running_mean", "running_var"}


def test_sequential_forward_backward_finite():
    rng = RngStream(3)
    net = Sequential([Conv1D(1, 2, 3, rng), BatchNorm(2), ReLU(), MaxPool1D(), Flatten(), Dense(8, 3, rng),
                      ReLU(), Dropout(0.5, rng.derive(1)), Dense(3, 1, rng, "glorot"), Sigmoid()])
    x = rng.uniform(-1, 1, (5, 10, 1))
    out = net.forward(x, training=True)
    assert out.shape == (5, 1) and np.isfinite(out).all()
    dx = net.backward(np.ones_like(out))
    assert dx.shape == x.shape and np.isfinite(dx).all()
    for layer in net:
        for g in layer.grads.values():
            assert np.isfinite(g).all()


def test_zero_grad_resets():
    layer = Dense(3, 2, RngStream(4))
    layer.forward(np.ones((2, 3)))
    layer.backward(np.ones((2, 2)))
    assert layer.grads["weights"].any()
    layer.zero_grad()
    assert not layer.grads["weights"].any()


def test_dropout_layer_rejects_bad_rate():
    with pytest.raises(ValueError):
        Dropout(1.0, RngStream(0))
