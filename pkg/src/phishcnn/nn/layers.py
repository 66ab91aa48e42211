"""Stateful layer wrappers around :mod:`phishcnn.nn.functional`.

Each layer caches what its backward pass needs during ``forward`` and stores
parameter gradients in ``grads`` under the same keys as ``params``.
Non-trainable state (batch-norm running statistics) lives in ``buffers``.
"""

from __future__ import annotations

import numpy as np

from . import functional as F
from .rng import RngStream


def he_uniform(rng: RngStream, shape, fan_in: int, dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / fan_in)
    return rng.uniform(-limit, limit, shape).astype(dtype)


def glorot_uniform(rng: RngStream, shape, fan_in: int, fan_out: int, dtype=np.float64) -> np.ndarray:
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, shape).astype(dtype)


class Layer:
    """Base class. Layers without parameters only override forward/backward."""

    name = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}

    def forward(self, x: np.ndarray, training: bool = False) -> np.ndarray:
        raise NotImplementedError

    def backward(self, grad_out: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def output_shape(self, input_shape: tuple[int, ...]) -> tuple[int, ...]:
        return input_shape

    def zero_grad(self) -> None:
        for k, v in self.params.items():
            self.grads[k] = np.zeros_like(v)

    def __repr__(self) -> str:
        return f"{type(self).__name__}()"


class Conv1D(Layer):
    name = "conv1d"

    def __init__(self, in_channels: int, filters: int, kernel_size: int, rng: RngStream | None = None,
                 dtype=np.float64):
        super().__init__()
        self.in_channels, self.filters, self.kernel_size = in_channels, filters, kernel_size
        shape = (kernel_size, in_channels, filters)
        if rng is None:
            self.params["kernels"] = np.zeros(shape, dtype=dtype)
        else:
            self.params["kernels"] = he_uniform(rng, shape, kernel_size * in_channels, dtype)
        self.params["bias"] = np.zeros(filters, dtype=dtype)
        self.zero_grad()
        self._x = None

    def forward(self, x, training=False):
        self._x = x
        return F.conv1d_forward(x, self.params["kernels"], self.params["bias"])

    def backward(self, grad_out):
        dx, dk, db = F.conv1d_backward(self._x, self.params["kernels"], grad_out)
        self.grads["kernels"] = dk
        self.grads["bias"] = db
        return dx

    def output_shape(self, input_shape):
        length, _ = input_shape
        return (length - self.kernel_size + 1, self.filters)

    def __repr__(self):
        return f"Conv1D(filters={self.filters}, kernel_size={self.kernel_size})"


class MaxPool1D(Layer):
    name = "maxpool1d"

    def __init__(self, size: int = 2, stride: int = 2):
        super().__init__()
        self.size, self.stride = size, stride
        self._argmax = None
        self._length = None

    def forward(self, x, training=False):
        out, self._argmax = F.maxpool1d_forward(x, self.size, self.stride)
        self._length = x.shape[-2]
        return out

    def backward(self, grad_out):
        return F.maxpool1d_backward(grad_out, self._argmax, self._length)

    def output_shape(self, input_shape):
        length, channels = input_shape
        return (length // self.size, channels)

    def __repr__(self):
        return f"MaxPool1D(size={self.size}, stride={self.stride})"


class Flatten(Layer):
    """Flattens ``[B, L, C]`` to ``[B, L*C]`` in position-major, channel-minor order."""

    name = "flatten"

    def __init__(self):
        super().__init__()
        self._shape = None

    def forward(self, x, training=False):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad_out):
        return grad_out.reshape(self._shape)

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)


class Dense(Layer):
    name = "dense"

    def __init__(self, in_features: int, units: int, rng: RngStream | None = None, init: str = "he",
                 dtype=np.float64):
        super().__init__()
        self.in_features, self.units = in_features, units
        shape = (in_features, units)
        if rng is None:
            w = np.zeros(shape, dtype=dtype)
        elif init == "he":
            w = he_uniform(rng, shape, in_features, dtype)
        elif init == "glorot":
            w = glorot_uniform(rng, shape, in_features, units, dtype)
        else:
            raise ValueError(f"unknown init {init!r}")
        self.params["weights"] = w
        self.params["bias"] = np.zeros(units, dtype=dtype)
        self.zero_grad()
        self._x = None

    def forward(self, x, training=False):
        self._x = x
        return F.dense_forward(x, self.params["weights"], self.params["bias"])

    def backward(self, grad_out):
        dx, dw, db = F.dense_backward(self._x, self.params["weights"], grad_out)
        self.grads["weights"] = dw
        self.grads["bias"] = db
        return dx

    def output_shape(self, input_shape):
        return input_shape[:-1] + (self.units,)

    def __repr__(self):
        return f"Dense(units={self.units})"


class BatchNorm(Layer):
    """Batch normalization over the last (channel) axis.

    ``gamma``/``beta`` are trainable; ``running_mean``/``running_var`` are
    non-trainable buffers updated with momentum 0.99 in train mode.
    """

    name = "batchnorm"

    def __init__(self, channels: int, momentum: float = F.BN_MOMENTUM, eps: float = F.BN_EPSILON,
                 dtype=np.float64):
        super().__init__()
        self.channels, self.momentum, self.eps = channels, momentum, eps
        self.params["gamma"] = np.ones(channels, dtype=dtype)
        self.params["beta"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_mean"] = np.zeros(channels, dtype=dtype)
        self.buffers["running_var"] = np.ones(channels, dtype=dtype)
        self.zero_grad()
        self._cache = None

    def forward(self, x, training=False):
        out, self._cache, mean, var = F.batchnorm_forward(
            x, self.params["gamma"], self.params["beta"],
            self.buffers["running_mean"], self.buffers["running_var"],
            training, self.momentum, self.eps)
        self.buffers["running_mean"] = mean.astype(x.dtype, copy=False)
        self.buffers["running_var"] = var.astype(x.dtype, copy=False)
        return out

    def backward(self, grad_out):
        dx, dgamma, dbeta = F.batchnorm_backward(grad_out, self._cache)
        self.grads["gamma"] = dgamma
        self.grads["beta"] = dbeta
        return dx

    def __repr__(self):
        return f"BatchNorm(channels={self.channels})"


class ReLU(Layer):
    name = "relu"

    def __init__(self):
        super().__init__()
        self._x = None

    def forward(self, x, training=False):
        self._x = x
        return F.relu_forward(x)

    def backward(self, grad_out):
        return F.relu_backward(self._x, grad_out)


class Sigmoid(Layer):
    name = "sigmoid"

    def __init__(self):
        super().__init__()
        self._s = None

    def forward(self, x, training=False):
        self._s = F.sigmoid(x)
        return self._s

    def backward(self, grad_out):
        return F.sigmoid_backward(self._s, grad_out)


class Dropout(Layer):
    name = "dropout"

    def __init__(self, rate: float, rng: RngStream):
        super().__init__()
        if not 0 <= rate < 1:
            raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
        self.rate = rate
        self.rng = rng
        self._mask = None

    def forward(self, x, training=False):
        out, self._mask = F.dropout_forward(x, self.rate, self.rng, training)
        return out

    def backward(self, grad_out):
        return F.dropout_backward(grad_out, self._mask)

    def __repr__(self):
        return f"Dropout(rate={self.rate})"


class Sequential:
    """An ordered stack of layers sharing one train/infer mode."""

    def __init__(self, layers: list[Layer]):
        self.layers = list(layers)

    def forward(self, x, training=False):
        for layer in self.layers:
            x = layer.forward(x, training)
        return x

    def backward(self, grad_out):
        for layer in reversed(self.layers):
            grad_out = layer.backward(grad_out)
        return grad_out

    def zero_grad(self):
        for layer in self.layers:
            layer.zero_grad()

    def __iter__(self):
        return iter(self.layers)

    def __repr__(self):
        inner = ", ".join(repr(layer) for layer in self.layers)
        return f"{type(self).__name__}([{inner}])"
