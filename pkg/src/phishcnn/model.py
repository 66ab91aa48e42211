"""CNN1/CNN2 construction, parameter accounting, inference and weight files.

CNN1: Conv(F, k1) -> BN -> ReLU -> MaxPool(2, 2) -> Flatten
      -> Dense(fc) -> BN -> ReLU -> Dropout -> Dense(1) -> Sigmoid
CNN2: CNN1 with Conv(F, k2) -> BN -> ReLU -> MaxPool(2, 2) inserted after
      the first pooling layer.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from enum import IntEnum

import numpy as np

from .nn.layers import BatchNorm, Conv1D, Dense, Dropout, Flatten, MaxPool1D, ReLU, Sequential, Sigmoid
from .nn.rng import RngStream

VARIANTS = ("cnn1", "cnn2")
PAPER_FILTERS = (8, 16, 32, 64)
PAPER_KERNELS = (4, 6, 8, 10, 12)
PAPER_FC_UNITS = (8, 32)
WEIGHTS_FORMAT = "phishcnn-weights"
WEIGHTS_VERSION = 1


class ConfigError(ValueError):
    """An invalid model configuration; the message carries the shape chain."""


class Label(IntEnum):
    LEGITIMATE = 0
    PHISHING = 1


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "cnn2"
    num_filters: int = 64
    kernel1: int = 10
    kernel2: int | None = None
    fc_units: int = 8
    dropout_rate: float = 0.5
    batchnorm: bool = True
    input_length: int = 30
    input_channels: int = 1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.variant == "cnn2" and self.kernel2 is None:
            object.__setattr__(self, "kernel2", self.kernel1 // 2)
        if self.variant == "cnn1" and self.kernel2 is not None:
            raise ConfigError("cnn1 has a single convolution; kernel2 must not be set")
        for name in ("num_filters", "kernel1", "fc_units", "input_length", "input_channels"):
            if int(getattr(self, name)) < 1:
                raise ConfigError(f"{name} must be a positive integer, got {getattr(self, name)}")
        if self.variant == "cnn2" and self.kernel2 < 1:
            raise ConfigError(f"kernel2 must be a positive integer, got {self.kernel2} (kernel1={self.kernel1})")
        if not 0 <= self.dropout_rate < 1:
            raise ConfigError(f"dropout_rate must lie in [0, 1), got {self.dropout_rate}")
        shape_chain(self)

    @property
    def slug(self) -> str:
        k = f"k{self.kernel1}" + (f"-{self.kernel2}" if self.variant == "cnn2" else "")
        bn = "" if self.batchnorm else "-nobn"
        return f"{self.variant}-f{self.num_filters}-{k}-fc{self.fc_units}-d{self.dropout_rate:g}{bn}"

    def to_dict(self) -> dict:
        return asdict(self)


def shape_chain(config: ModelConfig) -> list[tuple[str, tuple[int, ...]]]:
    """Per-stage output shapes ``[(stage, shape), ...]`` for one sample.

    Raises :class:`ConfigError` listing the chain computed so far as soon as a
    stage would produce a length below 1.
    """
    chain = [("input", (config.input_length, config.input_channels))]

    def fail(msg):
        rendered = " -> ".join(f"{name}{list(shape)}" for name, shape in chain)
        raise ConfigError(f"{msg}; shape chain: {rendered}")

    length = config.input_length
    kernels = [config.kernel1] + ([config.kernel2] if config.variant == "cnn2" else [])
    for i, k in enumerate(kernels, start=1):
        if length - k + 1 < 1:
            fail(f"conv{i} kernel length {k} exceeds its input length {length}")
        length = length - k + 1
        chain.append((f"conv{i}", (length, config.num_filters)))
        if length < 2:
            fail(f"pool{i} input length {length} is below the pool size 2")
        length //= 2
        chain.append((f"pool{i}", (length, config.num_filters)))
    chain.append(("flatten", (length * config.num_filters,)))
    chain.append(("fc", (config.fc_units,)))
    chain.append(("output", (1,)))
    return chain


def format_shape_chain(config: ModelConfig) -> str:
    parts = []
    for name, shape in shape_chain(config):
        parts.append(f"{name}:{'x'.join(map(str, shape))}")
    return " -> ".join(parts)


@dataclass(frozen=True)
class ParamCount:
    trainable: int
    non_trainable: int

    @property
    def total(self) -> int:
        return self.trainable + self.non_trainable


def count_parameters(config: ModelConfig) -> ParamCount:
    """Closed-form parameter count.

    conv: k*C_in*F + F; batch-norm: 2C trainable + 2C non-trainable;
    dense: D*U + U.
    """
    chain = dict(shape_chain(config))
    trainable = non_trainable = 0
    c_in = config.input_channels
    kernels = [config.kernel1] + ([config.kernel2] if config.variant == "cnn2" else [])
    for k in kernels:
        trainable += k * c_in * config.num_filters + config.num_filters
        if config.batchnorm:
            trainable += 2 * config.num_filters
            non_trainable += 2 * config.num_filters
        c_in = config.num_filters
    flat = chain["flatten"][0]
    trainable += flat * config.fc_units + config.fc_units
    if config.batchnorm:
        trainable += 2 * config.fc_units
        non_trainable += 2 * config.fc_units
    trainable += config.fc_units + 1
    return ParamCount(trainable, non_trainable)


class Network(Sequential):
    """A built CNN1/CNN2 model.

    ``forward`` takes ``[B, 30, 1]`` (or ``[B, 30]``) feature tensors and
    returns phishing probabilities ``[B]``.
    """

    def __init__(self, config: ModelConfig, layers, dtype=np.float64):
        super().__init__(layers)
        self.config = config
        self.dtype = np.dtype(dtype)
        self.training = False

    def train(self):
        self.training = True
        return self

    def eval(self):
        self.training = False
        return self

    def _prepare(self, batch) -> np.ndarray:
        x = np.asarray(batch, dtype=self.dtype)
        if x.ndim == 2:
            x = x[:, :, None]
        expected = (self.config.input_length, self.config.input_channels)
        if x.ndim != 3 or x.shape[1:] != expected:
            raise ConfigError(f"expected input of shape [B, {expected[0]}, {expected[1]}], got {list(np.shape(batch))}")
        return x

    def forward(self, batch, training: bool | None = None) -> np.ndarray:
        training = self.training if training is None else training
        x = self._prepare(batch)
        for layer in self.layers:
            x = layer.forward(x, training)
        return x[:, 0]

    def backward(self, grad_probs) -> np.ndarray:
        g = np.asarray(grad_probs, dtype=self.dtype)[:, None]
        return super().backward(g)

    def trainable_layers(self):
        return [layer for layer in self.layers if layer.params]

    def allocated_parameters(self) -> ParamCount:
        trainable = sum(p.size for layer in self.layers for p in layer.params.values())
        non_trainable = sum(b.size for layer in self.layers for b in layer.buffers.values())
        return ParamCount(trainable, non_trainable)

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {}
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                state[f"{i}.{layer.name}.{k}"] = v.copy()
            for k, v in layer.buffers.items():
                state[f"{i}.{layer.name}.{k}"] = v.copy()
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        for i, layer in enumerate(self.layers):
            for store in (layer.params, layer.buffers):
                for k in store:
                    key = f"{i}.{layer.name}.{k}"
                    if key not in state:
                        raise KeyError(f"missing tensor {key}")
                    if state[key].shape != store[k].shape:
                        raise ValueError(f"tensor {key} has shape {state[key].shape}, expected {store[k].shape}")
                    store[k] = np.array(state[key], dtype=store[k].dtype)


def build_model(config: ModelConfig, rng: RngStream, dtype=np.float64) -> Network:
    """Instantiate the network for ``config`` with freshly initialized weights.

    Weights come from ``rng``; the dropout mask stream is the sub-stream
    ``rng.derive(1)``.
    """
    chain = dict(shape_chain(config))
    init = rng.derive(0)
    layers = []
    c_in = config.input_channels
    kernels = [config.kernel1] + ([config.kernel2] if config.variant == "cnn2" else [])
    for k in kernels:
        layers.append(Conv1D(c_in, config.num_filters, k, init, dtype))
        if config.batchnorm:
            layers.append(BatchNorm(config.num_filters, dtype=dtype))
        layers += [ReLU(), MaxPool1D(2, 2)]
        c_in = config.num_filters
    layers.append(Flatten())
    layers.append(Dense(chain["flatten"][0], config.fc_units, init, "he", dtype))
    if config.batchnorm:
        layers.append(BatchNorm(config.fc_units, dtype=dtype))
    layers += [ReLU(), Dropout(config.dropout_rate, rng.derive(1)),
               Dense(config.fc_units, 1, init, "glorot", dtype), Sigmoid()]
    return Network(config, layers, dtype)


def predict_label(score: float) -> Label:
    """Phishing iff score >= 0.5; an exact 0.5 counts as Phishing."""
    return Label.PHISHING if score >= 0.5 else Label.LEGITIMATE


def predict(network: Network, sample) -> tuple[Label, float]:
    """Classify one encoded sample (30 feature values) in inference mode."""
    x = np.asarray(sample, dtype=network.dtype).reshape(1, network.config.input_length, -1)
    score = float(network.forward(x, training=False)[0])
    return predict_label(score), score


# --- weight files ---------------------------------------------------------
#
# A weight file is an uncompressed numpy .npz archive. The entry "__meta__"
# holds a UTF-8 JSON document {"format": "phishcnn-weights", "version": 1,
# "config": {...ModelConfig fields...}, "dtype": "float64"}; every other
# entry is one tensor named "<layer index>.<layer kind>.<tensor name>",
# stored with its shape and dtype.

def save_weights(network: Network, path) -> None:
    meta = {"format": WEIGHTS_FORMAT, "version": WEIGHTS_VERSION,
            "config": network.config.to_dict(), "dtype": network.dtype.name}
    arrays = network.state_dict()
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    np.savez(path, **arrays)


def load_weights(path) -> Network:
    with np.load(path) as archive:
        meta = json.loads(archive["__meta__"].tobytes().decode())
        if meta.get("format") != WEIGHTS_FORMAT or meta.get("version") != WEIGHTS_VERSION:
            raise ValueError(f"unsupported weight file: {meta.get('format')} v{meta.get('version')}")
        state = {k: archive[k] for k in archive.files if k != "__meta__"}
    config = ModelConfig(**meta["config"])
    network = build_model(config, RngStream(0), dtype=np.dtype(meta["dtype"]))
    network.load_state_dict(state)
    return network
